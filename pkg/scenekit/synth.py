"""Synthetic scene corpora.

A scene category is a stack of horizontal class bands plus optional
rectangular objects. Every class has a flat colour, an optional vertical
stripe texture and Gaussian noise. Two classes drawn with the same style
are locally indistinguishable; if they only ever appear in different
scene categories, the scene is the only thing that tells them apart.
"""
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .data import ClassCatalog, DatasetSplit, SceneRecord
from .exceptions import ConfigError


@dataclass(frozen=True)
class ClassStyle:
    """How one class is drawn.

    Parameters
    ----------
    name : str
        The class name.
    color : tuple[float, float, float]
        Mean RGB value.
    noise : float, optional
        Standard deviation of the per-pixel Gaussian noise (default is 8).
    stripe : float, optional
        Amplitude of a vertical sine stripe texture (default is 0).
    period : int, optional
        Stripe period in pixels (default is 4).
    """

    name: str
    color: tuple
    noise: float = 8.0
    stripe: float = 0.0
    period: int = 4

    def looks_like(self, other) -> bool:
        return (tuple(self.color) == tuple(other.color) and self.noise == other.noise
                and self.stripe == other.stripe and self.period == other.period)

    def permuted(self, name: str, order = (2, 0, 1)):
        """A new class whose colour channels are a permutation of this one's."""
        return replace(self, name=name, color=tuple(self.color[i] for i in order))


@dataclass(frozen=True)
class Band:
    name: str
    weight: float = 1.0


@dataclass(frozen=True)
class SceneObject:
    """A `height` x `width` rectangle of class `name`, drawn with
    `probability`, whose top edge falls within the `rows` fraction of the
    image height."""

    name: str
    height: int
    width: int
    probability: float = 1.0
    rows: tuple = (0.0, 1.0)


@dataclass(frozen=True)
class SceneCategory:
    name: str
    bands: tuple
    objects: tuple = ()
    jitter: int = 0


@dataclass(frozen=True)
class SynthConfig:
    """
    Parameters of a synthetic corpus.

    Parameters
    ----------
    classes : tuple[ClassStyle, ...]
        Class styles, in class-id order.
    scenes : tuple[SceneCategory, ...]
        Scene categories, in scene-id order.
    height, width : int, optional
        Image size (default is 64 x 64).
    images_per_scene : int, optional
        Images drawn per scene category (default is 4).
    snap : int, optional
        Band boundaries and object corners are rounded to multiples of
        `snap` pixels (default is 1).
    unlabeled_border : int, optional
        Width of a frame around every label map left unannotated
        (default is 0).
    role : str, optional
        Role of the generated split (default is "train").
    """

    classes: tuple
    scenes: tuple
    height: int = 64
    width: int = 64
    images_per_scene: int = 4
    snap: int = 1
    unlabeled_border: int = 0
    role: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "scenes", tuple(self.scenes))

    @property
    def catalog(self) -> ClassCatalog:
        return ClassCatalog(tuple(c.name for c in self.classes))

    def validate(self):
        if not self.classes:
            raise ConfigError("A synthetic corpus needs at least one class")
        if not self.scenes:
            raise ConfigError("A synthetic corpus needs at least one scene category")
        if self.height < 1 or self.width < 1:
            raise ConfigError(f"Invalid image size {self.height}x{self.width}")
        if self.images_per_scene < 1:
            raise ConfigError("images_per_scene must be at least 1")
        if self.snap < 1:
            raise ConfigError("snap must be at least 1")
        catalog = self.catalog
        for scene in self.scenes:
            if not scene.bands:
                raise ConfigError(f"Scene '{scene.name}' has no bands")
            for band in scene.bands:
                catalog.index(band.name)
                if band.weight <= 0:
                    raise ConfigError(f"Band '{band.name}' of scene '{scene.name}' needs a positive weight")
            for obj in scene.objects:
                catalog.index(obj.name)
                if obj.height < 1 or obj.width < 1 or obj.height > self.height or obj.width > self.width:
                    raise ConfigError(f"Object '{obj.name}' of scene '{scene.name}' does not fit the image")


def _snap(values, snap: int):
    return (np.round(np.asarray(values) / snap) * snap).astype(np.int64)


def _band_rows(scene: SceneCategory, config: SynthConfig, rng) -> np.ndarray:
    weights = np.array([b.weight for b in scene.bands], dtype=np.float64)
    bounds = np.round(np.cumsum(weights) / weights.sum() * config.height)[:-1]
    if scene.jitter > 0:
        bounds = bounds + rng.integers(-scene.jitter, scene.jitter + 1, size=bounds.size)
    bounds = np.clip(_snap(bounds, config.snap), 0, config.height)
    bounds = np.maximum.accumulate(bounds)
    return np.concatenate([[0], bounds, [config.height]])


def _scene_labels(scene: SceneCategory, config: SynthConfig, catalog: ClassCatalog, rng) -> np.ndarray:
    labels = np.empty((config.height, config.width), dtype=np.int64)
    bounds = _band_rows(scene, config, rng)
    for band, top, bottom in zip(scene.bands, bounds[:-1], bounds[1:]):
        labels[top:bottom] = catalog.index(band.name)

    for obj in scene.objects:
        if rng.random() >= obj.probability:
            continue
        lo = int(obj.rows[0] * config.height)
        hi = max(lo, min(int(obj.rows[1] * config.height), config.height) - obj.height)
        top = min(int(_snap(rng.integers(lo, hi + 1), config.snap)), config.height - obj.height)
        left = rng.integers(0, config.width - obj.width + 1)
        left = min(int(_snap(left, config.snap)), config.width - obj.width)
        labels[top:top + obj.height, left:left + obj.width] = catalog.index(obj.name)
    return labels


def render(labels, classes, rng) -> np.ndarray:
    """Draw an 8-bit RGB image for a label map using the class styles."""
    h, w = labels.shape
    image = np.empty((h, w, 3), dtype=np.float64)
    cols = np.arange(w)
    for class_id, style in enumerate(classes):
        mask = labels == class_id
        count = int(mask.sum())
        if count == 0:
            continue
        texture = style.stripe * np.sin(2 * np.pi * cols / style.period)
        values = np.asarray(style.color, dtype=np.float64) + np.broadcast_to(texture, (h, w))[mask][:, None]
        values = values + style.noise * rng.standard_normal((count, 3))
        image[mask] = values
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def generate_synthetic_scenes(config: SynthConfig, seed: int) -> DatasetSplit:
    """Draw `config.images_per_scene` images of every scene category.

    The result depends only on `config` and `seed`.
    """
    config.validate()
    catalog = config.catalog
    rng = np.random.default_rng(seed)
    records = []
    for scene_id, scene in enumerate(config.scenes):
        for i in range(config.images_per_scene):
            labels = _scene_labels(scene, config, catalog, rng)
            image = render(labels, config.classes, rng)
            b = config.unlabeled_border
            if b > 0:
                labels[:b] = catalog.unlabeled_id
                labels[-b:] = catalog.unlabeled_id
                labels[:, :b] = catalog.unlabeled_id
                labels[:, -b:] = catalog.unlabeled_id
            records.append(SceneRecord(image, labels, scene_id, f"{scene.name}-{i}"))
    return DatasetSplit(catalog, tuple(records), config.role)


def ambiguous_pairs(config: SynthConfig):
    """Pairs of class ids drawn identically that never share a scene."""
    scene_classes = []
    for scene in config.scenes:
        names = {b.name for b in scene.bands} | {o.name for o in scene.objects}
        scene_classes.append(names)

    pairs = []
    for i, a in enumerate(config.classes):
        for j in range(i + 1, len(config.classes)):
            b = config.classes[j]
            if not a.looks_like(b):
                continue
            if any(a.name in s and b.name in s for s in scene_classes):
                continue
            pairs.append((i, j))
    return pairs


def desk_config(images_per_scene: int = 4, role: str = "train", size: Optional[int] = None) -> SynthConfig:
    """Two scene types sharing a locally identical class pair.

    A beach is sky over sand over grass over water; a street is sky over
    building over grass over road. Both may show a small, rare sun in the
    sky. Water and road look the same, and the
    building palette is a channel permutation of sand so both scene types
    have the same overall intensity statistics. The grass band keeps the
    water/road patches from seeing the band above it.
    """
    sky = ClassStyle("sky", (90, 140, 210), noise=6)
    sun = ClassStyle("sun", (235, 215, 110), noise=6)
    sand = ClassStyle("sand", (200, 170, 110), noise=6, stripe=10, period=8)
    grass = ClassStyle("grass", (60, 150, 60), noise=6, stripe=6, period=4)
    water = ClassStyle("water", (70, 90, 130), noise=6, stripe=12, period=6)
    classes = (sky, sun, sand, sand.permuted("building"), grass, water, replace(water, name="road"))
    side = 64 if size is None else size
    sun_object = (SceneObject("sun", side // 8, side // 8, 0.5, (0.0, 0.25)),)
    beach = SceneCategory("beach", (Band("sky"), Band("sand"), Band("grass"), Band("water")), sun_object)
    street = SceneCategory("street", (Band("sky"), Band("building"), Band("grass"), Band("road")), sun_object)
    return SynthConfig(classes, (beach, street), height=side, width=side,
                       images_per_scene=images_per_scene, snap=8, role=role)


def imbalanced_config(images_per_scene: int = 8, role: str = "train") -> SynthConfig:
    """A heavily imbalanced corpus: a large field class, a sky band and a
    small, rare stone class that looks much like the field around it."""
    sky = ClassStyle("sky", (120, 160, 220), noise=8)
    field = ClassStyle("field", (110, 130, 70), noise=18)
    stone = ClassStyle("stone", (130, 135, 95), noise=18)
    meadow = SceneCategory("meadow", (Band("sky", 1), Band("field", 3)),
                           objects=(SceneObject("stone", 3, 3, 1.0, (0.3, 1.0)),
                                    SceneObject("stone", 2, 2, 0.5, (0.3, 1.0))),
                           jitter=2)
    return SynthConfig((sky, field, stone), (meadow,), height=32, width=32,
                       images_per_scene=images_per_scene, role=role)
