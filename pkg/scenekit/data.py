from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import ConfigError, EmptyDataError

UNLABELED = 65535


@dataclass(frozen=True)
class ClassCatalog:
    """
    The set of semantic classes of a dataset.

    Parameters
    ----------
    names : tuple[str, ...]
        Class names. The position of a name is its class id.
    unlabeled_id : int, optional
        Sentinel marking unannotated pixels (default is 65535). It must
        lie outside the range of class ids.

    Attributes
    ----------
    count : int
        The number of classes, |L|.
    """

    names: tuple
    unlabeled_id: int = UNLABELED

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        if not self.names:
            raise ConfigError("A class catalog needs at least one class")
        if len(set(self.names)) != len(self.names):
            raise ConfigError(f"Class names must be unique: {self.names}")
        for name in self.names:
            if not name or any(c in name for c in ",\t\n "):
                raise ConfigError(f"Invalid class name: '{name}'")
        if 0 <= self.unlabeled_id < len(self.names):
            raise ConfigError(f"The unlabeled id {self.unlabeled_id} collides with a class id")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ConfigError(f"Unknown class: '{name}'") from None

    def validate(self, labels: np.ndarray):
        """Raise a ConfigError if any entry is neither a class id nor the sentinel."""
        bad = (labels != self.unlabeled_id) & ((labels < 0) | (labels >= self.count))
        if np.any(bad):
            value = int(labels[bad][0])
            raise ConfigError(f"Label value {value} is not a class id (|L| = {self.count}) "
                              f"nor the unlabeled sentinel {self.unlabeled_id}")


@dataclass(frozen=True, eq=False)
class SceneRecord:
    """One annotated image: an 8-bit RGB raster, its label map and an
    optional scene-category id."""

    image: np.ndarray
    labels: np.ndarray
    scene_id: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        image = np.array(self.image, dtype=np.uint8)
        labels = np.array(self.labels, dtype=np.int64)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ConfigError(f"An image must have shape (h, w, 3), got {image.shape}")
        if image.shape[0] < 1 or image.shape[1] < 1:
            raise ConfigError("An image must be at least 1x1")
        if labels.shape != image.shape[:2]:
            raise ConfigError(f"Label map shape {labels.shape} does not match "
                              f"image shape {image.shape[:2]}")
        image.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "image", image)
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.labels.shape

    def __eq__(self, other):
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (self.scene_id == other.scene_id
                and np.array_equal(self.image, other.image)
                and np.array_equal(self.labels, other.labels))


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """
    An ordered collection of annotated images sharing one class catalog.

    Parameters
    ----------
    catalog : ClassCatalog
        The classes the label maps refer to.
    records : tuple[SceneRecord, ...]
        The annotated images.
    role : str, optional
        "train" or "test" (default is "train").
    """

    catalog: ClassCatalog
    records: tuple
    role: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.role not in ("train", "test"):
            raise ConfigError(f"A split role must be 'train' or 'test', got '{self.role}'")
        for i, record in enumerate(self.records):
            try:
                self.catalog.validate(record.labels)
            except ConfigError as e:
                raise ConfigError(f"Record {i}: {e}") from None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> SceneRecord:
        return self.records[i]

    def __iter__(self):
        return iter(self.records)

    def __eq__(self, other):
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return (self.catalog == other.catalog and self.role == other.role
                and self.records == other.records)

    @property
    def scene_ids(self):
        return [r.scene_id for r in self.records]


@dataclass(frozen=True, eq=False)
class ClassFrequencyTable:
    """Per-class labeled pixel counts of a split.

    Unlabeled pixels are not counted, so `frequencies` sums to one over
    the labeled pixels.
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.total

    @property
    def present(self):
        return [int(c) for c in np.flatnonzero(self.counts)]


@dataclass(frozen=True)
class Patch:
    """A square crop centered on one pixel. `label` is the center pixel's label."""

    values: np.ndarray
    center: tuple
    label: Optional[int] = None

    @property
    def side(self) -> int:
        return self.values.shape[0]


def preprocess(image) -> np.ndarray:
    """Convert an image to float64 with zero mean and unit variance,
    computed over all pixels and channels jointly.

    A constant image has no variance to normalize and maps to zeros.
    """
    values = np.asarray(image, dtype=np.float64)
    values = values - values.mean()
    std = values.std()
    if std > 0:
        values = values / std
    return values


def compute_class_frequencies(split: DatasetSplit) -> ClassFrequencyTable:
    if len(split) == 0:
        raise EmptyDataError("Cannot count class frequencies of an empty split")
    counts = np.zeros(split.catalog.count, dtype=np.int64)
    for record in split:
        labels = record.labels[record.labels != split.catalog.unlabeled_id]
        counts += np.bincount(labels.ravel(), minlength=split.catalog.count)
    if counts.sum() == 0:
        raise EmptyDataError("The split has no labeled pixels")
    return ClassFrequencyTable(counts)


def mirror_indices(indices, size: int) -> np.ndarray:
    """Reflect indices into [0, size) without repeating the edge pixel
    (-1 -> 1, size -> size - 2)."""
    indices = np.asarray(indices, dtype=np.int64)
    if size == 1:
        return np.zeros_like(indices)
    period = 2 * (size - 1)
    folded = np.mod(indices, period)
    return np.where(folded >= size, period - folded, folded)


def _check_side(side: int):
    if side < 1 or side % 2 == 0:
        raise ConfigError(f"Patch side must be a positive odd integer, got {side}")


def extract_patch(image, center, side: int, label = None) -> Patch:
    """Crop a `side` x `side` patch centered on `center` = (row, col).

    Parts of the window that fall outside the image are mirror-reflected
    back inside it.
    """
    _check_side(side)
    image = np.asarray(image)
    row, col = int(center[0]), int(center[1])
    h, w = image.shape[:2]
    if not (0 <= row < h and 0 <= col < w):
        raise ConfigError(f"Patch center {(row, col)} is outside the {h}x{w} image")
    return Patch(extract_patches(image, [row], [col], side)[0], (row, col), label)


def extract_patches(image, rows, cols, side: int) -> np.ndarray:
    """Vectorized form of `extract_patch`: an array of shape (n, side, side, channels)."""
    _check_side(side)
    image = np.asarray(image)
    half = side // 2
    offsets = np.arange(-half, half + 1)
    r = mirror_indices(np.asarray(rows)[:, None] + offsets, image.shape[0])
    c = mirror_indices(np.asarray(cols)[:, None] + offsets, image.shape[1])
    return image[r[:, :, None], c[:, None, :]]


class PatchSource:
    """
    Preprocessed, mirror-padded copies of every image in a split, so
    training batches can be cut out as plain slices.

    Parameters
    ----------
    split : DatasetSplit
        The images to serve patches from.
    side : int
        The (odd) patch side.
    """

    def __init__(self, split: DatasetSplit, side: int):
        _check_side(side)
        self.side = side
        half = side // 2
        self.padded = []
        for record in split:
            image = preprocess(record.image)
            h, w = image.shape[:2]
            r = mirror_indices(np.arange(-half, h + half), h)
            c = mirror_indices(np.arange(-half, w + half), w)
            self.padded.append(image[np.ix_(r, c)])

    def patches(self, image_index, rows, cols) -> np.ndarray:
        s = self.side
        out = np.empty((len(image_index), s, s, 3), dtype=np.float64)
        for n, (i, r, c) in enumerate(zip(image_index, rows, cols)):
            out[n] = self.padded[i][r:r + s, c:c + s]
        return out


def cell_labels(labels, stride: int, unlabeled_id: int = UNLABELED) -> np.ndarray:
    """Majority label of every `stride` x `stride` block (the last block of
    a row or column may be smaller). Ties go to the lowest class id; a
    block where the sentinel outnumbers every class gets the sentinel."""
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    gh, gw = -(-h // stride), -(-w // stride)
    out = np.empty((gh, gw), dtype=np.int64)
    for i in range(gh):
        for j in range(gw):
            block = labels[i * stride:(i + 1) * stride, j * stride:(j + 1) * stride].ravel()
            labeled = block[block != unlabeled_id]
            if labeled.size == 0:
                out[i, j] = unlabeled_id
                continue
            counts = np.bincount(labeled)
            best = int(np.argmax(counts))
            out[i, j] = best if counts[best] >= block.size - labeled.size else unlabeled_id
    return out
