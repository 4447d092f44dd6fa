"""Epoch-level patch sampling.

Four strategies decide which labeled pixels become training patches:

gs   global sampling, uniform over every labeled pixel
cs   class sampling, every class gets an equal share
hs   hybrid sampling, a global draw topped up until every rare class
     holds at least an `eta` share of the sample
tcs  targeted class sampling, class sampling over the rare classes only
"""
from dataclasses import dataclass
import logging
import math

import numpy as np

from ._utils import make_rng
from .data import ClassFrequencyTable, DatasetSplit, compute_class_frequencies
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

all_strategies = ("gs", "cs", "hs", "tcs")


@dataclass(frozen=True)
class SamplingConfig:
    """
    Parameters
    ----------
    strategy : str, optional
        One of "gs", "cs", "hs" or "tcs" (default is "gs").
    epoch_size : int, optional
        Patches drawn per epoch (default is 10000).
    eta : float, optional
        Frequency threshold separating frequent from rare classes
        (default is 0.05).
    seed : int, optional
        Seed of the per-epoch random streams (default is 0).
    """

    strategy: str = "gs"
    epoch_size: int = 10000
    eta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in all_strategies:
            raise ConfigError(f"Unknown sampling strategy '{self.strategy}' "
                              f"(expected one of {', '.join(all_strategies)})")
        if not 0 < self.eta < 1:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if self.epoch_size < 1:
            raise ConfigError(f"epoch_size must be positive, got {self.epoch_size}")


@dataclass(frozen=True)
class RarityPartition:
    frequent: frozenset
    rare: frozenset


@dataclass(frozen=True, eq=False)
class SampleList:
    """Pixel references (image index, row, col) and the label found there.
    The same pixel may appear more than once."""

    image_index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=num_classes)


def classify_rarity(table: ClassFrequencyTable, eta: float) -> RarityPartition:
    """A present class is frequent iff its frequency is above `eta`."""
    freqs = table.frequencies
    present = table.present
    frequent = frozenset(c for c in present if freqs[c] > eta)
    return RarityPartition(frequent, frozenset(present) - frequent)


class PixelPool:
    """Every labeled pixel of a split, grouped by class."""

    def __init__(self, split: DatasetSplit):
        self.num_classes = split.catalog.count
        image_index, rows, cols, labels = [], [], [], []
        for i, record in enumerate(split):
            r, c = np.nonzero(record.labels != split.catalog.unlabeled_id)
            image_index.append(np.full(r.size, i, dtype=np.int64))
            rows.append(r)
            cols.append(c)
            labels.append(record.labels[r, c])
        self.image_index = np.concatenate(image_index) if image_index else np.empty(0, np.int64)
        self.rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
        self.cols = np.concatenate(cols) if cols else np.empty(0, np.int64)
        self.labels = np.concatenate(labels) if labels else np.empty(0, np.int64)
        order = np.argsort(self.labels, kind="stable")
        bounds = np.searchsorted(self.labels[order], np.arange(self.num_classes + 1))
        self.by_class = [order[bounds[c]:bounds[c + 1]] for c in range(self.num_classes)]

    def __len__(self):
        return len(self.labels)

    def take(self, positions) -> SampleList:
        positions = np.asarray(positions, dtype=np.int64)
        return SampleList(self.image_index[positions], self.rows[positions],
                          self.cols[positions], self.labels[positions])


def _global_draw(pool: PixelPool, n: int, rng) -> np.ndarray:
    return rng.integers(0, len(pool), size=n)


def _class_draw(pool: PixelPool, classes, n: int, rng) -> np.ndarray:
    classes = sorted(classes)
    if n < len(classes):
        raise ConfigError(f"An epoch of {n} patches cannot cover {len(classes)} classes")
    for c in classes:
        if len(pool.by_class[c]) == 0:
            raise ConfigError(f"Class {c} has no labeled pixels in the split")

    base, extra = divmod(n, len(classes))
    drawn = []
    for k, c in enumerate(classes):
        quota = base + (1 if k < extra else 0)
        members = pool.by_class[c]
        replace = quota > len(members)
        drawn.append(rng.choice(members, size=quota, replace=replace))
    return np.concatenate(drawn)


def _hybrid_draw(pool: PixelPool, rare, eta: float, n: int, rng) -> np.ndarray:
    rare = sorted(rare)
    if len(rare) * eta >= 1:
        raise ConfigError(f"{len(rare)} rare classes cannot each hold a share of {eta}")
    drawn = [_global_draw(pool, n, rng)]
    counts = np.bincount(pool.labels[drawn[0]], minlength=pool.num_classes)
    total = n
    # Augmenting one class dilutes the others, so repeat until all hold.
    while True:
        changed = False
        for c in rare:
            if counts[c] >= eta * total:
                continue
            need = math.ceil((eta * total - counts[c]) / (1 - eta))
            drawn.append(rng.choice(pool.by_class[c], size=need, replace=True))
            counts[c] += need
            total += need
            changed = True
        if not changed:
            return np.concatenate(drawn)


def sample_epoch(split: DatasetSplit, config: SamplingConfig, epoch: int = 0,
                 pool = None, table = None) -> SampleList:
    """Draw the patch references for one training epoch.

    Parameters
    ----------
    split : DatasetSplit
        The training images.
    config : SamplingConfig
        Strategy, epoch size, rarity threshold and seed.
    epoch : int, optional
        Epoch number; each epoch draws from its own random stream
        (default is 0).
    pool : PixelPool, optional
        A precomputed pixel pool of `split`.
    table : ClassFrequencyTable, optional
        Precomputed class frequencies of `split`.

    Returns
    -------
    SampleList
        The references, in shuffled order.
    """
    pool = PixelPool(split) if pool is None else pool
    table = compute_class_frequencies(split) if table is None else table
    rng = make_rng(config.seed, epoch)
    n = config.epoch_size

    if config.strategy == "gs":
        positions = _global_draw(pool, n, rng)
    elif config.strategy == "cs":
        missing = [c for c in range(split.catalog.count) if table.counts[c] == 0]
        if missing:
            raise ConfigError(f"Class sampling needs every class, but '{split.catalog.names[missing[0]]}' "
                              "is absent from the split")
        positions = _class_draw(pool, range(split.catalog.count), n, rng)
    else:
        partition = classify_rarity(table, config.eta)
        if config.strategy == "hs":
            positions = _hybrid_draw(pool, partition.rare, config.eta, n, rng)
        else:
            missing = [c for c in range(split.catalog.count) if table.counts[c] == 0]
            if missing:
                raise ConfigError(f"Targeted class sampling needs every class, but "
                                  f"'{split.catalog.names[missing[0]]}' is absent from the split")
            if not partition.rare:
                raise ConfigError(f"No class is rare at eta = {config.eta}; "
                                  "targeted class sampling has nothing to draw")
            positions = _class_draw(pool, partition.rare, n, rng)

    positions = rng.permutation(positions)
    logger.debug("epoch %d: drew %d %s references", epoch, len(positions), config.strategy)
    return pool.take(positions)
