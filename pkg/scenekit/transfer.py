"""Global belief transfer.

Every training image is summarized by a spatial-pyramid average of its
feature map. A query retrieves the nearest training images (its
exemplars), gathers their labeled cells plus auxiliary rare-class cells
from elsewhere, and every query cell takes a kernel-weighted vote of its
K nearest transfer cells.
"""
from dataclasses import dataclass
import logging
import warnings
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

from . import _artifacts
from ._utils import make_rng
from .convnet import NetworkParams, PixelFeatureMap, extract_features, params_from_bytes, params_to_bytes
from .data import ClassCatalog, DatasetSplit, cell_labels, compute_class_frequencies
from .exceptions import ConfigError, DataWarning, EmptyDataError, FormatError
from .sampling import RarityPartition, classify_rarity

logger = logging.getLogger(__name__)

INDEX_MAGIC = b"PIDX"
INDEX_VERSION = 1


@dataclass(frozen=True)
class PyramidConfig:
    """Pyramid levels, each given as its grid side (1 is the whole image,
    2 a 2x2 split, ...)."""

    levels: tuple = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(g) for g in self.levels))
        if not self.levels or any(g < 1 for g in self.levels):
            raise ConfigError(f"Pyramid levels must be positive grid sides, got {self.levels}")

    @property
    def regions(self) -> int:
        return sum(g * g for g in self.levels)

    def dimension(self, feature_width: int) -> int:
        return self.regions * feature_width


@dataclass(frozen=True)
class KernelParams:
    """Falloffs of the transfer kernel: `alpha` on feature distance and
    `gamma` on height distance."""

    alpha: float = 15.0
    gamma: float = 5.0

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ConfigError(f"Kernel falloffs must be nonnegative, got alpha={self.alpha}, gamma={self.gamma}")


@dataclass(frozen=True)
class RetrievalConfig:
    """
    Parameters
    ----------
    exemplars : int, optional
        Retrieval set size |S(X)| (default is 5).
    k : int, optional
        Transfer neighbors per cell, and the rare-class quota (default is 200).
    alpha, gamma : float, optional
        Kernel falloffs (default is 15 and 5).
    levels : tuple[int, ...], optional
        Pyramid levels (default is (1, 2)).
    """

    exemplars: int = 5
    k: int = 200
    alpha: float = 15.0
    gamma: float = 5.0
    levels: tuple = (1, 2)

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(int(g) for g in self.levels))
        if self.exemplars < 1:
            raise ConfigError(f"The retrieval set needs at least one image, got {self.exemplars}")
        if self.k < 1:
            raise ConfigError(f"K must be at least 1, got {self.k}")
        KernelParams(self.alpha, self.gamma)
        PyramidConfig(self.levels)

    @classmethod
    def barcelona(cls):
        """A larger retrieval set, for corpora with more varied scenes."""
        return cls(exemplars=100)

    @property
    def kernel(self) -> KernelParams:
        return KernelParams(self.alpha, self.gamma)

    @property
    def pyramid(self) -> PyramidConfig:
        return PyramidConfig(self.levels)


@dataclass(frozen=True, eq=False)
class ExemplarSet:
    """Gallery indices of the retrieved images, by ascending distance."""

    indices: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class QueryPixel:
    feature: np.ndarray
    height: float


@dataclass(frozen=True)
class TransferPixel:
    source: int
    cell: tuple
    feature: np.ndarray
    height: float
    label: int


@dataclass(frozen=True, eq=False)
class TransferSet:
    """Candidate transfer cells, one row per cell. The first
    `exemplar_count` rows come from the exemplars, the rest are auxiliary."""

    sources: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    features: np.ndarray
    heights: np.ndarray
    labels: np.ndarray
    exemplar_count: int

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> TransferPixel:
        return TransferPixel(int(self.sources[i]), (int(self.rows[i]), int(self.cols[i])),
                             self.features[i], float(self.heights[i]), int(self.labels[i]))

    @property
    def auxiliary_count(self) -> int:
        return len(self) - self.exemplar_count


@dataclass(frozen=True, eq=False)
class GlobalBeliefMap:
    probs: np.ndarray
    stride: int
    image_shape: tuple

    @property
    def grid_shape(self):
        return self.probs.shape[:2]


def region_bounds(n: int, parts: int):
    """Split range(n) into `parts` even ranges, the remainder going to the
    last one. Grids smaller than `parts` repeat their last index."""
    size = max(n // parts, 1)
    bounds = []
    for i in range(parts):
        start = min(i * size, n - 1)
        stop = n if i == parts - 1 else min(start + size, n)
        bounds.append((start, stop))
    return bounds


def pool_global_feature(fmap, pyramid: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """Average-pool a feature map over every pyramid region and concatenate
    the region means, level by level, regions in row-major order."""
    features = fmap.features if isinstance(fmap, PixelFeatureMap) else np.asarray(fmap, dtype=np.float64)
    gh, gw = features.shape[:2]
    if gh == 0 or gw == 0:
        raise ConfigError("Cannot pool an empty feature map")
    parts = []
    for g in pyramid.levels:
        for r0, r1 in region_bounds(gh, g):
            for c0, c1 in region_bounds(gw, g):
                parts.append(features[r0:r1, c0:c1].mean(axis=(0, 1)))
    return np.concatenate(parts)


def retrieve_exemplars(query, gallery, size: int) -> ExemplarSet:
    """The `size` gallery descriptors nearest to `query` in Euclidean
    distance, ties going to the lower index."""
    query = np.asarray(query, dtype=np.float64).ravel()
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or len(gallery) == 0:
        raise ConfigError("The gallery must be a nonempty (n, D) array")
    if gallery.shape[1] != query.size:
        raise ConfigError(f"Query dimension {query.size} does not match gallery dimension {gallery.shape[1]}")
    if not 1 <= size <= len(gallery):
        raise ConfigError(f"Cannot retrieve {size} exemplars from a gallery of {len(gallery)}")
    distances = cdist(query[None, :], gallery)[0]
    order = np.argsort(distances, kind="stable")[:size]
    return ExemplarSet(order, distances[order])


@dataclass(frozen=True, eq=False)
class TransferIndex:
    """
    Everything global transfer needs to know about the training split.

    Parameters
    ----------
    catalog : ClassCatalog
    descriptors : np.ndarray
        (n, D) pyramid descriptors of the training images.
    cell_features : tuple[np.ndarray, ...]
        (gh, gw, d) feature map of every training image.
    cell_labels : tuple[np.ndarray, ...]
        (gh, gw) majority labels of every training image's cells.
    heights : tuple[np.ndarray, ...]
        (gh,) normalized height of every cell row.
    scene_ids : tuple[int, ...]
        Scene category of every image, -1 when unknown.
    rare : tuple[int, ...]
        The rare classes of the training split.
    pyramid : PyramidConfig
    descriptor_network, feature_network : NetworkParams
        Networks producing the descriptors and the cell features.
    """

    catalog: ClassCatalog
    descriptors: np.ndarray
    cell_features: tuple
    cell_labels: tuple
    heights: tuple
    scene_ids: tuple
    rare: tuple
    pyramid: PyramidConfig
    descriptor_network: NetworkParams
    feature_network: NetworkParams

    def __len__(self):
        return len(self.cell_labels)

    @property
    def rarity(self) -> RarityPartition:
        present = set()
        for labels in self.cell_labels:
            present.update(int(c) for c in np.unique(labels) if c != self.catalog.unlabeled_id)
        rare = frozenset(self.rare)
        return RarityPartition(frozenset(present) - rare, rare)

    def cells(self, image: int):
        """Rows, cols and labels of the labeled cells of one image, row-major."""
        labels = self.cell_labels[image]
        rows, cols = np.nonzero(labels != self.catalog.unlabeled_id)
        return rows, cols, labels[rows, cols]


def build_transfer_index(split: DatasetSplit, descriptor_network: NetworkParams,
                         feature_network: Optional[NetworkParams] = None,
                         pyramid: PyramidConfig = PyramidConfig(), eta = 0.05) -> TransferIndex:
    """Describe every training image for retrieval and label transfer.

    `feature_network` (default is `descriptor_network`) yields the cell
    features, for instance a network fine-tuned for a learned metric.
    """
    feature_network = descriptor_network if feature_network is None else feature_network
    if feature_network.spec.stride != descriptor_network.spec.stride:
        raise ConfigError("The descriptor and feature networks must share one stride")
    rarity = classify_rarity(compute_class_frequencies(split), eta)
    descriptors, features, labels, heights = [], [], [], []
    for record in split:
        fmap = extract_features(descriptor_network, record.image)
        descriptors.append(pool_global_feature(fmap, pyramid))
        if feature_network is not descriptor_network:
            fmap = extract_features(feature_network, record.image)
        features.append(fmap.features)
        heights.append(fmap.heights)
        labels.append(cell_labels(record.labels, fmap.stride, split.catalog.unlabeled_id))
    logger.info("indexed %d training images (%d rare classes)", len(split), len(rarity.rare))
    scene_ids = tuple(-1 if s is None else int(s) for s in split.scene_ids)
    return TransferIndex(split.catalog, np.array(descriptors), tuple(features), tuple(labels),
                         tuple(heights), scene_ids, tuple(sorted(rarity.rare)), pyramid,
                         descriptor_network, feature_network)


def build_transfer_set(exemplars: ExemplarSet, index: TransferIndex, k: int,
                       rarity: RarityPartition, seed = 0, stream = 0) -> TransferSet:
    """
    The labeled cells of the exemplars, plus auxiliary cells of every rare
    class that has fewer than `k` of them.

    Auxiliary cells are drawn uniformly, in ascending class order, from
    the cells of that class in images outside the exemplar set, without
    replacement when there are enough of them. A rare class with no
    cells outside the exemplars stays short and raises a DataWarning.
    """
    if k < 1:
        raise ConfigError(f"K must be at least 1, got {k}")
    rng = make_rng(seed, stream)
    chosen = set(int(i) for i in exemplars.indices)

    sources, rows, cols = [], [], []
    counts = np.zeros(index.catalog.count, dtype=np.int64)
    for image in exemplars.indices:
        r, c, labels = index.cells(int(image))
        sources.append(np.full(r.size, int(image), dtype=np.int64))
        rows.append(r)
        cols.append(c)
        counts += np.bincount(labels, minlength=index.catalog.count)
    exemplar_count = int(counts.sum())

    for c in sorted(rarity.rare):
        need = k - int(counts[c])
        if need <= 0:
            continue
        outside = [(i, rr, cc) for i in range(len(index)) if i not in chosen
                   for rr, cc in zip(*np.nonzero(index.cell_labels[i] == c))]
        if not outside:
            warnings.warn(f"Rare class '{index.catalog.names[c]}' has {counts[c]} transfer cells, "
                          f"fewer than K = {k}, and no other instances to draw from", DataWarning)
            continue
        picks = rng.choice(len(outside), size=need, replace=need > len(outside))
        drawn = np.array([outside[p] for p in picks], dtype=np.int64)
        sources.append(drawn[:, 0])
        rows.append(drawn[:, 1])
        cols.append(drawn[:, 2])

    sources = np.concatenate(sources) if sources else np.empty(0, np.int64)
    rows = np.concatenate(rows) if rows else np.empty(0, np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, np.int64)
    d = index.cell_features[0].shape[2] if len(index) else 0
    features = np.array([index.cell_features[s][r, c] for s, r, c in zip(sources, rows, cols)]).reshape(-1, d)
    heights = np.array([index.heights[s][r] for s, r in zip(sources, rows)], dtype=np.float64)
    labels = np.array([index.cell_labels[s][r, c] for s, r, c in zip(sources, rows, cols)], dtype=np.int64)
    return TransferSet(sources, rows, cols, features, heights, labels, exemplar_count)


def similarity(a, b, params: KernelParams = KernelParams(), metric = None) -> float:
    """exp(-alpha * |x_a - x_b|) * exp(-gamma * |z_a - z_b|), with both
    features mapped through `metric` first when one is given."""
    xa = np.asarray(a.feature, dtype=np.float64)
    xb = np.asarray(b.feature, dtype=np.float64)
    if xa.shape != xb.shape:
        raise ConfigError(f"Feature shapes {xa.shape} and {xb.shape} differ")
    if metric is not None:
        xa, xb = metric.transform(xa), metric.transform(xb)
    return float(np.exp(-params.alpha * np.linalg.norm(xa - xb)) * np.exp(-params.gamma * abs(a.height - b.height)))


def _vote(distances, labels, k: int, num_classes: int) -> np.ndarray:
    """Kernel vote of the `k` smallest combined distances of every row."""
    order = np.argsort(distances, axis=1, kind="stable")[:, :k]
    nearest = np.take_along_axis(distances, order, axis=1)
    weights = np.exp(-(nearest - nearest[:, :1]))
    votes = np.zeros((len(distances), num_classes))
    np.add.at(votes, (np.arange(len(distances))[:, None], labels[order]), weights)
    return votes / votes.sum(axis=1, keepdims=True)


def _combined_distances(features, heights, transfer: TransferSet, params: KernelParams, metric):
    if len(transfer) == 0:
        raise EmptyDataError("The transfer set is empty")
    targets = transfer.features
    if features.shape[1] != targets.shape[1]:
        raise ConfigError(f"Query feature width {features.shape[1]} does not match "
                          f"transfer feature width {targets.shape[1]}")
    if metric is not None:
        features, targets = metric.transform(features), metric.transform(targets)
    return (params.alpha * cdist(features, targets)
            + params.gamma * np.abs(heights[:, None] - transfer.heights[None, :]))


def global_belief(query, transfer: TransferSet, k: int, params: KernelParams = KernelParams(),
                  metric = None, num_classes: Optional[int] = None) -> np.ndarray:
    """The class distribution voted by the `k` transfer cells most similar
    to `query` (ties by transfer order)."""
    feature = np.asarray(query.feature, dtype=np.float64).reshape(1, -1)
    num_classes = int(transfer.labels.max()) + 1 if num_classes is None else num_classes
    distances = _combined_distances(feature, np.array([float(query.height)]), transfer, params, metric)
    return _vote(distances, transfer.labels, k, num_classes)[0]


def global_belief_map(fmap: PixelFeatureMap, transfer: TransferSet, k: int, num_classes: int,
                      params: KernelParams = KernelParams(), metric = None) -> GlobalBeliefMap:
    gh, gw, d = fmap.features.shape
    features = fmap.features.reshape(-1, d)
    heights = np.repeat(fmap.heights, gw)
    distances = _combined_distances(features, heights, transfer, params, metric)
    probs = _vote(distances, transfer.labels, k, num_classes)
    return GlobalBeliefMap(probs.reshape(gh, gw, num_classes), fmap.stride, fmap.image_shape)


def transfer_beliefs(index: TransferIndex, image, config: RetrievalConfig = RetrievalConfig(),
                     metric = None, seed = 0, stream = 0) -> GlobalBeliefMap:
    """Retrieve exemplars for an 8-bit image and vote a global belief for
    each of its cells."""
    fmap = extract_features(index.descriptor_network, image)
    descriptor = pool_global_feature(fmap, index.pyramid)
    exemplars = retrieve_exemplars(descriptor, index.descriptors, min(config.exemplars, len(index)))
    transfer = build_transfer_set(exemplars, index, config.k, index.rarity, seed, stream)
    if index.feature_network is not index.descriptor_network:
        fmap = extract_features(index.feature_network, image)
    logger.debug("exemplars %s, %d transfer cells (%d auxiliary)", exemplars.indices.tolist(),
                 len(transfer), transfer.auxiliary_count)
    return global_belief_map(fmap, transfer, config.k, index.catalog.count, config.kernel, metric)


def knn_matching_score(queries, gallery, query_scenes, gallery_scenes, k: int,
                       retrieve = retrieve_exemplars) -> float:
    """The mean fraction of each query's `k` retrieved gallery images that
    share its scene id."""
    queries = np.asarray(queries, dtype=np.float64)
    gallery_scenes = np.asarray(gallery_scenes)
    if len(queries) == 0:
        raise EmptyDataError("No queries to score")
    if len(query_scenes) != len(queries) or len(gallery_scenes) != len(gallery):
        raise ConfigError("Every query and gallery image needs a scene id")
    genuine = 0
    for query, scene in zip(queries, query_scenes):
        exemplars = retrieve(query, gallery, k)
        genuine += int(np.sum(gallery_scenes[exemplars.indices] == scene))
    return genuine / (len(queries) * k)


def _write_index(index: TransferIndex):
    def write(writer):
        writer.text(",".join(index.catalog.names))
        writer.uint(index.catalog.unlabeled_id)
        writer.array(np.array(index.pyramid.levels, dtype=np.int64))
        writer.array(np.array(index.rare, dtype=np.int64))
        writer.array(np.array(index.scene_ids, dtype=np.int64))
        writer.array(index.descriptors)
        for features, labels, heights in zip(index.cell_features, index.cell_labels, index.heights):
            writer.array(features)
            writer.array(labels)
            writer.array(heights)
        writer.blob(params_to_bytes(index.descriptor_network))
        same = index.feature_network is index.descriptor_network
        writer.uint(int(same))
        if not same:
            writer.blob(params_to_bytes(index.feature_network))
    return write


def _read_index(reader) -> TransferIndex:
    try:
        catalog = ClassCatalog(tuple(reader.text().split(",")), reader.uint())
        pyramid = PyramidConfig(tuple(reader.array().tolist()))
    except ConfigError as e:
        raise FormatError(f"{reader.source}: {e}") from e
    rare = tuple(int(c) for c in reader.array())
    scene_ids = tuple(int(s) for s in reader.array())
    descriptors = reader.array()
    if descriptors.ndim != 2 or len(descriptors) != len(scene_ids):
        raise FormatError(f"{reader.source}: descriptor table does not match the image count")
    features, labels, heights = [], [], []
    for _ in scene_ids:
        features.append(reader.array())
        labels.append(reader.array())
        heights.append(reader.array())
    descriptor_network = params_from_bytes(reader.blob(), f"{reader.source} descriptor network")
    same = reader.uint()
    feature_network = descriptor_network if same else params_from_bytes(reader.blob(), f"{reader.source} feature network")
    return TransferIndex(catalog, descriptors, tuple(features), tuple(labels), tuple(heights),
                         scene_ids, rare, pyramid, descriptor_network, feature_network)


def save_index(index: TransferIndex, path):
    _artifacts.write_file(path, INDEX_MAGIC, INDEX_VERSION, _write_index(index))
    logger.info("wrote transfer index of %d images to %s", len(index), path)


def load_index(path) -> TransferIndex:
    return _artifacts.read_file(path, INDEX_MAGIC, {INDEX_VERSION}, _read_index)
