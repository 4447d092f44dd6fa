"""Large-margin Mahalanobis metric learning over pixel features.

The metric M = W^T W is learned through its factor W. For a batch of
features x_i with labels y_i, every unordered pair contributes the hinge

    g_ij = max(0, 1 - l_ij * (tau - |W x_i - W x_j|^2))

with l_ij = +1 for same-class pairs and -1 otherwise, so same-class pairs
are pulled within squared distance tau - 1 and other pairs pushed beyond
tau + 1. The loss is lambda / 2 * |W|^2 plus the normalized hinge sum.
"""
from dataclasses import dataclass
import logging
import warnings

import numpy as np
from scipy.spatial.distance import cdist

from . import _artifacts
from ._utils import ensure_pair_batch, make_rng
from .convnet import (NetworkParams, TrainConfig, backward_features, extract_features, forward_features,
                      params_from_bytes, params_to_bytes, sgd_step)
from .data import PatchSource, cell_labels
from .exceptions import ConfigError, DataWarning, EmptyDataError, FormatError
from .sampling import PixelPool

logger = logging.getLogger(__name__)

METRIC_MAGIC = b"PMTR"
METRIC_VERSION = 1

loss_norms = ("pairs", "features")


@dataclass(frozen=True, eq=False)
class MetricParams:
    """The linear map W, of shape (d', d)."""

    W: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise ConfigError(f"A metric map must be a nonempty matrix, got shape {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ConfigError("A metric map must be finite")
        W.flags.writeable = False
        object.__setattr__(self, "W", W)

    @classmethod
    def identity(cls, d: int):
        return cls(np.eye(d))

    @property
    def M(self) -> np.ndarray:
        return self.W.T @ self.W

    def transform(self, x) -> np.ndarray:
        """W x for a vector, or W x_i for every row of a matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.W.shape[1]:
            raise ConfigError(f"Feature width {x.shape[-1]} does not match metric input width {self.W.shape[1]}")
        return x @ self.W.T

    def __eq__(self, other):
        return isinstance(other, MetricParams) and np.array_equal(self.W, other.W)


@dataclass(frozen=True)
class MetricLossConfig:
    """
    Parameters
    ----------
    margin : float, optional
        tau, greater than 1 (default is 3).
    regularizer : float, optional
        lambda (default is 0.01).
    batch_size : int, optional
        (default is 2000).
    per_class : int, optional
        Features drawn per class and epoch (default is 10000).
    learning_rate : float, optional
        Initial learning rate (default is 1e-3).
    decay : float, optional
        Learning-rate factor applied every epoch (default is 0.9).
    epochs : int, optional
        (default is 20).
    seed : int, optional
    loss_norm : str, optional
        "pairs" divides the hinge sum by twice the pair count, "features"
        by the feature count (default is "pairs").
    fine_tune : bool, optional
        Whether the feature extractor is trained along with W (default
        is False).
    """

    margin: float = 3.0
    regularizer: float = 0.01
    batch_size: int = 2000
    per_class: int = 10000
    learning_rate: float = 1e-3
    decay: float = 0.9
    epochs: int = 20
    seed: int = 0
    loss_norm: str = "pairs"
    fine_tune: bool = False

    def __post_init__(self):
        if self.margin <= 1:
            raise ConfigError(f"The margin must exceed 1, got {self.margin}")
        if self.regularizer < 0:
            raise ConfigError(f"The regularizer cannot be negative, got {self.regularizer}")
        if self.batch_size < 2:
            raise ConfigError(f"A metric batch needs at least 2 features, got {self.batch_size}")
        if self.per_class < 1:
            raise ConfigError(f"per_class must be positive, got {self.per_class}")
        if self.learning_rate <= 0 or not 0 < self.decay <= 1:
            raise ConfigError("The learning rate must be positive and the decay in (0, 1]")
        if self.epochs < 0:
            raise ConfigError(f"The epoch count cannot be negative, got {self.epochs}")
        if self.loss_norm not in loss_norms:
            raise ConfigError(f"Unknown loss normalization '{self.loss_norm}' (expected pairs or features)")

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay ** epoch


def pair_labels(labels) -> np.ndarray:
    """+1 where two labels agree, -1 elsewhere."""
    labels = np.asarray(labels)
    return np.where(labels[:, None] == labels[None, :], 1.0, -1.0)


def _hinge_scale(n: int, loss_norm: str) -> float:
    if loss_norm == "pairs":
        return 1.0 / (n * (n - 1))
    if loss_norm == "features":
        return 1.0 / n
    raise ConfigError(f"Unknown loss normalization '{loss_norm}'")


def _hinges(W, features, labels, margin):
    Z = features @ W.T
    sq = cdist(Z, Z, "sqeuclidean")
    ell = pair_labels(labels)
    g = np.maximum(0.0, 1.0 - ell * (margin - sq))
    np.fill_diagonal(g, 0.0)
    return g, ell


@ensure_pair_batch
def metric_loss(W, features, labels, margin = 3.0, regularizer = 0.01, loss_norm = "pairs") -> float:
    n = len(features)
    g, _ = _hinges(W, features, labels, margin)
    hinge_sum = g[np.triu_indices(n, 1)].sum()
    return float(0.5 * regularizer * np.sum(W * W) + _hinge_scale(n, loss_norm) * hinge_sum)


@ensure_pair_batch
def metric_gradients(W, features, labels, margin = 3.0, regularizer = 0.01, loss_norm = "pairs"):
    """Gradients of `metric_loss` with respect to W and to every feature.

    With S_ij = l_ij for active hinges (g_ij > 0) and 0 otherwise, and the
    graph Laplacian L = diag(S 1) - S, the hinge sum has gradient
    2 W X^T L X in W and 2 L X W^T W in X.
    """
    n = len(features)
    g, ell = _hinges(W, features, labels, margin)
    S = np.where(g > 0, ell, 0.0)
    laplacian = np.diag(S.sum(axis=1)) - S
    scale = _hinge_scale(n, loss_norm)
    LX = laplacian @ features
    dW = regularizer * W + 2 * scale * W @ (features.T @ LX)
    dX = 2 * scale * LX @ (W.T @ W)
    return dW, dX


def _class_sampled_epoch(labels, classes, per_class: int, rng) -> np.ndarray:
    drawn = []
    for c in classes:
        members = np.flatnonzero(labels == c)
        drawn.append(rng.choice(members, size=per_class, replace=per_class > len(members)))
    return rng.permutation(np.concatenate(drawn))


def _check_batch(labels):
    if len(np.unique(labels)) < 2:
        warnings.warn("A metric-learning batch holds a single class; only same-class "
                      "constraints apply to it", DataWarning)


def train_metric(features, labels, config: MetricLossConfig = MetricLossConfig(), W = None) -> MetricParams:
    """Learn W on fixed features by SGD over class-sampled batches.

    W starts at the identity unless given.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise EmptyDataError("Metric learning needs features of at least two classes")
    W = np.eye(features.shape[1]) if W is None else np.array(W, dtype=np.float64)

    for epoch in range(config.epochs):
        rng = make_rng(config.seed, epoch)
        order = _class_sampled_epoch(labels, classes, config.per_class, rng)
        lr = config.learning_rate_at(epoch)
        total = 0.0
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            if len(batch) < 2:
                continue
            _check_batch(labels[batch])
            dW, _ = metric_gradients(W, features[batch], labels[batch], config.margin,
                                     config.regularizer, config.loss_norm)
            total += metric_loss(W, features[batch], labels[batch], config.margin,
                                 config.regularizer, config.loss_norm)
            batches += 1
            W = W - lr * dW
        logger.info("metric epoch %d/%d: mean loss %.4f, |W| %.4f", epoch + 1, config.epochs,
                    total / max(batches, 1), np.linalg.norm(W))
    return MetricParams(W)


def train_metric_network(split, network: NetworkParams, config: MetricLossConfig = MetricLossConfig(),
                         W = None):
    """Learn W jointly with the feature extractor of `network`.

    Batches are class-sampled labeled pixels of `split`; the feature
    gradient flows back through the truncated network, whose parameters
    start from `network`. Returns the metric and the fine-tuned network.
    """
    pool = PixelPool(split)
    classes = [c for c in range(pool.num_classes) if len(pool.by_class[c])]
    if len(classes) < 2:
        raise EmptyDataError("Metric learning needs labeled pixels of at least two classes")
    source = PatchSource(split, network.spec.input_side)
    d = network.spec.feature_width
    W = np.eye(d) if W is None else np.array(W, dtype=np.float64)
    net_config = TrainConfig(learning_rate=config.learning_rate, decay_factor=config.decay,
                             decay_epoch=1, momentum=0.0, batch_size=config.batch_size)
    params = network.copy()

    for epoch in range(config.epochs):
        rng = make_rng(config.seed, epoch)
        order = _class_sampled_epoch(pool.labels, classes, config.per_class, rng)
        lr = config.learning_rate_at(epoch)
        total, batches = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            refs = pool.take(order[start:start + config.batch_size])
            if len(refs) < 2:
                continue
            _check_batch(refs.labels)
            patches = source.patches(refs.image_index, refs.rows, refs.cols)
            feats, cache = forward_features(params, patches)
            dW, dX = metric_gradients(W, feats, refs.labels, config.margin, config.regularizer, config.loss_norm)
            total += metric_loss(W, feats, refs.labels, config.margin, config.regularizer, config.loss_norm)
            batches += 1
            params = sgd_step(params, backward_features(params, cache, dX), net_config, epoch)
            W = W - lr * dW
        logger.info("metric fine-tune epoch %d/%d: mean loss %.4f", epoch + 1, config.epochs,
                    total / max(batches, 1))
    return MetricParams(W), params


def collect_cell_features(split, network: NetworkParams):
    """Feature vectors and majority labels of every labeled cell of a split."""
    features, labels = [], []
    for record in split:
        fmap = extract_features(network, record.image)
        cells = cell_labels(record.labels, fmap.stride, split.catalog.unlabeled_id)
        keep = cells != split.catalog.unlabeled_id
        features.append(fmap.features[keep])
        labels.append(cells[keep])
    return np.concatenate(features), np.concatenate(labels)


def transform(W, x) -> np.ndarray:
    """W x (or W x_i for every row of x)."""
    params = W if isinstance(W, MetricParams) else MetricParams(W)
    return params.transform(x)


def _write_metric(metric: MetricParams, network):
    def write(writer):
        writer.array(metric.W)
        writer.uint(0 if network is None else 1)
        if network is not None:
            writer.blob(params_to_bytes(network))
    return write


def _read_metric(reader):
    try:
        metric = MetricParams(reader.array())
    except ConfigError as e:
        raise FormatError(f"{reader.source}: {e}") from e
    network = params_from_bytes(reader.blob(), f"{reader.source} network") if reader.uint() else None
    return metric, network


def save_metric(metric: MetricParams, path, network = None):
    """Write the metric, and the fine-tuned feature network if there is one."""
    _artifacts.write_file(path, METRIC_MAGIC, METRIC_VERSION, _write_metric(metric, network))
    logger.info("wrote metric to %s", path)


def load_metric(path):
    """Returns (MetricParams, NetworkParams or None)."""
    return _artifacts.read_file(path, METRIC_MAGIC, {METRIC_VERSION}, _read_metric)
