from dataclasses import dataclass
import logging
import warnings

import numpy as np
from scipy.special import log_softmax

from . import _artifacts
from ._utils import make_rng
from .data import PatchSource, extract_patches, preprocess, compute_class_frequencies
from .exceptions import ConfigError, DataWarning, FormatError
from .layers import LayerSpec, build_layer
from .sampling import PixelPool, SamplingConfig, sample_epoch

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"PNET"
MODEL_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """
    A feed-forward patch classifier.

    Parameters
    ----------
    layers : tuple[LayerSpec, ...]
        The layer sequence. It must end with a fully-connected layer of
        width |L| followed by a softmax, and hold at least one earlier
        fully-connected layer, whose (rectified) output is the feature
        vector.
    input_side : int
        Side of the square input patches (odd).
    channels : int, optional
        Input channels (default is 3).

    Attributes
    ----------
    stride : int
        Feature-map stride, the product of the pooling strides.
    feature_width : int
        Width d of the feature vector.
    num_classes : int
        Width of the classification head.
    truncation : int
        Number of leading layers that make up the feature extractor.
    """

    layers: tuple
    input_side: int
    channels: int = 3

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.input_side < 1 or self.input_side % 2 == 0:
            raise ConfigError(f"The input side must be a positive odd integer, got {self.input_side}")
        if len(self.layers) < 2 or self.layers[-1].kind != "softmax" or self.layers[-2].kind != "dense":
            raise ConfigError("A network must end with a fully-connected layer and a softmax")
        if sum(1 for layer in self.layers if layer.kind == "dense") < 2:
            raise ConfigError("A network needs a fully-connected feature layer before its classifier")
        for layer in self.layers:
            if layer.kind in ("conv", "dense") and layer.count < 1:
                raise ConfigError(f"Layer '{layer}' needs a positive output count")
            if layer.kind in ("conv", "pool") and (layer.size < 1 or layer.stride < 1):
                raise ConfigError(f"Layer '{layer}' needs a positive size and stride")
        self.shapes()

    @classmethod
    def desk(cls, num_classes: int, input_side = 17, filters = (8, 16, 16), feature_width = 16):
        """Three 3x3 conv / rectifier / 2x2 max-pool blocks, so the stride is 8."""
        layers = []
        for count in filters:
            layers += [LayerSpec("conv", 3, count), LayerSpec("relu"), LayerSpec("pool", 2, 0, 2)]
        layers += [LayerSpec("dense", 0, feature_width), LayerSpec("relu"),
                   LayerSpec("dense", 0, num_classes), LayerSpec("softmax")]
        return cls(tuple(layers), input_side)

    @classmethod
    def full_scale(cls, num_classes: int):
        """65x65 patches, three 5x5 conv blocks with 2x2 pooling and a
        64-wide feature layer. The layer sizes approximate a published
        figure rather than an exact recipe."""
        layers = []
        for count in (16, 64, 128):
            layers += [LayerSpec("conv", 5, count), LayerSpec("relu"), LayerSpec("pool", 2, 0, 2)]
        layers += [LayerSpec("dense", 0, 64), LayerSpec("relu"),
                   LayerSpec("dense", 0, num_classes), LayerSpec("softmax")]
        return cls(tuple(layers), 65)

    def shapes(self):
        """Per-layer input item shapes, followed by the output item shape."""
        shape = (self.channels, self.input_side, self.input_side)
        shapes = [shape]
        for spec in self.layers:
            shape = build_layer(spec).output_shape(shape)
            if any(n < 1 for n in shape):
                raise ConfigError(f"Layer '{spec}' produces an empty output {shape}")
            shapes.append(shape)
        return shapes

    @property
    def stride(self) -> int:
        return int(np.prod([layer.stride for layer in self.layers if layer.kind == "pool"], dtype=np.int64))

    @property
    def truncation(self) -> int:
        return len(self.layers) - 2

    @property
    def feature_width(self) -> int:
        return int(np.prod(self.shapes()[self.truncation]))

    @property
    def num_classes(self) -> int:
        return self.layers[-2].count

    def to_text(self) -> str:
        lines = [f"input_side {self.input_side}", f"channels {self.channels}"]
        lines += [f"layer {layer}" for layer in self.layers]
        return "\n".join(lines)

    @classmethod
    def from_text(cls, text: str):
        input_side, channels, layers = None, 3, []
        for line in text.splitlines():
            key, _, value = line.partition(" ")
            if key == "input_side":
                input_side = int(value)
            elif key == "channels":
                channels = int(value)
            elif key == "layer":
                layers.append(LayerSpec.parse(value))
            else:
                raise ConfigError(f"Unknown network description entry '{line}'")
        if input_side is None:
            raise ConfigError("The network description has no input side")
        return cls(tuple(layers), input_side, channels)


@dataclass(eq=False)
class NetworkParams:
    """Per-layer parameter dicts ("W", "b") and momentum buffers of
    identical shapes. Layers without parameters hold empty dicts."""

    spec: NetworkSpec
    weights: list
    velocity: list

    def copy(self):
        return NetworkParams(self.spec,
                             [{k: v.copy() for k, v in layer.items()} for layer in self.weights],
                             [{k: v.copy() for k, v in layer.items()} for layer in self.velocity])

    def arrays(self):
        """The parameter arrays in declaration order."""
        for layer in self.weights:
            for key in sorted(layer):
                yield layer[key]

    def equals(self, other) -> bool:
        if not isinstance(other, NetworkParams) or self.spec != other.spec:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))

    def __eq__(self, other):
        return self.equals(other)


@dataclass(frozen=True)
class TrainConfig:
    """
    Classifier training settings.

    Parameters
    ----------
    learning_rate : float, optional
        Initial learning rate (default is 0.01).
    decay_factor : float, optional
        Factor applied to the learning rate every `decay_epoch` epochs
        (default is 0.1).
    decay_epoch : int, optional
        (default is 20).
    momentum : float, optional
        (default is 0.9).
    batch_size : int, optional
        (default is 100).
    epochs : int, optional
        (default is 30).
    seed : int, optional
        Seed of the parameter initialization (default is 0).
    class_weights : tuple[float, ...], optional
        Per-class loss weights; empty means every class weighs 1.
    """

    learning_rate: float = 0.01
    decay_factor: float = 0.1
    decay_epoch: int = 20
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 30
    seed: int = 0
    class_weights: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))
        if self.learning_rate <= 0:
            raise ConfigError(f"The learning rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"The momentum must lie in [0, 1), got {self.momentum}")
        if not 0 < self.decay_factor <= 1:
            raise ConfigError(f"The decay factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_epoch < 1:
            raise ConfigError(f"The decay epoch must be at least 1, got {self.decay_epoch}")
        if self.batch_size < 1:
            raise ConfigError(f"The batch size must be at least 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"The epoch count cannot be negative, got {self.epochs}")
        if any(w < 0 for w in self.class_weights):
            raise ConfigError("Class weights cannot be negative")

    def learning_rate_at(self, epoch: int) -> float:
        return self.learning_rate * self.decay_factor ** (epoch // self.decay_epoch)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    layer_caches: list
    output: np.ndarray
    batch_size: int


@dataclass(frozen=True, eq=False)
class PixelFeatureMap:
    """Feature vectors of a grid of cells of one image. Cell (r, c)
    describes the patch centered at (r * stride + stride // 2,
    c * stride + stride // 2), clamped to the image."""

    features: np.ndarray
    stride: int
    image_shape: tuple

    @property
    def grid_shape(self):
        return self.features.shape[:2]

    @property
    def heights(self) -> np.ndarray:
        """Normalized height coordinate z in [0, 1] of every cell row."""
        rows, _ = cell_centers(self.image_shape, self.stride, warn=False)
        return rows / max(self.image_shape[0] - 1, 1)


def inverse_frequency_weights(table) -> tuple:
    """Loss weights proportional to 1 / frequency, averaging 1 over the
    present classes. Absent classes weigh 0."""
    freqs = table.frequencies
    weights = np.zeros(len(freqs))
    present = freqs > 0
    weights[present] = 1.0 / freqs[present]
    weights *= present.sum() / weights.sum()
    return tuple(float(w) for w in weights)


def init_params(spec: NetworkSpec, seed = 0) -> NetworkParams:
    rng = make_rng(seed)
    weights = []
    for spec_layer, shape in zip(spec.layers, spec.shapes()):
        weights.append(build_layer(spec_layer).init_params(shape, rng))
    velocity = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in weights]
    return NetworkParams(spec, weights, velocity)


def _as_batch(params: NetworkParams, patches) -> np.ndarray:
    patches = np.asarray(patches, dtype=np.float64)
    s, c = params.spec.input_side, params.spec.channels
    if patches.ndim != 4 or patches.shape[1:] != (s, s, c):
        raise ConfigError(f"Expected a batch of {s}x{s}x{c} patches, got shape {patches.shape}")
    return patches.transpose(0, 3, 1, 2)


def _run(params: NetworkParams, x, stop: int):
    caches = []
    for spec_layer, weights in zip(params.spec.layers[:stop], params.weights[:stop]):
        x, cache = build_layer(spec_layer).forward(x, weights)
        caches.append(cache)
    return x, caches


def forward(params: NetworkParams, patches):
    """Class distributions of a batch of (N, s, s, C) patches, plus the
    cache `backward` needs."""
    logits, caches = _run(params, _as_batch(params, patches), len(params.spec.layers) - 1)
    probs, softmax_cache = build_layer(params.spec.layers[-1]).forward(logits, {})
    return probs, ForwardCache(caches + [softmax_cache], logits, len(logits))


def forward_features(params: NetworkParams, patches):
    """FC-1 feature vectors (N, d) of a batch of patches, plus a cache for
    `backward_features`."""
    x = _as_batch(params, patches)
    features, caches = _run(params, x, params.spec.truncation)
    features = features.reshape(len(x), -1)
    return features, ForwardCache(caches, features, len(x))


def _check_labels(params, labels, cache: ForwardCache):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (cache.batch_size,):
        raise ConfigError(f"{labels.size} labels given for a cached batch of {cache.batch_size}")
    if np.any(labels < 0) or np.any(labels >= params.spec.num_classes):
        raise ConfigError("Target labels must be class ids")
    return labels


def _sample_weights(labels, class_weights, num_classes):
    if not class_weights:
        return np.ones(len(labels))
    if len(class_weights) != num_classes:
        raise ConfigError(f"{len(class_weights)} class weights given for {num_classes} classes")
    return np.asarray(class_weights)[labels]


def cross_entropy(logits, labels, class_weights = ()) -> float:
    """Mean (optionally class-weighted) negative log-likelihood."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = _sample_weights(labels, class_weights, logits.shape[1])
    nll = -log_softmax(logits, axis=1)[np.arange(len(labels)), labels]
    return float(np.mean(weights * nll))


def loss(params: NetworkParams, patches, labels, class_weights = ()) -> float:
    _, cache = forward(params, patches)
    labels = _check_labels(params, labels, cache)
    return cross_entropy(cache.output, labels, class_weights)


def _backprop(params: NetworkParams, caches, grad, stop: int):
    grads = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in params.weights]
    for i in reversed(range(stop)):
        grad, layer_grads = build_layer(params.spec.layers[i]).backward(grad, caches[i], params.weights[i])
        grads[i] = layer_grads if layer_grads else grads[i]
    return grads, grad


def backward(params: NetworkParams, cache: ForwardCache, labels, class_weights = ()):
    """Gradients of the mean cross-entropy for the batch cached by `forward`.

    Returns one dict per layer, keyed like `params.weights`.
    """
    if len(cache.layer_caches) != len(params.spec.layers):
        raise ConfigError("The cache was not produced by a full forward pass of this network")
    labels = _check_labels(params, labels, cache)
    probs = cache.layer_caches[-1]
    weights = _sample_weights(labels, class_weights, params.spec.num_classes)
    dlogits = probs.copy()
    dlogits[np.arange(len(labels)), labels] -= 1.0
    dlogits *= weights[:, None] / len(labels)
    grads, _ = _backprop(params, cache.layer_caches, dlogits, len(params.spec.layers) - 1)
    return grads


def backward_features(params: NetworkParams, cache: ForwardCache, dfeatures):
    """Gradients of the feature extractor given the gradient with respect
    to the features cached by `forward_features`. Layers past the
    extractor get zero gradients."""
    stop = params.spec.truncation
    if len(cache.layer_caches) != stop:
        raise ConfigError("The cache was not produced by forward_features on this network")
    dfeatures = np.asarray(dfeatures, dtype=np.float64)
    if dfeatures.shape != cache.output.shape:
        raise ConfigError(f"Feature gradient shape {dfeatures.shape} does not match {cache.output.shape}")
    shape = (cache.batch_size,) + tuple(params.spec.shapes()[stop])
    grads, _ = _backprop(params, cache.layer_caches, dfeatures.reshape(shape), stop)
    return grads


def sgd_step(params: NetworkParams, grads, config: TrainConfig, epoch: int = 0) -> NetworkParams:
    """One momentum step: v <- mu * v - lr * g, w <- w + v."""
    lr = config.learning_rate_at(epoch)
    new = params.copy()
    for weights, velocity, layer_grads in zip(new.weights, new.velocity, grads):
        for key in weights:
            if layer_grads[key].shape != weights[key].shape:
                raise ConfigError(f"Gradient shape {layer_grads[key].shape} does not match "
                                  f"parameter shape {weights[key].shape}")
            velocity[key] = config.momentum * velocity[key] - lr * layer_grads[key]
            weights[key] = weights[key] + velocity[key]
    return new


def train(split, sampler: SamplingConfig, spec: NetworkSpec, config: TrainConfig, params = None) -> NetworkParams:
    """
    Train a patch classifier with momentum SGD.

    The sample list is redrawn at the start of every epoch.

    Parameters
    ----------
    split : DatasetSplit
        Training images.
    sampler : SamplingConfig
        How patches are drawn each epoch.
    spec : NetworkSpec
        The architecture. Its classifier width must equal the number of
        classes of the split.
    config : TrainConfig
        Optimizer settings.
    params : NetworkParams, optional
        Starting parameters (default is a fresh initialization from
        `config.seed`).
    """
    if spec.num_classes != split.catalog.count:
        raise ConfigError(f"The network classifies {spec.num_classes} classes but the split has "
                          f"{split.catalog.count}")
    params = init_params(spec, config.seed) if params is None else params
    if config.epochs == 0:
        return params

    source = PatchSource(split, spec.input_side)
    pool = PixelPool(split)
    table = compute_class_frequencies(split)
    for epoch in range(config.epochs):
        samples = sample_epoch(split, sampler, epoch, pool, table)
        total, count = 0.0, 0
        for start in range(0, len(samples), config.batch_size):
            stop = start + config.batch_size
            labels = samples.labels[start:stop]
            patches = source.patches(samples.image_index[start:stop], samples.rows[start:stop],
                                     samples.cols[start:stop])
            _, cache = forward(params, patches)
            grads = backward(params, cache, labels, config.class_weights)
            params = sgd_step(params, grads, config, epoch)
            total += cross_entropy(cache.output, labels, config.class_weights) * len(labels)
            count += len(labels)
        logger.info("epoch %d/%d (%s): mean loss %.4f, lr %g", epoch + 1, config.epochs,
                    sampler.strategy, total / count, config.learning_rate_at(epoch))
    return params


def cell_centers(image_shape, stride: int, warn = True):
    """Pixel rows and columns of the cell centers of an image."""
    h, w = image_shape[:2]
    if h < stride or w < stride:
        raise ConfigError(f"A {h}x{w} image is smaller than one {stride}x{stride} cell")
    rows = np.arange(-(-h // stride)) * stride + stride // 2
    cols = np.arange(-(-w // stride)) * stride + stride // 2
    if warn and (rows[-1] >= h or cols[-1] >= w):
        warnings.warn(f"A {h}x{w} image is not a multiple of the stride {stride}; "
                      "the last cell centers are clamped to the image", DataWarning)
    return np.minimum(rows, h - 1), np.minimum(cols, w - 1)


def cell_patches(image, stride: int, side: int):
    """Preprocessed patches of every cell center, in row-major cell order,
    and the grid shape."""
    rows, cols = cell_centers(np.shape(image), stride)
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    patches = extract_patches(preprocess(image), grid_r.ravel(), grid_c.ravel(), side)
    return patches, (len(rows), len(cols))


def extract_features(params: NetworkParams, image, batch_size = 1024) -> PixelFeatureMap:
    """The feature map of an 8-bit image: the FC-1 activation of every
    cell's patch."""
    spec = params.spec
    patches, grid = cell_patches(image, spec.stride, spec.input_side)
    features = np.concatenate([forward_features(params, patches[i:i + batch_size])[0]
                               for i in range(0, len(patches), batch_size)])
    return PixelFeatureMap(features.reshape(grid + (-1,)), spec.stride, tuple(np.shape(image)[:2]))


def _write_params(params: NetworkParams):
    def write(writer):
        writer.text(params.spec.to_text())
        for array in params.arrays():
            writer.floats(array)
    return write


def _read_params(reader) -> NetworkParams:
    try:
        spec = NetworkSpec.from_text(reader.text())
    except (ConfigError, ValueError) as e:
        raise FormatError(f"{reader.source}: invalid network description ({e})") from e
    template = init_params(spec)
    for layer in template.weights:
        for key in sorted(layer):
            layer[key] = reader.floats(layer[key].size).reshape(layer[key].shape)
    template.velocity = [{k: np.zeros_like(v) for k, v in layer.items()} for layer in template.weights]
    return template


def params_to_bytes(params: NetworkParams) -> bytes:
    return _artifacts.to_bytes(MODEL_MAGIC, MODEL_VERSION, _write_params(params))


def params_from_bytes(data: bytes, source = "<memory>") -> NetworkParams:
    return _artifacts.from_bytes(data, MODEL_MAGIC, {MODEL_VERSION}, _read_params, source)


def save_model(params: NetworkParams, path):
    _artifacts.write_file(path, MODEL_MAGIC, MODEL_VERSION, _write_params(params))
    logger.info("wrote model to %s", path)


def load_model(path) -> NetworkParams:
    return _artifacts.read_file(path, MODEL_MAGIC, {MODEL_VERSION}, _read_params)
