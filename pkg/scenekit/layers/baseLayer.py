from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigError


@dataclass(frozen=True)
class LayerSpec:
    """One entry of a network's layer sequence.

    `size` is the kernel or window side, `count` the number of filters
    (convolution) or output units (fully-connected), and `stride` the
    step of a convolution or pooling window.
    """

    kind: str
    size: int = 0
    count: int = 0
    stride: int = 1

    def __str__(self):
        return f"{self.kind} {self.size} {self.count} {self.stride}"

    @classmethod
    def parse(cls, text: str):
        parts = text.split()
        if len(parts) != 4:
            raise ConfigError(f"Malformed layer description: '{text}'")
        try:
            return cls(parts[0], int(parts[1]), int(parts[2]), int(parts[3]))
        except ValueError:
            raise ConfigError(f"Malformed layer description: '{text}'") from None


class BaseLayer:
    """
    A network layer operating on batches in (N, C, H, W) layout, or (N, D)
    after a fully-connected layer.

    Methods
    -------
    output_shape(input_shape)
        Shape of one output item given the shape of one input item.
    init_params(input_shape, rng)
        Fresh parameters, as a dict of arrays (empty for layers without any).
    forward(x, params)
        Returns the output batch and a cache for `backward`.
    backward(dy, cache, params)
        Returns the gradient with respect to the input and a dict of
        parameter gradients keyed like `params`.
    """

    kind = ""
    __name__ = "layer"

    def __init__(self, spec: LayerSpec):
        self.spec = spec

    def __repr__(self):
        return f"{self.__name__}({self.spec})"

    def output_shape(self, input_shape) -> tuple:
        return tuple(input_shape)

    def init_params(self, input_shape, rng) -> dict:
        return {}

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, dy, cache, params):
        raise NotImplementedError


def glorot_uniform(shape, fan_in: int, fan_out: int, rng) -> np.ndarray:
    """Uniform in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)
