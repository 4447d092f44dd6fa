import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError
from .baseLayer import BaseLayer


def _pooled_side(n: int, k: int, s: int) -> int:
    return max(-(-(n - k) // s), 0) + 1


class MaxPool(BaseLayer):
    """Max pooling over `size` x `size` windows every `stride` pixels.

    A window hanging over the far edge pools over its in-bounds entries,
    so an input of side n gives ceil((n - size) / stride) + 1 outputs.
    """

    kind = "pool"
    __name__ = "MaxPool"

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ConfigError(f"Max pooling needs a (C, H, W) input, got {tuple(input_shape)}")
        k, s = self.spec.size, self.spec.stride
        if not 1 <= s <= k:
            raise ConfigError(f"Pooling stride {s} must lie in [1, {k}]")
        c, h, w = input_shape
        return (c, _pooled_side(h, k, s), _pooled_side(w, k, s))

    def forward(self, x, params):
        n, c, h, w = x.shape
        k, s = self.spec.size, self.spec.stride
        ho, wo = _pooled_side(h, k, s), _pooled_side(w, k, s)
        hp, wp = (ho - 1) * s + k, (wo - 1) * s + k
        padded = np.full((n, c, hp, wp), -np.inf)
        padded[:, :, :h, :w] = x
        windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        windows = windows.reshape(n, c, ho, wo, k * k)
        argmax = windows.argmax(axis=-1)
        y = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
        return y, (x.shape, argmax)

    def backward(self, dy, cache, params):
        shape, argmax = cache
        n, c, h, w = shape
        k, s = self.spec.size, self.spec.stride
        ho, wo = argmax.shape[2], argmax.shape[3]
        rows = np.arange(ho)[:, None] * s + argmax // k
        cols = np.arange(wo)[None, :] * s + argmax % k
        nn, cc = np.meshgrid(np.arange(n), np.arange(c), indexing="ij")
        dx = np.zeros((n, c, (ho - 1) * s + k, (wo - 1) * s + k))
        np.add.at(dx, (nn[..., None, None], cc[..., None, None], rows, cols), dy)
        return dx[:, :, :h, :w], {}
