import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError
from .baseLayer import BaseLayer, glorot_uniform


class Conv(BaseLayer):
    """`count` filters of side `size`, no padding."""

    kind = "conv"
    __name__ = "Conv"

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ConfigError(f"A convolution needs a (C, H, W) input, got {tuple(input_shape)}")
        c, h, w = input_shape
        k, s = self.spec.size, self.spec.stride
        if h < k or w < k:
            raise ConfigError(f"A {k}x{k} convolution does not fit a {h}x{w} input")
        return (self.spec.count, (h - k) // s + 1, (w - k) // s + 1)

    def init_params(self, input_shape, rng):
        c = input_shape[0]
        k, f = self.spec.size, self.spec.count
        W = glorot_uniform((f, c, k, k), c * k * k, f * k * k, rng)
        return {"W": W, "b": np.zeros(f)}

    def _windows(self, x):
        k, s = self.spec.size, self.spec.stride
        return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]

    def forward(self, x, params):
        windows = self._windows(x)
        y = np.tensordot(windows, params["W"], axes=([1, 4, 5], [1, 2, 3]))
        y = y.transpose(0, 3, 1, 2) + params["b"][None, :, None, None]
        return y, x

    def backward(self, dy, cache, params):
        x = cache
        W = params["W"]
        k, s = self.spec.size, self.spec.stride
        windows = self._windows(x)
        ho, wo = dy.shape[2], dy.shape[3]
        grads = {
            "W": np.tensordot(dy, windows, axes=([0, 2, 3], [0, 2, 3])),
            "b": dy.sum(axis=(0, 2, 3)),
        }
        dx = np.zeros_like(x)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += \
                    np.einsum("nfhw,fc->nchw", dy, W[:, :, i, j])
        return dx, grads
