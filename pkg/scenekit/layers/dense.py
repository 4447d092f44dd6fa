import numpy as np

from .baseLayer import BaseLayer, glorot_uniform


class Dense(BaseLayer):
    """Fully-connected layer with `count` outputs. Inputs are flattened."""

    kind = "dense"
    __name__ = "Dense"

    def output_shape(self, input_shape):
        return (self.spec.count,)

    def init_params(self, input_shape, rng):
        fan_in = int(np.prod(input_shape))
        W = glorot_uniform((self.spec.count, fan_in), fan_in, self.spec.count, rng)
        return {"W": W, "b": np.zeros(self.spec.count)}

    def forward(self, x, params):
        flat = x.reshape(x.shape[0], -1)
        return flat @ params["W"].T + params["b"], (x.shape, flat)

    def backward(self, dy, cache, params):
        shape, flat = cache
        grads = {"W": dy.T @ flat, "b": dy.sum(axis=0)}
        return (dy @ params["W"]).reshape(shape), grads
