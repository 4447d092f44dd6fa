import numpy as np

from .baseLayer import BaseLayer


class ReLU(BaseLayer):

    kind = "relu"
    __name__ = "ReLU"

    def forward(self, x, params):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, dy, cache, params):
        return dy * cache, {}
