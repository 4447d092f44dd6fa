from .baseLayer import BaseLayer, LayerSpec

from .conv import Conv
from .dense import Dense
from .pool import MaxPool
from .relu import ReLU
from .softmax import Softmax

from ..exceptions import ConfigError

all_layers: dict = {layer.kind: layer for layer in [
    Conv,
    ReLU,
    MaxPool,
    Dense,
    Softmax,
]}


def build_layer(spec: LayerSpec) -> BaseLayer:
    try:
        return all_layers[spec.kind](spec)
    except KeyError:
        raise ConfigError(f"Unknown layer kind '{spec.kind}'") from None
