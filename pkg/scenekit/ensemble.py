"""Ensembles of patch classifiers trained under different sampling
strategies, and the local belief map they produce."""
from dataclasses import dataclass, replace
import logging

import numpy as np

from . import _artifacts
from .convnet import (NetworkParams, NetworkSpec, TrainConfig, cell_patches, forward,
                      params_from_bytes, params_to_bytes, train)
from .exceptions import ConfigError, EmptyDataError, FormatError, ScenekitError
from .sampling import SamplingConfig, all_strategies

logger = logging.getLogger(__name__)

ENSEMBLE_MAGIC = b"PENS"
ENSEMBLE_VERSION = 1


@dataclass(frozen=True)
class EnsembleModel:
    """
    A set of classifiers sharing one architecture.

    Parameters
    ----------
    members : tuple[tuple[str, NetworkParams], ...]
        (strategy tag, parameters) of every member.
    """

    members: tuple

    def __post_init__(self):
        object.__setattr__(self, "members", tuple((str(t), p) for t, p in self.members))
        if not self.members:
            raise ConfigError("An ensemble needs at least one member")
        spec = self.members[0][1].spec
        for tag, params in self.members:
            if params.spec != spec:
                raise ConfigError(f"Member '{tag}' does not share the ensemble's architecture")

    @property
    def spec(self) -> NetworkSpec:
        return self.members[0][1].spec

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def tags(self):
        return [tag for tag, _ in self.members]

    def member(self, tag: str) -> NetworkParams:
        """The parameters of the first member trained with `tag`."""
        for t, params in self.members:
            if t == tag:
                return params
        raise ConfigError(f"The ensemble has no '{tag}' member (members: {', '.join(self.tags)})")


@dataclass(frozen=True, eq=False)
class LocalBeliefMap:
    """Per-cell class distributions, shape (gh, gw, |L|)."""

    probs: np.ndarray
    stride: int
    image_shape: tuple

    @property
    def grid_shape(self):
        return self.probs.shape[:2]


def train_ensemble(split, strategies, spec: NetworkSpec, config: TrainConfig,
                   sampler: SamplingConfig = SamplingConfig()) -> EnsembleModel:
    """Train one network per entry of `strategies`.

    Member i uses seed `config.seed + i` for its initialization and
    `sampler.seed + i` for its sampling, so a strategy may be repeated.
    """
    strategies = list(strategies)
    if not strategies:
        raise ConfigError("An ensemble needs at least one strategy")
    members = []
    for i, strategy in enumerate(strategies):
        if strategy not in all_strategies:
            raise ConfigError(f"Unknown sampling strategy '{strategy}' for ensemble member {i}")
        member_sampler = replace(sampler, strategy=strategy, seed=sampler.seed + i)
        member_config = replace(config, seed=config.seed + i)
        logger.info("training ensemble member %d/%d (%s)", i + 1, len(strategies), strategy)
        try:
            params = train(split, member_sampler, spec, member_config)
        except ScenekitError as e:
            raise type(e)(f"Ensemble member {i} ({strategy}): {e}") from e
        members.append((strategy, params))
    return EnsembleModel(tuple(members))


def ensemble_fuse(distributions) -> np.ndarray:
    """The component-wise mean of a sequence of equally shaped distributions."""
    distributions = [np.asarray(d, dtype=np.float64) for d in distributions]
    if not distributions:
        raise EmptyDataError("Cannot fuse an empty sequence of distributions")
    shape = distributions[0].shape
    for d in distributions:
        if d.shape != shape:
            raise ConfigError(f"Cannot fuse distributions of shapes {shape} and {d.shape}")
    return np.mean(np.stack(distributions), axis=0)


def _member_probs(params: NetworkParams, patches, batch_size: int):
    return np.concatenate([forward(params, patches[i:i + batch_size])[0]
                           for i in range(0, len(patches), batch_size)])


def member_belief_maps(model: EnsembleModel, image, batch_size = 1024):
    """One LocalBeliefMap per member."""
    spec = model.spec
    patches, grid = cell_patches(image, spec.stride, spec.input_side)
    shape = tuple(np.shape(image)[:2])
    return [LocalBeliefMap(_member_probs(params, patches, batch_size).reshape(grid + (-1,)), spec.stride, shape)
            for _, params in model.members]


def local_belief_map(model: EnsembleModel, image, batch_size = 1024) -> LocalBeliefMap:
    """The fused belief of all members for every cell of an 8-bit image."""
    maps = member_belief_maps(model, image, batch_size)
    return LocalBeliefMap(ensemble_fuse([m.probs for m in maps]), maps[0].stride, maps[0].image_shape)


def _write_ensemble(model: EnsembleModel):
    def write(writer):
        writer.uint(model.size)
        for tag, params in model.members:
            writer.text(tag)
            writer.blob(params_to_bytes(params))
    return write


def _read_ensemble(reader) -> EnsembleModel:
    members = []
    for i in range(reader.uint()):
        tag = reader.text()
        params = params_from_bytes(reader.blob(), f"{reader.source} member {i}")
        members.append((tag, params))
    try:
        return EnsembleModel(tuple(members))
    except ConfigError as e:
        raise FormatError(f"{reader.source}: {e}") from e


def ensemble_to_bytes(model: EnsembleModel) -> bytes:
    return _artifacts.to_bytes(ENSEMBLE_MAGIC, ENSEMBLE_VERSION, _write_ensemble(model))


def ensemble_from_bytes(data: bytes, source = "<memory>") -> EnsembleModel:
    return _artifacts.from_bytes(data, ENSEMBLE_MAGIC, {ENSEMBLE_VERSION}, _read_ensemble, source)


def save_ensemble(model: EnsembleModel, path):
    _artifacts.write_file(path, ENSEMBLE_MAGIC, ENSEMBLE_VERSION, _write_ensemble(model))
    logger.info("wrote %d-member ensemble to %s", model.size, path)


def load_ensemble(path) -> EnsembleModel:
    return _artifacts.read_file(path, ENSEMBLE_MAGIC, {ENSEMBLE_VERSION}, _read_ensemble)
