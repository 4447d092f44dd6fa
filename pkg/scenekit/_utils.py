import functools

import numpy as np

from .exceptions import ConfigError


def ensure_distribution(f):
    """A decorator to make sure the first argument of a function is an
    array of probability distributions over its last axis.

    The input is converted to a float64 array before the wrapped
    function sees it. Negative or non-finite entries, or rows that do
    not sum to one, raise a ConfigError.
    """
    @functools.wraps(f)
    def wrapper(probs, *args, **kwargs):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim == 0 or probs.shape[-1] == 0:
            raise ConfigError(f"'{f.__name__}' expects a distribution, got shape {probs.shape}")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ConfigError(f"'{f.__name__}' expects nonnegative finite probabilities")
        if not np.allclose(probs.sum(axis=-1), 1.0, atol=1e-6):
            raise ConfigError(f"'{f.__name__}' expects probabilities summing to 1")
        return f(probs, *args, **kwargs)

    return wrapper


def ensure_pair_batch(f):
    """A decorator for metric-learning functions called as
    `f(W, features, labels, ...)`.

    It converts the map and the features to float64 arrays and the
    labels to int64, then checks that the batch holds at least two
    features whose width matches the map.
    """
    @functools.wraps(f)
    def wrapper(W, features, labels, *args, **kwargs):
        W = np.asarray(W, dtype=np.float64)
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if W.ndim != 2 or features.ndim != 2:
            raise ConfigError("The metric map and the features must both be 2-D arrays")
        if features.shape[0] < 2:
            raise ConfigError(f"A metric batch needs at least 2 features, got {features.shape[0]}")
        if features.shape[1] != W.shape[1]:
            raise ConfigError(f"Feature width {features.shape[1]} does not match "
                              f"metric input width {W.shape[1]}")
        if labels.shape != (features.shape[0],):
            raise ConfigError("There must be exactly one label per feature")
        return f(W, features, labels, *args, **kwargs)

    return wrapper


def make_rng(seed, *streams):
    """Build a numpy Generator from a seed plus optional stream ids (epoch,
    member, query index, ...) so derived random streams never collide."""
    return np.random.default_rng([int(seed), *[int(s) for s in streams]])
