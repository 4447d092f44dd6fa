"""Alternative global descriptors, used as retrieval baselines."""
import numpy as np

from .convnet import extract_features
from .exceptions import ConfigError
from .transfer import ExemplarSet, PyramidConfig, pool_global_feature, region_bounds


def color_histogram_descriptor(image, bins: int = 4) -> np.ndarray:
    """Joint RGB histogram of an 8-bit image with `bins` levels per
    channel, normalized to sum to one."""
    image = np.asarray(image, dtype=np.int64)
    if bins < 1 or 256 % bins:
        raise ConfigError(f"The bin count must divide 256, got {bins}")
    quantized = image // (256 // bins)
    codes = (quantized[..., 0] * bins + quantized[..., 1]) * bins + quantized[..., 2]
    hist = np.bincount(codes.ravel(), minlength=bins ** 3).astype(np.float64)
    return hist / hist.sum()


def label_histogram_descriptor(labels, catalog, pyramid: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """Pyramid of normalized class histograms of a ground-truth label map.

    Unlabeled pixels are ignored; a region with none labeled contributes
    zeros.
    """
    labels = np.asarray(labels, dtype=np.int64)
    h, w = labels.shape
    parts = []
    for g in pyramid.levels:
        for r0, r1 in region_bounds(h, g):
            for c0, c1 in region_bounds(w, g):
                region = labels[r0:r1, c0:c1]
                region = region[region != catalog.unlabeled_id]
                hist = np.bincount(region, minlength=catalog.count).astype(np.float64)
                parts.append(hist / hist.sum() if hist.sum() else hist)
    return np.concatenate(parts)


def ensemble_global_feature(model, image, pyramid: PyramidConfig = PyramidConfig()) -> np.ndarray:
    """The pyramid descriptors of every ensemble member, concatenated."""
    return np.concatenate([pool_global_feature(extract_features(params, image), pyramid)
                           for _, params in model.members])


def histogram_intersection(query, gallery, size: int) -> ExemplarSet:
    """Retrieve the `size` gallery histograms with the largest intersection
    with `query`, ties going to the lower index.

    Distances are reported as 1 - intersection, which for normalized
    histograms is half their L1 distance.
    """
    query = np.asarray(query, dtype=np.float64).ravel()
    gallery = np.asarray(gallery, dtype=np.float64)
    if gallery.ndim != 2 or gallery.shape[1] != query.size:
        raise ConfigError(f"Gallery shape {gallery.shape} does not match a query of size {query.size}")
    if not 1 <= size <= len(gallery):
        raise ConfigError(f"Cannot retrieve {size} exemplars from a gallery of {len(gallery)}")
    distances = 1.0 - np.minimum(gallery, query[None, :]).sum(axis=1)
    order = np.argsort(distances, kind="stable")[:size]
    return ExemplarSet(order, distances[order])
