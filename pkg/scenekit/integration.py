"""Fusing local and global beliefs into a labeling energy, pixel-wise
inference and evaluation."""
import csv
from dataclasses import dataclass
import io
import logging

import numpy as np

from ._utils import ensure_distribution
from .exceptions import ConfigError, EmptyDataError

logger = logging.getLogger(__name__)

EPSILON = 1e-12


@dataclass(frozen=True, eq=False)
class EnergyMap:
    """Per-cell energies of every class, shape (gh, gw, |L|)."""

    energies: np.ndarray
    stride: int
    image_shape: tuple

    @property
    def grid_shape(self):
        return self.energies.shape[:2]


@ensure_distribution
def local_energy(probs) -> np.ndarray:
    """-log(max(P, eps)), element-wise."""
    return -np.log(np.maximum(probs, EPSILON))


def _check_geometry(a, b):
    if a.grid_shape != b.grid_shape or a.stride != b.stride or tuple(a.image_shape) != tuple(b.image_shape):
        raise ConfigError(f"Belief maps disagree: grid {a.grid_shape} stride {a.stride} image {a.image_shape} "
                          f"vs grid {b.grid_shape} stride {b.stride} image {b.image_shape}")
    if a.probs.shape != b.probs.shape:
        raise ConfigError(f"Belief maps cover {a.probs.shape[-1]} and {b.probs.shape[-1]} classes")


def integrate(local, global_) -> EnergyMap:
    """The energy -log P_I - log P_G of every cell and class."""
    _check_geometry(local, global_)
    energies = local_energy(local.probs) + local_energy(global_.probs)
    return EnergyMap(energies, local.stride, tuple(local.image_shape))


def belief_energy(belief) -> EnergyMap:
    """The energy of a single belief map, for labeling from one source."""
    return EnergyMap(local_energy(belief.probs), belief.stride, tuple(belief.image_shape))


def infer_labels(energy: EnergyMap) -> np.ndarray:
    """The lowest-energy class of every cell (ties to the lowest id),
    replicated over the cell's pixels."""
    energies = np.asarray(energy.energies)
    if not np.all(np.isfinite(energies)):
        raise ConfigError("Energies must be finite")
    cells = np.argmin(energies, axis=-1)
    s = energy.stride
    h, w = energy.image_shape[:2]
    return np.repeat(np.repeat(cells, s, axis=0), s, axis=1)[:h, :w].astype(np.int64)


@dataclass(frozen=True, eq=False)
class EvalReport:
    """
    Pixel accuracy statistics.

    Parameters
    ----------
    confusion : np.ndarray
        (|L|, |L|) counts; rows are ground-truth classes, columns predictions.
    names : tuple[str, ...]
        Class names.

    Attributes
    ----------
    gpa : float
        Global pixel accuracy, the fraction of labeled pixels predicted right.
    aca : float
        Average per-class accuracy, the mean recall of the classes present
        in the ground truth.
    recalls : np.ndarray
        Per-class recall; 0 for classes absent from the ground truth.
    """

    confusion: np.ndarray
    names: tuple

    @property
    def class_counts(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def present(self) -> np.ndarray:
        return self.class_counts > 0

    @property
    def recalls(self) -> np.ndarray:
        counts = self.class_counts
        return np.divide(np.diag(self.confusion), counts, out=np.zeros(len(counts)), where=counts > 0)

    @property
    def gpa(self) -> float:
        return float(np.trace(self.confusion) / self.total)

    @property
    def aca(self) -> float:
        return float(self.recalls[self.present].mean())

    def recall(self, name: str) -> float:
        return float(self.recalls[self.names.index(name)])

    def to_text(self) -> str:
        lines = [f"gpa\t{self.gpa!r}", f"aca\t{self.aca!r}", f"labeled_pixels\t{self.total}"]
        for name, recall, present in zip(self.names, self.recalls, self.present):
            if present:
                lines.append(f"recall.{name}\t{float(recall)!r}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["truth\\predicted"] + list(self.names))
        for name, row in zip(self.names, self.confusion):
            writer.writerow([name] + [int(v) for v in row])
        return buffer.getvalue()

    def write(self, text_path, csv_path):
        with open(text_path, "w", encoding="utf-8") as fp:
            fp.write(self.to_text())
        with open(csv_path, "w", encoding="utf-8", newline="") as fp:
            fp.write(self.to_csv())
        logger.info("wrote evaluation report to %s and %s", text_path, csv_path)


def evaluate(predictions, truths, catalog) -> EvalReport:
    """Compare predicted label maps with ground truth, ignoring
    unannotated ground-truth pixels.

    `predictions` and `truths` are matching label maps, or matching
    sequences of them.
    """
    if isinstance(predictions, np.ndarray) and predictions.ndim == 2:
        predictions, truths = [predictions], [truths]
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise ConfigError(f"{len(predictions)} predictions for {len(truths)} ground-truth maps")

    n = catalog.count
    confusion = np.zeros((n, n), dtype=np.int64)
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        pred = np.asarray(pred, dtype=np.int64)
        truth = np.asarray(truth, dtype=np.int64)
        if pred.shape != truth.shape:
            raise ConfigError(f"Map {i}: prediction {pred.shape} and ground truth {truth.shape} differ in size")
        keep = truth != catalog.unlabeled_id
        if np.any((pred[keep] < 0) | (pred[keep] >= n)):
            raise ConfigError(f"Map {i}: predictions must be class ids")
        confusion += np.bincount(truth[keep] * n + pred[keep], minlength=n * n).reshape(n, n)
    if confusion.sum() == 0:
        raise EmptyDataError("There are no labeled ground-truth pixels to evaluate")
    return EvalReport(confusion, catalog.names)
