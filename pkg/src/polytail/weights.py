"""Importance weights from group counts and the minority-weight policies."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Normalization",
    "MinorityKind",
    "WeightScheme",
    "compute_group_weights",
    "expand_to_examples",
    "minority_weight",
    "minority_scheme",
    "uniform_scheme",
    "write_weights_csv",
]


class Normalization(str, enum.Enum):
    MEAN_ONE = "mean_one"
    SUM_ONE = "sum_one"
    RAW = "raw"


class MinorityKind(str, enum.Enum):
    ONE = "one"
    TAU = "tau"
    TAU_CUBED = "tau_cubed"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class WeightScheme:
    weights: np.ndarray
    policy: str
    normalization: Normalization = Normalization.RAW

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or not np.all(np.isfinite(w)) or not np.all(w > 0):
            raise ValueError("weights must be a 1-D array of positive finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "normalization", Normalization(self.normalization))

    def __len__(self):
        return self.weights.size

    def scaled(self, factor: float) -> "WeightScheme":
        return WeightScheme(self.weights * factor, f"{self.policy}*{factor:g}", Normalization.RAW)


def _normalize(w: np.ndarray, normalization: Normalization) -> np.ndarray:
    if normalization is Normalization.MEAN_ONE:
        return w / w.mean()
    if normalization is Normalization.SUM_ONE:
        return w / w.sum()
    return w


def compute_group_weights(group_counts, exponent_c: float = 1.0, normalization=Normalization.MEAN_ONE) -> WeightScheme:
    """Per-example weights ``(1 / n_g) ** c``, normalized over the full set.

    Examples are ordered group by group, matching ``group_counts``; use
    :func:`expand_to_examples` for datasets with interleaved groups.
    ``c = 0`` gives uniform weights and ``c = 1`` the unbiased ones.
    """
    counts = np.asarray(group_counts, dtype=np.int64)
    if counts.ndim != 1 or counts.size == 0:
        raise ValueError("need at least one group count")
    if np.any(counts <= 0):
        raise ValueError(f"group counts must be positive, got {counts.tolist()}")
    if exponent_c < 0:
        raise ValueError("exponent must be non-negative")
    per_group = (1.0 / counts.astype(np.float64)) ** exponent_c
    raw = np.repeat(per_group, counts)
    normalization = Normalization(normalization)
    return WeightScheme(_normalize(raw, normalization), f"exponent({exponent_c:g})", normalization)


def expand_to_examples(group_of, exponent_c: float = 1.0, normalization=Normalization.MEAN_ONE) -> WeightScheme:
    """Same as :func:`compute_group_weights` but driven by per-example group ids."""
    group_of = np.asarray(group_of)
    counts = np.bincount(group_of)
    if np.any(counts == 0):
        raise ValueError("every group id below the maximum must occur")
    per_group = (1.0 / counts.astype(np.float64)) ** exponent_c
    normalization = Normalization(normalization)
    raw = per_group[group_of]
    return WeightScheme(_normalize(raw, normalization), f"exponent({exponent_c:g})", normalization)


def minority_weight(tau: float, kind=MinorityKind.TAU_CUBED, power: float | None = None) -> float:
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    kind = MinorityKind(kind)
    if kind is MinorityKind.ONE:
        return 1.0
    if kind is MinorityKind.TAU:
        return float(tau)
    if kind is MinorityKind.TAU_CUBED:
        return float(tau) ** 3
    if power is None:
        raise ValueError("custom minority weight needs a power")
    return float(tau) ** power


def minority_scheme(labels, w: float, normalization=Normalization.RAW) -> WeightScheme:
    """Weight 1 on positives (majority) and ``w`` on negatives (minority)."""
    labels = np.asarray(labels)
    raw = np.where(labels > 0, 1.0, float(w))
    normalization = Normalization(normalization)
    return WeightScheme(_normalize(raw, normalization), f"minority({w:g})", normalization)


def uniform_scheme(n: int) -> WeightScheme:
    return WeightScheme(np.ones(n), "none", Normalization.RAW)


def write_weights_csv(ws: WeightScheme, group_of, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "group", "weight"])
        for i, (g, w) in enumerate(zip(np.asarray(group_of), ws.weights)):
            writer.writerow([i, int(g), repr(float(w))])
