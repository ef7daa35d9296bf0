"""Balanced test error by Monte Carlo or Gaussian closed form, and the two bound calculators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .data import Noise, ShiftConfig, iter_test_batch
from .solvers import Direction

__all__ = [
    "Method",
    "ErrorEstimate",
    "normal_cdf",
    "test_error_mc",
    "test_error_gaussian_closed_form",
    "theorem1_upper_bound",
    "theorem2_lower_bound",
]


class Method(str, enum.Enum):
    MONTE_CARLO = "monte_carlo"
    CLOSED_FORM = "gaussian_closed_form"


@dataclass(frozen=True)
class ErrorEstimate:
    total: float
    per_class: tuple[float, float]  # (positive / majority, negative / minority)
    std_err: float
    method: Method
    m: int | None = None
    seed: int | None = None

    @property
    def err_pos(self) -> float:
        return self.per_class[0]

    @property
    def err_neg(self) -> float:
        return self.per_class[1]


def normal_cdf(x):
    """Phi via erfc, accurate in both tails."""
    return 0.5 * erfc(-np.asarray(x, dtype=np.float64) / math.sqrt(2.0))


def _unit(direction) -> np.ndarray:
    v = direction.vector if isinstance(direction, Direction) else np.asarray(direction, dtype=np.float64)
    return v / np.linalg.norm(v)


def test_error_mc(direction, cfg: ShiftConfig, m: int, seed: int) -> ErrorEstimate:
    """0-1 error of ``sign(theta . x)`` on a fresh balanced batch of size ``m``.

    Ties (``theta . x == 0``) count as errors.  The batch is streamed in
    chunks so ``m * d`` never has to fit in memory.
    """
    theta = _unit(direction)
    if theta.size != cfg.d:
        raise ValueError(f"direction has dimension {theta.size}, config has d={cfg.d}")
    wrong = np.zeros(2)
    seen = np.zeros(2)
    for x, y in iter_test_batch(cfg, m, seed):
        bad = (x @ theta) * y <= 0
        for cls, mask in enumerate((y > 0, y < 0)):
            wrong[cls] += np.count_nonzero(bad[mask])
            seen[cls] += np.count_nonzero(mask)
    per_class = wrong / seen
    total = float(per_class.mean())
    std_err = math.sqrt(total * (1.0 - total) / m)
    return ErrorEstimate(total, (float(per_class[0]), float(per_class[1])), std_err, Method.MONTE_CARLO, m, seed)


def test_error_gaussian_closed_form(direction, cfg: ShiftConfig) -> ErrorEstimate:
    """``err+ = Phi(-theta . mu1)``, ``err- = Phi(theta . mu2)`` for isotropic Gaussian noise.

    Rotating the noise leaves ``theta . U q`` standard normal, so the
    rotation setting does not matter here.
    """
    if Noise(cfg.noise) is not Noise.GAUSSIAN:
        raise ValueError(f"closed form needs Gaussian noise, config has {cfg.noise.value}")
    theta = _unit(direction)
    if theta.size != cfg.d:
        raise ValueError(f"direction has dimension {theta.size}, config has d={cfg.d}")
    mu1, mu2 = cfg.means()
    err_pos = float(normal_cdf(-(theta @ mu1)))
    err_neg = float(normal_cdf(theta @ mu2))
    return ErrorEstimate(0.5 * (err_pos + err_neg), (err_pos, err_neg), 0.0, Method.CLOSED_FORM)


def theorem1_upper_bound(cfg: ShiftConfig, c: float = 1.0) -> float:
    """``exp(-c (n / tau) |mu|^4 / d)`` clipped to [0, 1]."""
    value = math.exp(-c * (cfg.n / cfg.tau) * cfg.mu_norm_sq**2 / cfg.d)
    return min(1.0, max(0.0, value))


def theorem2_lower_bound(cfg: ShiftConfig, c: float = 1.0) -> float:
    """``Phi(-c sqrt(n) |mu|^2 / (tau sqrt(d))) / 2``."""
    arg = -c * math.sqrt(cfg.n) * cfg.mu_norm_sq / (cfg.tau * math.sqrt(cfg.d))
    return 0.5 * float(normal_cdf(arg))
