"""Polynomially-tailed classification losses and exponential-tail references.

A poly-tailed loss behaves like ``1 / (z - (beta - 1)) ** alpha`` for margins
``z >= beta`` and switches to a convex decreasing "left piece" below ``beta``.
All functions are vectorized over ``z`` and evaluated in float64.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

__all__ = [
    "LossKind",
    "LeftPiece",
    "LossSpec",
    "ValidationReport",
    "loss_value",
    "loss_derivative",
    "loss_second_derivative",
    "validate_left_piece",
    "poly_loss",
    "logistic_loss",
    "exponential_loss",
]

# log(1 + e^-1); normalizer of the left piece used in the image experiments
_LOG1P_EINV = math.log1p(math.exp(-1.0))
CONTINUITY_TOL = 1e-9


class LossKind(str, enum.Enum):
    POLY = "poly"
    LOGISTIC = "logistic"
    EXPONENTIAL = "exponential"


class LeftPiece(str, enum.Enum):
    SCALED_LOGISTIC = "scaled_logistic"
    SCALED_EXPONENTIAL = "scaled_exponential"
    LINEAR = "linear"
    PAPER_SEC5 = "paper_sec5"
    HERMITE_C1 = "hermite_c1"


@dataclass(frozen=True)
class LossSpec:
    """Loss family member.

    ``c1``/``c2`` parametrize the scaled left pieces:

    * ``SCALED_LOGISTIC``: ``c1 * log(1 + exp(-c2 * z))``
    * ``SCALED_EXPONENTIAL``: ``c1 * exp(-c2 * z)``
    * ``LINEAR``: ``-c1 * (z - beta) + c2``

    ``PAPER_SEC5`` is ``log(1 + exp(-(z - beta + 1))) / log(1 + e^-1)``, which is
    continuous at ``beta`` for every ``alpha`` but only differentiable there
    when the slopes happen to agree.  ``HERMITE_C1`` is the quadratic Taylor
    expansion of the tail at ``beta`` on ``[beta - 1, beta]``, continued
    linearly to the left; it is C1 and convex for every ``alpha``.
    """

    alpha: float = 1.0
    beta: float = 1.0
    left_piece: LeftPiece = LeftPiece.PAPER_SEC5
    kind: LossKind = LossKind.POLY
    c1: float = 1.0
    c2: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", LossKind(self.kind))
        object.__setattr__(self, "left_piece", LeftPiece(self.left_piece))
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive and finite, got {self.alpha}")
        if not math.isfinite(self.beta):
            raise ValueError("beta must be finite")
        if self.kind is LossKind.POLY:
            left = float(_left_value(self, np.array([self.beta]))[0])
            if abs(left - 1.0) > CONTINUITY_TOL:
                raise ValueError(
                    f"left piece {self.left_piece.value} is discontinuous at beta: "
                    f"value {left!r} != 1"
                )

    @property
    def is_c1(self) -> bool:
        """True when the left and right derivatives agree at ``beta``."""
        if self.kind is not LossKind.POLY:
            return True
        return abs(_left_slope_at_beta(self) + self.alpha) <= 1e-9 * (1 + self.alpha)

    def value(self, z):
        return loss_value(self, z)

    def derivative(self, z):
        return loss_derivative(self, z)

    def label(self) -> str:
        if self.kind is not LossKind.POLY:
            return self.kind.value
        return f"poly(alpha={self.alpha:g},beta={self.beta:g},{self.left_piece.value})"


def poly_loss(alpha: float = 1.0, beta: float = 1.0, left: str | LeftPiece = "paper_sec5") -> LossSpec:
    """Poly-tailed loss with a left piece matched to the tail at ``beta``.

    Scaled logistic/exponential/linear pieces are given the constants that
    make them continuous at ``beta`` with slope ``-alpha`` where possible.
    """
    left = LeftPiece(left)
    if left is LeftPiece.SCALED_EXPONENTIAL:
        # c1 exp(-c2 beta) = 1 and c1 c2 exp(-c2 beta) = alpha
        return LossSpec(alpha, beta, left, c1=math.exp(alpha * beta), c2=alpha)
    if left is LeftPiece.LINEAR:
        return LossSpec(alpha, beta, left, c1=alpha, c2=1.0)
    if left is LeftPiece.SCALED_LOGISTIC:
        c2 = _match_logistic_slope(alpha, beta)
        c1 = 1.0 / np.logaddexp(0.0, -c2 * beta)
        return LossSpec(alpha, beta, left, c1=float(c1), c2=c2)
    return LossSpec(alpha, beta, left)


def logistic_loss() -> LossSpec:
    return LossSpec(kind=LossKind.LOGISTIC)


def exponential_loss() -> LossSpec:
    return LossSpec(kind=LossKind.EXPONENTIAL)


def _match_logistic_slope(alpha: float, beta: float) -> float:
    """Find c2 so the value-matched scaled logistic has slope -alpha at beta.

    The slope of ``log(1+exp(-c2 z)) / log(1+exp(-c2 beta))`` at beta is
    ``-c2 * sigmoid(-c2 beta) / softplus(-c2 beta)``, which is monotone in c2
    only on part of the line, so fall back to c2 = 1 when no root is
    bracketed.
    """
    from scipy.optimize import brentq

    def slope_gap(c2):
        x = c2 * beta
        # sigmoid(-x) / softplus(-x) tends to 1 as x grows; both factors underflow past ~745
        ratio = 1.0 if x > 700 else expit(-x) / np.logaddexp(0.0, -x)
        return c2 * ratio - alpha

    lo, hi = 1e-8, 1e3
    if slope_gap(lo) * slope_gap(hi) > 0:
        return 1.0
    return float(brentq(slope_gap, lo, hi, xtol=1e-14))


def _tail_value(spec: LossSpec, z):
    shifted = np.maximum(z - (spec.beta - 1.0), 1.0)
    return shifted ** (-spec.alpha)


def _tail_slope(spec: LossSpec, z):
    shifted = np.maximum(z - (spec.beta - 1.0), 1.0)
    return -spec.alpha * shifted ** (-spec.alpha - 1.0)


def _hermite_coeffs(spec: LossSpec):
    a = spec.alpha
    return 1.0, -a, 0.5 * a * (a + 1.0)


def _left_value(spec: LossSpec, z):
    lp, b = spec.left_piece, spec.beta
    if lp is LeftPiece.PAPER_SEC5:
        return np.logaddexp(0.0, -(z - b + 1.0)) / _LOG1P_EINV
    if lp is LeftPiece.SCALED_LOGISTIC:
        return spec.c1 * np.logaddexp(0.0, -spec.c2 * z)
    if lp is LeftPiece.SCALED_EXPONENTIAL:
        with np.errstate(over="ignore"):
            return spec.c1 * np.exp(-spec.c2 * z)
    if lp is LeftPiece.LINEAR:
        return -spec.c1 * (z - b) + spec.c2
    c0, s0, q = _hermite_coeffs(spec)
    u = np.maximum(z - b, -1.0)
    quad = c0 + s0 * u + q * u * u
    # linear continuation left of beta - 1 with the slope there
    slope = s0 - 2.0 * q
    return quad + slope * np.minimum(z - b + 1.0, 0.0)


def _left_slope(spec: LossSpec, z):
    lp, b = spec.left_piece, spec.beta
    if lp is LeftPiece.PAPER_SEC5:
        return -expit(-(z - b + 1.0)) / _LOG1P_EINV
    if lp is LeftPiece.SCALED_LOGISTIC:
        return -spec.c1 * spec.c2 * expit(-spec.c2 * z)
    if lp is LeftPiece.SCALED_EXPONENTIAL:
        with np.errstate(over="ignore"):
            return -spec.c1 * spec.c2 * np.exp(-spec.c2 * z)
    if lp is LeftPiece.LINEAR:
        return np.full_like(np.asarray(z, dtype=float), -spec.c1)
    _, s0, q = _hermite_coeffs(spec)
    u = np.maximum(z - b, -1.0)
    return s0 + 2.0 * q * u


def _left_slope_at_beta(spec: LossSpec) -> float:
    return float(_left_slope(spec, np.array([spec.beta], dtype=float))[0])


def loss_value(spec: LossSpec, z):
    """Evaluate the loss at margin(s) ``z``; returns a float for scalar input."""
    z_arr = np.asarray(z, dtype=np.float64)
    if spec.kind is LossKind.LOGISTIC:
        out = np.logaddexp(0.0, -z_arr)
    elif spec.kind is LossKind.EXPONENTIAL:
        with np.errstate(over="ignore"):
            out = np.exp(-z_arr)
    else:
        tail = z_arr >= spec.beta
        out = np.where(tail, _tail_value(spec, z_arr), _left_value(spec, np.minimum(z_arr, spec.beta)))
    return float(out) if np.ndim(out) == 0 else out


def loss_derivative(spec: LossSpec, z, *, with_flag: bool = False):
    """Derivative of the loss in the margin.

    At ``z == beta`` the right derivative is returned.  With
    ``with_flag=True`` a second value reports whether any requested point
    sat on a kink (``z == beta`` for a non-C1 left piece).
    """
    z_arr = np.asarray(z, dtype=np.float64)
    if spec.kind is LossKind.LOGISTIC:
        out = -expit(-z_arr)
        kink = False
    elif spec.kind is LossKind.EXPONENTIAL:
        with np.errstate(over="ignore"):
            out = -np.exp(-z_arr)
        kink = False
    else:
        tail = z_arr >= spec.beta
        out = np.where(tail, _tail_slope(spec, z_arr), _left_slope(spec, np.minimum(z_arr, spec.beta)))
        kink = (not spec.is_c1) and bool(np.any(z_arr == spec.beta))
    out = float(out) if np.ndim(out) == 0 else out
    return (out, kink) if with_flag else out


def _left_curvature(spec: LossSpec, z):
    lp, b = spec.left_piece, spec.beta
    if lp is LeftPiece.PAPER_SEC5:
        p = expit(-(z - b + 1.0))
        return p * (1.0 - p) / _LOG1P_EINV
    if lp is LeftPiece.SCALED_LOGISTIC:
        p = expit(-spec.c2 * z)
        return spec.c1 * spec.c2**2 * p * (1.0 - p)
    if lp is LeftPiece.SCALED_EXPONENTIAL:
        with np.errstate(over="ignore"):
            return spec.c1 * spec.c2**2 * np.exp(-spec.c2 * z)
    if lp is LeftPiece.LINEAR:
        return np.zeros_like(np.asarray(z, dtype=float))
    _, _, q = _hermite_coeffs(spec)
    return np.where(z >= b - 1.0, 2.0 * q, 0.0)


def loss_second_derivative(spec: LossSpec, z):
    """Second derivative in the margin (right-sided at ``beta`` and at kinks)."""
    z_arr = np.asarray(z, dtype=np.float64)
    if spec.kind is LossKind.LOGISTIC:
        p = expit(-z_arr)
        out = p * (1.0 - p)
    elif spec.kind is LossKind.EXPONENTIAL:
        with np.errstate(over="ignore"):
            out = np.exp(-z_arr)
    else:
        a = spec.alpha
        shifted = np.maximum(z_arr - (spec.beta - 1.0), 1.0)
        tail = a * (a + 1.0) * shifted ** (-a - 2.0)
        out = np.where(z_arr >= spec.beta, tail, _left_curvature(spec, np.minimum(z_arr, spec.beta)))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ValidationReport:
    continuity_residual: float
    c1_residual: float
    left_slope_at_beta: float
    convexity_violations: int
    worst_convexity_gap: float
    worst_convexity_at: float
    monotonicity_violations: int
    flags: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flags


def validate_left_piece(spec: LossSpec, *, n_checks: int = 10_000, half_width: float = 50.0) -> ValidationReport:
    """Check continuity, differentiability, convexity and monotonicity near beta.

    Convexity uses midpoint-secant checks on overlapping grid triples over
    ``[beta - half_width, beta + half_width]``; a check fails when the midpoint
    value exceeds the chord by more than ``1e-12 * (1 + |l(z1)| + |l(z2)|)``.
    Construction already rejects discontinuous pieces, so a residual here is
    only non-zero for hand-built specs that bypass ``__post_init__``.
    """
    b = spec.beta
    if spec.kind is LossKind.POLY:
        left_at_beta = float(_left_value(spec, np.array([b]))[0])
        left_slope = _left_slope_at_beta(spec)
    else:
        left_at_beta = float(loss_value(spec, b))
        left_slope = float(loss_derivative(spec, b))
    right_at_beta = float(loss_value(spec, b))
    right_slope = float(loss_derivative(spec, b))
    cont = abs(left_at_beta - right_at_beta)
    c1 = abs(left_slope - right_slope)

    # odd point count puts beta on the grid, so one secant is centred on it
    grid = np.linspace(b - half_width, b + half_width, 2 * (n_checks // 2) + 3)
    vals = loss_value(spec, grid)
    lo, mid, hi = vals[:-2], vals[1:-1], vals[2:]
    gap = mid - 0.5 * (lo + hi)
    tol = 1e-12 * (1.0 + np.abs(lo) + np.abs(hi))
    bad = gap > tol
    worst = int(np.argmax(gap))
    mono = int(np.count_nonzero(np.diff(vals) >= 0))

    flags = []
    if cont > CONTINUITY_TOL:
        flags.append("discontinuous")
    if c1 > 1e-9 * (1.0 + abs(right_slope)):
        flags.append("not_differentiable_at_beta")
    if bad.any():
        flags.append("nonconvex")
    if mono:
        flags.append("not_strictly_decreasing")
    return ValidationReport(
        continuity_residual=cont,
        c1_residual=c1,
        left_slope_at_beta=left_slope,
        convexity_violations=int(bad.sum()),
        worst_convexity_gap=float(gap[worst]),
        worst_convexity_at=float(grid[worst + 1]),
        monotonicity_violations=mono,
        flags=flags,
    )
