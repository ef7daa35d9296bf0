"""Reference solvers for the two limiting directions of gradient descent.

Both solvers work in the span of the signed features: a direction is stored
as coefficients ``a`` with ``theta = Z.T @ a`` and every inner product goes
through the n x n Gram matrix, so the cost per step is O(n^2) regardless of
the ambient dimension.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .data import Dataset
from .weights import WeightScheme

__all__ = [
    "Provenance",
    "Direction",
    "InfeasibleError",
    "SolverError",
    "solve_max_margin",
    "solve_theta_alpha",
    "theta_alpha_objective",
    "cosine_distance",
    "write_direction_csv",
]

log = logging.getLogger(__name__)

DENSE_EXPORT_MAX_D = 10_000
MAX_HALVINGS = 60
PRECISION_FLOOR = 1e-6


class Provenance(str, enum.Enum):
    GD_LIMIT = "gd_limit"
    THETA_ALPHA = "theta_alpha_solver"
    MAX_MARGIN = "max_margin_solver"


class SolverError(RuntimeError):
    def __init__(self, message, last_point=None):
        super().__init__(message)
        self.last_point = last_point


class InfeasibleError(SolverError):
    """Raised when the data is not linearly separable through the origin."""

    def __init__(self, message, margin_upper_bound: float = 0.0):
        super().__init__(message)
        self.margin_upper_bound = margin_upper_bound


@dataclass(eq=False)
class Direction:
    vector: np.ndarray
    provenance: Provenance
    kkt_residual: float = 0.0
    margin: float = float("nan")
    coefficients: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        norm = np.linalg.norm(v)
        if not norm > 0:
            raise ValueError("direction vector must be non-zero")
        if abs(norm - 1.0) > 1e-10:
            if self.coefficients is not None:
                self.coefficients = self.coefficients / norm
            v = v / norm
        self.vector = v
        self.provenance = Provenance(self.provenance)

    @property
    def d(self) -> int:
        return self.vector.size


def cosine_distance(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return float(1.0 - u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))


def theta_alpha_objective(margins, weights, alpha: float) -> float:
    """``sum_i w_i / m_i**alpha``; infinite when any margin is non-positive."""
    margins = np.asarray(margins, dtype=np.float64)
    if np.any(margins <= 0):
        return math.inf
    return float(np.sum(np.asarray(weights) * margins ** (-alpha)))


def _check_separable(k: np.ndarray) -> None:
    """Phase-1 LP: find coefficients a with K a >= 1."""
    n = k.shape[0]
    res = linprog(
        np.zeros(n),
        A_ub=-k,
        b_ub=-np.ones(n),
        bounds=[(None, None)] * n,
        method="highs",
    )
    if res.status == 2:
        raise InfeasibleError("data is not linearly separable through the origin")


def _margin_upper_bound(lam: np.ndarray, v_norm: float) -> float:
    """Any unit u has min_i z_i.u <= (sum lam_i z_i).u / sum lam <= |v| / sum lam."""
    total = lam.sum()
    return float(v_norm / total) if total > 0 else math.inf


def solve_max_margin(ds: Dataset, tol: float = 1e-10, max_sweeps: int = 200_000, seed: int = 0) -> Direction:
    """Hard-margin SVM through the origin by dual coordinate ascent.

    Solves ``min |v|^2 / 2  s.t.  z_i . v >= 1`` via its dual over
    multipliers ``lam >= 0``.  Sweeps visit coordinates in a fixed random
    permutation drawn from ``seed``.  Stops when the relative duality gap
    (against the rescaled feasible primal point) and the complementary
    slackness residual both fall below ``tol``.
    """
    k = np.asarray(ds.gram)
    n = k.shape[0]
    diag = np.diag(k).copy()
    if np.any(diag <= 0):
        raise InfeasibleError("a zero feature vector cannot be classified with positive margin")
    _check_separable(k)

    order = np.random.default_rng(seed).permutation(n)
    lam = np.zeros(n)
    m = np.zeros(n)
    gap = cs = math.inf
    for sweep in range(1, max_sweeps + 1):
        for i in order:
            step = max(-lam[i], (1.0 - m[i]) / diag[i])
            if step != 0.0:
                lam[i] += step
                m += step * k[:, i]
        if sweep % 10 == 0 or n <= 20:
            m = k @ lam
            v_sq = float(lam @ m)
            dual = lam.sum() - 0.5 * v_sq
            m_min = m.min()
            if m_min <= 0 or v_sq <= 0:
                continue
            primal = 0.5 * v_sq / m_min**2
            gap = (primal - dual) / primal
            cs = float(np.sum(lam * np.abs(m - 1.0)) / lam.sum())
            if gap <= tol and cs <= tol:
                break
    else:
        m = k @ lam
        if m.min() <= 0:
            v_norm = math.sqrt(max(float(lam @ m), 0.0))
            raise InfeasibleError(
                "no primal feasible point within the sweep cap",
                _margin_upper_bound(lam, v_norm),
            )
        log.warning("max-margin DCA hit the sweep cap: gap=%.3g cs=%.3g", gap, cs)

    v_norm = math.sqrt(float(lam @ m))
    coef = lam * ds.labels / v_norm  # theta = X^T (y * lam) / |v|
    vector = ds.features.T @ coef
    direction = Direction(
        vector,
        Provenance.MAX_MARGIN,
        kkt_residual=max(gap, cs),
        margin=float(m.min() / v_norm),
        coefficients=lam / v_norm,
        objective=0.5 * v_norm**2,
        iterations=sweep,
        info={"duality_gap": gap, "cs_residual": cs, "margin_upper_bound": _margin_upper_bound(lam, v_norm)},
    )
    return direction


def solve_theta_alpha(
    ds: Dataset,
    ws: WeightScheme,
    alpha: float = 1.0,
    tol: float = 1e-9,
    max_iters: int = 200_000,
    start: Direction | None = None,
) -> Direction:
    """Minimize ``sum_i w_i (z_i . theta)^-alpha`` over the unit ball.

    Projected gradient: a gradient step, then radial projection back onto the
    unit sphere (the minimum lies on the sphere since the objective decreases
    under radial scaling).  Trial steps start from a Barzilai-Borwein estimate and are halved
    until every margin stays above half the current minimum and the objective
    decreases.  The start is the max-margin direction unless given.
    Converged when the tangential part of the gradient is at most ``tol``
    times its norm.
    """
    w = np.asarray(ws.weights, dtype=np.float64)
    if w.size != ds.n:
        raise ValueError(f"{w.size} weights for {ds.n} examples")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    k = np.asarray(ds.gram)
    if start is None:
        start = solve_max_margin(ds)
    if start.coefficients is None:
        raise ValueError("start direction needs span coefficients")
    a = np.array(start.coefficients, dtype=np.float64)
    a /= math.sqrt(a @ k @ a)
    m = k @ a
    if m.min() <= 0:
        raise InfeasibleError("start direction is not strictly feasible")

    f = theta_alpha_objective(m, w, alpha)
    step = None
    prev = None
    resid = math.inf
    it = 0
    for it in range(1, max_iters + 1):
        g = -alpha * w * m ** (-alpha - 1.0)
        kg = k @ g
        radial = g @ m
        g_tan = g - radial * a
        kg_tan = kg - radial * m
        grad_sq = max(g @ kg, 0.0)
        tan_sq = max(g_tan @ kg_tan, 0.0)
        resid = math.sqrt(tan_sq / grad_sq)
        if resid <= tol:
            break
        if prev is not None:
            da = a - prev[0]
            kda = k @ da
            # BB step in the theta metric: <da, da> / <da, change in tangential gradient>
            sy = kda @ (g_tan - prev[1])
            ss = kda @ da
            if sy > 0 and ss > 0:
                step = ss / sy
        if step is None:
            step = 1.0 / math.sqrt(tan_sq)
        prev = (a.copy(), g_tan.copy())

        m_floor = 0.5 * m.min()
        f_cap = f * (1.0 + 4.0 * np.finfo(float).eps)
        for _ in range(MAX_HALVINGS):
            # the radial part of the gradient only rescales the step after projection
            scale = 1.0 / math.sqrt(1.0 + step * step * tan_sq)
            a_new = (a - step * g_tan) * scale
            m_new = (m - step * kg_tan) * scale
            if m_new.min() >= m_floor:
                f_new = theta_alpha_objective(m_new, w, alpha)
                if f_new <= f_cap:
                    break
            step *= 0.5
        else:
            if resid <= PRECISION_FLOOR:
                # objective differences are below rounding; the point is as good as we can certify
                break
            raise SolverError("backtracking failed to find a decreasing step", last_point=a)
        a, f = a_new, f_new
        if it % 50 == 0:
            a /= math.sqrt(a @ k @ a)
            m = k @ a
            f = theta_alpha_objective(m, w, alpha)
        else:
            m = m_new
    else:
        log.warning("theta_alpha solver hit max_iters with residual %.3g", resid)

    a /= math.sqrt(a @ k @ a)
    m = k @ a
    vector = ds.features.T @ (a * ds.labels)
    return Direction(
        vector,
        Provenance.THETA_ALPHA,
        kkt_residual=resid,
        margin=float(m.min()),
        coefficients=a,
        objective=theta_alpha_objective(m, w, alpha),
        iterations=it,
        info={"alpha": alpha},
    )


def write_direction_csv(direction: Direction, path) -> None:
    """Span coefficients as (index, coefficient), then the dense vector for small d."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "index", "value"])
        if direction.coefficients is not None:
            for i, c in enumerate(direction.coefficients):
                writer.writerow(["span", i, repr(float(c))])
        if direction.d <= DENSE_EXPORT_MAX_D:
            for j, c in enumerate(direction.vector):
                writer.writerow(["dense", j, repr(float(c))])
