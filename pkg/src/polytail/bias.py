"""Compare the gradient-descent limit direction against its reference solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .losses import LossKind, LossSpec
from .solvers import Direction, cosine_distance, solve_max_margin, solve_theta_alpha, theta_alpha_objective
from .trainer import TrainOptions, TrainTrace, train
from .weights import WeightScheme

__all__ = ["BiasReport", "verify_implicit_bias"]


@dataclass(eq=False)
class BiasReport:
    cosine_distance: float
    objective_gd: float
    objective_solver: float
    margins_gd: np.ndarray
    margins_solver: np.ndarray
    tol: float
    trace: TrainTrace
    reference: Direction

    @property
    def passed(self) -> bool:
        return bool(self.cosine_distance <= self.tol)


def _unit_margins(ds: Dataset, direction: Direction) -> np.ndarray:
    return (ds.features @ direction.vector) * ds.labels


def verify_implicit_bias(
    ds: Dataset,
    ws: WeightScheme,
    spec: LossSpec,
    opts: TrainOptions | None = None,
    tol: float = 1e-3,
) -> BiasReport:
    """Train, solve the matching limit problem, and compare directions.

    Poly-tailed losses are checked against the weighted ``theta_alpha``
    program; logistic and exponential losses against the max-margin solver.
    For the latter, the reported objectives are the unit-direction margins.
    """
    trace = train(ds, ws, spec, opts)
    if spec.kind is LossKind.POLY:
        reference = solve_theta_alpha(ds, ws, spec.alpha)
    else:
        reference = solve_max_margin(ds)
    m_gd = _unit_margins(ds, trace.direction)
    m_ref = _unit_margins(ds, reference)
    if spec.kind is LossKind.POLY:
        f_gd = theta_alpha_objective(m_gd, ws.weights, spec.alpha)
        f_ref = theta_alpha_objective(m_ref, ws.weights, spec.alpha)
    else:
        f_gd, f_ref = float(m_gd.min()), float(m_ref.min())
    return BiasReport(
        cosine_distance=cosine_distance(trace.direction.vector, reference.vector),
        objective_gd=f_gd,
        objective_solver=f_ref,
        margins_gd=m_gd,
        margins_solver=m_ref,
        tol=tol,
        trace=trace,
        reference=reference,
    )
