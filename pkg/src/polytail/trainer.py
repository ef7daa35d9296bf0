"""Full-batch gradient descent on importance-weighted linear classification losses.

The iterate is kept as ``theta = theta0 + Z.T @ a``: every gradient is a
combination of the signed features, so only the n coefficients ``a`` move and
margins are updated through the Gram matrix.  This is the same arithmetic as
dense gradient descent but costs O(n^2) per step instead of O(nd).
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Dataset
from .losses import LossKind, LossSpec, loss_derivative, loss_second_derivative, loss_value
from .solvers import Direction, Provenance
from .weights import WeightScheme

__all__ = [
    "Init",
    "TrainOptions",
    "TrainRecord",
    "TrainTrace",
    "TrainingDiverged",
    "default_step_size",
    "local_step_size",
    "theory_init",
    "train",
    "gradient_balance_ratio",
    "loss_ratio_diagnostic",
    "weighted_loss",
    "weighted_loss_grad",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
REFRESH_EVERY = 4096


class Init(str, enum.Enum):
    ZERO = "zero"
    GIVEN = "given"
    THEORY = "theory"


@dataclass
class TrainOptions:
    """Gradient-descent settings.

    ``step_size=None`` picks ``0.1 / (max_i |z_i|^2 * max_i w_i)``;
    ``step_size="local"`` picks ``step_scale / sum_i w_i l''(m_i) |z_i|^2`` at the
    initial iterate, an upper bound on the inverse Hessian norm there, which
    keeps far-away inits (e.g. ``init="theory"``) from crawling.  The
    direction is compared at doubling checkpoints (t, 2t) and training stops
    once their cosine distance drops below ``direction_tol`` with every
    training point classified correctly and ``t >= min_iters``.
    """

    step_size: float | str | None = None
    step_scale: float = 1.0
    max_iters: int = 1_000_000
    direction_tol: float = 1e-4
    init: Init = Init.ZERO
    init_vector: np.ndarray | None = None
    record_every: int = 1000
    adaptive_halving: bool = True
    min_iters: int = 1024

    def __post_init__(self):
        self.init = Init(self.init)
        if isinstance(self.step_size, str):
            if self.step_size != "local":
                raise ValueError(f"unknown step-size rule {self.step_size!r}")
        elif self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.step_scale > 0:
            raise ValueError("step_scale must be positive")
        if not self.direction_tol > 0:
            raise ValueError("direction_tol must be positive")
        if self.max_iters < 1 or self.record_every < 1:
            raise ValueError("max_iters and record_every must be positive")
        if self.init is Init.GIVEN and self.init_vector is None:
            raise ValueError("init='given' needs init_vector")


@dataclass
class TrainRecord:
    iter: int
    loss: float
    norm: float
    min_margin: float
    max_margin: float
    train_acc: float
    s_pos: float
    s_neg: float
    loss_ratio_diag: float
    step_size: float


@dataclass(eq=False)
class TrainTrace:
    records: list[TrainRecord]
    direction: Direction
    coefficients: np.ndarray
    iterations: int
    converged: bool
    stop_reason: str
    step_size_initial: float
    step_size_final: float
    drift: list[tuple[int, float]] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def final(self) -> TrainRecord:
        return self.records[-1]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, trace: TrainTrace | None = None):
        super().__init__(message)
        self.trace = trace


def default_step_size(ds: Dataset, ws: WeightScheme) -> float:
    return 0.1 / (float(np.max(np.diag(ds.gram))) * float(np.max(ws.weights)))


def local_step_size(ds: Dataset, ws: WeightScheme, spec: LossSpec, margins) -> float:
    curvature = float(np.sum(ws.weights * loss_second_derivative(spec, margins) * np.diag(ds.gram)))
    if not curvature > 0:
        return default_step_size(ds, ws)
    return 1.0 / curvature


def theory_init(ds: Dataset, ws: WeightScheme) -> np.ndarray:
    """``8 w^(2/3) n (mu1 - w^(1/3) mu2)`` with ``w`` the largest minority weight.

    Needs the class means, so only datasets from the cluster generators
    qualify.  Weights are taken relative to the positive-class weight.
    """
    if ds.means is None:
        raise ValueError("theory init needs a dataset with known class means")
    weights = np.asarray(ws.weights)
    w_pos = weights[ds.labels > 0].max() if np.any(ds.labels > 0) else 1.0
    w = weights[ds.labels < 0].max() / w_pos if np.any(ds.labels < 0) else 1.0
    mu1, mu2 = ds.means
    return 8.0 * w ** (2.0 / 3.0) * ds.n * (mu1 - w ** (1.0 / 3.0) * mu2)


def weighted_loss(ds: Dataset, ws: WeightScheme, spec: LossSpec, theta) -> float:
    """Dense evaluation of ``sum_i w_i l(z_i . theta)``; reference for tests."""
    m = ds.signed @ np.asarray(theta, dtype=np.float64)
    return float(np.sum(ws.weights * loss_value(spec, m)))


def weighted_loss_grad(ds: Dataset, ws: WeightScheme, spec: LossSpec, theta) -> np.ndarray:
    m = ds.signed @ np.asarray(theta, dtype=np.float64)
    return ds.signed.T @ (ws.weights * loss_derivative(spec, m))


class _Evaluator:
    """Loss and negative derivative at a margin vector, with a fast tail path."""

    def __init__(self, spec: LossSpec, weights: np.ndarray):
        self.spec = spec
        self.w = weights
        self.poly = spec.kind is LossKind.POLY
        self.shift = spec.beta - 1.0

    def __call__(self, m):
        spec = self.spec
        if self.poly and m.min() >= spec.beta:
            s = m - self.shift
            ell = s ** (-spec.alpha)
            return ell, spec.alpha * ell / s
        return loss_value(spec, m), -loss_derivative(spec, m)


def _kernel_kind(spec: LossSpec):
    if spec.kind is LossKind.LOGISTIC:
        return _kernels.LOGISTIC
    if spec.kind is LossKind.EXPONENTIAL:
        return _kernels.EXPONENTIAL
    return _kernels.POLY_TAIL


def _group_masks(ds: Dataset):
    return ds.labels > 0, ds.labels < 0


def train(ds: Dataset, ws: WeightScheme, spec: LossSpec, opts: TrainOptions | None = None) -> TrainTrace:
    """Run full-batch gradient descent and return the recorded trace.

    The update is ``theta <- theta + eta * sum_i w_i (-l'(z_i . theta)) z_i``.
    With ``adaptive_halving`` a step that increases the weighted loss is
    undone and retried with half the step size.
    """
    opts = opts or TrainOptions()
    w = np.asarray(ws.weights, dtype=np.float64)
    if w.size != ds.n:
        raise ValueError(f"{w.size} weights for {ds.n} examples")
    k = np.asarray(ds.gram)
    y = ds.labels.astype(np.float64)

    if opts.init is Init.ZERO:
        theta0 = None
    elif opts.init is Init.GIVEN:
        theta0 = np.asarray(opts.init_vector, dtype=np.float64)
        if theta0.shape != (ds.d,):
            raise ValueError(f"init vector has shape {theta0.shape}, expected ({ds.d},)")
    else:
        theta0 = theory_init(ds, ws)
    if theta0 is None:
        g0 = np.zeros(ds.n)
        s0 = 0.0
    else:
        g0 = (ds.features @ theta0) * y
        s0 = float(theta0 @ theta0)

    if opts.step_size is None:
        eta = default_step_size(ds, ws)
    elif opts.step_size == "local":
        eta = local_step_size(ds, ws, spec, g0)
    else:
        eta = float(opts.step_size)
    eta *= opts.step_scale
    eta0 = eta
    evaluate = _Evaluator(spec, w)
    pos, neg = _group_masks(ds)
    w_cbrt = np.cbrt(w)

    a = np.zeros(ds.n)
    m = g0.copy()
    ell, psi = evaluate(m)
    loss = float(w @ ell)

    records: list[TrainRecord] = []
    flags: list[str] = []
    drift: list[tuple[int, float]] = []
    separated_at = None

    def norm_sq(coef, margins):
        return s0 + 2.0 * coef @ g0 + coef @ (margins - g0)

    def inner(c1, c2):
        return s0 + c1 @ g0 + c2 @ g0 + c1 @ (k @ c2)

    def record(t):
        nonlocal separated_at
        scaled = ell * w_cbrt
        rec = TrainRecord(
            iter=t,
            loss=loss,
            norm=math.sqrt(max(norm_sq(a, m), 0.0)),
            min_margin=float(m.min()),
            max_margin=float(m.max()),
            train_acc=float(np.mean(m > 0)),
            s_pos=float(w[pos] @ psi[pos]),
            s_neg=float(w[neg] @ psi[neg]),
            loss_ratio_diag=float(scaled.max() / scaled.min()) if scaled.min() > 0 else math.inf,
            step_size=eta,
        )
        if separated_at is None and rec.min_margin > 0:
            separated_at = t
        elif separated_at is not None and rec.min_margin <= 0 and "margin_resurrection" not in flags:
            flags.append("margin_resurrection")
            log.warning("min margin fell back below zero at iteration %d", t)
        if records and opts.adaptive_halving and rec.loss > records[-1].loss * (1 + 8 * EPS):
            flags.append(f"loss_increase@{t}")
        records.append(rec)

    record(0)
    checkpoint_t = opts.min_iters
    checkpoint_a = None
    stop_reason = "max_iters"
    converged = False
    kernel_kind = _kernel_kind(spec)
    t = 0

    def diverged(message):
        record(t)
        trace = _make_trace(ds, theta0, a, records, t, False, "nonfinite", eta0, eta, drift, flags, k, g0, s0)
        return TrainingDiverged(message, trace)

    while t < opts.max_iters:
        if not np.any(psi):
            # every -l' underflowed to zero: the iterate can no longer move in float64
            stop_reason = "gradient_underflow"
            flags.append(f"gradient_underflow@{t}")
            log.warning("gradient underflowed to zero at iteration %d", t)
            break
        next_event = min(
            opts.max_iters,
            checkpoint_t,
            (t // opts.record_every + 1) * opts.record_every,
            (t // REFRESH_EVERY + 1) * REFRESH_EVERY,
        )
        if kernel_kind is not None and (kernel_kind != _kernels.POLY_TAIL or m.min() >= spec.beta):
            done, eta, status = _kernels.tail_steps(
                kernel_kind, float(spec.alpha), float(spec.beta), k, w, a, m, eta, next_event - t, opts.adaptive_halving
            )
            t += done
            if status == _kernels.NONFINITE:
                raise diverged(f"non-finite loss at iteration {t}; step size {eta:g}")
            if status == _kernels.UNDERFLOW:
                raise diverged("step size underflow while halving")
            ell, psi = evaluate(m)
            loss = float(w @ ell)
        if t < next_event:
            step = w * psi
            delta_m = k @ step
            while True:
                a_new = a + eta * step
                m_new = m + eta * delta_m
                ell_new, psi_new = evaluate(m_new)
                loss_new = float(w @ ell_new)
                finite = math.isfinite(loss_new) and bool(np.all(np.isfinite(psi_new)))
                if opts.adaptive_halving and (not finite or loss_new > loss + 4 * EPS * abs(loss)):
                    eta *= 0.5
                    if eta < 1e-300:
                        raise diverged("step size underflow while halving")
                    continue
                if not finite:
                    raise diverged(f"non-finite loss at iteration {t}; step size {eta:g}")
                break
            a, m, ell, psi, loss = a_new, m_new, ell_new, psi_new, loss_new
            t += 1
        if t % REFRESH_EVERY == 0:
            # recompute margins from the coefficients to stop incremental drift
            m = g0 + k @ a
            ell, psi = evaluate(m)
            loss = float(w @ ell)
        if t % opts.record_every == 0:
            record(t)
        if t == checkpoint_t:
            if checkpoint_a is not None:
                c = inner(a, checkpoint_a) / math.sqrt(norm_sq(a, g0 + k @ a) * norm_sq(checkpoint_a, g0 + k @ checkpoint_a))
                dist = 1.0 - c
                drift.append((t, dist))
                if dist < opts.direction_tol and m.min() > 0:
                    stop_reason = "direction_converged"
                    converged = True
                    break
            checkpoint_a = a.copy()
            checkpoint_t *= 2
    if records[-1].iter != t:
        record(t)
    if len(drift) >= 3 and np.any(np.diff([d for _, d in drift[1:]]) > 0):
        flags.append("non_monotone_drift")
    return _make_trace(ds, theta0, a, records, t, converged, stop_reason, eta0, eta, drift, flags, k, g0, s0)


def _make_trace(ds, theta0, a, records, t, converged, stop_reason, eta0, eta, drift, flags, k, g0, s0):
    vector = ds.features.T @ (a * ds.labels)
    if theta0 is not None:
        vector = vector + theta0
    norm = np.linalg.norm(vector)
    if norm == 0:
        raise TrainingDiverged("iterate is zero; no direction to report")
    m = g0 + k @ a
    direction = Direction(
        vector,
        Provenance.GD_LIMIT,
        margin=float(m.min() / norm),
        coefficients=a / norm if theta0 is None else None,
        iterations=t,
        info={"stop_reason": stop_reason},
    )
    return TrainTrace(records, direction, a, t, converged, stop_reason, eta0, eta, drift, flags)


def gradient_balance_ratio(trace: TrainTrace, window: int = 10) -> float:
    """Geometric mean of S_P / S_N over the last ``window`` separated records."""
    recs = [r for r in trace.records if r.min_margin > 0 and r.s_neg > 0 and r.s_pos > 0]
    if not recs:
        raise ValueError("no record with positive margin; balance is only meaningful after separation")
    recs = recs[-window:]
    return float(np.exp(np.mean([math.log(r.s_pos / r.s_neg) for r in recs])))


def loss_ratio_diagnostic(trace: TrainTrace) -> float:
    """``max_t max_{i,j} l_i / l_j * (w_i / w_j)^(1/3)`` over the recorded iterations.

    Per record this is ``max_i l_i w_i^(1/3) / min_j l_j w_j^(1/3)``, exact over
    all pairs.
    """
    if not trace.records:
        raise ValueError("empty trace")
    return max(r.loss_ratio_diag for r in trace.records)


TRACE_COLUMNS = ["iter", "loss", "norm", "min_margin", "train_acc", "S_P", "S_N", "loss_ratio_diag"]


def write_trace_csv(trace: TrainTrace, path, header: dict | None = None) -> None:
    """Trace rows; ``header`` entries go first as ``# key=value`` comment lines."""
    with open(path, "w", newline="") as fh:
        info = {"step_size_initial": trace.step_size_initial, "step_size_final": trace.step_size_final}
        info.update(header or {})
        for key, value in info.items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow([r.iter, repr(r.loss), repr(r.norm), repr(r.min_margin), repr(r.train_acc),
                             repr(r.s_pos), repr(r.s_neg), repr(r.loss_ratio_diag)])
