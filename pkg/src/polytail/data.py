"""Label-shift cluster data, the 2-D toy problem, and dataset file formats.

Training points follow ``x | y=+1 ~ mu1 + U q`` and ``x | y=-1 ~ mu2 + U q``
with ``mu1 = |mu| e1``, ``mu2 = |mu| e2`` and ``U`` either the identity or a
product of random Householder reflections.  Positives (the majority) come
first in every generated dataset.
"""

from __future__ import annotations

import csv
import enum
import math
import struct
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator

import numpy as np

__all__ = [
    "Noise",
    "ShiftConfig",
    "Dataset",
    "generate_label_shift",
    "sample_test_batch",
    "iter_test_batch",
    "generate_toy_2d",
    "check_good_run",
    "check_assumptions",
    "GoodRunReport",
    "AssumptionReport",
    "write_dataset",
    "read_dataset",
    "write_toy_csv",
]

MAGIC = b"PTLB1"
MAX_HOUSEHOLDER = 64
POSITIVE, NEGATIVE = 0, 1  # group ids: majority (y=+1), minority (y=-1)


class Noise(str, enum.Enum):
    GAUSSIAN = "gaussian_iso"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform_bounded"


@dataclass(frozen=True)
class ShiftConfig:
    """Parameters of the label-shift cluster model.

    ``mu_norm_sq`` defaults to ``d ** 0.502``.  ``rotation_seed=None`` means
    ``U = I``.  ``delta`` and ``c_assume`` only feed the assumption and
    good-run checks.
    """

    d: int = 100_000
    n: int = 100
    tau: float = 10.1
    mu_norm_sq: float | None = None
    noise: Noise = Noise.GAUSSIAN
    rotation_seed: int | None = None
    delta: float = 0.01
    c_assume: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "noise", Noise(self.noise))
        if self.mu_norm_sq is None:
            object.__setattr__(self, "mu_norm_sq", float(self.d) ** 0.502)
        if self.d < 2:
            raise ValueError("d must be at least 2 (two orthogonal means)")
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.tau < 1:
            raise ValueError(f"tau must be >= 1, got {self.tau}")
        if self.mu_norm_sq <= 0:
            raise ValueError("mu_norm_sq must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.n / (1.0 + self.tau) < 1.0:
            raise ValueError(f"n={self.n}, tau={self.tau} leaves no minority samples")

    @property
    def counts(self) -> tuple[int, int]:
        """(|P|, |N|) with |N| = round(n / (1 + tau)), at least 1."""
        n_neg = max(1, int(math.floor(self.n / (1.0 + self.tau) + 0.5)))
        return self.n - n_neg, n_neg

    @property
    def realized_tau(self) -> float:
        p, m = self.counts
        return p / m

    @property
    def mu_norm(self) -> float:
        return math.sqrt(self.mu_norm_sq)

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        mu1 = np.zeros(self.d)
        mu2 = np.zeros(self.d)
        mu1[0] = self.mu_norm
        mu2[1] = self.mu_norm
        return mu1, mu2

    def replace(self, **changes) -> "ShiftConfig":
        kw = asdict(self)
        if "d" in changes and "mu_norm_sq" not in changes:
            kw["mu_norm_sq"] = None
        kw.update(changes)
        return ShiftConfig(**kw)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["noise"] = self.noise.value
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    group_of: np.ndarray
    meta: ShiftConfig | str = "external"
    means: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels).astype(np.int8)
        g = np.asarray(self.group_of).astype(np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],) or g.shape != y.shape:
            raise ValueError("features must be n x d with matching labels and groups")
        if not np.all(np.abs(y) == 1):
            raise ValueError("labels must be +1/-1")
        for arr in (x, y, g):
            arr.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "group_of", g)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def signed(self) -> np.ndarray:
        z = self.features * self.labels[:, None]
        z.setflags(write=False)
        return z

    @cached_property
    def gram(self) -> np.ndarray:
        """n x n Gram matrix of the signed features."""
        x = self.features
        y = self.labels.astype(np.float64)
        k = (x @ x.T) * np.outer(y, y)
        k = 0.5 * (k + k.T)
        k.setflags(write=False)
        return k

    @property
    def group_counts(self) -> list[int]:
        return np.bincount(self.group_of).tolist()

    @property
    def positives(self) -> np.ndarray:
        return np.flatnonzero(self.labels > 0)

    @property
    def negatives(self) -> np.ndarray:
        return np.flatnonzero(self.labels < 0)

    @classmethod
    def from_arrays(cls, features, labels, meta="external") -> "Dataset":
        labels = np.asarray(labels)
        groups = np.where(labels > 0, POSITIVE, NEGATIVE)
        return cls(features, labels, groups, meta)


def _draw_noise(rng: np.random.Generator, noise: Noise, shape) -> np.ndarray:
    if noise is Noise.GAUSSIAN:
        return rng.standard_normal(shape)
    if noise is Noise.RADEMACHER:
        return np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    # uniform on [-sqrt3, sqrt3]: unit variance, strictly 1-sub-Gaussian
    return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), shape)


def _householder_vectors(d: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, 0x0F7])
    v = rng.standard_normal((min(d, MAX_HOUSEHOLDER), d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _rotate(q: np.ndarray, vectors: np.ndarray | None) -> np.ndarray:
    if vectors is None:
        return q
    for v in vectors:
        q -= 2.0 * np.outer(q @ v, v)
    return q


def _rotation(cfg: ShiftConfig):
    return None if cfg.rotation_seed is None else _householder_vectors(cfg.d, cfg.rotation_seed)


def generate_label_shift(cfg: ShiftConfig, seed: int) -> Dataset:
    """Draw a training set with |P| = n - |N| positives and |N| negatives."""
    n_pos, n_neg = cfg.counts
    rng = np.random.default_rng([seed, 0])
    x = _rotate(_draw_noise(rng, cfg.noise, (cfg.n, cfg.d)), _rotation(cfg))
    x[:n_pos, 0] += cfg.mu_norm
    x[n_pos:, 1] += cfg.mu_norm
    labels = np.r_[np.ones(n_pos), -np.ones(n_neg)]
    groups = np.r_[np.full(n_pos, POSITIVE), np.full(n_neg, NEGATIVE)]
    return Dataset(x, labels, groups, cfg, cfg.means())


def iter_test_batch(cfg: ShiftConfig, m: int, seed: int, chunk_rows: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(features, labels)`` chunks of the balanced test batch.

    Chunks are drawn sequentially from one stream, so concatenating them
    reproduces :func:`sample_test_batch` exactly.
    """
    if m < 2 or m % 2:
        raise ValueError(f"test batch size must be even and >= 2, got {m}")
    if chunk_rows is None:
        chunk_rows = max(1, min(m, 4_000_000 // cfg.d))
    rng = np.random.default_rng([seed, 1])
    rot = _rotation(cfg)
    half = m // 2
    for start in range(0, m, chunk_rows):
        rows = min(chunk_rows, m - start)
        x = _rotate(_draw_noise(rng, cfg.noise, (rows, cfg.d)), rot)
        pos = np.arange(start, start + rows) < half
        x[pos, 0] += cfg.mu_norm
        x[~pos, 1] += cfg.mu_norm
        yield x, np.where(pos, 1, -1).astype(np.int8)


def sample_test_batch(cfg: ShiftConfig, m: int, seed: int) -> Dataset:
    """Balanced test batch: m/2 positives followed by m/2 negatives."""
    xs, ys = zip(*iter_test_batch(cfg, m, seed))
    return Dataset.from_arrays(np.vstack(xs), np.concatenate(ys), cfg)


def generate_toy_2d(n_major: int, n_minor: int, separation: float, seed: int, noise_std: float = 0.5) -> Dataset:
    """Two Gaussian blobs at ``s e1`` (majority, y=+1) and ``s e2`` (minority, y=-1).

    ``s = separation / sqrt(2)`` so the centers are ``separation`` apart and
    the Bayes boundary for a balanced test set passes through the origin.
    """
    if n_major < 1 or n_minor < 1:
        raise ValueError("both blobs need at least one point")
    s = separation / math.sqrt(2.0)
    rng = np.random.default_rng([seed, 2])
    x = noise_std * rng.standard_normal((n_major + n_minor, 2))
    x[:n_major, 0] += s
    x[n_major:, 1] += s
    labels = np.r_[np.ones(n_major), -np.ones(n_minor)]
    mu1, mu2 = np.array([s, 0.0]), np.array([0.0, s])
    groups = np.r_[np.full(n_major, POSITIVE), np.full(n_minor, NEGATIVE)]
    return Dataset(x, labels, groups, "toy2d", (mu1, mu2))


@dataclass
class GoodRunReport:
    events: dict[str, bool]
    measured: dict[str, float]
    bounds: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(self.events.values())


def check_good_run(ds: Dataset, cfg: ShiftConfig, c: float = 3.0) -> GoodRunReport:
    """Evaluate the concentration events a "good run" requires.

    E.1 norms, E.2 cross-class and E.3 pairwise inner products, E.4-E.7
    alignment with the means, E.10 linear separability.  Measured values are
    the worst case over the relevant indices; events over empty index sets
    pass vacuously.
    """
    from .solvers import InfeasibleError, solve_max_margin

    n, d = ds.n, ds.d
    mu_sq = cfg.mu_norm_sq
    mu = math.sqrt(mu_sq)
    log_term = math.log(n / cfg.delta)
    k = ds.gram
    pos, neg = ds.positives, ds.negatives
    mu1, mu2 = ds.means if ds.means is not None else cfg.means()
    m1 = (ds.features @ mu1) * ds.labels
    m2 = (ds.features @ mu2) * ds.labels

    def worst(values, default=0.0):
        return float(np.max(values)) if np.size(values) else default

    norms = np.diag(k)
    off = k[~np.eye(n, dtype=bool)]
    cross = k[np.ix_(pos, neg)]
    measured = {
        "E.1_min_norm_sq": float(norms.min()),
        "E.1_max_norm_sq": float(norms.max()),
        "E.2_max_cross": worst(np.abs(cross)),
        "E.3_max_pairwise": worst(np.abs(off)),
        "E.4_max_dev": worst(np.abs(m1[pos] - mu_sq)),
        "E.5_max_dev": worst(np.abs(-m2[neg] - mu_sq)),
        "E.6_max": worst(np.abs(m1[neg])),
        "E.7_max": worst(np.abs(m2[pos])),
    }
    bounds = {
        "E.1_min_norm_sq": d / c,
        "E.1_max_norm_sq": c * d,
        "E.2_max_cross": c * math.sqrt(d * log_term),
        "E.3_max_pairwise": c * (mu_sq + math.sqrt(d * log_term)),
        "E.4_max_dev": mu_sq / 2,
        "E.5_max_dev": mu_sq / 2,
        "E.6_max": c * mu * math.sqrt(log_term),
        "E.7_max": c * mu * math.sqrt(log_term),
    }
    events = {
        "E.1": bounds["E.1_min_norm_sq"] <= measured["E.1_min_norm_sq"]
        and measured["E.1_max_norm_sq"] <= bounds["E.1_max_norm_sq"],
        "E.2": measured["E.2_max_cross"] <= bounds["E.2_max_cross"],
        "E.3": measured["E.3_max_pairwise"] < bounds["E.3_max_pairwise"],
        "E.4": measured["E.4_max_dev"] < bounds["E.4_max_dev"],
        "E.5": measured["E.5_max_dev"] < bounds["E.5_max_dev"],
        "E.6": measured["E.6_max"] < bounds["E.6_max"],
        "E.7": measured["E.7_max"] < bounds["E.7_max"],
    }
    try:
        mm = solve_max_margin(ds)
        events["E.10"] = True
        measured["E.10_margin"] = mm.margin
    except InfeasibleError as err:
        events["E.10"] = False
        measured["E.10_margin"] = err.margin_upper_bound
    bounds["E.10_margin"] = 0.0
    return GoodRunReport(events, measured, bounds)


@dataclass
class AssumptionReport:
    lhs: dict[str, float]
    rhs: dict[str, float]

    @property
    def satisfied(self) -> dict[str, bool]:
        return {key: self.lhs[key] >= self.rhs[key] for key in self.lhs}

    @property
    def margins(self) -> dict[str, float]:
        """lhs / rhs per assumption; >= 1 means satisfied."""
        return {key: self.lhs[key] / self.rhs[key] for key in self.lhs}


def check_assumptions(cfg: ShiftConfig) -> AssumptionReport:
    """The three sample-size / signal / dimension inequalities with constant ``c_assume``."""
    c, n, delta = cfg.c_assume, cfg.n, cfg.delta
    lhs = {"samples": float(n), "mean_norm": cfg.mu_norm_sq, "dimension": float(cfg.d)}
    rhs = {
        "samples": c * math.log(1.0 / delta),
        "mean_norm": c * n**2 * math.log(n / delta),
        "dimension": c * n * cfg.mu_norm_sq,
    }
    return AssumptionReport(lhs, rhs)


def write_dataset(ds: Dataset, path) -> None:
    """Binary export: magic, u64 n, u64 d, f64 rows, one label byte per row."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", ds.n, ds.d))
        fh.write(ds.features.astype("<f8", copy=False).tobytes(order="C"))
        fh.write(np.where(ds.labels > 0, 0x01, 0xFF).astype(np.uint8).tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: not a PTLB1 dataset file")
    n, d = struct.unpack_from("<QQ", raw, 5)
    offset = 5 + 16
    expected = offset + 8 * n * d + n
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    x = np.frombuffer(raw, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    codes = np.frombuffer(raw, dtype=np.uint8, count=n, offset=offset + 8 * n * d)
    if not np.all((codes == 0x01) | (codes == 0xFF)):
        raise ValueError(f"{path}: label bytes must be 0x01 or 0xFF")
    return Dataset.from_arrays(x.astype(np.float64), np.where(codes == 0x01, 1, -1))


def write_toy_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "x1", "x2", "label", "group"])
        for i, (row, y, g) in enumerate(zip(ds.features, ds.labels, ds.group_of)):
            writer.writerow([i, repr(float(row[0])), repr(float(row[1])), int(y), int(g)])
