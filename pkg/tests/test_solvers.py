import csv
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import signed_dataset
from polytail.data import ShiftConfig, generate_label_shift
from polytail.solvers import (
    Direction,
    InfeasibleError,
    Provenance,
    cosine_distance,
    solve_max_margin,
    solve_theta_alpha,
    theta_alpha_objective,
    write_direction_csv,
)
from polytail.weights import WeightScheme, minority_scheme, uniform_scheme


def brute_force_margin(z: np.ndarray) -> float:
    """Max-margin value by enumerating candidate active sets.

    For each subset S of at most d constraints, the least-norm v with
    z_i . v = 1 on S is a candidate; the optimum is the feasible candidate of
    smallest norm, and the margin is 1/|v|.
    """
    n, d = z.shape
    best = math.inf
    for size in range(1, d + 1):
        for subset in itertools.combinations(range(n), size):
            zs = z[list(subset)]
            g = zs @ zs.T
            if abs(np.linalg.det(g)) < 1e-14:
                continue
            v = zs.T @ np.linalg.solve(g, np.ones(size))
            if np.all(z @ v >= 1 - 1e-12):
                best = min(best, float(v @ v))
    return 1.0 / math.sqrt(best)


def random_separable(rng, n, d=2):
    axis = rng.standard_normal(d)
    axis /= np.linalg.norm(axis)
    pts = rng.standard_normal((n, d))
    pts += (np.abs(pts @ axis) + rng.uniform(0.05, 1.0, n))[:, None] * axis - (pts @ axis)[:, None] * axis
    return pts


def test_two_point_max_margin(two_points):
    mm = solve_max_margin(two_points)
    assert np.allclose(mm.vector, [1 / math.sqrt(2)] * 2, atol=1e-10)
    assert mm.margin == pytest.approx(1 / math.sqrt(2), abs=1e-10)
    assert mm.provenance is Provenance.MAX_MARGIN


def test_single_point_max_margin():
    mm = solve_max_margin(signed_dataset([[3.0, 4.0]]))
    assert np.allclose(mm.vector, [0.6, 0.8], atol=1e-12)
    assert mm.margin == pytest.approx(5.0, abs=1e-10)


def test_max_margin_matches_subset_enumeration():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        z = random_separable(rng, int(rng.integers(2, 7)))
        mm = solve_max_margin(signed_dataset(z))
        worst = max(worst, abs(mm.margin - brute_force_margin(z)))
    assert worst <= 1e-8


def test_max_margin_certificates():
    ds = generate_label_shift(ShiftConfig(d=400, n=30, tau=4, mu_norm_sq=20.0), 0)
    mm = solve_max_margin(ds, tol=1e-10)
    margins = ds.signed @ mm.vector
    assert margins.min() >= mm.margin - 1e-9
    assert np.any(margins <= mm.margin + 1e-9)
    assert mm.info["duality_gap"] <= 1e-10
    assert mm.info["margin_upper_bound"] >= mm.margin - 1e-9
    assert abs(np.linalg.norm(mm.vector) - 1) <= 1e-10


def test_infeasible_data():
    with pytest.raises(InfeasibleError):
        solve_max_margin(signed_dataset([[1.0, 0.0], [-1.0, 0.0]]))


def test_theta_alpha_symmetric(two_points):
    th = solve_theta_alpha(two_points, uniform_scheme(2), 1.0)
    assert np.allclose(th.vector, [1 / math.sqrt(2)] * 2, atol=1e-8)


def test_theta_alpha_weighted_against_grid_search(two_points):
    ws = WeightScheme(np.array([1.0, 8.0]), "test")
    th = solve_theta_alpha(two_points, ws, 1.0)
    phi = np.linspace(1e-9, math.pi / 2 - 1e-9, 1_000_000)
    f = 1 / np.cos(phi) + 8 / np.sin(phi)
    best = phi[np.argmin(f)]
    grid = np.array([math.cos(best), math.sin(best)])
    assert cosine_distance(th.vector, grid) <= 1e-8
    assert np.allclose(th.vector, [1 / math.sqrt(5), 2 / math.sqrt(5)], atol=1e-6)
    assert th.objective == pytest.approx(5 * math.sqrt(5), rel=1e-9)


@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_theta_alpha_stationarity_two_points(two_points, alpha):
    # first-order conditions give theta2 / theta1 = w^(1/(alpha+2))
    th = solve_theta_alpha(two_points, WeightScheme(np.array([1.0, 8.0]), "test"), alpha)
    assert th.vector[1] / th.vector[0] == pytest.approx(8 ** (1 / (alpha + 2)), rel=1e-6)


def test_theta_alpha_weight_scaling():
    ds = generate_label_shift(ShiftConfig(d=60, n=16, tau=3, mu_norm_sq=30.0), 2)
    ws = minority_scheme(ds.labels, 27.0)
    a = solve_theta_alpha(ds, ws, 1.0)
    b = solve_theta_alpha(ds, ws.scaled(7.0), 1.0)
    assert cosine_distance(a.vector, b.vector) <= 1e-10
    assert b.objective == pytest.approx(7 * a.objective, rel=1e-8)


def test_theta_alpha_local_optimality_and_kkt():
    ds = generate_label_shift(ShiftConfig(d=80, n=14, tau=3, mu_norm_sq=40.0), 5)
    ws = minority_scheme(ds.labels, 27.0)
    th = solve_theta_alpha(ds, ws, 1.0, tol=1e-9)
    assert th.kkt_residual <= 1e-6
    margins = ds.signed @ th.vector
    assert margins.min() > 0
    f0 = theta_alpha_objective(margins, ws.weights, 1.0)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        u = th.vector + 1e-3 * rng.standard_normal(ds.d)
        u /= np.linalg.norm(u)
        m = ds.signed @ u
        if m.min() > 0:
            assert theta_alpha_objective(m, ws.weights, 1.0) >= f0 * (1 - 1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), w=st.floats(1.0, 100.0))
def test_theta_alpha_feasible_and_unit(seed, w):
    z = random_separable(np.random.default_rng(seed), 5, d=3)
    ds = signed_dataset(z)
    th = solve_theta_alpha(ds, WeightScheme(np.r_[np.ones(4), w], "t"), 1.0)
    assert abs(np.linalg.norm(th.vector) - 1) <= 1e-10
    assert (ds.signed @ th.vector).min() > 0


def test_direction_normalizes():
    d = Direction(np.array([3.0, 4.0]), "gd_limit", coefficients=np.array([5.0]))
    assert np.allclose(d.vector, [0.6, 0.8])
    assert d.coefficients[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        Direction(np.zeros(2), "gd_limit")


def test_direction_csv(tmp_path, two_points):
    path = tmp_path / "dir.csv"
    write_direction_csv(solve_max_margin(two_points), path)
    rows = list(csv.DictReader(open(path)))
    assert [r["kind"] for r in rows] == ["span", "span", "dense", "dense"]
    assert float(rows[2]["value"]) == pytest.approx(1 / math.sqrt(2))
