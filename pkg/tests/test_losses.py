import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytail.losses import (
    LeftPiece,
    LossSpec,
    exponential_loss,
    logistic_loss,
    loss_derivative,
    loss_second_derivative,
    loss_value,
    poly_loss,
    validate_left_piece,
)

CONVEX_PIECES = [LeftPiece.HERMITE_C1, LeftPiece.LINEAR, LeftPiece.SCALED_EXPONENTIAL, LeftPiece.SCALED_LOGISTIC]


def mp_default_left(z, beta=1.0):
    z = mpmath.mpf(z)
    return mpmath.log(1 + mpmath.e ** (-(z - beta + 1))) / mpmath.log(1 + mpmath.e ** -1)


def test_tail_value_and_continuity():
    spec = poly_loss(1, 1)
    assert loss_value(spec, 2.0) == 0.5
    assert loss_value(spec, 1.0) == 1.0
    assert float(mp_default_left(1.0)) == pytest.approx(1.0, abs=1e-15)


def test_left_value_matches_high_precision():
    spec = poly_loss(1, 1)
    for z in (0.0, -0.5, -3.0, -40.0, 0.999):
        assert loss_value(spec, z) == pytest.approx(float(mp_default_left(z)), rel=1e-14)
    assert loss_value(spec, 0.0) == pytest.approx(2.21267, abs=1e-5)


def test_derivative_examples():
    assert loss_derivative(poly_loss(1, 1), 2.0) == -0.25
    assert loss_derivative(poly_loss(2, 0), 0.0) == -2.0
    # left piece slope at z=0 is -sigmoid(0)/log(1+e^-1); the left slope at beta is -0.8585
    spec = poly_loss(1, 1)
    exact = float(-mpmath.diff(mp_default_left, 0.0))
    assert loss_derivative(spec, 0.0) == pytest.approx(-exact, rel=1e-12)
    assert loss_derivative(spec, 0.0) == pytest.approx(-1.59611, abs=1e-5)
    left_at_beta = float(mpmath.diff(mp_default_left, 1.0))
    assert left_at_beta == pytest.approx(-0.8585, abs=1e-4)


def test_kink_flag_only_for_non_c1_pieces():
    _, flag = loss_derivative(poly_loss(1, 1), 1.0, with_flag=True)
    assert flag
    _, flag = loss_derivative(poly_loss(1, 1, "hermite_c1"), 1.0, with_flag=True)
    assert not flag
    _, flag = loss_derivative(poly_loss(1, 1), 1.5, with_flag=True)
    assert not flag


def test_reference_losses_are_stable_at_large_margins():
    z = np.array([-1e8, -50.0, 0.0, 50.0, 1e8])
    lg = loss_value(logistic_loss(), z)
    assert np.all(np.isfinite(lg))
    assert lg[0] == pytest.approx(1e8)
    assert lg[2] == pytest.approx(math.log(2))
    assert loss_value(exponential_loss(), 0.0) == 1.0


@pytest.mark.parametrize("piece", list(LeftPiece))
@pytest.mark.parametrize("alpha,beta", [(0.5, 0.0), (1.0, 1.0), (2.0, 0.0), (2.0, 1.0)])
def test_finite_differences(piece, alpha, beta):
    spec = poly_loss(alpha, beta, piece)
    rng = np.random.default_rng(7)
    z = rng.uniform(beta - 20, beta + 20, 2000)
    z = z[np.abs(z - beta) >= 1e-3]
    if piece is LeftPiece.HERMITE_C1:
        z = z[np.abs(z - (beta - 1)) >= 1e-3]  # curvature jumps where the linear extension starts
    h = 1e-6
    fd = (loss_value(spec, z + h) - loss_value(spec, z - h)) / (2 * h)
    d = loss_derivative(spec, z)
    assert np.all(np.abs(d - fd) <= 1e-6 * (1 + np.abs(d)))


@pytest.mark.parametrize("piece", list(LeftPiece))
def test_second_derivative_by_finite_differences(piece):
    spec = poly_loss(1.5, 1.0, piece)
    z = np.linspace(-10, 10, 401)
    z = z[(np.abs(z - 1.0) > 1e-2) & (np.abs(z) > 1e-2)]
    h = 1e-5
    fd = (loss_derivative(spec, z + h) - loss_derivative(spec, z - h)) / (2 * h)
    assert np.allclose(loss_second_derivative(spec, z), fd, rtol=1e-5, atol=1e-8)


def test_tail_identity_alpha_one():
    spec = poly_loss(1, 1)
    z = np.random.default_rng(0).uniform(1, 1e6, 100_000)
    lhs = -loss_derivative(spec, z)
    rhs = loss_value(spec, z) ** 2
    assert np.max(np.abs(lhs - rhs) / rhs) <= 1e-12


@pytest.mark.parametrize("piece", CONVEX_PIECES)
@pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
def test_convex_pieces_pass_validation(piece, alpha):
    rep = validate_left_piece(poly_loss(alpha, 1.0, piece), n_checks=100_000)
    assert rep.continuity_residual <= 1e-12
    assert rep.convexity_violations == 0
    assert rep.monotonicity_violations == 0


def test_hermite_and_linear_are_c1():
    for piece in (LeftPiece.HERMITE_C1, LeftPiece.LINEAR, LeftPiece.SCALED_EXPONENTIAL):
        rep = validate_left_piece(poly_loss(1.0, 1.0, piece))
        assert rep.c1_residual <= 1e-9
        assert rep.ok


def test_default_piece_has_a_kink_at_beta():
    rep = validate_left_piece(poly_loss(1.0, 1.0))
    assert rep.continuity_residual == 0.0
    assert "not_differentiable_at_beta" in rep.flags
    assert rep.left_slope_at_beta == pytest.approx(-0.8585, abs=1e-4)
    # the slope drops from -0.8585 to -1 at beta, so the only secant failures sit there
    assert "nonconvex" in rep.flags
    assert abs(rep.worst_convexity_at - 1.0) < 0.01


def test_default_piece_is_convex_when_alpha_is_small():
    rep = validate_left_piece(poly_loss(0.5, 1.0))
    assert rep.convexity_violations == 0
    assert "not_differentiable_at_beta" in rep.flags


def test_mismatched_pieces_are_rejected():
    with pytest.raises(ValueError, match="discontinuous"):
        LossSpec(1.0, 1.0, LeftPiece.SCALED_EXPONENTIAL, c1=1.0, c2=1.0)
    with pytest.raises(ValueError):
        LossSpec(alpha=0.0)
    # value matches at beta but slope does not: constructed fine, flagged by validation
    bad = LossSpec(1.0, 0.0, LeftPiece.SCALED_EXPONENTIAL, c1=1.0, c2=3.0)
    rep = validate_left_piece(bad)
    assert "not_differentiable_at_beta" in rep.flags
    assert not rep.ok


SPECS = [poly_loss(a, b, p) for a in (0.5, 1.0, 2.0) for b in (0.0, 1.0) for p in LeftPiece] + [
    logistic_loss(),
    exponential_loss(),
]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.label())
def test_positive_and_strictly_decreasing_on_random_points(spec):
    z = np.random.default_rng(3).uniform(spec.beta - 50, spec.beta + 50, 100_000)
    assert np.all(loss_value(spec, z) > 0)
    assert np.all(loss_derivative(spec, z) < 0)
    zs = np.sort(z)
    assert np.all(np.diff(loss_value(spec, zs)) <= 0)


@settings(max_examples=200, deadline=None)
@given(
    alpha=st.floats(0.1, 4.0),
    beta=st.floats(-3.0, 3.0),
    z1=st.floats(-30.0, 30.0),
    z2=st.floats(-30.0, 30.0),
)
def test_hermite_secant_convexity(alpha, beta, z1, z2):
    spec = poly_loss(alpha, beta, "hermite_c1")
    v1, v2 = loss_value(spec, z1), loss_value(spec, z2)
    mid = loss_value(spec, 0.5 * (z1 + z2))
    assert mid <= 0.5 * (v1 + v2) + 1e-12 * (1 + abs(v1) + abs(v2))


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(0.1, 4.0), beta=st.floats(-3.0, 3.0), z=st.floats(-1e3, 1e3))
def test_value_and_slope_signs(alpha, beta, z):
    for piece in (LeftPiece.PAPER_SEC5, LeftPiece.HERMITE_C1):
        spec = poly_loss(alpha, beta, piece)
        assert loss_value(spec, z) > 0
        assert loss_derivative(spec, z) < 0
