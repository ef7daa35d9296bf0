import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytail.data import (
    Dataset,
    Noise,
    ShiftConfig,
    check_assumptions,
    check_good_run,
    generate_label_shift,
    generate_toy_2d,
    iter_test_batch,
    read_dataset,
    sample_test_batch,
    write_dataset,
)
from polytail.solvers import InfeasibleError, solve_max_margin


def test_counts():
    assert ShiftConfig(d=10, n=100, tau=10.1).counts == (91, 9)
    assert ShiftConfig(d=10, n=10, tau=1).counts == (5, 5)
    with pytest.raises(ValueError):
        ShiftConfig(d=10, n=5, tau=10)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 400), tau=st.floats(1.0, 20.0))
def test_counts_track_tau(n, tau):
    if n / (1 + tau) < 1:
        return
    cfg = ShiftConfig(d=4, n=n, tau=tau)
    p, m = cfg.counts
    assert p + m == n and m >= 1
    assert m == max(1, math.floor(n / (1 + tau) + 0.5))


def test_generation_is_deterministic_and_labelled():
    cfg = ShiftConfig(d=500, n=30, tau=4)
    a = generate_label_shift(cfg, 3)
    b = generate_label_shift(cfg, 3)
    assert np.array_equal(a.features, b.features)
    assert not np.array_equal(a.features, generate_label_shift(cfg, 4).features)
    assert np.array_equal(a.signed, a.labels[:, None] * a.features)
    assert a.group_counts == [24, 6]
    assert np.all(a.labels[:24] == 1) and np.all(a.labels[24:] == -1)
    assert np.allclose(a.gram, a.signed @ a.signed.T)


def test_means_orthogonal_with_rotation():
    cfg = ShiftConfig(d=300, n=10, tau=1, mu_norm_sq=25.0, rotation_seed=5)
    mu1, mu2 = cfg.means()
    assert abs(mu1 @ mu2) <= 1e-12
    assert np.linalg.norm(mu1) == pytest.approx(5.0) and np.linalg.norm(mu2) == pytest.approx(5.0)
    ds = generate_label_shift(cfg, 0)
    assert ds.features.shape == (10, 300)


def test_norm_concentration_at_large_d():
    cfg = ShiftConfig(d=100_000, n=20, tau=3)
    ds = generate_label_shift(cfg, 0)
    ratio = np.diag(ds.gram) / cfg.d
    assert np.all((ratio > 0.98) & (ratio < 1.02))
    noise = ds.features.copy()
    mu1, mu2 = cfg.means()
    noise[ds.labels > 0] -= mu1
    noise[ds.labels < 0] -= mu2
    mean_sq = np.mean(np.sum(noise**2, axis=1)) / cfg.d
    assert abs(mean_sq - 1) <= 10 / math.sqrt(cfg.n * cfg.d)


@pytest.mark.parametrize("noise", list(Noise))
def test_noise_has_unit_variance(noise):
    cfg = ShiftConfig(d=2000, n=50, tau=1, mu_norm_sq=1.0, noise=noise)
    q = generate_label_shift(cfg, 1).features[:, 2:]
    assert q.var() == pytest.approx(1.0, abs=0.02)
    if noise is not Noise.GAUSSIAN:
        assert np.abs(q).max() <= math.sqrt(3) + 1e-12


def test_test_batch():
    cfg = ShiftConfig(d=50, n=10, tau=1, mu_norm_sq=9.0)
    two = sample_test_batch(cfg, 2, 0)
    assert two.labels.tolist() == [1, -1]
    big = sample_test_batch(cfg, 10_000, 7)
    again = sample_test_batch(cfg, 10_000, 7)
    assert np.array_equal(big.features, again.features)
    mu1, _ = cfg.means()
    emp = big.features[big.labels > 0].mean(axis=0)
    assert np.linalg.norm(emp - mu1) <= 5 * math.sqrt(cfg.d) / math.sqrt(5000)
    with pytest.raises(ValueError):
        sample_test_batch(cfg, 3, 0)
    chunks = np.vstack([x for x, _ in iter_test_batch(cfg, 10_000, 7, chunk_rows=333)])
    assert np.array_equal(chunks, big.features)


def test_toy_data():
    ds = generate_toy_2d(50, 5, 4.0, 0)
    assert ds.group_counts == [50, 5]
    solve_max_margin(ds)  # separable
    one_each = generate_toy_2d(1, 1, 0.1, 9)
    solve_max_margin(one_each)
    flat = generate_toy_2d(50, 5, 0.0, 0)
    assert flat.n == 55
    with pytest.raises(InfeasibleError):
        solve_max_margin(flat)


def test_binary_round_trip(tmp_path):
    ds = generate_label_shift(ShiftConfig(d=17, n=9, tau=2), 0)
    path = tmp_path / "d.bin"
    write_dataset(ds, path)
    raw = path.read_bytes()
    assert raw[:5] == b"PTLB1"
    assert len(raw) == 5 + 16 + 8 * 9 * 17 + 9
    assert set(raw[-9:]) <= {0x01, 0xFF}
    back = read_dataset(path)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    path.write_bytes(raw[:-1])
    with pytest.raises(ValueError):
        read_dataset(path)


def test_dataset_rejects_bad_labels():
    with pytest.raises(ValueError):
        Dataset.from_arrays(np.ones((2, 2)), [1, 0])


def test_assumption_arithmetic():
    rep = check_assumptions(ShiftConfig(d=1000, n=100, tau=1, delta=0.01))
    assert rep.rhs["samples"] == pytest.approx(math.log(100))
    assert rep.satisfied["samples"]
    rep = check_assumptions(ShiftConfig(d=1000, n=100, tau=1, mu_norm_sq=330.0, delta=0.01))
    assert rep.rhs["mean_norm"] == pytest.approx(100**2 * math.log(1e4))
    assert not rep.satisfied["mean_norm"]
    rep = check_assumptions(ShiftConfig(d=10**6, n=100, tau=1, mu_norm_sq=1059.0))
    assert rep.satisfied["dimension"]
    assert rep.margins["dimension"] == pytest.approx(1e6 / (100 * 1059))


def test_good_run_events():
    cfg = ShiftConfig(d=100_000, n=100, tau=10.1)
    rep = check_good_run(generate_label_shift(cfg, 0), cfg, c=3.0)
    assert rep.passed, rep.events
    small = ShiftConfig(d=10, n=100, tau=1, mu_norm_sq=1.0)
    rep = check_good_run(generate_label_shift(small, 0), small)
    assert not rep.events["E.10"]


def test_good_run_single_sample_pairwise_vacuous():
    ds = Dataset.from_arrays(np.r_[10.0, np.zeros(99)][None, :] + 0.01, [1])
    cfg = ShiftConfig(d=100, n=2, tau=1, mu_norm_sq=100.0)
    rep = check_good_run(ds, cfg)
    assert rep.events["E.2"] and rep.events["E.3"]
    assert rep.events["E.4"]
