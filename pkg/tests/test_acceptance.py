"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

The heavy runs (verify-bias, the desk sweeps) happen once per session in
module fixtures; each test then reads the checks it owns.
"""

import json
import re
import subprocess
import sys
import time
from pathlib import Path

import pytest

from polytail.harness import apply_profile, load_config, run_experiment
from polytail.plotting import read_csv_rows

pytestmark = pytest.mark.slow

ROOT = Path(__file__).resolve().parent.parent


def timed_run(cfg):
    start = time.perf_counter()
    res = run_experiment(cfg)
    return res, time.perf_counter() - start


def by_name(result):
    return {c.name: c for c in result.checks}


@pytest.fixture(scope="module")
def verify_bias(tmp_path_factory):
    cfg = load_config(None, "verify_bias")
    cfg.output_dir = str(tmp_path_factory.mktemp("verify_bias"))
    return timed_run(cfg)


@pytest.fixture(scope="module")
def desk_sweep_tau(tmp_path_factory):
    cfg = apply_profile(load_config(None, "sweep_tau"), "desk")
    cfg.output_dir = str(tmp_path_factory.mktemp("sweep_tau"))
    return timed_run(cfg)


@pytest.fixture(scope="module")
def desk_sweep_w(tmp_path_factory):
    cfg = apply_profile(load_config(None, "sweep_w"), "desk")
    cfg.output_dir = str(tmp_path_factory.mktemp("sweep_w"))
    return timed_run(cfg)


def test_criterion_1_implicit_bias(verify_bias, criterion):
    res, secs = verify_bias
    checks = by_name(res)
    _, rows = read_csv_rows(res.output_dir / "verify_bias.csv")
    grid = {(r["alpha"], r["beta"], r["left_piece"], r["init"], r["weight_scale"]) for r in rows}
    seeds = {r["seed"] for r in rows}
    passed = (
        checks["implicit_bias_pass_rate"].passed
        and checks["weight_scaling_invariance"].passed
        and res.failed_cells == 0
        and len(grid) == 3 * 2 * 2 * 2 * 2
        and len(seeds) == 20
        and max(float(r["cos_dist"]) for r in rows) <= 1e-3
        and secs <= 600
    )
    criterion(1, passed, f"{checks['implicit_bias_pass_rate'].detail}; {len(grid)} settings x {len(seeds)} seeds; "
                         f"runtime {secs:.0f}s (incl. logistic cells)")
    assert passed


def test_criterion_2_logistic_weight_independence(verify_bias, criterion):
    res, _ = verify_bias
    check = by_name(res)["logistic_weight_independence"]
    _, rows = read_csv_rows(res.output_dir / "verify_bias_logistic.csv")
    worst = max(max(float(r["cos_uniform_vs_mm"]), float(r["cos_weighted_vs_mm"]), float(r["cos_uniform_vs_weighted"]))
                for r in rows)
    iters = {int(r["iters"]) for r in rows}
    passed = check.passed and worst <= 5e-2 and iters == {1_000_000} and check.value == 1.0
    criterion(2, passed, f"{check.detail}; worst pairwise cosine distance {worst:.3g} after {iters.pop()} iterations")
    assert passed


def test_criterion_3_sweep_tau_ordering(desk_sweep_tau, criterion):
    res, secs = desk_sweep_tau
    checks = by_name(res)
    names = ["ordering_at_max_tau", "tau3_vs_max_margin_gap_se", "tau1_arms_within_2se"]
    passed = all(checks[n].passed for n in names) and res.failed_cells == 0 and secs <= 3600
    detail = "; ".join(f"{n}={checks[n].value:.3g}" for n in names)
    criterion(3, passed, f"{detail}; {checks['ordering_at_max_tau'].detail}; runtime {secs:.0f}s")
    assert passed


def test_criterion_4_sweep_w_crossing(desk_sweep_w, criterion):
    res, _ = desk_sweep_w
    checks = by_name(res)
    passed = checks["crossing_per_seed"].passed and checks["crossing_aggregate"].passed and res.failed_cells == 0
    criterion(4, passed, f"{checks['crossing_per_seed'].detail}; {checks['crossing_aggregate'].detail}")
    assert passed


def test_criterion_5_minority_error(desk_sweep_tau, criterion):
    res, _ = desk_sweep_tau
    checks = by_name(res)
    mm, spread = checks["max_margin_minority_error"], checks["tau3_class_error_spread"]
    passed = mm.passed and spread.passed
    criterion(5, passed, f"max-margin minority error {mm.value:.4f} (> 0.25); "
                         f"w=tau^3 |err_pos - err_neg| {spread.value:.4f} (<= 0.1)")
    assert passed


NUMERICS = [
    "tests/test_losses.py",
    "tests/test_solvers.py::test_max_margin_matches_subset_enumeration",
    "tests/test_trainer.py::test_dense_gradient_matches_finite_differences",
    "tests/test_evaluation.py::test_mc_agrees_with_closed_form_across_seeds",
]


def test_criterion_6_numerics_suite(criterion):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *NUMERICS],
                          cwd=ROOT, capture_output=True, text=True)
    secs = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    passed = proc.returncode == 0 and secs <= 300
    criterion(6, passed, f"{summary}; runtime {secs:.0f}s")
    assert passed, proc.stdout[-3000:]


def test_criterion_7_cli_determinism(tmp_path, criterion):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"shift": {"d": 5000, "n": 60}, "tau_grid": [1, 4, 9], "seeds": [0, 1, 2]}))
    digests, codes = [], []
    for run in ("first", "second"):
        proc = subprocess.run([sys.executable, "-m", "polytail.cli", "sweep-tau", "--config", str(cfg),
                               "--out", str(tmp_path / run)], capture_output=True, text=True)
        codes.append(proc.returncode)
        digests.append(re.search(r"determinism_hash=([0-9a-f]{64})", proc.stdout).group(1))
    same_csv = all(
        [line for line in (tmp_path / "first" / f).read_text().splitlines() if not line.startswith("# generated=")]
        == [line for line in (tmp_path / "second" / f).read_text().splitlines() if not line.startswith("# generated=")]
        for f in ("sweep_tau_aggregate.csv", "assertions.csv")
    )
    passed = digests[0] == digests[1] and same_csv and codes[0] == codes[1]
    criterion(7, passed, f"hashes {digests[0][:12]} / {digests[1][:12]}, exit codes {codes}")
    assert passed
