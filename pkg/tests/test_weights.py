import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polytail.weights import (
    MinorityKind,
    Normalization,
    WeightScheme,
    compute_group_weights,
    expand_to_examples,
    minority_scheme,
    minority_weight,
    write_weights_csv,
)


def test_unbiased_weights_mean_one():
    ws = compute_group_weights([9, 1], exponent_c=1.0)
    # raw 1/9 (x9) and 1 (x1), mean 0.2
    assert np.allclose(ws.weights[:9], 5 / 9)
    assert ws.weights[9] == pytest.approx(5.0)
    assert ws.weights.mean() == pytest.approx(1.0)


def test_exponent_zero_is_uniform():
    ws = compute_group_weights([7, 3], exponent_c=0.0)
    assert np.allclose(ws.weights, 1.0)


def test_normalizations():
    assert compute_group_weights([3, 1], 1.0, Normalization.SUM_ONE).weights.sum() == pytest.approx(1.0)
    raw = compute_group_weights([3, 1], 1.0, Normalization.RAW).weights
    assert np.allclose(raw, [1 / 3, 1 / 3, 1 / 3, 1.0])


def test_invalid_inputs():
    with pytest.raises(ValueError):
        compute_group_weights([3, 0])
    with pytest.raises(ValueError):
        compute_group_weights([])
    with pytest.raises(ValueError):
        WeightScheme(np.array([1.0, -1.0]), "bad")
    with pytest.raises(ValueError):
        minority_weight(0.5)


def test_expand_matches_grouped_order():
    groups = np.array([1, 0, 0, 1, 0])
    ws = expand_to_examples(groups)
    ref = compute_group_weights([3, 2]).weights
    assert np.allclose(ws.weights[groups == 0], ref[0])
    assert np.allclose(ws.weights[groups == 1], ref[-1])


def test_minority_policies():
    assert minority_weight(10.1, MinorityKind.ONE) == 1.0
    assert minority_weight(10.1, MinorityKind.TAU) == 10.1
    assert minority_weight(10.1) == pytest.approx(1030.301)
    assert minority_weight(4.0, MinorityKind.CUSTOM, 0.5) == 2.0
    ws = minority_scheme([1, 1, -1], 8.0)
    assert ws.weights.tolist() == [1.0, 1.0, 8.0]


@settings(max_examples=100, deadline=None)
@given(counts=st.lists(st.integers(1, 500), min_size=1, max_size=6), c=st.floats(0.0, 3.0))
def test_mean_one_and_ordering(counts, c):
    ws = compute_group_weights(counts, c)
    assert ws.weights.size == sum(counts)
    assert ws.weights.mean() == pytest.approx(1.0)
    per_group = [ws.weights[sum(counts[:i])] for i in range(len(counts))]
    for i in range(len(counts)):
        for j in range(len(counts)):
            if counts[i] < counts[j] and c >= 0.01:
                assert per_group[i] > per_group[j]


def test_scaled_and_csv(tmp_path):
    ws = minority_scheme([1, -1], 3.0).scaled(10.0)
    assert ws.weights.tolist() == [10.0, 30.0]
    path = tmp_path / "w.csv"
    write_weights_csv(ws, [0, 1], path)
    assert path.read_text().splitlines() == ["index,group,weight", "0,0,10.0", "1,1,30.0"]
