import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from metapolicy.metrics import MetricsReport, evaluate, format_results_table
from metapolicy.ndiff import DimensionError

from conftest import brute_metrics as brute


def as_tuple(r: MetricsReport):
    return (r.strict_accuracy, r.macro_p, r.macro_r, r.macro_f1, r.micro_p, r.micro_r, r.micro_f1,
            r.n_instances, r.tp, r.n_pred, r.n_gold)


def test_perfect():
    g = np.array([[1, 0, 1], [0, 1, 0]])
    r = evaluate(g, g)
    assert as_tuple(r)[:7] == (1.0,) * 7


def test_single_instance_hand_count():
    r = evaluate([[1, 0]], [[1, 1]])
    assert r.strict_accuracy == 0
    assert (r.macro_p, r.macro_r, r.micro_p, r.micro_r) == (1.0, 0.5, 1.0, 0.5)
    assert abs(r.macro_f1 - 2 / 3) < 1e-15 and abs(r.micro_f1 - 2 / 3) < 1e-15


def test_two_instances_hand_count():
    r = evaluate([[1, 1], [0, 1]], [[1, 0], [0, 1]])
    assert r.strict_accuracy == 0.5
    assert abs(r.micro_p - 2 / 3) < 1e-15 and r.micro_r == 1.0 and abs(r.micro_f1 - 0.8) < 1e-15


def test_errors():
    with pytest.raises(DimensionError):
        evaluate([[1, 0]], [[1, 0, 0]])
    with pytest.raises(ValueError):
        evaluate(np.zeros((0, 3)), np.zeros((0, 3)))


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_matches_brute_force(data):
    n = data.draw(st.integers(1, 8))
    N = data.draw(st.integers(1, 5))
    pred = data.draw(arrays(np.int8, (n, N), elements=st.integers(0, 1)))
    gold = data.draw(arrays(np.int8, (n, N), elements=st.integers(0, 1)))
    r = evaluate(pred, gold)
    assert as_tuple(r) == brute(pred, gold)
    vals = as_tuple(r)[:7]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert (r.micro_f1 == 1.0) == (r.strict_accuracy == 1.0)
    rows = np.random.default_rng(n).permutation(n)
    cols = np.random.default_rng(N).permutation(N)
    assert as_tuple(evaluate(pred[rows][:, cols], gold[rows][:, cols])) == pytest.approx(as_tuple(r), abs=1e-15)


def test_table_and_json():
    r = evaluate([[1, 0]], [[1, 1]])
    t = format_results_table({"meta": r, "fixed": r})
    assert "Accuracy" in t and "Micro-F1" in t and len(t.splitlines()) == 4
    assert '"micro_f1"' in r.to_json()
