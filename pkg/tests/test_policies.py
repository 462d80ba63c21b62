import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metapolicy.data import LabelVocab
from metapolicy.metrics import micro_f1
from metapolicy.policies import (
    PolicyFile,
    PolicyPair,
    candidate_thresholds,
    fixed_policy,
    hierarchy_weights,
    odr_thresholds,
    proportional_threshold,
    scutfbr_thresholds,
    validate_policy_obj,
)

from conftest import odr_oracle


def random_problem(rng, n, N, pos=0.4):
    scores = np.round(rng.random((n, N)), 3)
    gold = rng.random((n, N)) < pos
    gold[0, 0] = True
    return scores, gold


def test_fixed_policy():
    pol = fixed_policy(4).check()
    assert pol.w.tolist() == [0.25] * 4 and pol.p.tolist() == [0.5] * 4
    with pytest.raises(ValueError):
        fixed_policy(0)


def test_hierarchy_weights_by_depth():
    w = hierarchy_weights(LabelVocab(["/a", "/a/b", "/a/b/c"]))
    np.testing.assert_allclose(w, [1 / 6, 2 / 6, 3 / 6], rtol=1e-15)


def test_hierarchy_weights_flat_falls_back(caplog):
    w = hierarchy_weights(LabelVocab(["x", "y"]))
    assert w.tolist() == [0.5, 0.5]
    assert "no hierarchy" in caplog.text


def test_policy_pair_check():
    with pytest.raises(ValueError):
        PolicyPair([0.5, 0.6], [0.5, 0.5]).check()
    with pytest.raises(ValueError):
        PolicyPair([0.5, 0.5], [0.5, 0.001]).check()
    with pytest.raises(ValueError):
        PolicyPair([1.0, 0.0], [0.5, 0.5]).check()
    with pytest.raises(ValueError):
        PolicyPair([0.5, 0.5], [0.5]).check()


def test_candidates():
    c = candidate_thresholds(np.array([0.2, 0.6, 0.6, 0.999]))
    assert c.tolist() == [0.01, 0.4, 0.5, 0.7995, 0.99]


def test_odr_single_label_example():
    scores = np.array([[0.9], [0.6], [0.4]])
    gold = np.array([[1], [0], [1]])
    th = odr_thresholds(scores, gold)
    assert th[0] < 0.4
    assert micro_f1(scores >= th, gold) == pytest.approx(0.8)


@pytest.mark.parametrize("seed", range(30))
def test_odr_never_worse_and_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    scores, gold = random_problem(rng, int(rng.integers(2, 9)), int(rng.integers(1, 4)))
    th = odr_thresholds(scores, gold)
    assert micro_f1(scores >= th, gold) >= micro_f1(scores >= 0.5, gold)
    np.testing.assert_array_equal(th, odr_oracle(scores, gold))


def test_odr_constant_column():
    scores = np.array([[0.3, 0.9], [0.3, 0.1]])
    gold = np.array([[1, 1], [1, 0]])
    th = odr_thresholds(scores, gold)
    assert np.all(scores[:, 0] >= th[0])
    np.testing.assert_array_equal(th, odr_oracle(scores, gold))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_odr_is_coordinate_optimum(seed):
    rng = np.random.default_rng(seed)
    scores, gold = random_problem(rng, 15, 3)
    th = odr_thresholds(scores, gold, max_passes=100)
    best = micro_f1(scores >= th, gold)
    for j in range(3):
        for c in candidate_thresholds(scores[:, j]):
            t = th.copy()
            t[j] = c
            assert micro_f1(scores >= t, gold) <= best


def test_odr_needs_positive():
    with pytest.raises(ValueError):
        odr_thresholds(np.zeros((3, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        odr_thresholds(np.zeros((3, 2)), np.zeros((2, 2)))


def test_scutfbr_zero_fbr_never_falls_back():
    rng = np.random.default_rng(0)
    scores, gold = random_problem(rng, 40, 5)
    th, fb = scutfbr_thresholds(scores, gold, np.full(5, 0.3), fbr=0.0)
    assert not fb.any()
    assert np.all((th >= 0.01) & (th <= 0.99))


def test_scutfbr_per_label_at_least_half():
    rng = np.random.default_rng(1)
    scores, gold = random_problem(rng, 50, 4)
    th, fb = scutfbr_thresholds(scores, gold, np.full(4, 0.3), fbr=0.0)

    def f1(col, t):
        pred = scores[:, col] >= t
        tp = (pred & gold[:, col]).sum()
        d = pred.sum() + gold[:, col].sum()
        return 0.0 if d == 0 else 2 * tp / d

    for j in range(4):
        assert f1(j, th[j]) >= f1(j, 0.5)


def test_scutfbr_absent_label_uses_prior_rate():
    rng = np.random.default_rng(2)
    n = 100
    scores = rng.random((n, 2))
    gold = np.zeros((n, 2), dtype=bool)
    gold[:10, 0] = True
    th, fb = scutfbr_thresholds(scores, gold, np.array([0.1, 0.23]), fbr=1.0)
    assert fb[1]
    assert abs(int((scores[:, 1] >= th[1]).sum()) - 23) <= 1


def test_proportional_threshold_edges():
    s = np.array([0.1, 0.2, 0.3])
    assert proportional_threshold(s, 0.0) == 0.99
    assert proportional_threshold(s, 1.0) == 0.01
    assert proportional_threshold(s, 1 / 3) == pytest.approx(0.25)


def test_policy_file_round_trip(tmp_path):
    pf = PolicyFile(["/a", "/a/b"], PolicyPair([0.25, 0.75], [0.3, 0.6]), "hier", {"seed": 3})
    pf.save(tmp_path / "p.json")
    back = PolicyFile.load(tmp_path / "p.json")
    assert back.labels == pf.labels and back.method == "hier" and back.meta == {"seed": 3}
    assert back.policy.w.tolist() == [0.25, 0.75] and back.policy.p.tolist() == [0.3, 0.6]
    assert back.to_json() == pf.to_json()


@pytest.mark.parametrize(
    "obj",
    [
        [],
        {"labels": ["a"], "w": [1.0], "p": [0.5]},
        {"labels": ["a"], "w": [1.0], "p": [0.5], "method": "magic"},
        {"labels": ["a", "b"], "w": [1.0], "p": [0.5], "method": "fixed"},
        {"labels": ["a"], "w": [1.0], "p": [0.5], "method": "fixed", "meta": 3},
        {"labels": ["a"], "w": [0.9], "p": [0.5], "method": "fixed"},
    ],
)
def test_policy_schema_rejects(obj):
    with pytest.raises(ValueError):
        validate_policy_obj(obj)


def test_policy_schema_tolerates_rounding():
    validate_policy_obj(json.loads('{"labels":["a","b","c"],"w":[0.3333333,0.3333333,0.3333333],"p":[0.5,0.5,0.5],"method":"fixed"}'))
