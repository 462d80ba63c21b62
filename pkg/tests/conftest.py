from fractions import Fraction

import numpy as np
import pytest

from metapolicy.data import SynthConfig, synth_generate


def numeric_grad(f, tensor, h=1e-5):
    """Central finite differences of scalar f() w.r.t. every entry of tensor."""
    g = np.zeros_like(tensor.value)
    for idx in np.ndindex(*tensor.value.shape):
        orig = tensor.value[idx]
        tensor.value = tensor.value.copy()
        tensor.value[idx] = orig + h
        up = f()
        tensor.value[idx] = orig - h
        down = f()
        tensor.value[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_error(a, b, floor=1e-6):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(n_labels=6, depth=3, n_train=160, n_test=40, feature_dim=8, feature_noise=1.0)
    ds = synth_generate(cfg, np.random.default_rng(7))
    return ds.subset(range(160), "train"), ds.subset(range(160, 200), "test")


def naive_micro_f1(pred, gold):
    tp = npred = ngold = 0
    for prow, grow in zip(pred, gold):
        for a, b in zip(prow, grow):
            tp += bool(a) and bool(b)
            npred += bool(a)
            ngold += bool(b)
    return 1.0 if npred + ngold == 0 else 2 * tp / (npred + ngold)


def odr_oracle(scores, gold, max_passes=10):
    """Coordinate sweep that recounts micro-F1 from scratch for every cut."""
    scores = np.asarray(scores, dtype=float)
    n, N = scores.shape
    th = [0.5] * N

    def f1_at(t):
        pred = [[scores[i][j] >= t[j] for j in range(N)] for i in range(n)]
        return naive_micro_f1(pred, gold)

    best = f1_at(th)
    for _ in range(max_passes):
        changed = False
        for j in range(N):
            col = sorted(set(scores[:, j].tolist()))
            cands = {0.01, 0.5, 0.99} | {(a + b) / 2 for a, b in zip(col, col[1:])}
            for c in sorted(min(max(c, 0.01), 0.99) for c in cands):
                trial = th[:j] + [c] + th[j + 1:]
                f = f1_at(trial)
                if f > best:
                    best, th, changed = f, trial, True
        if not changed:
            break
    return np.array(th)


def brute_metrics(pred, gold):
    """Per-instance set counting; returns the MetricsReport fields in order."""
    n, N = pred.shape
    strict = 0.0
    ps = rs = Fraction(0)
    tp = npred = ngold = 0
    for i in range(n):
        P = {j for j in range(N) if pred[i, j]}
        G = {j for j in range(N) if gold[i, j]}
        strict += P == G
        inter = len(P & G)
        ps += Fraction(inter, len(P)) if P else (1 if not G else 0)
        rs += Fraction(inter, len(G)) if G else (1 if not P else 0)
        tp, npred, ngold = tp + inter, npred + len(P), ngold + len(G)
    mp, mr = float(Fraction(ps) / n), float(Fraction(rs) / n)
    up = tp / npred if npred else (1.0 if not ngold else 0.0)
    ur = tp / ngold if ngold else (1.0 if not npred else 0.0)
    f = lambda a, b: 0.0 if a + b == 0 else 2 * a * b / (a + b)  # noqa: E731
    return (strict / n, mp, mr, f(mp, mr), up, ur, f(up, ur), n, tp, npred, ngold)
