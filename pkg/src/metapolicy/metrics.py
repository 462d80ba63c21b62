"""Strict accuracy and loose macro / micro precision, recall and F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .ndiff import DimensionError


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass(frozen=True)
class MetricsReport:
    strict_accuracy: float
    macro_p: float
    macro_r: float
    macro_f1: float
    micro_p: float
    micro_r: float
    micro_f1: float
    n_instances: int
    tp: int
    n_pred: int
    n_gold: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self, name: str = "model") -> str:
        return format_results_table({name: self})


def _exact_mean(num, den, both_empty, n) -> float:
    """Mean of num_i/den_i as a correctly rounded float (0/0 counts as 1 when
    both sets are empty, else 0). Terms sharing a denominator are summed first."""
    total = Fraction(int(both_empty.sum()))
    for d in np.unique(den[den > 0]):
        total += Fraction(int(num[den == d].sum()), int(d))
    return float(total / n)


def evaluate(pred, gold) -> MetricsReport:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    if pred.shape != gold.shape or pred.ndim != 2:
        raise DimensionError(f"pred {pred.shape} vs gold {gold.shape}")
    n = pred.shape[0]
    if n == 0:
        raise ValueError("evaluate needs at least one instance")
    inter = (pred & gold).sum(axis=1)
    npred = pred.sum(axis=1)
    ngold = gold.sum(axis=1)
    strict = float(np.mean((pred == gold).all(axis=1)))

    both_empty = (npred == 0) & (ngold == 0)
    macro_p = _exact_mean(inter, npred, both_empty, n)
    macro_r = _exact_mean(inter, ngold, both_empty, n)

    tp, sp, sg = int(inter.sum()), int(npred.sum()), int(ngold.sum())
    micro_p = tp / sp if sp else (1.0 if sg == 0 else 0.0)
    micro_r = tp / sg if sg else (1.0 if sp == 0 else 0.0)
    return MetricsReport(
        strict,
        macro_p,
        macro_r,
        _f1(macro_p, macro_r),
        micro_p,
        micro_r,
        _f1(micro_p, micro_r),
        n,
        tp,
        sp,
        sg,
    )


def micro_f1(pred, gold) -> float:
    pred = np.asarray(pred).astype(bool)
    gold = np.asarray(gold).astype(bool)
    tp = int((pred & gold).sum())
    denom = int(pred.sum()) + int(gold.sum())
    return 1.0 if denom == 0 else 2 * tp / denom


def format_results_table(rows: dict) -> str:
    """Aligned Accuracy / Macro-F1 / Micro-F1 table, one row per method."""
    width = max([len("Method")] + [len(k) for k in rows])
    head = f"{'Method':<{width}} | {'Accuracy':>8} | {'Macro-F1':>8} | {'Micro-F1':>8}"
    lines = [head, "-" * len(head)]
    for name, rep in rows.items():
        lines.append(
            f"{name:<{width}} | {rep.strict_accuracy:8.4f} | {rep.macro_f1:8.4f} | {rep.micro_f1:8.4f}"
        )
    return "\n".join(lines) + "\n"
