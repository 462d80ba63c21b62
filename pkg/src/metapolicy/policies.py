"""Policy pairs, the policy file format, and the baseline policy methods."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LabelVocab, atomic_write_text
from .metrics import micro_f1

log = logging.getLogger(__name__)

P_EPS = 0.01
METHODS = ("fixed", "hier", "odr", "scutfbr", "meta")


@dataclass
class PolicyPair:
    """Training weights ``w`` (on the simplex) and prediction thresholds ``p``."""

    w: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.float64).reshape(-1)

    @property
    def n_labels(self) -> int:
        return self.w.shape[0]

    def check(self, tol: float = 1e-9):
        if self.w.shape != self.p.shape:
            raise ValueError(f"w has {self.w.shape[0]} entries, p has {self.p.shape[0]}")
        if not np.all(np.isfinite(self.w)) or not np.all(np.isfinite(self.p)):
            raise ValueError("non-finite policy values")
        if np.any(self.w <= 0) or abs(self.w.sum() - 1.0) > tol:
            raise ValueError(f"w is not on the open simplex (sum={self.w.sum()!r})")
        if np.any(self.p < P_EPS) or np.any(self.p > 1 - P_EPS):
            raise ValueError(f"thresholds outside [{P_EPS}, {1 - P_EPS}]")
        return self


@dataclass
class PolicyFile:
    labels: list[str]
    policy: PolicyPair
    method: str = "meta"
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "labels": list(self.labels),
            "method": self.method,
            "w": self.policy.w.tolist(),
            "p": self.policy.p.tolist(),
            "meta": self.meta,
        }
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def save(self, path):
        atomic_write_text(path, self.to_json())

    @classmethod
    def from_obj(cls, obj) -> "PolicyFile":
        validate_policy_obj(obj)
        return cls(obj["labels"], PolicyPair(obj["w"], obj["p"]), obj["method"], obj.get("meta", {}))

    @classmethod
    def load(cls, path) -> "PolicyFile":
        with open(path, encoding="utf-8") as fh:
            return cls.from_obj(json.load(fh))


def validate_policy_obj(obj) -> None:
    """Schema check for a decoded policy file; raises ValueError."""
    if not isinstance(obj, dict):
        raise ValueError("policy file must be a JSON object")
    for key, typ in (("labels", list), ("w", list), ("p", list), ("method", str)):
        if not isinstance(obj.get(key), typ):
            raise ValueError(f"policy file field {key!r} missing or not a {typ.__name__}")
    if obj["method"] not in METHODS:
        raise ValueError(f"unknown policy method {obj['method']!r}")
    if not isinstance(obj.get("meta", {}), dict):
        raise ValueError("policy file field 'meta' must be an object")
    n = len(obj["labels"])
    if len(obj["w"]) != n or len(obj["p"]) != n:
        raise ValueError("labels, w and p must have equal length")
    # tolerance allows for decimal round-off in hand-written files
    PolicyPair(obj["w"], obj["p"]).check(tol=1e-6)


# -------------------------------------------------------------- baselines


def fixed_policy(n: int) -> PolicyPair:
    if n < 1:
        raise ValueError("need at least one label")
    return PolicyPair(np.full(n, 1.0 / n), np.full(n, 0.5))


def hierarchy_weights(vocab: LabelVocab) -> np.ndarray:
    """Each label weighted by its path depth, normalised to sum to one."""
    if not vocab.has_hierarchy:
        log.warning("label names carry no hierarchy; using uniform weights")
        return fixed_policy(len(vocab)).w
    d = vocab.depths.astype(np.float64)
    return d / d.sum()


def candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Cut points for one label: gap midpoints, 0.5, and the clamp bounds."""
    u = np.unique(scores)
    mids = (u[:-1] + u[1:]) / 2.0
    c = np.concatenate([[P_EPS, 0.5, 1 - P_EPS], mids])
    return np.unique(np.clip(c, P_EPS, 1 - P_EPS))


def _check_scores(scores, gold):
    scores = np.asarray(scores, dtype=np.float64)
    gold = np.asarray(gold).astype(bool)
    if scores.shape != gold.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} vs gold {gold.shape}")
    if not gold.any():
        raise ValueError("threshold tuning needs at least one positive label")
    return scores, gold


def _label_counts(scores_j, gold_j, cands):
    """(#predicted, #true positives) for label j at each candidate threshold."""
    order = np.argsort(scores_j, kind="stable")
    s = scores_j[order]
    g = gold_j[order].astype(np.int64)
    # predicted iff score >= c  ->  rows from searchsorted(left) onward
    start = np.searchsorted(s, cands, side="left")
    tail_pos = np.concatenate([np.cumsum(g[::-1])[::-1], [0]])
    n = len(s)
    return n - start, tail_pos[start]


def odr_thresholds(scores, gold, max_passes: int = 10) -> np.ndarray:
    """Coordinate-wise sweep maximising micro-F1 over all labels jointly.

    Starts at 0.5 everywhere and only accepts strict improvements, so the
    result is never worse than 0.5 on the tuning data. Ties go to the lowest
    threshold.
    """
    scores, gold = _check_scores(scores, gold)
    n, N = scores.shape
    th = np.full(N, 0.5)
    n_gold = int(gold.sum())
    pred = scores >= th
    per_tp = (pred & gold).sum(axis=0)
    per_pred = pred.sum(axis=0)
    best = micro_f1(pred, gold)
    for _ in range(max_passes):
        improved = False
        for j in range(N):
            cands = candidate_thresholds(scores[:, j])
            npred_j, tp_j = _label_counts(scores[:, j], gold[:, j], cands)
            tp = per_tp.sum() - per_tp[j] + tp_j
            denom = per_pred.sum() - per_pred[j] + npred_j + n_gold
            f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 1.0)
            k = int(np.argmax(f1))  # first max = lowest threshold
            if f1[k] > best:
                best = float(f1[k])
                th[j] = cands[k]
                per_tp[j], per_pred[j] = tp_j[k], npred_j[k]
                improved = True
        if not improved:
            break
    return th


def _label_f1(tp, npred, ngold):
    denom = npred + ngold
    return np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)


def scutfbr_thresholds(scores, gold, priors, fbr: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Per-label F1-optimal cut, with a proportional fallback for weak labels.

    A label whose best tuning F1 falls below ``fbr`` instead gets the cut that
    assigns it to ``round(prior * n)`` tuning instances, where ``priors`` are
    the training-set label rates. Returns (thresholds, fallback mask).
    """
    scores, gold = _check_scores(scores, gold)
    if not 0.0 <= fbr <= 1.0:
        raise ValueError(f"fbr must lie in [0, 1], got {fbr}")
    priors = np.asarray(priors, dtype=np.float64).reshape(-1)
    n, N = scores.shape
    th = np.full(N, 0.5)
    fell_back = np.zeros(N, dtype=bool)
    for j in range(N):
        cands = candidate_thresholds(scores[:, j])
        npred_j, tp_j = _label_counts(scores[:, j], gold[:, j], cands)
        f1 = _label_f1(tp_j, npred_j, int(gold[:, j].sum()))
        k = int(np.argmax(f1))
        if f1[k] >= fbr:
            th[j] = cands[k]
        else:
            th[j] = proportional_threshold(scores[:, j], priors[j])
            fell_back[j] = True
    return th, fell_back


def proportional_threshold(scores_j, rate: float) -> float:
    """Cut that puts the top ``round(rate * n)`` scores above the threshold."""
    s = np.sort(np.asarray(scores_j, dtype=np.float64))[::-1]
    n = len(s)
    k = int(round(rate * n))
    if k <= 0:
        t = 1 - P_EPS
    elif k >= n:
        t = P_EPS
    else:
        t = (s[k - 1] + s[k]) / 2.0
    return float(np.clip(t, P_EPS, 1 - P_EPS))
