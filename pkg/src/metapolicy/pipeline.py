"""End-to-end stages: meta-training, baselines, final training, evaluation,
the robustness study and the per-depth policy report."""

from __future__ import annotations

import csv
import io
import logging
import statistics
from dataclasses import dataclass

import numpy as np

from .classifier import MLPClassifier, predict_labels, train_classifier
from .config import RunConfig
from .data import LabelVocab, MultiLabelDataset, label_depth
from .metaln import MetaParams, extract_final_policies, random_initial_policy, train_meta
from .metrics import MetricsReport, evaluate
from .policies import (
    PolicyFile,
    PolicyPair,
    fixed_policy,
    hierarchy_weights,
    odr_thresholds,
    scutfbr_thresholds,
)

log = logging.getLogger(__name__)

# independent random streams derived from the run seed
STREAM_META_INIT, STREAM_META_TRAIN, STREAM_EXTRACT, STREAM_FINAL, STREAM_TUNE, STREAM_ROBUST = range(1, 7)


def rng_for(seed: int, stream: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *extra])


def run_meta_training(cfg: RunConfig, train: MultiLabelDataset, on_episode=None):
    mc = cfg.meta_config()
    meta = MetaParams(train.n_labels, mc.hidden, rng_for(cfg.seed, STREAM_META_INIT), mc.head_init)
    rows = train_meta(meta, train, mc, rng_for(cfg.seed, STREAM_META_TRAIN), on_episode=on_episode)
    policy = extract_final_policies(meta, train, mc, rng_for(cfg.seed, STREAM_EXTRACT))
    pf = PolicyFile(
        train.vocab.names,
        policy,
        "meta",
        {
            "seed": cfg.seed,
            "T": mc.T,
            "M": mc.M,
            "sigma": mc.sigma,
            "batch": mc.batch,
            "meta_lr": mc.lr,
            "meta_hidden": mc.hidden,
            "classifier_lr": mc.clf_lr,
            "grad_clip": mc.grad_clip,
            "baseline_decay": mc.baseline_decay,
        },
    )
    return meta, rows, pf


def tuning_split(cfg: RunConfig, train: MultiLabelDataset, tuning: MultiLabelDataset | None = None):
    """(fit part, tuning part). An explicit tuning set keeps all of train."""
    if tuning is not None:
        return train, tuning
    n = len(train)
    order = rng_for(cfg.seed, STREAM_TUNE).permutation(n)
    k = max(1, int(round(cfg.policy.tuning_fraction * n)))
    tune_rows, fit_rows = np.sort(order[:k]), np.sort(order[k:])
    return train.subset(fit_rows, "train"), train.subset(tune_rows, "tuning")


def run_baseline(cfg: RunConfig, method: str, train: MultiLabelDataset, tuning: MultiLabelDataset | None = None) -> PolicyFile:
    N = train.n_labels
    meta = {"seed": cfg.seed}
    if method == "fixed":
        policy = fixed_policy(N)
    elif method == "hier":
        policy = PolicyPair(hierarchy_weights(train.vocab), np.full(N, 0.5))
    elif method in ("odr", "scutfbr"):
        fit, tune = tuning_split(cfg, train, tuning)
        clf = train_final_classifier(cfg, fit, fixed_policy(N).w)
        scores = clf.predict_proba(tune.features_matrix())
        gold = tune.label_matrix()
        if method == "odr":
            p = odr_thresholds(scores, gold)
        else:
            p, fell_back = scutfbr_thresholds(scores, gold, fit.label_priors(), cfg.policy.fbr)
            meta["fbr"] = cfg.policy.fbr
            meta["fallback_labels"] = [train.vocab.names[j] for j in np.flatnonzero(fell_back)]
        meta["tuning_instances"] = len(tune)
        policy = PolicyPair(fixed_policy(N).w, p)
    else:
        raise ValueError(f"unknown baseline method {method!r}")
    return PolicyFile(train.vocab.names, policy.check(), method, meta)


def train_final_classifier(cfg: RunConfig, train: MultiLabelDataset, w, history: list | None = None) -> MLPClassifier:
    """Fresh classifier trained for the configured epochs with fixed weights ``w``."""
    c = cfg.classifier
    clf = MLPClassifier(train.dim, train.n_labels, c.hidden, seed=None)
    clf.reinit(rng_for(cfg.seed, STREAM_FINAL, 0))
    losses = train_classifier(clf, train, w, c.epochs, c.batch, c.final_lr, rng_for(cfg.seed, STREAM_FINAL, 1), c.momentum)
    if history is not None:
        history.extend(losses)
    return clf


def evaluate_policy(clf: MLPClassifier, test: MultiLabelDataset, p) -> MetricsReport:
    probs = clf.predict_proba(test.features_matrix())
    return evaluate(predict_labels(probs, p), test.label_matrix())


def check_labels(policy_labels, vocab: LabelVocab):
    if list(policy_labels) != vocab.names:
        raise ValueError(
            f"policy covers {len(policy_labels)} labels but the data has {len(vocab)} "
            "(or the label names differ)"
        )


# ---------------------------------------------------------- robustness


ROBUST_METRICS = (("Accuracy", "strict_accuracy"), ("Macro-F1", "macro_f1"), ("Micro-F1", "micro_f1"))


@dataclass
class RobustnessResult:
    reports: list[MetricsReport]
    policies: list[PolicyPair]

    def stats(self) -> dict:
        out = {}
        for name, attr in ROBUST_METRICS:
            vals = [getattr(r, attr) for r in self.reports]
            out[name] = {
                "best": max(vals),
                "worst": min(vals),
                "average": statistics.fmean(vals),
                "stdev": statistics.stdev(vals) if len(vals) > 1 else 0.0,
            }
        return out

    def table(self) -> str:
        st = self.stats()
        head = f"{'Metrics':<9} | {'Best':>7} | {'Worst':>7} | {'Average':>7} | {'STDEV':>7}"
        lines = [head, "-" * len(head)]
        for name, _ in ROBUST_METRICS:
            s = st[name]
            lines.append(
                f"{name:<9} | {s['best']:7.4f} | {s['worst']:7.4f} | {s['average']:7.4f} | {s['stdev']:7.4f}"
            )
        return "\n".join(lines) + "\n"


def robustness_study(cfg: RunConfig, meta: MetaParams, train, test, k: int = 10) -> RobustnessResult:
    """k extractions from random (w0, p0); each policy pair gets its own final
    classifier (same training seed, so only the initialization varies)."""
    mc = cfg.meta_config()
    reports, policies = [], []
    for i in range(k):
        init = random_initial_policy(train.n_labels, rng_for(cfg.seed, STREAM_ROBUST, i))
        pol = extract_final_policies(meta, train, mc, rng_for(cfg.seed, STREAM_EXTRACT), init=init)
        clf = train_final_classifier(cfg, train, pol.w)
        reports.append(evaluate_policy(clf, test, pol.p))
        policies.append(pol)
    return RobustnessResult(reports, policies)


# ------------------------------------------------------------ reporting


def policy_report_rows(pf: PolicyFile):
    """(label, depth, w, p) rows sorted by depth then weight, followed by one
    mean row per depth."""
    rows = [
        (name, label_depth(name), float(w), float(p))
        for name, w, p in zip(pf.labels, pf.policy.w, pf.policy.p)
    ]
    rows.sort(key=lambda r: (r[1], r[2], r[0]))
    summary = []
    for d in sorted({r[1] for r in rows}):
        ws = [r[2] for r in rows if r[1] == d]
        ps = [r[3] for r in rows if r[1] == d]
        summary.append((f"mean@depth{d}", d, statistics.fmean(ws), statistics.fmean(ps)))
    return rows, summary


def policy_report_csv(pf: PolicyFile) -> str:
    rows, summary = policy_report_rows(pf)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["label", "depth", "w", "p"])
    for name, d, w, p in rows + summary:
        wr.writerow([name, d, repr(w), repr(p)])
    return buf.getvalue()


def depth_observation(pf: PolicyFile) -> str:
    _, summary = policy_report_rows(pf)
    means = [s[2] for s in summary]
    if len(means) < 2:
        return "single depth level; no per-depth comparison"
    inc = all(b > a for a, b in zip(means, means[1:]))
    desc = ", ".join(f"depth {s[1]}: {s[2]:.4f}" for s in summary)
    verdict = "increases" if inc else "does not increase monotonically"
    return f"mean training weight by depth ({desc}); weight {verdict} with depth"
