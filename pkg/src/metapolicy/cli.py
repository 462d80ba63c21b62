"""``metapolicy`` command-line entry point.

Exit codes: 0 success, 2 usage/config/consistency error, 3 numeric failure,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .classifier import MLPClassifier
from .config import DEFAULT_CONFIG, ConfigError, RunConfig, load_config
from .data import (
    DataFormatError,
    LabelVocab,
    SynthConfigError,
    VocabularyError,
    atomic_write_text,
    dump_dataset,
    hierarchy_violations,
    load_dataset,
    synth_generate,
)
from .metaln import MetaParams, NumericError, write_training_log
from .metrics import format_results_table
from .policies import PolicyFile

log = logging.getLogger("metapolicy")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("METAPOLICY_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.paths.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_train(cfg: RunConfig):
    cfg.require("train")
    train, vocab = load_dataset(cfg.paths.train, role="train")
    if len(train) == 0:
        raise UsageError("training set is empty")
    return train, vocab


def _load_tuning(cfg: RunConfig, train):
    if cfg.paths.tuning is None:
        return None
    cfg.require("tuning")
    tuning, _ = load_dataset(cfg.paths.tuning, vocab=train.vocab, dim=train.dim, role="tuning")
    return tuning


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------- commands


def cmd_synth(cfg: RunConfig, args) -> dict:
    ds = synth_generate(cfg.synth, pl.rng_for(cfg.seed, 0))
    n_train = cfg.synth.n_train
    train = ds.subset(range(n_train), "train")
    test = ds.subset(range(n_train, len(ds)), "test")
    if args.out or cfg.paths.train is None:
        train_path, test_path = _out(cfg) / "train.jsonl", _out(cfg) / "test.jsonl"
    else:
        train_path, test_path = Path(cfg.paths.train), Path(cfg.paths.test or _out(cfg) / "test.jsonl")
    dump_dataset(train, train_path)
    dump_dataset(test, test_path)
    prov = {
        "generator": "metapolicy.synth",
        "seed": cfg.seed,
        "config": {k: getattr(cfg.synth, k) for k in cfg.synth.__dataclass_fields__},
        "labels": ds.vocab.names,
        "feature_dim": ds.dim,
        "train": {"path": train_path.name, "instances": len(train), "sha256": _sha256(train_path)},
        "test": {"path": test_path.name, "instances": len(test), "sha256": _sha256(test_path)},
        "hierarchy_violations": hierarchy_violations(ds),
    }
    _write_json(train_path.parent / "provenance.json", prov)
    print(f"wrote {len(train)} train / {len(test)} test instances to {train_path.parent}")
    return {"train": train_path, "test": test_path}


def cmd_train_meta(cfg: RunConfig, args) -> dict:
    train, _ = _load_train(cfg)
    out = _out(cfg)
    rows = []
    log_path = out / "train_log.csv"
    try:
        meta, rows, pf = pl.run_meta_training(cfg, train, on_episode=rows.append)
    except NumericError:
        write_training_log(rows, log_path)
        raise
    meta.save(out / "meta.ckpt.json")
    write_training_log(rows, log_path)
    pf.save(out / "policy.json")
    print(f"meta-trained {len(rows)} episodes; policy written to {out / 'policy.json'}")
    return {"policy": out / "policy.json", "meta": out / "meta.ckpt.json", "log": log_path}


def _load_policy(path, vocab: LabelVocab | None = None) -> PolicyFile:
    if path is None:
        raise UsageError("--policy is required")
    try:
        pf = PolicyFile.load(path)
    except (json.JSONDecodeError, ValueError, KeyError) as e:
        raise UsageError(f"invalid policy file {path}: {e}") from None
    if vocab is not None:
        try:
            pl.check_labels(pf.labels, vocab)
        except ValueError as e:
            raise UsageError(str(e)) from None
    return pf


def cmd_train_final(cfg: RunConfig, args, policy_path=None) -> dict:
    train, vocab = _load_train(cfg)
    pf = _load_policy(policy_path or args.policy, vocab)
    history: list[float] = []
    clf = pl.train_final_classifier(cfg, train, pf.policy.w, history)
    if not all(np.isfinite(history)):
        raise NumericError("non-finite loss during final training")
    out = _out(cfg)
    clf.save(out / "classifier.ckpt.json")
    atomic_write_text(out / "final_loss.csv", "epoch,mean_loss\n" + "".join(f"{i + 1},{v!r}\n" for i, v in enumerate(history)))
    print(f"trained final classifier ({cfg.classifier.epochs} epochs); checkpoint {out / 'classifier.ckpt.json'}")
    return {"checkpoint": out / "classifier.ckpt.json"}


def cmd_evaluate(cfg: RunConfig, args, checkpoint=None, policy_path=None) -> dict:
    checkpoint = checkpoint or args.checkpoint
    if checkpoint is None:
        raise UsageError("--checkpoint is required")
    clf = MLPClassifier.load(checkpoint)
    pf = _load_policy(policy_path or args.policy)
    cfg.require("test")
    vocab = LabelVocab(pf.labels)
    if len(vocab) != clf.n_labels:
        raise UsageError(f"checkpoint has {clf.n_labels} labels, policy has {len(vocab)}")
    try:
        test, _ = load_dataset(cfg.paths.test, vocab=vocab, dim=clf.dim, role="test")
    except (VocabularyError, DataFormatError) as e:
        raise UsageError(str(e)) from None
    if len(test) == 0:
        raise UsageError("test set is empty")
    rep = pl.evaluate_policy(clf, test, pf.policy.p)
    out = _out(cfg)
    atomic_write_text(out / "metrics.json", rep.to_json())
    table = format_results_table({pf.method: rep})
    atomic_write_text(out / "metrics.txt", table)
    print(table, end="")
    return {"metrics": out / "metrics.json", "table": out / "metrics.txt"}


def cmd_baseline(cfg: RunConfig, args, method=None) -> dict:
    method = method or args.method or cfg.policy.method
    if method == "meta":
        raise UsageError("baseline method must be one of fixed|hier|odr|scutfbr")
    train, _ = _load_train(cfg)
    tuning = _load_tuning(cfg, train)
    pf = pl.run_baseline(cfg, method, train, tuning)
    path = _out(cfg) / f"policy_{method}.json"
    pf.save(path)
    print(f"{method} policy written to {path}")
    return {"policy": path}


def cmd_robustness(cfg: RunConfig, args) -> dict:
    train, vocab = _load_train(cfg)
    meta_path = args.meta or _out(cfg) / "meta.ckpt.json"
    if not Path(meta_path).exists():
        raise UsageError(f"meta checkpoint not found: {meta_path} (run train-meta first)")
    meta = MetaParams.load(meta_path)
    if meta.n_labels != len(vocab):
        raise UsageError(f"meta checkpoint has {meta.n_labels} labels, data has {len(vocab)}")
    cfg.require("test")
    test, _ = load_dataset(cfg.paths.test, vocab=vocab, dim=train.dim, role="test")
    k = args.k or cfg.policy.k
    res = pl.robustness_study(cfg, meta, train, test, k)
    out = _out(cfg)
    atomic_write_text(out / "robustness.txt", res.table())
    _write_json(out / "robustness.json", {"k": k, "stats": res.stats(), "runs": [r.to_dict() for r in res.reports]})
    print(res.table(), end="")
    return {"table": out / "robustness.txt"}


def cmd_policy_report(cfg: RunConfig, args, policy_path=None) -> dict:
    pf = _load_policy(policy_path or args.policy)
    out = _out(cfg)
    atomic_write_text(out / "policy_report.csv", pl.policy_report_csv(pf))
    note = pl.depth_observation(pf)
    atomic_write_text(out / "policy_report.txt", note + "\n")
    print(note)
    return {"report": out / "policy_report.csv"}


def cmd_run(cfg: RunConfig, args) -> dict:
    """train-meta (or baseline) -> train-final -> evaluate, plus a manifest."""
    method = cfg.policy.method
    inputs = {"train": cfg.paths.train, "test": cfg.paths.test}
    if cfg.source:
        inputs["config"] = cfg.source
    cfg.require("train", "test")
    if method == "meta":
        stage = cmd_train_meta(cfg, args)
    else:
        stage = cmd_baseline(cfg, args, method)
    policy = stage["policy"]
    final = cmd_train_final(cfg, args, policy_path=policy)
    ev = cmd_evaluate(cfg, args, checkpoint=final["checkpoint"], policy_path=policy)
    outputs = {"policy": policy, "checkpoint": final["checkpoint"], **ev}
    if "meta" in stage:
        outputs["meta"] = stage["meta"]
    manifest = {
        "method": method,
        "seed": cfg.seed,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items() if v},
        "outputs": {k: {"path": Path(v).name, "sha256": _sha256(v)} for k, v in sorted(outputs.items())},
    }
    _write_json(_out(cfg) / "manifest.json", manifest)
    return outputs


def cmd_init_config(args):
    path = Path(args.path)
    if path.exists() and not args.force:
        raise UsageError(f"{path} exists (use --force to overwrite)")
    atomic_write_text(path, DEFAULT_CONFIG)
    print(f"wrote default config to {path}")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


COMMANDS = {
    "synth": cmd_synth,
    "train-meta": cmd_train_meta,
    "train-final": cmd_train_final,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "robustness": cmd_robustness,
    "policy-report": cmd_policy_report,
    "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metapolicy", description="Meta-learned per-label training weights and thresholds.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        if name in ("train-final", "evaluate", "policy-report"):
            p.add_argument("--policy", help="policy JSON file")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="classifier checkpoint")
        if name == "baseline":
            p.add_argument("--method", choices=["fixed", "hier", "odr", "scutfbr"])
        if name == "robustness":
            p.add_argument("--k", type=int)
            p.add_argument("--meta", help="meta-learner checkpoint (default: OUT/meta.ckpt.json)")
    p = sub.add_parser("init-config", help="write the default configuration file")
    p.add_argument("path")
    p.add_argument("--force", action="store_true")
    return ap


def main(argv=None) -> int:
    _setup_logging()
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        if args.command == "init-config":
            cmd_init_config(args)
            return EXIT_OK
        overrides = list(args.set)
        if args.seed is not None:
            overrides.append(f"run.seed={args.seed}")
        if args.out:
            overrides.append(f"paths.out={os.path.abspath(args.out)}")
        cfg = load_config(args.config, overrides)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, UsageError, VocabularyError, DataFormatError, SynthConfigError) as e:
        print(f"metapolicy: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"metapolicy: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"metapolicy: I/O failure: {e}", file=sys.stderr)
        return EXIT_IO
    except FloatingPointError as e:
        print(f"metapolicy: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
