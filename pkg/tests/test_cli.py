import csv
import json

import pytest

from metapolicy.classifier import MLPClassifier
from metapolicy.cli import main
from metapolicy.config import ConfigError, load_config
from metapolicy.data import load_dataset

SMALL = """
[run]
seed = 3
[paths]
train = data/train.jsonl
test = data/test.jsonl
out = out
[synth]
n_labels = 6
n_train = 200
n_test = 50
feature_dim = 8
[classifier]
hidden = 8
epochs = 3
[meta]
hidden = 8
T = 3
M = 2
batch = 16
[policy]
k = 3
"""


@pytest.fixture
def work(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(SMALL)
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "data")]) == 0
    return tmp_path, str(cfg)


def run(cfg, *args):
    return main([args[0], "--config", cfg, *args[1:]])


def test_synth_reproducible(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text(SMALL)
    for d in ("a", "b"):
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    for f in ("train.jsonl", "test.jsonl", "provenance.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    main(["synth", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "c")])
    assert (tmp_path / "a" / "train.jsonl").read_bytes() != (tmp_path / "c" / "train.jsonl").read_bytes()


def test_synth_split_and_provenance(work):
    tmp, _ = work
    train = (tmp / "data" / "train.jsonl").read_text().splitlines()
    test = (tmp / "data" / "test.jsonl").read_text().splitlines()
    assert len(train) == 200 and len(test) == 50
    assert not set(train) & set(test)
    prov = json.loads((tmp / "data" / "provenance.json").read_text())
    assert prov["train"]["instances"] == 200 and len(prov["labels"]) == 6


def test_synth_rejects_large_noise(tmp_path):
    assert main(["synth", "--set", "synth.noise=0.5", "--out", str(tmp_path)]) == 2


def test_noise_zero_has_no_violations(tmp_path):
    assert main(["synth", "--set", "synth.noise=0", "--set", "synth.n_train=100", "--set", "synth.n_test=10", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "provenance.json").read_text())["hierarchy_violations"] == 0


def test_train_meta_outputs(work):
    tmp, cfg = work
    assert run(cfg, "train-meta") == 0
    out = tmp / "out"
    with open(out / "train_log.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and list(rows[0]) == ["episode", "mean_reward", "final_reward", "loss_at_T", "wall_ms"]
    pol = json.loads((out / "policy.json").read_text())
    assert pol["method"] == "meta" and len(pol["w"]) == 6
    assert abs(sum(pol["w"]) - 1) < 1e-9


def test_train_meta_single_step(work):
    tmp, cfg = work
    assert run(cfg, "train-meta", "--set", "meta.M=1", "--set", "meta.T=1") == 0


def test_final_uniform_matches_standard_ce(work):
    tmp, cfg = work
    assert run(cfg, "baseline", "--method", "fixed") == 0
    assert run(cfg, "train-final", "--policy", str(tmp / "out" / "policy_fixed.json")) == 0
    clf = MLPClassifier.load(tmp / "out" / "classifier.ckpt.json")
    assert clf.n_labels == 6
    losses = (tmp / "out" / "final_loss.csv").read_text().splitlines()
    assert losses[0] == "epoch,mean_loss" and len(losses) == 4


def test_evaluate_is_repeatable_and_eps_recall(work):
    tmp, cfg = work
    out = tmp / "out"
    run(cfg, "baseline", "--method", "fixed")
    run(cfg, "train-final", "--policy", str(out / "policy_fixed.json"))
    ck = str(out / "classifier.ckpt.json")
    assert run(cfg, "evaluate", "--checkpoint", ck, "--policy", str(out / "policy_fixed.json")) == 0
    first = (out / "metrics.json").read_bytes()
    run(cfg, "evaluate", "--checkpoint", ck, "--policy", str(out / "policy_fixed.json"))
    assert (out / "metrics.json").read_bytes() == first
    low = json.loads((out / "policy_fixed.json").read_text())
    low["p"] = [0.01] * 6
    (tmp / "low.json").write_text(json.dumps(low))
    assert run(cfg, "evaluate", "--checkpoint", ck, "--policy", str(tmp / "low.json")) == 0
    m = json.loads((out / "metrics.json").read_text())
    test, _ = load_dataset(tmp / "data" / "test.jsonl")
    probs = MLPClassifier.load(ck).predict_proba(test.features_matrix())
    assert probs.min() >= 0.01  # briefly trained, so no score is that low
    assert m["micro_r"] == 1.0 and m["tp"] == m["n_gold"]


@pytest.mark.parametrize("method", ["fixed", "hier", "odr", "scutfbr"])
def test_baselines(work, method):
    tmp, cfg = work
    assert run(cfg, "baseline", "--method", method) == 0
    pol = json.loads((tmp / "out" / f"policy_{method}.json").read_text())
    assert pol["method"] == method
    if method in ("fixed", "odr", "scutfbr"):
        assert pol["w"] == [1 / 6] * 6
    if method == "hier":
        assert pol["p"] == [0.5] * 6 and len(set(pol["w"])) > 1


def test_baseline_rejects_meta(work):
    _, cfg = work
    assert run(cfg, "baseline", "--set", "policy.method=meta") == 2


def test_robustness_table(work):
    tmp, cfg = work
    assert run(cfg, "robustness") == 2  # no checkpoint yet
    run(cfg, "train-meta")
    assert run(cfg, "robustness", "--k", "1") == 0
    stats = json.loads((tmp / "out" / "robustness.json").read_text())["stats"]
    assert stats["Micro-F1"]["stdev"] == 0.0
    assert stats["Micro-F1"]["best"] == stats["Micro-F1"]["worst"]
    assert run(cfg, "robustness") == 0
    lines = (tmp / "out" / "robustness.txt").read_text().splitlines()
    assert [c.strip() for c in lines[0].split("|")] == ["Metrics", "Best", "Worst", "Average", "STDEV"]
    assert [l.split("|")[0].strip() for l in lines[2:]] == ["Accuracy", "Macro-F1", "Micro-F1"]
    assert all(len(l.split("|")) == 5 for l in lines[2:])


def test_policy_report(work):
    tmp, cfg = work
    run(cfg, "baseline", "--method", "hier")
    assert run(cfg, "policy-report", "--policy", str(tmp / "out" / "policy_hier.json")) == 0
    with open(tmp / "out" / "policy_report.csv") as fh:
        rows = list(csv.DictReader(fh))
    depths = {int(r["depth"]) for r in rows}
    assert len(rows) == 6 + len(depths)
    means = {r["label"]: float(r["w"]) for r in rows if r["label"].startswith("mean@")}
    assert sorted(means.values()) == list(means.values())
    assert "increases" in (tmp / "out" / "policy_report.txt").read_text()


def test_exit_codes(work, tmp_path_factory):
    tmp, cfg = work
    assert main(["train-meta", "--set", "bogus.key=1"]) == 2
    assert main(["train-meta", "--set", "meta.T=abc"]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["train-meta", "--config", str(tmp / "missing.ini")]) == 2
    bad = tmp / "bad.jsonl"
    bad.write_text('{"features": [[0, 1.0]], "labels": ["/a"]}\nnot json\n')
    assert run(cfg, "train-meta", "--set", f"paths.train={bad}") == 2
    assert run(cfg, "train-meta", "--set", "meta.lr=1e300", "--set", "classifier.lr=1e300") == 3
    assert run(cfg, "train-meta", "--out", "/proc/forbidden/out") == 4


def test_evaluate_label_mismatch(work):
    tmp, cfg = work
    run(cfg, "baseline", "--method", "fixed")
    run(cfg, "train-final", "--policy", str(tmp / "out" / "policy_fixed.json"))
    pol = json.loads((tmp / "out" / "policy_fixed.json").read_text())
    pol["labels"], pol["w"], pol["p"] = pol["labels"][:5], [0.2] * 5, [0.5] * 5
    (tmp / "short.json").write_text(json.dumps(pol))
    assert run(cfg, "train-final", "--policy", str(tmp / "short.json")) == 2


def test_run_deterministic(work):
    tmp, cfg = work
    for d in ("r1", "r2"):
        assert run(cfg, "run", "--out", str(tmp / d)) == 0
    for f in ("policy.json", "meta.ckpt.json", "classifier.ckpt.json", "metrics.json", "metrics.txt", "manifest.json"):
        assert (tmp / "r1" / f).read_bytes() == (tmp / "r2" / f).read_bytes(), f


def test_init_config_round_trip(tmp_path):
    p = tmp_path / "d.ini"
    assert main(["init-config", str(p)]) == 0
    assert main(["init-config", str(p)]) == 2
    cfg = load_config(p)
    assert cfg.meta.T == 30 and cfg.synth.feature_noise == 2.0
    assert cfg.paths.train == tmp_path / "data" / "train.jsonl"
    with pytest.raises(ConfigError):
        load_config(p, ["policy.fbr=2"])
