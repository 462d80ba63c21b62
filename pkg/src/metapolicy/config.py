"""Run configuration: INI-style ``[section]`` blocks of ``key = value`` lines.

Relative paths resolve against the config file's directory. Command-line
``--set section.key=value`` overrides are applied before validation.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import SynthConfig
from .metaln import MetaConfig
from .policies import METHODS


class ConfigError(ValueError):
    pass


@dataclass
class ClassifierConfig:
    hidden: int = 64
    lr: float = 0.1
    final_lr: float = 0.003
    epochs: int = 20
    batch: int = 32
    momentum: float = 0.0
    persist_across_episodes: bool = False


@dataclass
class PolicyConfig:
    method: str = "meta"
    fbr: float = 0.2
    tuning_fraction: float = 0.1
    k: int = 10


@dataclass
class Paths:
    train: Path | None = None
    test: Path | None = None
    tuning: Path | None = None
    out: Path = Path("out")


@dataclass
class RunConfig:
    seed: int = 0
    paths: Paths = field(default_factory=Paths)
    synth: SynthConfig = field(default_factory=SynthConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    meta: MetaConfig = field(default_factory=MetaConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    source: Path | None = None

    def meta_config(self) -> MetaConfig:
        m = self.meta
        m.clf_hidden = self.classifier.hidden
        m.clf_lr = self.classifier.lr
        m.persist_classifier = self.classifier.persist_across_episodes
        return m

    def validate(self):
        c, m, p = self.classifier, self.meta, self.policy
        try:
            self.synth.validate()
            self.meta_config().validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if m.sigma <= 0:
            raise ConfigError("meta.sigma must be > 0")
        if c.hidden < 0 or c.epochs < 0 or c.batch < 1 or c.lr < 0 or c.final_lr < 0:
            raise ConfigError("classifier settings out of range")
        if p.method not in METHODS:
            raise ConfigError(f"policy.method must be one of {', '.join(METHODS)}")
        if not 0.0 <= p.fbr <= 1.0:
            raise ConfigError("policy.fbr must lie in [0, 1]")
        if not 0.0 < p.tuning_fraction < 1.0:
            raise ConfigError("policy.tuning_fraction must lie in (0, 1)")
        if p.k < 1:
            raise ConfigError("policy.k must be >= 1")
        return self

    def require(self, *names: str):
        """Check that the named data paths are set and exist."""
        for name in names:
            path = getattr(self.paths, name)
            if path is None:
                raise ConfigError(f"paths.{name} is not set")
            if not Path(path).exists():
                raise ConfigError(f"paths.{name} does not exist: {path}")


_SECTIONS = {
    "synth": SynthConfig,
    "classifier": ClassifierConfig,
    "meta": MetaConfig,
    "policy": PolicyConfig,
}
# filled from [classifier] instead
_HIDDEN_META = {"clf_hidden", "clf_lr", "persist_classifier"}


def _coerce(raw: str, typ, key: str):
    raw = raw.strip()
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None
    return raw


def _set(cfg: RunConfig, section: str, key: str, raw: str, base: Path):
    full = f"{section}.{key}"
    if section == "run":
        if key != "seed":
            raise ConfigError(f"unknown key {full}")
        cfg.seed = _coerce(raw, int, full)
        return
    if section == "paths":
        if key not in {f.name for f in fields(Paths)}:
            raise ConfigError(f"unknown key {full}")
        raw = raw.strip()
        value = None if not raw else Path(raw) if Path(raw).is_absolute() else base / raw
        setattr(cfg.paths, key, value)
        return
    if section not in _SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    target = getattr(cfg, section)
    types = {f.name: f.type for f in fields(target) if f.name not in _HIDDEN_META}
    if key not in types:
        raise ConfigError(f"unknown key {full}")
    setattr(target, key, _coerce(raw, types[key], full))


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.optionxform = str
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as e:
            raise ConfigError(f"{path}: {e}") from None
        base = path.resolve().parent
        cfg.source = path
        for section in parser.sections():
            for key, raw in parser.items(section):
                _set(cfg, section, key, raw, base)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        _set(cfg, section.strip(), key.strip(), raw, Path.cwd())
    return cfg.validate()


DEFAULT_CONFIG = """\
; metapolicy run configuration
[run]
seed = 0

[paths]
train = data/train.jsonl
test = data/test.jsonl
; tuning = data/tuning.jsonl   ; optional; otherwise held out from train
out = runs/default

[synth]
n_labels = 12
depth = 3
n_train = 2000
n_test = 500
feature_dim = 32
noise = 0.1
feature_noise = 2.0
cooccur_pairs = 2
cooccur_strength = 0.8
descend_prob = 0.7

[classifier]
hidden = 64
lr = 0.1            ; in-episode updates
final_lr = 0.003    ; final training with the extracted policy
epochs = 20
batch = 32
momentum = 0.0
persist_across_episodes = false

[meta]
hidden = 64
T = 30
M = 200
batch = 32
sigma = 0.1
lr = 0.01
momentum = 0.0
baseline_decay = 0.9
grad_clip = 1.0
replacement = true
head_init = zero

[policy]
method = meta       ; meta | fixed | hier | odr | scutfbr
fbr = 0.2
tuning_fraction = 0.1
k = 10
"""
