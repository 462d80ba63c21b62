"""Multi-label datasets: JSONL I/O, label vocabularies, batching, synthesis."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class DataFormatError(ValueError):
    pass


class VocabularyError(ValueError):
    pass


class SynthConfigError(ValueError):
    pass


def label_depth(name: str) -> int:
    return len([part for part in name.split("/") if part])


def label_parent(name: str) -> str | None:
    parts = [part for part in name.split("/") if part]
    if len(parts) < 2 or not name.startswith("/"):
        return None
    return "/" + "/".join(parts[:-1])


class LabelVocab:
    """Dense label ids in lexicographic name order, plus the path hierarchy."""

    def __init__(self, names):
        names = sorted(set(names))
        self.names: list[str] = names
        self.index = {n: i for i, n in enumerate(names)}
        self.parent: dict[int, int] = {}
        self.missing_parents: set[str] = set()
        for i, n in enumerate(names):
            par = label_parent(n)
            if par is None:
                continue
            if par in self.index:
                self.parent[i] = self.index[par]
            else:
                self.missing_parents.add(par)

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, LabelVocab) and self.names == other.names

    def __repr__(self):
        return f"LabelVocab(N={len(self)})"

    def id(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise VocabularyError(f"unknown label {name!r}") from None

    def parent_of(self, name: str) -> str | None:
        i = self.parent.get(self.id(name))
        return None if i is None else self.names[i]

    @property
    def depths(self) -> np.ndarray:
        return np.array([label_depth(n) for n in self.names], dtype=np.int64)

    @property
    def has_hierarchy(self) -> bool:
        return bool(self.parent) or bool(self.missing_parents)

    @property
    def is_partial(self) -> bool:
        return bool(self.missing_parents)


@dataclass(frozen=True)
class Instance:
    features: tuple[tuple[int, float], ...]
    labels: frozenset[int]


@dataclass
class MultiLabelDataset:
    instances: list[Instance]
    vocab: LabelVocab
    dim: int
    role: str = "train"
    duplicate_labels: int = 0
    empty_label_sets: int = field(init=False, default=0)

    def __post_init__(self):
        for inst in self.instances:
            for idx, _ in inst.features:
                if not 0 <= idx < self.dim:
                    raise DataFormatError(f"feature index {idx} outside [0, {self.dim})")
        self.empty_label_sets = sum(1 for inst in self.instances if not inst.labels)
        self._X = None
        self._Y = None

    def __len__(self):
        return len(self.instances)

    @property
    def n_labels(self) -> int:
        return len(self.vocab)

    def features_matrix(self) -> np.ndarray:
        if self._X is None:
            X = np.zeros((len(self), self.dim))
            for r, inst in enumerate(self.instances):
                for idx, val in inst.features:
                    X[r, idx] = val
            X.setflags(write=False)
            self._X = X
        return self._X

    def label_matrix(self) -> np.ndarray:
        if self._Y is None:
            Y = np.zeros((len(self), self.n_labels))
            for r, inst in enumerate(self.instances):
                for j in inst.labels:
                    Y[r, j] = 1.0
            Y.setflags(write=False)
            self._Y = Y
        return self._Y

    def subset(self, rows, role: str | None = None) -> "MultiLabelDataset":
        return MultiLabelDataset(
            [self.instances[i] for i in rows], self.vocab, self.dim, role or self.role
        )

    def label_priors(self) -> np.ndarray:
        if not len(self):
            return np.zeros(self.n_labels)
        return self.label_matrix().mean(axis=0)


@dataclass(frozen=True)
class Batch:
    X: np.ndarray
    Y: np.ndarray

    def __len__(self):
        return self.X.shape[0]


def _infer_dim(instances) -> int:
    top = -1
    for inst in instances:
        for idx, _ in inst.features:
            top = max(top, idx)
    return top + 1


def load_dataset(
    path, vocab: LabelVocab | None = None, dim: int | None = None, role: str = "train"
) -> tuple[MultiLabelDataset, LabelVocab]:
    """Read a JSONL dataset.

    Each line is ``{"features": [[idx, val], ...], "labels": [name, ...]}``.
    A fixed ``vocab`` rejects unknown labels; otherwise the vocabulary is the
    sorted set of labels seen. ``dim`` defaults to the largest index + 1.
    """
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                feats = tuple((int(i), float(v)) for i, v in obj["features"])
                names = [str(n) for n in obj["labels"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
            for i, _ in feats:
                if i < 0:
                    raise DataFormatError(f"{path}:{lineno}: negative feature index {i}")
            raw.append((lineno, feats, names))

    if vocab is None:
        if not raw:
            raise VocabularyError(f"{path}: empty dataset and no vocabulary given")
        vocab = LabelVocab(n for _, _, names in raw for n in names)

    instances = []
    dups = 0
    for lineno, feats, names in raw:
        ids = []
        for n in names:
            if n not in vocab.index:
                raise VocabularyError(f"{path}:{lineno}: unknown label {n!r}")
            ids.append(vocab.index[n])
        labels = frozenset(ids)
        dups += len(ids) - len(labels)
        instances.append(Instance(feats, labels))
    if dups:
        log.warning("%s: collapsed %d duplicate label(s)", path, dups)

    inferred = _infer_dim(instances)
    if dim is None:
        dim = inferred
    elif inferred > dim:
        raise DataFormatError(f"{path}: feature index {inferred - 1} exceeds dimension {dim}")
    ds = MultiLabelDataset(instances, vocab, dim, role)
    ds.duplicate_labels = dups
    return ds, vocab


def dumps_instance(inst: Instance, vocab: LabelVocab) -> str:
    feats = [[i, v] for i, v in inst.features]
    labels = [vocab.names[j] for j in sorted(inst.labels)]
    return json.dumps({"features": feats, "labels": labels})


def dump_dataset(ds: MultiLabelDataset, path) -> None:
    text = "".join(dumps_instance(inst, ds.vocab) + "\n" for inst in ds.instances)
    atomic_write_text(path, text)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def full_batch(ds: MultiLabelDataset) -> Batch:
    return Batch(ds.features_matrix(), ds.label_matrix())


def sample_batch(ds: MultiLabelDataset, size: int, rng: np.random.Generator) -> Batch:
    """Uniform sample without replacement; ``size >= len(ds)`` gives the full set."""
    if not len(ds):
        raise ValueError("cannot sample from an empty dataset")
    if size <= 0:
        raise ValueError(f"batch size must be positive, got {size}")
    n = len(ds)
    if size >= n:
        return full_batch(ds)
    rows = np.sort(rng.choice(n, size=size, replace=False))
    return Batch(ds.features_matrix()[rows], ds.label_matrix()[rows])


def epoch_batches(ds: MultiLabelDataset, size: int, rng: np.random.Generator):
    """Shuffle once and partition: each instance appears in exactly one batch."""
    order = rng.permutation(len(ds))
    X, Y = ds.features_matrix(), ds.label_matrix()
    for start in range(0, len(ds), size):
        rows = order[start : start + size]
        yield Batch(X[rows], Y[rows])


class BatchSampler:
    """Per-step batch source for an episode.

    With ``replacement=True`` every step is an independent draw. Otherwise the
    steps walk through shuffled epochs, so no instance repeats until all have
    been used.
    """

    def __init__(self, ds, size, rng, replacement=True):
        self.ds, self.size, self.rng, self.replacement = ds, size, rng, replacement
        self._queue = iter(())

    def next(self) -> Batch:
        if self.replacement or self.size >= len(self.ds):
            return sample_batch(self.ds, self.size, self.rng)
        for b in self._queue:
            if len(b) == self.size:
                return b
        self._queue = epoch_batches(self.ds, self.size, self.rng)
        return next(self._queue)


# ----------------------------------------------------------------- synthesis


@dataclass
class SynthConfig:
    n_labels: int = 12
    depth: int = 3
    n_train: int = 2000
    n_test: int = 500
    feature_dim: int = 32
    noise: float = 0.1
    feature_noise: float = 2.0
    cooccur_pairs: int = 2
    cooccur_strength: float = 0.8
    descend_prob: float = 0.7

    def validate(self):
        if self.n_labels < 1 or self.depth < 1 or self.depth > self.n_labels:
            raise SynthConfigError("need 1 <= depth <= n_labels")
        if not 0.0 <= self.noise < 0.5:
            raise SynthConfigError(f"noise rate must be in [0, 0.5), got {self.noise}")
        if self.n_train < 0 or self.n_test < 0 or self.feature_dim < 1:
            raise SynthConfigError("instance counts must be >= 0 and feature_dim >= 1")
        if self.feature_noise < 0:
            raise SynthConfigError("feature_noise must be >= 0")
        if not 0.0 <= self.cooccur_strength <= 1.0 or not 0.0 <= self.descend_prob <= 1.0:
            raise SynthConfigError("probabilities must lie in [0, 1]")
        return self

    @property
    def n_instances(self) -> int:
        return self.n_train + self.n_test


@dataclass
class LabelTree:
    names: list[str]
    parent: list[int]  # -1 for roots
    level: list[int]  # 0-based
    children: list[list[int]]
    pairs: list[tuple[int, int]]

    def ancestors(self, j: int) -> list[int]:
        out = []
        while self.parent[j] >= 0:
            j = self.parent[j]
            out.append(j)
        return out

    def root_of(self, j: int) -> int:
        anc = self.ancestors(j)
        return anc[-1] if anc else j


def _level_sizes(n: int, depth: int) -> list[int]:
    # level l gets a share proportional to l + 1, and at least one label
    weights = np.arange(1, depth + 1, dtype=float)
    sizes = np.maximum(1, np.floor(n * weights / weights.sum()).astype(int))
    sizes[-1] += n - sizes.sum()
    while sizes[-1] < 1:
        k = int(np.argmax(sizes[:-1]))
        sizes[k] -= 1
        sizes[-1] += 1
    return [int(s) for s in sizes]


def build_label_tree(cfg: SynthConfig) -> LabelTree:
    sizes = _level_sizes(cfg.n_labels, cfg.depth)
    ids, parent, level = [], [], []
    prev: list[int] = []
    for lv, size in enumerate(sizes):
        cur = []
        for k in range(size):
            idx = len(ids)
            ids.append(idx)
            parent.append(prev[k % len(prev)] if prev else -1)
            level.append(lv)
            cur.append(idx)
        prev = cur
    names = []
    for j in ids:
        chain = [j] + _ancestors(parent, j)
        names.append("/" + "/".join(f"L{k:02d}" for k in reversed(chain)))
    children = [[] for _ in ids]
    for j, par in enumerate(parent):
        if par >= 0:
            children[par].append(j)

    # co-occurrence pairs join leaves of different root subtrees; leaves can
    # never be removed by the hierarchy noise, so P(j | i) stays as planted
    leaves = [j for j in ids if not children[j]]
    tree = LabelTree(names, parent, level, children, [])
    by_root: dict[int, list[int]] = {}
    for j in leaves:
        by_root.setdefault(tree.root_of(j), []).append(j)
    groups = [sorted(v) for _, v in sorted(by_root.items())]
    pairs = []
    if len(groups) >= 2:
        k = 0
        while len(pairs) < cfg.cooccur_pairs and k < max(len(g) for g in groups):
            a, b = groups[0], groups[1 + (k % (len(groups) - 1))]
            if k < len(a) and k < len(b):
                pairs.append((a[k], b[k]))
            k += 1
    elif len(leaves) >= 2:
        for k in range(0, len(leaves) - 1, 2):
            if len(pairs) >= cfg.cooccur_pairs:
                break
            pairs.append((leaves[k], leaves[k + 1]))
    tree.pairs = pairs
    return tree


def _ancestors(parent, j):
    out = []
    while parent[j] >= 0:
        j = parent[j]
        out.append(j)
    return out


def synth_label_sets(cfg: SynthConfig, tree: LabelTree, n: int, rng) -> list[set[int]]:
    roots = [j for j, par in enumerate(tree.parent) if par < 0]
    out = []
    for _ in range(n):
        j = roots[rng.integers(len(roots))]
        clean = {j}
        while tree.children[j] and rng.random() < cfg.descend_prob:
            kids = tree.children[j]
            j = kids[rng.integers(len(kids))]
            clean.add(j)
        for a, b in tree.pairs:
            if a in clean:
                if rng.random() < cfg.cooccur_strength:
                    clean.add(b)
                    clean.update(tree.ancestors(b))
                else:
                    clean.discard(b)
        # each present child independently loses its parent with prob noise
        drop = set()
        for c in sorted(clean):
            par = tree.parent[c]
            if par >= 0 and rng.random() < cfg.noise:
                drop.add(par)
        out.append(clean - drop)
    return out


def synth_generate(cfg: SynthConfig, rng: np.random.Generator) -> MultiLabelDataset:
    """Planted-dependency dataset: hierarchy paths, co-occurring leaf pairs,
    and features that are noisy linear projections of the label vector."""
    cfg.validate()
    tree = build_label_tree(cfg)
    vocab = LabelVocab(tree.names)
    to_vocab = [vocab.index[name] for name in tree.names]
    n = cfg.n_instances
    sets = synth_label_sets(cfg, tree, n, rng)
    Y = np.zeros((n, cfg.n_labels))
    for r, s in enumerate(sets):
        for j in s:
            Y[r, to_vocab[j]] = 1.0
    A = rng.normal(size=(cfg.n_labels, cfg.feature_dim))
    X = Y @ A + cfg.feature_noise * rng.normal(size=(n, cfg.feature_dim))
    X = np.round(X, 6)
    instances = []
    for r in range(n):
        feats = tuple((int(i), float(X[r, i])) for i in range(cfg.feature_dim) if X[r, i] != 0.0)
        labels = frozenset(int(j) for j in np.flatnonzero(Y[r]))
        instances.append(Instance(feats, labels))
    return MultiLabelDataset(instances, vocab, cfg.feature_dim, "synthetic")


def hierarchy_violations(ds: MultiLabelDataset) -> int:
    """Count (instance, label) pairs whose path parent is absent."""
    bad = 0
    for inst in ds.instances:
        for j in inst.labels:
            par = ds.vocab.parent.get(j)
            if par is not None and par not in inst.labels:
                bad += 1
    return bad
