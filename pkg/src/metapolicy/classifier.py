"""Reference multi-label classifier and the weighted cross-entropy objective."""

from __future__ import annotations

import json

import numpy as np

from . import ndiff as nd
from .data import Batch, atomic_write_text
from .ndiff import ContractError, DimensionError, Tensor

PROB_EPS = 1e-7
CHECKPOINT_VERSION = 1


def weighted_cross_entropy(probs: Tensor, targets, w) -> Tensor:
    """Sum over the batch of per-label binary cross-entropy, label j scaled by w_j * N.

    Uniform weights (1/N each) give the plain sum-reduced cross-entropy.
    """
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise DimensionError(f"probs {probs.shape} vs targets {targets.shape}")
    if w.shape[1] != probs.shape[1]:
        raise DimensionError(f"{w.shape[1]} weights for {probs.shape[1]} labels")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
        raise ContractError(f"training weights must lie on the simplex (sum={w.sum()!r})")
    coef = w * probs.shape[1]
    return nd.scale(nd.sum(nd.mul(_bce_terms(probs, targets), coef)), -1.0)


def cross_entropy(probs: Tensor, targets) -> Tensor:
    """Unweighted, sum-reduced binary cross-entropy."""
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise DimensionError(f"probs {probs.shape} vs targets {targets.shape}")
    return nd.scale(nd.sum(_bce_terms(probs, targets)), -1.0)


def _bce_terms(probs: Tensor, targets: np.ndarray) -> Tensor:
    return nd.add(
        nd.mul(nd.log(probs), targets),
        nd.mul(nd.log(nd.sub(1.0, probs)), 1.0 - targets),
    )


def predict_labels(probs, p) -> np.ndarray:
    """Label j is on iff its probability reaches threshold p_j."""
    probs = probs.value if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if probs.ndim != 2 or probs.shape[1] != p.shape[0]:
        raise DimensionError(f"probs {probs.shape} vs {p.shape[0]} thresholds")
    return (probs >= p).astype(np.int8)


class MLPClassifier:
    """D -> H (tanh) -> N (sigmoid). ``hidden=0`` drops the hidden layer."""

    def __init__(self, dim: int, n_labels: int, hidden: int = 64, seed: int | None = 0):
        self.dim, self.n_labels, self.hidden = dim, n_labels, hidden
        self.params: list[Tensor] = []
        self.reinit(np.random.default_rng(seed))

    def reinit(self, rng: np.random.Generator):
        D, H, N = self.dim, self.hidden, self.n_labels
        if H:
            shapes = [(D, H), (1, H), (H, N), (1, N)]
            vals = [nd.glorot(rng, D, H), np.zeros((1, H)), nd.glorot(rng, H, N), np.zeros((1, N))]
        else:
            shapes = [(D, N), (1, N)]
            vals = [nd.glorot(rng, D, N), np.zeros((1, N))]
        self.params = [Tensor(v.reshape(s)) for v, s in zip(vals, shapes)]
        return self

    def zero_(self):
        for p in self.params:
            p.value = np.zeros_like(p.value)
        return self

    def forward(self, X) -> Tensor:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise DimensionError(f"features of shape {X.shape} for a {self.dim}-dim classifier")
        if self.hidden:
            W1, b1, W2, b2 = self.params
            h = nd.tanh(nd.add(nd.matmul(X, W1), b1))
            logits = nd.add(nd.matmul(h, W2), b2)
        else:
            W, b = self.params
            logits = nd.add(nd.matmul(X, W), b)
        return nd.clip(nd.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)

    def predict_proba(self, X) -> np.ndarray:
        if isinstance(X, Batch):
            X = X.X
        return self.forward(X).value

    def loss_and_grads(self, batch: Batch, w=None):
        with nd.Tape() as tape:
            probs = self.forward(batch.X)
            loss = cross_entropy(probs, batch.Y) if w is None else weighted_cross_entropy(probs, batch.Y, w)
        return loss.item(), tape.gradient(loss, self.params)

    def train_step(self, batch: Batch, w=None, lr: float = 0.1, opt: nd.SGD | None = None) -> float:
        """One SGD step on the (weighted) cross-entropy; returns the pre-step loss."""
        loss, grads = self.loss_and_grads(batch, w)
        (opt or nd.SGD(lr)).step(self.params, grads)
        return loss

    # checkpoints -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "mlp",
            "dim": self.dim,
            "n_labels": self.n_labels,
            "hidden": self.hidden,
            "params": [{"shape": list(p.shape), "values": p.value.ravel().tolist()} for p in self.params],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MLPClassifier":
        if obj.get("version") != CHECKPOINT_VERSION or obj.get("kind") != "mlp":
            raise ValueError("not a classifier checkpoint of a supported version")
        clf = cls(obj["dim"], obj["n_labels"], obj["hidden"], seed=0)
        if len(obj["params"]) != len(clf.params):
            raise ValueError("checkpoint parameter count mismatch")
        for p, rec in zip(clf.params, obj["params"]):
            arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
            if arr.shape != p.shape:
                raise ValueError(f"checkpoint shape {arr.shape} != expected {p.shape}")
            p.value = arr
        return clf

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MLPClassifier":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_classifier(clf: MLPClassifier, ds, w, epochs: int, batch_size: int, lr: float, rng, momentum=0.0):
    """Minibatch epochs with a fixed training policy; returns per-epoch mean loss."""
    from .data import epoch_batches

    opt = nd.SGD(lr, momentum)
    history = []
    for _ in range(epochs):
        losses = [clf.train_step(b, w, opt=opt) for b in epoch_batches(ds, batch_size, rng)]
        history.append(float(np.mean(losses)))
    return history
