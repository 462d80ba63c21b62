"""GRU meta-learner that emits per-label training weights and thresholds,
trained with REINFORCE against the classifier's per-step reward."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import ndiff as nd
from .classifier import MLPClassifier
from .data import BatchSampler, MultiLabelDataset, atomic_write_text, full_batch
from .ndiff import ContractError, DimensionError, Tensor
from .policies import P_EPS, PolicyPair

log = logging.getLogger(__name__)

GATES = ("z", "r", "h")
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    pass


@dataclass
class MetaConfig:
    hidden: int = 64
    T: int = 30
    M: int = 200
    batch: int = 32
    sigma: float = 0.1
    lr: float = 0.01
    momentum: float = 0.0
    baseline_decay: float = 0.9
    grad_clip: float = 1.0
    replacement: bool = True
    head_init: str = "zero"
    clf_hidden: int = 64
    clf_lr: float = 0.1
    persist_classifier: bool = False

    def validate(self):
        if self.T < 1 or self.M < 1 or self.batch < 1 or self.hidden < 1:
            raise ValueError("T, M, batch and hidden must all be >= 1")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.lr < 0 or self.clf_lr < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must lie in [0, 1)")
        if self.head_init not in ("zero", "glorot"):
            raise ValueError(f"head_init must be 'zero' or 'glorot', got {self.head_init!r}")
        return self


class MetaParams:
    """GRU weights over input [p; w] (width 2N) plus the two policy heads."""

    def __init__(self, n_labels: int, hidden: int = 64, rng=None, head_init: str = "zero"):
        rng = np.random.default_rng(0) if rng is None else rng
        N, H = n_labels, hidden
        self.n_labels, self.hidden = N, H
        t: dict[str, Tensor] = {}
        for g in GATES:
            t[f"W_{g}"] = Tensor(nd.glorot(rng, 2 * N, H))
            t[f"U_{g}"] = Tensor(nd.glorot(rng, H, H))
            t[f"b_{g}"] = Tensor(np.zeros((1, H)))
        for head in ("w", "p"):
            if head_init == "glorot":
                t[f"W_{head}"] = Tensor(nd.glorot(rng, H, N))
            else:
                t[f"W_{head}"] = Tensor(np.zeros((H, N)))
            t[f"b_{head}"] = Tensor(np.zeros((1, N)))
        self.tensors = t

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def params(self) -> list[Tensor]:
        return list(self.tensors.values())

    def __getitem__(self, key) -> Tensor:
        return self.tensors[key]

    def zero_(self):
        for p in self.params:
            p.value = np.zeros_like(p.value)
        return self

    def copy(self) -> "MetaParams":
        return MetaParams.from_dict(self.to_dict())

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "meta-gru",
            "n_labels": self.n_labels,
            "hidden": self.hidden,
            "params": {
                k: {"shape": list(v.shape), "values": v.value.ravel().tolist()}
                for k, v in self.tensors.items()
            },
        }

    @classmethod
    def from_dict(cls, obj) -> "MetaParams":
        if obj.get("version") != CHECKPOINT_VERSION or obj.get("kind") != "meta-gru":
            raise ValueError("not a meta-learner checkpoint of a supported version")
        m = cls(obj["n_labels"], obj["hidden"])
        for k, rec in obj["params"].items():
            arr = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
            if k not in m.tensors or arr.shape != m.tensors[k].shape:
                raise ValueError(f"bad checkpoint entry {k!r}")
            m.tensors[k].value = arr
        return m

    def save(self, path):
        atomic_write_text(path, json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "MetaParams":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ------------------------------------------------------------ single step


def gru_step(meta: MetaParams, state, x):
    """One GRU update; works on Tensors (recorded) or arrays (plain)."""
    state, x = nd._as_tensor(state), nd._as_tensor(x)
    if x.shape != (1, 2 * meta.n_labels) or state.shape != (1, meta.hidden):
        raise DimensionError(f"gru_step: input {x.shape}, state {state.shape}")

    def gate(g, h):
        return nd.add(nd.add(nd.matmul(x, meta[f"W_{g}"]), nd.matmul(h, meta[f"U_{g}"])), meta[f"b_{g}"])

    z = nd.sigmoid(gate("z", state))
    r = nd.sigmoid(gate("r", state))
    cand = nd.tanh(gate("h", nd.mul(r, state)))
    return nd.add(nd.mul(nd.sub(1.0, z), state), nd.mul(z, cand))


def policy_input(policy: PolicyPair) -> np.ndarray:
    return np.concatenate([policy.p, policy.w]).reshape(1, -1)


def policy_logits(meta: MetaParams, state):
    state = nd._as_tensor(state)
    mu_w = nd.add(nd.matmul(state, meta["W_w"]), meta["b_w"])
    mu_p = nd.add(nd.matmul(state, meta["W_p"]), meta["b_p"])
    return mu_w, mu_p


def squash(w_logits, p_logits) -> PolicyPair:
    w = nd.softmax_row(w_logits).value
    p = np.clip(nd.sigmoid(p_logits).value, P_EPS, 1 - P_EPS)
    return PolicyPair(w, p)


def generate_policies(meta: MetaParams, state):
    """Mean policy for a state, plus the pre-squash logits (w-logits, p-logits)."""
    mu_w, mu_p = policy_logits(meta, state)
    return squash(mu_w.value, mu_p.value), (mu_w.value.ravel(), mu_p.value.ravel())


def gaussian_log_prob(noise: np.ndarray, sigma: float) -> float:
    k = noise.size
    return float(-(noise**2).sum() / (2 * sigma**2) - k * (math.log(sigma) + 0.5 * math.log(2 * math.pi)))


def sample_action(logits, sigma: float, rng: np.random.Generator):
    """Perturb both logit vectors with N(0, sigma^2) noise, then squash.

    Returns (sampled policy, log-density, sampled logits).
    """
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    mu = np.concatenate([np.ravel(logits[0]), np.ravel(logits[1])])
    noise = sigma * rng.standard_normal(mu.shape)
    a = mu + noise
    N = mu.size // 2
    return squash(a[:N], a[N:]), gaussian_log_prob(noise, sigma), a


def compute_reward(probs, targets, p) -> float:
    """Sum over batch and labels of (-1)^y* (p_j - y_ij) / p_j."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64).reshape(1, -1)
    if probs.shape != targets.shape or probs.shape[1] != p.shape[1]:
        raise DimensionError(f"probs {probs.shape}, targets {targets.shape}, p {p.shape}")
    if np.any(p < P_EPS):
        raise ContractError(f"thresholds below {P_EPS} reached the reward")
    sign = 1.0 - 2.0 * targets
    return float((sign * (p - probs) / p).sum())


def episode_returns(rewards) -> list[float]:
    """Suffix sums: R_t = r_t + R_{t+1}."""
    if not len(rewards):
        raise ValueError("empty reward sequence")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + acc
        out[t] = acc
    return out


# --------------------------------------------------------------- episodes


@dataclass
class EpisodeTrace:
    policies: list[PolicyPair] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    log_probs: list[float] = field(default_factory=list)
    baselines: list[float] = field(default_factory=list)
    inputs: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray | None] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    sigma: float = 0.0
    classifier: object = None

    def __len__(self):
        return len(self.rewards)

    @property
    def returns(self) -> list[float]:
        return episode_returns(self.rewards)


def initial_policy(n: int) -> PolicyPair:
    return PolicyPair(np.full(n, 1.0 / n), np.full(n, 0.5))


def random_initial_policy(n: int, rng: np.random.Generator) -> PolicyPair:
    e = rng.exponential(size=n)
    return PolicyPair(e / e.sum(), rng.uniform(0.05, 0.95, size=n))


def default_classifier_factory(ds: MultiLabelDataset, cfg: MetaConfig):
    def make(rng):
        return MLPClassifier(ds.dim, ds.n_labels, cfg.clf_hidden, seed=None).reinit(rng)

    return make


def run_episode(
    meta: MetaParams,
    ds: MultiLabelDataset,
    cfg: MetaConfig,
    rng: np.random.Generator,
    make_classifier=None,
    classifier=None,
    init: PolicyPair | None = None,
    full_batches: bool = False,
    sigma: float | None = None,
    reward_fn=None,
) -> EpisodeTrace:
    """Roll out one T-step episode.

    Per step: advance the GRU on the previous (sampled) policies, draw the
    step's policies, update the classifier on a fresh batch with the drawn
    weights, then score that batch's refreshed probabilities with the drawn
    thresholds. ``reward_fn(probs, targets, policy, action)`` replaces the
    default reward when given.
    """
    sigma = cfg.sigma if sigma is None else sigma
    N = ds.n_labels
    if meta.n_labels != N:
        raise DimensionError(f"meta-learner has {meta.n_labels} labels, data has {N}")
    if classifier is None:
        make_classifier = make_classifier or default_classifier_factory(ds, cfg)
        classifier = make_classifier(rng)
    sampler = BatchSampler(ds, len(ds) if full_batches else cfg.batch, rng, cfg.replacement)
    opt = nd.SGD(cfg.clf_lr)
    trace = EpisodeTrace(sigma=sigma)
    state = np.zeros((1, meta.hidden))
    prev = init or initial_policy(N)
    for _ in range(cfg.T):
        x = policy_input(prev)
        state = gru_step(meta, state, x).value
        mean, logits = generate_policies(meta, state)
        if sigma > 0:
            pol, logp, action = sample_action(logits, sigma, rng)
        else:
            pol, logp, action = mean, 0.0, None
        batch = sampler.next()
        loss = classifier.train_step(batch, pol.w, opt=opt)
        if not math.isfinite(loss):
            raise NumericError(f"non-finite classifier loss at step {len(trace) + 1}")
        probs = classifier.predict_proba(batch.X)
        if reward_fn is None:
            trace.rewards.append(compute_reward(probs, batch.Y, pol.p))
        else:
            trace.rewards.append(float(reward_fn(probs, batch.Y, pol, action)))
        trace.policies.append(pol)
        trace.log_probs.append(logp)
        trace.inputs.append(x)
        trace.actions.append(action)
        trace.losses.append(loss)
        prev = pol
    trace.classifier = classifier
    return trace


def surrogate(meta: MetaParams, trace: EpisodeTrace, advantages) -> Tensor:
    """-sum_t log pi(a_t | s_t) * A_t, replayed on the current tape.

    Inputs and actions are the frozen values recorded in the trace, so the
    gradient flows through the GRU chain and both heads only.
    """
    if trace.sigma <= 0:
        raise ContractError("policy gradient needs a stochastic trace (sigma > 0)")
    N = meta.n_labels
    state = Tensor(np.zeros((1, meta.hidden)))
    total = None
    for x, a, adv in zip(trace.inputs, trace.actions, advantages):
        state = gru_step(meta, state, x)
        mu_w, mu_p = policy_logits(meta, state)
        mu = nd.concat_cols(mu_w, mu_p)
        diff = nd.sub(a.reshape(1, 2 * N), mu)
        logp = nd.scale(nd.sum(nd.square(diff)), -1.0 / (2 * trace.sigma**2))
        term = nd.scale(logp, -float(adv))
        total = term if total is None else nd.add(total, term)
    return total


def policy_gradient(meta: MetaParams, trace: EpisodeTrace, advantages) -> list[np.ndarray]:
    with nd.Tape() as tape:
        loss = surrogate(meta, trace, advantages)
    return tape.gradient(loss, meta.params)


def clip_by_global_norm(grads, max_norm: float):
    if max_norm <= 0:
        return grads
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        return [g * (max_norm / norm) for g in grads]
    return grads


@dataclass
class LogRow:
    episode: int
    mean_reward: float
    final_reward: float
    loss_at_T: float
    wall_ms: float


def train_meta(
    meta: MetaParams,
    ds: MultiLabelDataset,
    cfg: MetaConfig,
    rng,
    make_classifier=None,
    on_episode=None,
    reward_fn=None,
):
    """REINFORCE with a per-step-index moving-average baseline.

    The baseline starts at the first episode's returns, so that episode makes
    no update. Returns the list of per-episode log rows.
    """
    cfg.validate()
    if cfg.sigma <= 0:
        raise ValueError("meta-training needs sigma > 0")
    make_classifier = make_classifier or default_classifier_factory(ds, cfg)
    opt = nd.SGD(cfg.lr, cfg.momentum)
    baseline = None
    persistent = make_classifier(rng) if cfg.persist_classifier else None
    rows = []
    for ep in range(1, cfg.M + 1):
        t0 = time.perf_counter()
        trace = run_episode(meta, ds, cfg, rng, make_classifier, classifier=persistent, reward_fn=reward_fn)
        R = np.array(trace.returns)
        if baseline is None:
            baseline = R.copy()
        trace.baselines = baseline.tolist()
        grads = policy_gradient(meta, trace, R - baseline)
        grads = clip_by_global_norm(grads, cfg.grad_clip)
        if not all(np.all(np.isfinite(g)) for g in grads):
            raise NumericError(f"non-finite meta gradient in episode {ep}")
        opt.step(meta.params, grads)
        baseline = cfg.baseline_decay * baseline + (1 - cfg.baseline_decay) * R
        row = LogRow(
            ep,
            float(np.mean(trace.rewards)),
            trace.rewards[-1],
            trace.losses[-1],
            (time.perf_counter() - t0) * 1000.0,
        )
        rows.append(row)
        if on_episode:
            on_episode(row)
        log.debug("episode %d mean reward %.4f", ep, row.mean_reward)
    return rows


def extract_final_policies(
    meta: MetaParams,
    ds: MultiLabelDataset,
    cfg: MetaConfig,
    rng=None,
    init: PolicyPair | None = None,
    make_classifier=None,
) -> PolicyPair:
    """Deterministic rerun (no noise, whole training set each step); the
    step-T policies are returned."""
    rng = np.random.default_rng(0) if rng is None else rng
    trace = run_episode(meta, ds, cfg, rng, make_classifier, init=init, full_batches=True, sigma=0.0)
    try:
        return trace.policies[-1].check()
    except ValueError as e:
        # softmax underflow: the meta-learner has saturated
        raise NumericError(f"degenerate extracted policy: {e}") from None


def write_training_log(rows, path):
    lines = ["episode,mean_reward,final_reward,loss_at_T,wall_ms"]
    for r in rows:
        lines.append(f"{r.episode},{r.mean_reward!r},{r.final_reward!r},{r.loss_at_T!r},{r.wall_ms:.3f}")
    atomic_write_text(path, "\n".join(lines) + "\n")
