"""Linear softmax policy over action tokens, factorized token by token.

The logit of candidate token ``v`` at one decoding position is the sum of
weights at hashed (context feature, v) slots. With decoding constrained by the
action grammar the softmax runs over the admissible tokens only; unconstrained
decoding runs over the whole vocabulary and may emit unparseable text.

A decoding position is captured once as a :class:`Decision` (its weight-index
matrix plus the chosen row), so log-probabilities and gradients can later be
recomputed for any parameter vector without touching the environment again.
"""

from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CHECKPOINT_VERSION = 1
_MIX = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1


def _splitmix(x: int) -> int:
    x = (x + _MIX) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass
class FeatureMap:
    """Hashes (context feature, token) pairs into a fixed-size weight table."""

    table_size: int = 1 << 18
    salt: int = 0
    _keys: dict = field(default_factory=dict, repr=False, compare=False)

    def key(self, feature) -> int:
        k = self._keys.get(feature)
        if k is None:
            k = zlib.crc32(repr(feature).encode()) ^ (self.salt << 32)
            self._keys[feature] = k
        return k

    def index(self, feature, token: int) -> int:
        return _splitmix(self.key(feature) * 1_000_003 + token) % self.table_size

    def indices(self, features: Sequence, tokens: Sequence[int]) -> np.ndarray:
        """Weight slots, shape (len(tokens), len(features))."""
        keys = [self.key(f) * 1_000_003 for f in features]
        return np.array(
            [[_splitmix(k + t) % self.table_size for k in keys] for t in tokens], dtype=np.int64
        )

    def config_hash(self) -> str:
        blob = json.dumps({"kind": "hashed-conjunction", "table": self.table_size, "salt": self.salt})
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Decision:
    """One decoding position: candidate tokens, their weight slots and the choice."""

    tokens: tuple[int, ...]
    idx: np.ndarray
    chosen: int

    @property
    def forced(self) -> bool:
        return len(self.tokens) == 1


class SoftmaxSequencePolicy:
    def __init__(
        self,
        vocabulary_size: int,
        feature_map: FeatureMap | None = None,
        weights: np.ndarray | None = None,
        temperature: float = 1.0,
        constrained: bool = True,
    ):
        self.vocabulary_size = vocabulary_size
        self.feature_map = feature_map or FeatureMap()
        n = self.feature_map.table_size
        self.weights = np.zeros(n) if weights is None else np.asarray(weights, dtype=float).copy()
        if self.weights.shape != (n,):
            raise ValueError("weights must match the feature table size")
        self.temperature = temperature
        self.constrained = constrained
        self._idx_cache: dict = {}

    def copy(self) -> "SoftmaxSequencePolicy":
        p = SoftmaxSequencePolicy(
            self.vocabulary_size, self.feature_map, self.weights, self.temperature, self.constrained
        )
        p._idx_cache = self._idx_cache
        return p

    # -- decoding positions ----------------------------------------------------

    def candidates(self, env, prefix: Sequence[int]) -> tuple[int, ...]:
        if self.constrained:
            return env.grammar.allowed(prefix)
        if len(prefix) >= env.grammar.max_length() or (prefix and prefix[-1] == env.vocab.eos):
            return ()
        return tuple(range(self.vocabulary_size))

    def slots(self, env, obs, prefix: Sequence[int], tokens: tuple[int, ...]) -> np.ndarray:
        key = (obs.key, tuple(prefix), tokens)
        idx = self._idx_cache.get(key)
        if idx is None:
            feats = (("bias",),) + tuple(env.features(obs, prefix))
            feats = tuple(("p", len(prefix) % env.grammar.atom_len) + (f,) for f in feats)
            idx = self.feature_map.indices(feats, tokens)
            if len(self._idx_cache) > 500_000:
                self._idx_cache.clear()
            self._idx_cache[key] = idx
        return idx

    def logits(self, idx: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if weights is None else weights
        return w[idx].sum(axis=1)

    def decisions(self, env, obs, tokens: Sequence[int]) -> list[Decision]:
        """Replay ``tokens`` through the decoder, capturing every position."""
        out = []
        prefix: list[int] = []
        for t in tokens:
            cands = self.candidates(env, prefix)
            if t not in cands:
                raise ValueError(f"token {t} is not admissible after prefix {prefix}")
            idx = self.slots(env, obs, prefix, cands)
            out.append(Decision(cands, idx, cands.index(t)))
            prefix.append(t)
        return out

    def done(self, env, prefix: Sequence[int]) -> bool:
        return len(prefix) > 0 and not self.candidates(env, prefix)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max()
    return z - (m + np.log(np.exp(z - m).sum()))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def decision_logprob(policy: SoftmaxSequencePolicy, d: Decision, temperature: float = 1.0, weights=None) -> float:
    if d.forced:
        return 0.0
    z = policy.logits(d.idx, weights) / temperature
    return float(log_softmax(z)[d.chosen])


def action_logprob(
    policy: SoftmaxSequencePolicy,
    env,
    obs,
    tokens: Sequence[int],
    temperature: float = 1.0,
) -> tuple[float, list[float]]:
    """Total and per-token log-probability of ``tokens`` in context ``obs``."""
    per = [decision_logprob(policy, d, temperature) for d in policy.decisions(env, obs, tokens)]
    return float(sum(per)), per


@dataclass
class SampledAction:
    tokens: list[int]
    logprobs: list[float]
    decisions: list[Decision]


def sample_action(
    policy: SoftmaxSequencePolicy,
    env,
    obs,
    temperature: float,
    rng: np.random.Generator,
) -> SampledAction:
    """Draw one action; logprobs are those of the distribution actually sampled."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    tokens: list[int] = []
    logprobs: list[float] = []
    decisions: list[Decision] = []
    while True:
        cands = policy.candidates(env, tokens)
        if not cands:
            break
        idx = policy.slots(env, obs, tokens, cands)
        if len(cands) == 1:
            k, lp = 0, 0.0
        else:
            z = policy.logits(idx)
            if temperature < 1e-6:
                k = int(np.argmax(z))
                lp = 0.0
            else:
                ls = log_softmax(z / temperature)
                p = np.exp(ls)
                k = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
                k = min(k, len(cands) - 1)
                lp = float(ls[k])
        tokens.append(cands[k])
        logprobs.append(lp)
        decisions.append(Decision(cands, idx, k))
    return SampledAction(tokens, logprobs, decisions)


def logit_gradient(probabilities: Sequence[float], sampled_index: int, advantage: float) -> np.ndarray:
    """d/dz of ``A * log softmax(z)[s]``: (1 - p_s) A at s, -p_v A elsewhere."""
    p = np.asarray(probabilities, dtype=float)
    g = -p * advantage
    g[sampled_index] = (1.0 - p[sampled_index]) * advantage
    return g


@dataclass
class GradientAccumulator:
    grad: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "GradientAccumulator":
        return cls(np.zeros(n))

    def merge(self, other: "GradientAccumulator") -> "GradientAccumulator":
        return GradientAccumulator(self.grad + other.grad)

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.grad)))


@dataclass
class PackedDecisions:
    """Free (non-forced) decisions of a batch laid out as padded arrays.

    ``idx`` has shape (N, A, F); padding points at slot ``table_size``, a
    dummy weight pinned to zero. ``owner`` maps each row to its action.
    """

    idx: np.ndarray
    valid: np.ndarray
    chosen: np.ndarray
    owner: np.ndarray
    n_actions: int

    @classmethod
    def build(cls, actions: Sequence[Sequence[Decision]], table_size: int) -> "PackedDecisions":
        rows = [(a, d) for a, ds in enumerate(actions) for d in ds if not d.forced]
        n = len(rows)
        A = max((d.idx.shape[0] for _, d in rows), default=1)
        F = max((d.idx.shape[1] for _, d in rows), default=1)
        idx = np.full((n, A, F), table_size, dtype=np.int64)
        valid = np.zeros((n, A), dtype=bool)
        chosen = np.zeros(n, dtype=np.int64)
        owner = np.zeros(n, dtype=np.int64)
        for r, (a, d) in enumerate(rows):
            na, nf = d.idx.shape
            idx[r, :na, :nf] = d.idx
            valid[r, :na] = True
            chosen[r] = d.chosen
            owner[r] = a
        return cls(idx, valid, chosen, owner, len(actions))

    def log_probs(self, weights: np.ndarray, temperature: float = 1.0):
        """Per-row (log-probability of choice, full probability matrix)."""
        w = np.append(weights, 0.0)
        z = w[self.idx].sum(axis=2) / temperature
        z = np.where(self.valid, z, -np.inf)
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        logp = z - lse[:, None]
        p = np.where(self.valid, np.exp(logp), 0.0)
        chosen_lp = logp[np.arange(len(self.chosen)), self.chosen]
        return chosen_lp, p

    def action_logprobs(self, weights: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        lp, _ = self.log_probs(weights, temperature)
        return np.bincount(self.owner, weights=lp, minlength=self.n_actions)

    def gradient(self, weights: np.ndarray, coefficients: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        """sum_actions coef_a * sum_tokens grad log pi(token), w.r.t. the weights."""
        n_table = weights.shape[0]
        if len(self.chosen) == 0:
            return np.zeros(n_table)
        _, p = self.log_probs(weights, temperature)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(self.chosen)), self.chosen] = 1.0
        c = np.asarray(coefficients, dtype=float)[self.owner]
        g_logit = (onehot - p) * (c / temperature)[:, None]
        F = self.idx.shape[2]
        flat_w = np.repeat(g_logit[:, :, None], F, axis=2).ravel()
        g = np.bincount(self.idx.ravel(), weights=flat_w, minlength=n_table + 1)
        return g[:n_table]

    def entropy(self, weights: np.ndarray, temperature: float = 1.0) -> np.ndarray:
        _, p = self.log_probs(weights, temperature)
        with np.errstate(divide="ignore", invalid="ignore"):
            h = -np.where(p > 0, p * np.log(p), 0.0).sum(axis=1)
        return h


def accumulate_policy_gradient(
    policy: SoftmaxSequencePolicy,
    batch: Iterable[tuple[Sequence[Decision], float]],
    temperature: float = 1.0,
) -> GradientAccumulator:
    """Sum of ``coefficient * grad log pi(action)`` over the batch.

    Coefficients are plain numbers; nothing differentiates through them.

    Raises:
        ValueError: if any coefficient is not finite.
    """
    items = list(batch)
    coefs = np.array([c for _, c in items], dtype=float)
    if not np.all(np.isfinite(coefs)):
        raise ValueError("non-finite coefficient in batch")
    packed = PackedDecisions.build([d for d, _ in items], policy.feature_map.table_size)
    return GradientAccumulator(packed.gradient(policy.weights, coefs, temperature))


def mean_entropy(
    policy: SoftmaxSequencePolicy, contexts: Iterable[Decision], temperature: float = 1.0
) -> float:
    """Average softmax entropy (nats) over the given decoding positions."""
    ds = list(contexts)
    if not ds:
        return 0.0
    hs = []
    for d in ds:
        if d.forced:
            hs.append(0.0)
            continue
        p = softmax(policy.logits(d.idx) / temperature)
        nz = p[p > 0]
        hs.append(float(-(nz * np.log(nz)).sum()))
    return float(np.mean(hs))


def save_checkpoint(policy: SoftmaxSequencePolicy, path: str | Path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "feature_map": policy.feature_map.config_hash(),
        "table_size": policy.feature_map.table_size,
        "salt": policy.feature_map.salt,
        "vocabulary_size": policy.vocabulary_size,
        "constrained": policy.constrained,
    }
    with open(path, "wb") as fh:
        np.savez(fh, weights=policy.weights, meta=np.array(json.dumps(meta, sort_keys=True)))


def load_checkpoint(path: str | Path, feature_map: FeatureMap | None = None) -> SoftmaxSequencePolicy:
    """Load weights, refusing if the feature-map configuration differs."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        weights = z["weights"]
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    fmap = feature_map or FeatureMap(meta["table_size"], meta["salt"])
    if fmap.config_hash() != meta["feature_map"]:
        raise ValueError("feature map configuration does not match checkpoint")
    return SoftmaxSequencePolicy(
        meta["vocabulary_size"], fmap, weights, constrained=meta.get("constrained", True)
    )


def checkpoint_hash(policy: SoftmaxSequencePolicy) -> str:
    h = hashlib.sha256(policy.weights.tobytes())
    h.update(policy.feature_map.config_hash().encode())
    return h.hexdigest()[:16]
