"""Probability models with log-density evaluation and sampling.

Everything runs in log space; -inf is a first-class value marking points
outside a policy's support. Policies are immutable after construction,
log densities are pure, and sampling takes a caller-supplied generator so
parallel workers own independent streams.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels

__all__ = [
    "Policy",
    "Categorical",
    "DiagonalGaussian",
    "MixturePolicy",
    "MarkovSequencePolicy",
    "ClippedPolicy",
    "log_likelihood_ratio",
    "clipped_unnorm_log_density",
    "clip_log_density_values",
    "normalize_exact",
    "tilted_acquisition",
    "fit_markov",
    "policy_to_dict",
    "policy_from_dict",
    "save_policy",
    "load_policy",
    "load_banned_bigrams",
    "tv_distance",
]

NEG_INF = float("-inf")


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation distance between two probability vectors."""
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


class Policy:
    """Minimal interface: log_density, sample, and (optional) enumeration."""

    def log_density(self, point) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator):
        raise NotImplementedError

    def log_density_batch(self, points) -> np.ndarray:
        return np.array([self.log_density(p) for p in points])

    def sample_batch(self, rng: np.random.Generator, n: int):
        return [self.sample(rng) for _ in range(n)]

    def enumerable(self) -> bool:
        return False

    def enumerate_support(self):
        """Return (points, log_probs) for finite supports."""
        raise NotImplementedError(f"{type(self).__name__} has no finite enumeration")


class Categorical(Policy):
    """Finite distribution over integer outcomes 0..K-1 (or given labels)."""

    def __init__(self, log_probs, outcomes=None):
        log_probs = np.asarray(log_probs, dtype=np.float64)
        if log_probs.ndim != 1 or log_probs.size == 0:
            raise ValueError("log_probs must be a non-empty vector")
        norm = logsumexp(log_probs)
        if not np.isfinite(norm):
            raise ValueError("distribution has no mass")
        if abs(norm) > 1e-9:
            raise ValueError("log_probs must sum to one (got logsumexp %.3g)" % norm)
        self.log_probs = log_probs - norm
        self.outcomes = None if outcomes is None else list(outcomes)
        with np.errstate(under="ignore"):
            self.probs = np.exp(self.log_probs)
        self._cdf = np.cumsum(self.probs)

    @classmethod
    def from_probs(cls, probs, outcomes=None) -> "Categorical":
        probs = np.asarray(probs, dtype=np.float64)
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        total = probs.sum()
        if total <= 0:
            raise ValueError("distribution has no mass")
        with np.errstate(divide="ignore"):
            return cls(np.log(probs / total), outcomes=outcomes)

    @classmethod
    def from_logits(cls, logits, outcomes=None) -> "Categorical":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(logits - logsumexp(logits), outcomes=outcomes)

    @property
    def size(self) -> int:
        return self.log_probs.size

    def _index_of(self, point) -> int:
        if self.outcomes is not None:
            return self.outcomes.index(point)
        return int(point)

    def log_density(self, point) -> float:
        return float(self.log_probs[self._index_of(point)])

    def log_density_batch(self, points) -> np.ndarray:
        if self.outcomes is None:
            return self.log_probs[np.asarray(points, dtype=np.int64)]
        return super().log_density_batch(points)

    def sample(self, rng: np.random.Generator):
        return self.sample_batch(rng, 1)[0]

    def sample_batch(self, rng: np.random.Generator, n: int):
        u = rng.random(n)
        idx = np.minimum(np.searchsorted(self._cdf, u, side="right"), self.size - 1)
        if self.outcomes is None:
            return idx.astype(np.int64)
        return [self.outcomes[i] for i in idx]

    def enumerable(self) -> bool:
        return True

    def enumerate_support(self):
        points = np.arange(self.size) if self.outcomes is None else self.outcomes
        return points, self.log_probs.copy()


class DiagonalGaussian(Policy):
    """Independent Gaussian coordinates; scalar when mean is 0-dimensional."""

    def __init__(self, mean, std):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
        self.std = np.broadcast_to(
            np.asarray(std, dtype=np.float64), self.mean.shape
        ).astype(np.float64)
        if np.any(self.std <= 0):
            raise ValueError("std must be positive")
        self.dim = self.mean.size
        self._log_norm = -0.5 * self.dim * math.log(2 * math.pi) - np.log(self.std).sum()

    def log_density(self, point) -> float:
        x = np.atleast_1d(np.asarray(point, dtype=np.float64))
        z = (x - self.mean) / self.std
        return float(self._log_norm - 0.5 * (z * z).sum())

    def log_density_batch(self, points) -> np.ndarray:
        x = np.asarray(points, dtype=np.float64)
        if self.dim == 1 and x.ndim == 1:
            x = x[:, None]
        z = (x - self.mean) / self.std
        return self._log_norm - 0.5 * (z * z).sum(axis=-1)

    def sample(self, rng: np.random.Generator):
        x = rng.normal(self.mean, self.std)
        return float(x[0]) if self.dim == 1 else x

    def sample_batch(self, rng: np.random.Generator, n: int):
        x = rng.normal(self.mean, self.std, size=(n, self.dim))
        return x[:, 0] if self.dim == 1 else x


class MixturePolicy(Policy):
    """Convex combination of component policies."""

    def __init__(self, components, weights):
        weights = np.asarray(weights, dtype=np.float64)
        if len(components) != weights.size or weights.size == 0:
            raise ValueError("components and weights must align and be non-empty")
        if np.any(weights < 0) or not np.isclose(weights.sum(), 1.0, atol=1e-9):
            raise ValueError("weights must be a probability vector")
        self.components = list(components)
        self.weights = weights / weights.sum()
        with np.errstate(divide="ignore"):
            self.log_weights = np.log(self.weights)

    def log_density(self, point) -> float:
        parts = [lw + c.log_density(point)
                 for lw, c in zip(self.log_weights, self.components)
                 if lw > NEG_INF]
        return float(logsumexp(parts))

    def log_density_batch(self, points) -> np.ndarray:
        stacked = [lw + c.log_density_batch(points)
                   for lw, c in zip(self.log_weights, self.components)
                   if lw > NEG_INF]
        return logsumexp(np.stack(stacked), axis=0)

    def sample(self, rng: np.random.Generator):
        k = int(rng.choice(len(self.components), p=self.weights))
        return self.components[k].sample(rng)

    def sample_batch(self, rng: np.random.Generator, n: int):
        counts = rng.multinomial(n, self.weights)
        chunks = [c.sample_batch(rng, int(m))
                  for c, m in zip(self.components, counts) if m > 0]
        if all(isinstance(ch, np.ndarray) for ch in chunks):
            out = np.concatenate(chunks)
            rng.shuffle(out)
            return out
        flat = [p for ch in chunks for p in ch]
        rng.shuffle(flat)
        return flat

    def enumerable(self) -> bool:
        return all(c.enumerable() for c in self.components)

    def enumerate_support(self):
        points, _ = self.components[0].enumerate_support()
        ref = np.asarray(points)
        logs = []
        for c in self.components:
            pts_c, lp = c.enumerate_support()
            if not np.array_equal(np.asarray(pts_c), ref):
                raise ValueError("mixture components enumerate different supports")
            logs.append(lp)
        mixed = logsumexp(np.stack(logs) + self.log_weights[:, None], axis=0)
        return points, mixed


class MarkovSequencePolicy(Policy):
    """First-order Markov model over fixed-length token sequences.

    Transition rows sum to one; banned transitions carry probability
    exactly zero. Sampling and batch log densities run through the
    compiled kernels when available.
    """

    def __init__(self, init_probs, trans_probs, length, banned_mask=None):
        init_probs = np.asarray(init_probs, dtype=np.float64)
        trans_probs = np.asarray(trans_probs, dtype=np.float64)
        vocab = init_probs.size
        if trans_probs.shape != (vocab, vocab):
            raise ValueError("transition matrix must be square over the vocabulary")
        if length < 1:
            raise ValueError("length must be >= 1")
        if np.any(init_probs < 0) or np.any(trans_probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if not np.isclose(init_probs.sum(), 1.0, atol=1e-9):
            raise ValueError("initial distribution must sum to one")
        if not np.allclose(trans_probs.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition rows must sum to one")
        if banned_mask is not None:
            banned_mask = np.asarray(banned_mask, dtype=bool)
            if banned_mask.shape != (vocab, vocab):
                raise ValueError("banned mask must be square over the vocabulary")
            if np.any(trans_probs[banned_mask] != 0.0):
                raise ValueError("banned transitions must carry zero probability")
        self.vocab = vocab
        self.length = int(length)
        self.init_probs = init_probs / init_probs.sum()
        self.trans_probs = trans_probs / trans_probs.sum(axis=1, keepdims=True)
        self.banned_mask = banned_mask
        with np.errstate(divide="ignore"):
            self.init_logp = np.log(self.init_probs)
            self.trans_logp = np.log(self.trans_probs)
        self._init_cdf = np.cumsum(self.init_probs)
        self._trans_cdf = np.cumsum(self.trans_probs, axis=1)

    def log_density(self, point) -> float:
        seq = np.asarray(point, dtype=np.int64)[None, :]
        return float(_kernels.markov_log_prob(self.init_logp, self.trans_logp, seq)[0])

    def log_density_batch(self, points) -> np.ndarray:
        seqs = np.asarray(points, dtype=np.int64)
        return _kernels.markov_log_prob(self.init_logp, self.trans_logp, seqs)

    def sample(self, rng: np.random.Generator):
        return self.sample_batch(rng, 1)[0]

    def sample_batch(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, self.length))
        return _kernels.markov_sample_from_uniforms(self._init_cdf, self._trans_cdf, u)

    def enumerable(self) -> bool:
        return self.vocab ** self.length <= 1 << 16

    def enumerate_support(self):
        if not self.enumerable():
            raise NotImplementedError("sequence space too large to enumerate")
        points = np.array(list(itertools.product(range(self.vocab), repeat=self.length)),
                          dtype=np.int64)
        return points, self.log_density_batch(points)


class ClippedPolicy(Policy):
    """Interpolation between a safe and an optimized policy.

    The unnormalized log density is min(log pi_t, log beta + log pi_0).
    The normalized log density needs ``log_psi`` (exact on finite supports
    via :func:`normalize_exact`, otherwise estimated). Direct sampling uses
    rejection sampling with proposals from whichever component fits the
    clip level better.
    """

    def __init__(self, safe: Policy, optimized: Policy, log_beta: float,
                 log_psi: float | None = None):
        self.safe = safe
        self.optimized = optimized
        self.log_beta = float(log_beta)
        self.log_psi = None if log_psi is None else float(log_psi)

    def unnorm_log_density(self, point) -> float:
        return clipped_unnorm_log_density(self.optimized, self.safe, self.log_beta, point)

    def unnorm_log_density_batch(self, points) -> np.ndarray:
        log_pt = self.optimized.log_density_batch(points)
        log_p0 = self.safe.log_density_batch(points)
        return clip_log_density_values(log_pt, log_p0, self.log_beta)

    def log_density(self, point) -> float:
        if self.log_psi is None:
            raise ValueError("normalized density requires log_psi")
        return self.unnorm_log_density(point) - self.log_psi

    def log_density_batch(self, points) -> np.ndarray:
        if self.log_psi is None:
            raise ValueError("normalized density requires log_psi")
        return self.unnorm_log_density_batch(points) - self.log_psi

    def sample(self, rng: np.random.Generator, budget: int = 100_000):
        batch = self.sample_batch(rng, 1, budget=budget)
        return batch[0]

    def sample_batch(self, rng: np.random.Generator, n: int, budget: int = 1_000_000):
        from .samplers import rejection_sample_optimized, rejection_sample_safe

        if math.isinf(self.log_beta):
            return self.optimized.sample_batch(rng, n)
        # Optimized proposals accept at rate psi; safe ones at psi/beta.
        if self.log_beta >= 0:
            batch = rejection_sample_optimized(self.safe, self.optimized, self.log_beta,
                                               rng, budget=budget, max_accepts=n)
        else:
            batch = rejection_sample_safe(self.safe, self.optimized, self.log_beta,
                                          rng, budget=budget, max_accepts=n)
        if len(batch.points) < n:
            raise RuntimeError("rejection sampling budget exhausted")
        return batch.points[:n]

    def enumerable(self) -> bool:
        return self.safe.enumerable() and self.optimized.enumerable()


def log_likelihood_ratio(optimized: Policy, safe: Policy, point) -> float:
    """log pi_t(x) - log pi_0(x); undefined outside the safe policy's support."""
    log_p0 = safe.log_density(point)
    if log_p0 == NEG_INF:
        raise ValueError("likelihood ratio undefined: safe density is zero here")
    return optimized.log_density(point) - log_p0


def clipped_unnorm_log_density(optimized: Policy, safe: Policy,
                               log_beta: float, point) -> float:
    """min(log pi_t(x), log beta + log pi_0(x)) with inf-safe arithmetic."""
    return float(clip_log_density_values(
        np.array(optimized.log_density(point)),
        np.array(safe.log_density(point)),
        log_beta,
    ))


def clip_log_density_values(log_pt, log_p0, log_beta) -> np.ndarray:
    """Vectorized min(log_pt, log_beta + log_p0).

    An infinite log_beta means the clip is inactive, so the optimized
    density passes through even where the safe density vanishes.
    """
    log_pt = np.asarray(log_pt, dtype=np.float64)
    log_p0 = np.asarray(log_p0, dtype=np.float64)
    if np.isposinf(log_beta):
        return log_pt.copy() if log_pt.shape else log_pt
    shifted = np.where(np.isneginf(log_p0), NEG_INF, log_p0 + log_beta)
    return np.minimum(log_pt, shifted)


def normalize_exact(safe: Policy, optimized: Policy, beta: float):
    """Exact normalizer and normalized policy on a shared finite support.

    Returns ``(psi, policy)`` where ``psi`` sums min(pi_t, beta * pi_0) over
    the enumerated support and ``policy`` is the normalized finite-support
    distribution (outcomes attached for non-integer supports).
    """
    if not (safe.enumerable() and optimized.enumerable()):
        raise ValueError("exact normalization needs finite-enumerable policies")
    pts_s, logp_s = safe.enumerate_support()
    pts_o, logp_o = optimized.enumerate_support()
    if not np.array_equal(np.asarray(pts_s), np.asarray(pts_o)):
        raise ValueError("policies enumerate different supports")
    with np.errstate(divide="ignore"):
        log_beta = np.log(beta) if not np.isinf(beta) else np.inf
    clipped = clip_log_density_values(logp_o, logp_s, log_beta)
    log_psi = float(logsumexp(clipped))
    outcomes = None
    pts_arr = np.asarray(pts_s)
    if pts_arr.ndim > 1 or pts_arr.dtype.kind not in "iu" or not np.array_equal(
            pts_arr, np.arange(len(pts_arr))):
        outcomes = [tuple(p) if np.ndim(p) else p for p in pts_s]
    return math.exp(log_psi), Categorical(clipped - log_psi, outcomes=outcomes)


def tilted_acquisition(variances, temperature: float) -> Categorical:
    """Categorical over candidates, tilted toward min-max-normalized variance.

    All-equal variances (a degenerate normalization) yield the uniform
    distribution, the continuous limit of zero temperature.
    """
    variances = np.asarray(variances, dtype=np.float64)
    if variances.size == 0:
        raise ValueError("need at least one candidate")
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    span = variances.max() - variances.min()
    if span == 0 or temperature == 0:
        logits = np.zeros(variances.size)
    else:
        logits = temperature * (variances - variances.min()) / span
    return Categorical.from_logits(logits)


def fit_markov(sequences, vocab_size: int, smoothing: float = 0.0,
               banned_mask=None, length: int | None = None) -> MarkovSequencePolicy:
    """Maximum-likelihood Markov fit with additive smoothing.

    Banned transitions are zeroed after smoothing and rows renormalized;
    a row banned in its entirety is an error.
    """
    seqs = np.asarray(sequences, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[0] == 0:
        raise ValueError("corpus must be a non-empty (n, L) token array")
    if length is None:
        length = seqs.shape[1]
    init_counts = np.bincount(seqs[:, 0], minlength=vocab_size).astype(np.float64)
    trans_counts = np.zeros((vocab_size, vocab_size))
    np.add.at(trans_counts, (seqs[:, :-1].ravel(), seqs[:, 1:].ravel()), 1.0)
    init = init_counts + smoothing
    trans = trans_counts + smoothing
    allowed = np.ones_like(trans, dtype=bool)
    if banned_mask is not None:
        banned_mask = np.asarray(banned_mask, dtype=bool)
        if np.any(banned_mask.all(axis=1)):
            raise ValueError("a row has every transition banned")
        allowed = ~banned_mask
        trans = np.where(banned_mask, 0.0, trans)
    row_sums = trans.sum(axis=1)
    if np.any(row_sums == 0):
        # Unobserved source token with zero smoothing: fall back to uniform
        # over allowed successors so the matrix stays stochastic.
        trans = np.where(row_sums[:, None] == 0, allowed.astype(float), trans)
        row_sums = trans.sum(axis=1)
    trans = trans / row_sums[:, None]
    if init.sum() == 0:
        init = np.ones(vocab_size)
    init = init / init.sum()
    return MarkovSequencePolicy(init, trans, length=length, banned_mask=banned_mask)


def policy_to_dict(policy: Policy) -> dict:
    """Serialize a policy to a JSON-compatible dict with a kind tag."""
    if isinstance(policy, Categorical):
        out = {"kind": "categorical", "log_probs": policy.log_probs.tolist()}
        if policy.outcomes is not None:
            out["outcomes"] = [list(o) if isinstance(o, tuple) else o
                               for o in policy.outcomes]
        return out
    if isinstance(policy, DiagonalGaussian):
        return {"kind": "gaussian", "mean": policy.mean.tolist(),
                "std": policy.std.tolist()}
    if isinstance(policy, MixturePolicy):
        return {"kind": "mixture",
                "components": [policy_to_dict(c) for c in policy.components],
                "weights": policy.weights.tolist()}
    if isinstance(policy, MarkovSequencePolicy):
        out = {"kind": "markov", "init": policy.init_probs.tolist(),
               "trans": policy.trans_probs.tolist(), "length": policy.length}
        if policy.banned_mask is not None:
            pairs = np.argwhere(policy.banned_mask)
            out["banned_bigrams"] = [[int(i), int(j)] for i, j in pairs]
        return out
    if isinstance(policy, ClippedPolicy):
        return {"kind": "clipped", "safe": policy_to_dict(policy.safe),
                "optimized": policy_to_dict(policy.optimized),
                "log_beta": policy.log_beta, "log_psi": policy.log_psi}
    raise TypeError(f"cannot serialize policy of type {type(policy).__name__}")


def policy_from_dict(data: dict) -> Policy:
    kind = data.get("kind")
    if kind == "categorical":
        outcomes = data.get("outcomes")
        if outcomes is not None:
            outcomes = [tuple(o) if isinstance(o, list) else o for o in outcomes]
        return Categorical(np.asarray(data["log_probs"]), outcomes=outcomes)
    if kind == "gaussian":
        return DiagonalGaussian(np.asarray(data["mean"]), np.asarray(data["std"]))
    if kind == "mixture":
        return MixturePolicy([policy_from_dict(c) for c in data["components"]],
                             np.asarray(data["weights"]))
    if kind == "markov":
        vocab = len(data["init"])
        mask = None
        if "banned_bigrams" in data:
            mask = np.zeros((vocab, vocab), dtype=bool)
            for i, j in data["banned_bigrams"]:
                mask[i, j] = True
        return MarkovSequencePolicy(np.asarray(data["init"]), np.asarray(data["trans"]),
                                    length=data["length"], banned_mask=mask)
    if kind == "clipped":
        return ClippedPolicy(policy_from_dict(data["safe"]),
                             policy_from_dict(data["optimized"]),
                             log_beta=data["log_beta"], log_psi=data.get("log_psi"))
    raise ValueError(f"unknown policy kind: {kind!r}")


def save_policy(policy: Policy, path) -> None:
    with open(path, "w") as fh:
        json.dump(policy_to_dict(policy), fh)


def load_policy(path) -> Policy:
    with open(path) as fh:
        return policy_from_dict(json.load(fh))


def load_banned_bigrams(path, vocab_size: int) -> np.ndarray:
    """Read a JSON list of [from, to] token-id pairs into a boolean mask."""
    with open(path) as fh:
        pairs = json.load(fh)
    mask = np.zeros((vocab_size, vocab_size), dtype=bool)
    for entry in pairs:
        i, j = int(entry[0]), int(entry[1])
        if not (0 <= i < vocab_size and 0 <= j < vocab_size):
            raise ValueError(f"token id out of range in banned pair {entry}")
        mask[i, j] = True
    return mask
