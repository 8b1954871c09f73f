"""Draw actions from the constrained policy without normalizing it.

Accept-reject with safe, optimized, or mixture proposals (exact draws when
the envelope constant is a true bound), plus an independence
Metropolis-Hastings chain for when no practical envelope exists. Every
sampler takes a max-proposals budget and returns partial batches rather
than looping unboundedly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .policies import MixturePolicy, Policy, clip_log_density_values
from . import _kernels

__all__ = [
    "SampleBatch",
    "IMHResult",
    "rejection_sample_safe",
    "rejection_sample_optimized",
    "rejection_sample_mixture",
    "estimate_envelope",
    "estimate_overlap",
    "mixture_weight_heuristic",
    "adaptive_mixture_update",
    "imh_chain",
    "imh_chain_categorical",
    "imh_transition_matrix",
]


@dataclass
class SampleBatch:
    """Accepted points plus accept-reject bookkeeping."""

    points: list | np.ndarray
    attempted: int
    kind: str
    log_beta: float
    envelope: float
    violations: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def accepted(self) -> int:
        return len(self.points)

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempted if self.attempted else 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "beta": math.exp(self.log_beta) if self.log_beta < math.inf else math.inf,
            "proposals": self.attempted,
            "accepts": self.accepted,
            "rate": self.acceptance_rate,
            "envelope": self.envelope,
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class IMHResult:
    """A Markov chain of points with its per-step accept flags."""

    points: list | np.ndarray
    accepted: np.ndarray
    burn_in: int

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if len(self.accepted) else 0.0

    def tail(self):
        """Post-burn-in states."""
        return self.points[self.burn_in:]


def _run_accept_reject(proposal: Policy, log_accept_fn, rng: np.random.Generator,
                       budget: int, max_accepts: int | None, kind: str,
                       log_beta: float, envelope: float,
                       count_violations: bool = False) -> SampleBatch:
    """Chunked accept-reject loop with a hard proposal budget."""
    if budget < 1:
        raise ValueError("budget must be at least one proposal")
    remaining = budget
    accepted_chunks = []
    attempted = 0
    violations = 0
    n_accepted = 0
    target = max_accepts if max_accepts is not None else budget
    rate_est = 1.0
    while remaining > 0 and n_accepted < target:
        # Draw roughly what the running acceptance rate says is needed.
        needed = target - n_accepted
        chunk = int(min(remaining, max(64, math.ceil(1.2 * needed / max(rate_est, 1e-3)))))
        points = proposal.sample_batch(rng, chunk)
        raw_logp = log_accept_fn(points)
        logp = np.minimum(raw_logp, 0.0) if count_violations else raw_logp
        accept = np.log(rng.random(chunk)) <= logp
        hits = int(accept.sum())
        if n_accepted + hits > target:
            # Stop exactly at the target-th acceptance so the recorded
            # proposal count matches the accepted points.
            cut = int(np.flatnonzero(accept)[needed - 1]) + 1
            points = points[:cut]
            accept = accept[:cut]
            raw_logp = raw_logp[:cut]
            chunk = cut
        if count_violations:
            violations += int((raw_logp > 1e-12).sum())
        attempted += chunk
        remaining -= chunk
        if isinstance(points, np.ndarray):
            kept = points[accept]
        else:
            kept = [p for p, a in zip(points, accept) if a]
        accepted_chunks.append(kept)
        n_accepted += len(kept)
        rate_est = n_accepted / attempted if attempted else 1.0
    if accepted_chunks and isinstance(accepted_chunks[0], np.ndarray):
        out = np.concatenate(accepted_chunks)
    else:
        out = [p for ch in accepted_chunks for p in ch]
    return SampleBatch(points=out, attempted=attempted, kind=kind,
                       log_beta=log_beta, envelope=envelope, violations=violations)


def rejection_sample_safe(safe: Policy, optimized: Policy, log_beta: float,
                          rng: np.random.Generator, budget: int,
                          max_accepts: int | None = None) -> SampleBatch:
    """Propose from the safe policy; the clip level itself is the envelope.

    Pointwise acceptance is min(ratio / beta, 1); the marginal acceptance
    rate converges to psi(beta) / beta.
    """
    if math.isinf(log_beta):
        raise ValueError("safe proposals need a finite clip level")

    def log_accept(points):
        r = optimized.log_density_batch(points) - safe.log_density_batch(points)
        return np.minimum(r - log_beta, 0.0)

    return _run_accept_reject(safe, log_accept, rng, budget, max_accepts,
                              kind="safe", log_beta=log_beta,
                              envelope=math.exp(log_beta))


def rejection_sample_optimized(safe: Policy, optimized: Policy, log_beta: float,
                               rng: np.random.Generator, budget: int,
                               max_accepts: int | None = None) -> SampleBatch:
    """Propose from the optimized policy with unit envelope.

    Pointwise acceptance is min(beta / ratio, 1); the marginal acceptance
    rate converges to psi(beta).
    """

    def log_accept(points):
        r = optimized.log_density_batch(points) - safe.log_density_batch(points)
        with np.errstate(invalid="ignore"):
            out = np.minimum(log_beta - r, 0.0)
        if math.isinf(log_beta):
            out = np.zeros_like(r)
        return out

    return _run_accept_reject(optimized, log_accept, rng, budget, max_accepts,
                              kind="optimized", log_beta=log_beta, envelope=1.0)


def estimate_envelope(safe: Policy, optimized: Policy, log_beta: float,
                      w: float, probe_points, inflation: float = 1.05) -> float:
    """Empirical envelope constant for the mixture proposal.

    The maximum of target-over-proposal across probes, inflated because an
    empirical maximum undershoots the true supremum, then capped at the
    analytic bound min(beta / w, 1 / (1 - w)) so the endpoint cases keep
    their exact envelopes.
    """
    if not 0 <= w <= 1:
        raise ValueError("mixture weight must lie in [0, 1]")
    if _batch_len(probe_points) == 0:
        raise ValueError("envelope estimation needs at least one probe")
    log_ratio = _mixture_log_ratio(safe, optimized, log_beta, w, probe_points)
    est = inflation * math.exp(float(np.max(log_ratio)))
    cap = min(
        math.exp(log_beta) / w if w > 0 else math.inf,
        1.0 / (1.0 - w) if w < 1 else math.inf,
    )
    return min(est, cap)


def rejection_sample_mixture(safe: Policy, optimized: Policy, log_beta: float,
                             w: float, envelope: float, rng: np.random.Generator,
                             budget: int, max_accepts: int | None = None) -> SampleBatch:
    """Propose from the w-safe / (1-w)-optimized mixture under a given envelope.

    With a true envelope the accepted points are exact draws; computed
    acceptance probabilities above one are clamped and counted, flagging
    the batch as approximate.
    """
    if not 0 <= w <= 1:
        raise ValueError("mixture weight must lie in [0, 1]")
    if envelope <= 0:
        raise ValueError("envelope must be positive")
    proposal = MixturePolicy([safe, optimized], [w, 1.0 - w])
    log_m = math.log(envelope)

    def log_accept(points):
        return _mixture_log_ratio(safe, optimized, log_beta, w, points) - log_m

    batch = _run_accept_reject(proposal, log_accept, rng, budget, max_accepts,
                               kind="mixture", log_beta=log_beta,
                               envelope=envelope, count_violations=True)
    batch.extras["w"] = w
    return batch


def _mixture_log_ratio(safe: Policy, optimized: Policy, log_beta: float,
                       w: float, points) -> np.ndarray:
    log_p0 = safe.log_density_batch(points)
    log_pt = optimized.log_density_batch(points)
    target = clip_log_density_values(log_pt, log_p0, log_beta)
    with np.errstate(divide="ignore"):
        parts = []
        if w > 0:
            parts.append(math.log(w) + log_p0)
        if w < 1:
            parts.append(math.log(1.0 - w) + log_pt)
    log_q = parts[0] if len(parts) == 1 else np.logaddexp(parts[0], parts[1])
    return target - log_q


def estimate_overlap(log_beta: float, log_psi: float, component: str,
                     log_lrs) -> float:
    """Overlap between the constrained policy and one of its components.

    ``log_lrs`` are log likelihood ratios at samples drawn from the named
    component ("safe" or "optimized"). The estimator averages
    min(constrained / component, 1) over the samples; it always lies in
    [0, 1] and converges to the integral of the pointwise minimum.
    """
    log_lrs = np.asarray(log_lrs, dtype=np.float64)
    if log_lrs.size == 0:
        raise ValueError("overlap estimation needs at least one sample")
    if component == "safe":
        log_term = np.minimum(log_lrs, log_beta) - log_psi
    elif component == "optimized":
        with np.errstate(invalid="ignore"):
            clipped = np.minimum(log_beta - log_lrs, 0.0)
        if math.isinf(log_beta):
            clipped = np.zeros_like(log_lrs)
        log_term = clipped - log_psi
    else:
        raise ValueError("component must be 'safe' or 'optimized'")
    with np.errstate(under="ignore"):
        return float(np.minimum(np.exp(log_term), 1.0).mean())


def mixture_weight_heuristic(ovl_safe: float, ovl_opt: float) -> tuple[float, bool]:
    """Weight the safe component by its share of the estimated overlaps.

    Returns ``(w, degenerate)`` where ``degenerate`` flags the both-zero
    case, which falls back to an even split.
    """
    if not (0 <= ovl_safe <= 1 and 0 <= ovl_opt <= 1):
        raise ValueError("overlaps must lie in [0, 1]")
    total = ovl_safe + ovl_opt
    if total == 0:
        return 0.5, True
    return ovl_safe / total, False


def adaptive_mixture_update(w: float, acc_rate_safe: float, acc_rate_opt: float,
                            step: float) -> float:
    """Shift the mixture weight toward the component with higher acceptance."""
    if step <= 0:
        raise ValueError("step must be positive")
    if not (0 <= acc_rate_safe <= 1 and 0 <= acc_rate_opt <= 1):
        raise ValueError("acceptance rates must lie in [0, 1]")
    return float(np.clip(w + step * (acc_rate_safe - acc_rate_opt), 0.0, 1.0))


def imh_chain(target_unnorm_log_density, proposal: Policy, steps: int,
              burn_in: int, rng: np.random.Generator, initial=None) -> IMHResult:
    """Independence Metropolis-Hastings with a general proposal policy.

    The chain compares each candidate's importance ratio against the
    current state's; rejected steps copy the old state unchanged. The
    post-burn-in empirical law approximates the normalized target.
    """
    if initial is None:
        for _ in range(1000):
            initial = proposal.sample(rng)
            if np.isfinite(target_unnorm_log_density(initial)):
                break
        else:
            raise ValueError("could not find an initial state with positive target mass")
    log_r_cur = target_unnorm_log_density(initial) - proposal.log_density(initial)
    if not np.isfinite(log_r_cur):
        raise ValueError("initial state has zero target density")
    current = initial
    points = []
    accepted = np.zeros(steps, dtype=bool)
    log_u = np.log(rng.random(steps))
    for t in range(steps):
        cand = proposal.sample(rng)
        log_r_cand = target_unnorm_log_density(cand) - proposal.log_density(cand)
        if log_r_cand - log_r_cur >= log_u[t]:
            current = cand
            log_r_cur = log_r_cand
            accepted[t] = True
        points.append(current)
    return IMHResult(points=points, accepted=accepted, burn_in=burn_in)


def imh_chain_categorical(target_unnorm_log_probs, proposal_log_probs, steps: int,
                          burn_in: int, rng: np.random.Generator,
                          initial_index: int | None = None) -> IMHResult:
    """Finite-support IMH through the compiled kernel.

    Proposal indices and uniforms are pre-drawn from ``rng``, so results
    are identical across kernel backends.
    """
    target = np.asarray(target_unnorm_log_probs, dtype=np.float64)
    proposal_logp = np.asarray(proposal_log_probs, dtype=np.float64)
    if target.shape != proposal_logp.shape:
        raise ValueError("target and proposal must share a support")
    log_ratio = np.where(np.isneginf(target), -np.inf, target - proposal_logp)
    if initial_index is None:
        finite = np.flatnonzero(np.isfinite(log_ratio))
        if finite.size == 0:
            raise ValueError("target has no mass inside the proposal support")
        initial_index = int(finite[np.argmax(proposal_logp[finite])])
    if not np.isfinite(log_ratio[initial_index]):
        raise ValueError("initial state has zero target density")
    cdf = np.cumsum(np.exp(proposal_logp))
    u_prop = rng.random(steps)
    props = np.minimum(np.searchsorted(cdf, u_prop, side="right"), target.size - 1)
    log_u = np.log(rng.random(steps))
    chain, accepted = _kernels.imh_chain_from_draws(log_ratio, props, log_u,
                                                    initial_index)
    return IMHResult(points=chain, accepted=accepted.astype(bool), burn_in=burn_in)


def imh_transition_matrix(target_unnorm_probs, proposal_probs) -> np.ndarray:
    """Exact one-step transition matrix of the finite-support IMH chain.

    Row x: propose y with probability q(y), accept with min(1, r(y)/r(x));
    all rejected mass stays at x. The normalized target is stationary.
    """
    p = np.asarray(target_unnorm_probs, dtype=np.float64)
    q = np.asarray(proposal_probs, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("target and proposal must share a support")
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(q > 0, p / q, np.inf)
    n = p.size
    accept = np.minimum(1.0, r[None, :] / r[:, None])
    accept = np.where(np.isnan(accept), 1.0, accept)  # inf/inf: equal ratios
    trans = q[None, :] * accept
    np.fill_diagonal(trans, 0.0)
    np.fill_diagonal(trans, np.maximum(1.0 - trans.sum(axis=1), 0.0))
    return trans


def _batch_len(points) -> int:
    if isinstance(points, np.ndarray):
        return points.shape[0]
    return len(points)
