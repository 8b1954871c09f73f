"""The multi-round constrained deployment loop.

Each round: collect data from the current reference policy, split it,
improve the policy, calibrate the likelihood-ratio clip on the
calibration half, then deploy the clipped policy by accept-reject and
log realized rewards and losses. The deployed policy becomes the next
round's reference; calibration data accumulates across rounds with its
generating policies tracked for mixture weighting.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ..cpc_calibration import BetaCalibrationReport, CalibrationConfig, calibrate_beta
from ..policies import (Categorical, ClippedPolicy, DiagonalGaussian,
                        MarkovSequencePolicy, Policy)
from ..samplers import SampleBatch, rejection_sample_optimized, rejection_sample_safe

__all__ = ["RoundConfig", "RoundLog", "RoundState", "cpc_round",
           "improve_by_tilting", "run_rounds"]


@dataclass(frozen=True)
class RoundConfig:
    """Per-round sizes and knobs; every default is echoed into the logs."""

    n_collect: int = 120
    cal_fraction: float = 0.5
    n_prop: int = 60
    n_deploy: int = 60
    sample_budget: int = 200_000
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)


@dataclass
class RoundLog:
    """Record of one calibrate-and-deploy round."""

    round_index: int
    beta_hat: float
    contexts: np.ndarray
    actions: object
    rewards: np.ndarray
    losses: np.ndarray
    accept_stats: dict
    risk_estimate: float
    degenerate: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.losses)) if len(self.losses) else math.nan

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards)) if len(self.rewards) else math.nan

    def to_dict(self) -> dict:
        actions = self.actions
        if isinstance(actions, np.ndarray):
            actions = actions.tolist()
        return {
            "round": self.round_index,
            "beta_hat": self.beta_hat,
            "contexts": self.contexts.tolist(),
            "actions": actions,
            "rewards": self.rewards.tolist(),
            "losses": self.losses.tolist(),
            "accept_stats": self.accept_stats,
            "risk_estimate": self.risk_estimate,
            "degenerate": self.degenerate,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class RoundState:
    """Everything the next round needs: the reference and the history."""

    reference: Policy
    round_index: int = 0
    past_policies: list = field(default_factory=list)
    past_counts: list = field(default_factory=list)
    cal_points: list = field(default_factory=list)
    cal_losses: list = field(default_factory=list)


def improve_by_tilting(policy: Policy, reward, temperature: float) -> Policy:
    """Exponentially tilt a policy toward reward.

    Finite-enumerable policies are tilted exactly: density proportional to
    policy times exp(temperature * reward(point)). Markov sequence policies
    are tilted per transition with ``reward`` read as a per-token bonus
    array. Gaussians with the identity reward shift their mean in closed
    form (the tilt of a Gaussian by a linear function).
    """
    if temperature < 0:
        raise ValueError("temperature must be nonnegative")
    if isinstance(policy, MarkovSequencePolicy):
        bonus = np.asarray(reward, dtype=np.float64)
        if bonus.shape == (policy.vocab,):
            boost = np.exp(temperature * bonus)
            init = policy.init_probs * boost
            trans = policy.trans_probs * boost[None, :]
        elif bonus.shape == (policy.vocab, policy.vocab):
            # Per-transition shaping: reward credited to ordered bigrams.
            init = policy.init_probs.copy()
            trans = policy.trans_probs * np.exp(temperature * bonus)
        else:
            raise ValueError("Markov tilting needs a per-token or per-bigram bonus")
        init_total = init.sum()
        row_sums = trans.sum(axis=1)
        if init_total <= 0 or np.any(row_sums <= 0):
            raise ValueError("tilt drove all mass to zero")
        return MarkovSequencePolicy(init / init_total, trans / row_sums[:, None],
                                    length=policy.length,
                                    banned_mask=policy.banned_mask)
    if isinstance(policy, DiagonalGaussian) and reward == "linear":
        return DiagonalGaussian(policy.mean + temperature * policy.std ** 2, policy.std)
    if policy.enumerable():
        points, logp = policy.enumerate_support()
        rewards = np.array([reward(p) for p in _iter_points(points)], dtype=np.float64)
        logits = logp + temperature * rewards
        if not np.isfinite(logits).any():
            raise ValueError("tilt drove all mass to zero")
        outcomes = None
        pts = np.asarray(points)
        if pts.ndim > 1 or pts.dtype.kind not in "iu" or not np.array_equal(
                pts, np.arange(len(pts))):
            outcomes = [tuple(p) if np.ndim(p) else p for p in points]
        return Categorical.from_logits(logits, outcomes=outcomes)
    raise TypeError(f"cannot tilt policy of type {type(policy).__name__}")


def _iter_points(points):
    if isinstance(points, np.ndarray):
        return list(points)
    return points


def cpc_round(env, state: RoundState, alpha: float, bound: float,
              config: RoundConfig, rng: np.random.Generator):
    """Run one round of the loop; returns ``(RoundLog, next RoundState)``.

    ``env`` must provide ``reward(actions)``, ``loss(actions)`` and
    ``improve(policy, actions, rewards, losses, rng)``.
    """
    reference = state.reference

    # Phase 1: collect from the current reference and split.
    actions = reference.sample_batch(rng, config.n_collect)
    rewards = np.asarray(env.reward(actions), dtype=np.float64)
    losses = np.asarray(env.loss(actions), dtype=np.float64)
    perm = rng.permutation(config.n_collect)
    n_cal = int(round(config.n_collect * config.cal_fraction))
    cal_idx, train_idx = perm[:n_cal], perm[n_cal:]
    cal_actions = _take(actions, cal_idx)
    cal_losses = losses[cal_idx]

    # Phase 2: improvement rule supplied by the environment.
    optimized = env.improve(reference, _take(actions, train_idx),
                            rewards[train_idx], losses[train_idx], rng)

    # Phase 3: calibrate the clip level on the accumulated calibration bank.
    bank_points = _concat(state.cal_points + [cal_actions])
    bank_losses = np.concatenate([np.asarray(x) for x in state.cal_losses]
                                 + [cal_losses]) if state.cal_losses else cal_losses
    past_policies = state.past_policies + [reference]
    past_counts = state.past_counts + [len(cal_losses)]
    prop_points = optimized.sample_batch(rng, config.n_prop)
    beta_hat, report = calibrate_beta(
        safe=reference, optimized=optimized,
        past_policies=past_policies, past_counts=past_counts,
        cal_points=bank_points, cal_losses=bank_losses,
        prop_points=prop_points, alpha=alpha, bound=bound,
        config=config.calibration, rng=rng,
    )

    # Phase 4: deploy the constrained policy by accept-reject.
    deployed = ClippedPolicy(reference, optimized, _log(beta_hat),
                             log_psi=math.log(report.psi_hat[report.beta_index]))
    batch, deploy_actions = _deploy(reference, optimized, beta_hat, rng, config)
    degenerate = len(deploy_actions) == 0
    deploy_rewards = (np.asarray(env.reward(deploy_actions), dtype=np.float64)
                      if not degenerate else np.zeros(0))
    deploy_losses = (np.asarray(env.loss(deploy_actions), dtype=np.float64)
                     if not degenerate else np.zeros(0))

    log = RoundLog(
        round_index=state.round_index,
        beta_hat=beta_hat,
        contexts=np.full(len(deploy_losses), state.round_index, dtype=np.int64),
        actions=deploy_actions,
        rewards=deploy_rewards,
        losses=deploy_losses,
        accept_stats=batch.to_dict(),
        risk_estimate=float(report.weighted_risk[report.beta_index]),
        degenerate=degenerate,
        extras={"calibration": report.to_dict()},
    )
    next_state = RoundState(
        reference=deployed if not degenerate else reference,
        round_index=state.round_index + 1,
        past_policies=past_policies,
        past_counts=past_counts,
        cal_points=state.cal_points + [cal_actions],
        cal_losses=state.cal_losses + [cal_losses],
    )
    return log, next_state


def _deploy(reference: Policy, optimized: Policy, beta_hat: float,
            rng: np.random.Generator, config: RoundConfig):
    if math.isinf(beta_hat):
        actions = optimized.sample_batch(rng, config.n_deploy)
        batch = SampleBatch(points=actions, attempted=config.n_deploy,
                            kind="direct", log_beta=math.inf, envelope=1.0)
        return batch, actions
    log_beta = _log(beta_hat)
    sampler = rejection_sample_optimized if log_beta >= 0 else rejection_sample_safe
    batch = sampler(reference, optimized, log_beta, rng,
                    budget=config.sample_budget, max_accepts=config.n_deploy)
    return batch, batch.points


def _log(beta: float) -> float:
    return math.inf if math.isinf(beta) else math.log(beta)


def _take(actions, idx):
    if isinstance(actions, np.ndarray):
        return actions[idx]
    return [actions[i] for i in idx]


def _concat(chunks):
    if len(chunks) == 1:
        return chunks[0]
    if all(isinstance(c, np.ndarray) for c in chunks):
        return np.concatenate(chunks)
    out = []
    for c in chunks:
        out.extend(list(c))
    return out


def run_rounds(env, initial_policy: Policy, n_rounds: int, alpha: float,
               bound: float, config: RoundConfig, rng: np.random.Generator):
    """Drive the loop for several rounds; returns the list of RoundLogs."""
    state = RoundState(reference=initial_policy)
    logs = []
    for _ in range(n_rounds):
        log, state = cpc_round(env, state, alpha, bound, config, rng)
        logs.append(log)
    return logs
