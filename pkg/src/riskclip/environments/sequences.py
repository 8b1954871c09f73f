"""Token-sequence optimization with a Markov feasibility set.

Feasibility is defined by banned bigrams: a sequence is infeasible as soon
as it uses one. Feasible seed sequences come from a masked Markov process;
the safe policy is a smoothed (unmasked) Markov fit to those seeds, so it
leaks a little probability onto banned transitions. Reward tilting toward
motif tokens then amplifies that leak, which is exactly the tension the
clip calibration has to manage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..policies import MarkovSequencePolicy, fit_markov
from .rounds import RoundConfig, RoundState, cpc_round, improve_by_tilting

__all__ = ["SequenceEnv", "make_sequence_env", "sequence_opt_run"]


@dataclass
class SequenceEnv:
    """Vocabulary, banned-bigram feasibility set, and weighted motifs."""

    vocab: int
    length: int
    banned_mask: np.ndarray
    motifs: list
    motif_weights: np.ndarray
    seed_process: MarkovSequencePolicy
    tilt_temperature: float = 2.0

    def __post_init__(self):
        self.banned_mask = np.asarray(self.banned_mask, dtype=bool)
        self.motif_weights = np.asarray(self.motif_weights, dtype=np.float64)
        if len(self.motifs) != self.motif_weights.size:
            raise ValueError("one weight per motif")
        if np.any(self.banned_mask.all(axis=1)):
            raise ValueError("a token has no allowed successor")
        # Constructive existence check: the seed process only walks allowed
        # transitions, so one draw is a feasible witness.
        witness = self.seed_process.sample_batch(np.random.default_rng(0), 1)
        if self.loss(witness)[0] != 0:
            raise ValueError("no feasible sequence found at setup")

    def loss(self, seqs) -> np.ndarray:
        """1 when the sequence steps through any banned bigram."""
        seqs = np.asarray(seqs, dtype=np.int64)
        return self.banned_mask[seqs[:, :-1], seqs[:, 1:]].any(axis=1).astype(np.float64)

    def reward(self, seqs) -> np.ndarray:
        """Weighted fraction of motifs present as contiguous subsequences."""
        seqs = np.asarray(seqs, dtype=np.int64)
        total = np.zeros(seqs.shape[0])
        for motif, weight in zip(self.motifs, self.motif_weights):
            m = np.asarray(motif, dtype=np.int64)
            k = m.size
            if k > self.length:
                continue
            hit = np.zeros(seqs.shape[0], dtype=bool)
            for off in range(self.length - k + 1):
                hit |= (seqs[:, off:off + k] == m[None, :]).all(axis=1)
            total += weight * hit
        return total / self.motif_weights.sum()

    def bigram_bonus(self) -> np.ndarray:
        """Per-transition tilt bonus: weighted motif bigram membership."""
        bonus = np.zeros((self.vocab, self.vocab))
        for motif, weight in zip(self.motifs, self.motif_weights):
            for a, b in zip(motif[:-1], motif[1:]):
                bonus[a, b] += weight
        top = bonus.max()
        return bonus / top if top > 0 else bonus

    def seed_sequences(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.seed_process.sample_batch(rng, n)

    def safe_policy(self, rng: np.random.Generator, n_seeds: int = 400,
                    smoothing: float = 0.05) -> MarkovSequencePolicy:
        """Smoothed unmasked fit to feasible seeds.

        The smoothing leaks a small probability onto banned transitions,
        mirroring a density model trained only on feasible data: mostly
        safe, not perfectly so.
        """
        seeds = self.seed_sequences(rng, n_seeds)
        return fit_markov(seeds, self.vocab, smoothing=smoothing, banned_mask=None,
                          length=self.length)

    def improve(self, reference, actions, rewards, losses, rng):
        """Re-fit a Markov model to the round's train split, then tilt it.

        Fitting first keeps the optimized policy a tractable Markov model
        even when the reference is a clipped policy from an earlier round.
        """
        fitted = fit_markov(np.asarray(actions, dtype=np.int64), self.vocab,
                            smoothing=0.3, banned_mask=None, length=self.length)
        return improve_by_tilting(fitted, self.bigram_bonus(), self.tilt_temperature)


def make_sequence_env(rng: np.random.Generator, vocab: int = 8, length: int = 12,
                      n_banned: int = 10, n_motifs: int = 4, motif_len: int = 3,
                      risky_fraction: float = 0.5,
                      tilt_temperature: float = 4.0) -> SequenceEnv:
    """Random environment whose best rewards sit on infeasible ground.

    A ``risky_fraction`` of the motifs contain a banned bigram as an
    adjacent pair, and those motifs carry the largest weights. Reward
    tilting therefore drives probability straight onto banned transitions,
    so the optimized policy is much riskier than the safe one.
    """
    banned = np.zeros((vocab, vocab), dtype=bool)
    while banned.sum() < n_banned:
        i, j = rng.integers(0, vocab, size=2)
        banned[i, j] = True
        if banned[i].all():  # keep every row escapable
            banned[i, j] = False
    base_trans = np.where(banned, 0.0, 1.0)
    base_trans = base_trans / base_trans.sum(axis=1, keepdims=True)
    seed_process = MarkovSequencePolicy(np.full(vocab, 1.0 / vocab), base_trans,
                                        length=length, banned_mask=banned)
    banned_pairs = np.argwhere(banned)
    n_risky = int(round(n_motifs * risky_fraction))
    motifs = []
    for k in range(n_motifs):
        motif = rng.integers(0, vocab, size=motif_len)
        if k < n_risky and banned_pairs.size:
            a, b = banned_pairs[rng.integers(0, len(banned_pairs))]
            pos = rng.integers(0, motif_len - 1)
            motif[pos], motif[pos + 1] = a, b
        motifs.append(tuple(int(t) for t in motif))
    weights = np.concatenate([rng.uniform(0.8, 1.0, size=n_risky),
                              rng.uniform(0.2, 0.5, size=n_motifs - n_risky)])
    return SequenceEnv(vocab=vocab, length=length, banned_mask=banned,
                       motifs=motifs, motif_weights=weights,
                       seed_process=seed_process, tilt_temperature=tilt_temperature)


def sequence_opt_run(env: SequenceEnv, n_rounds: int, alpha: float,
                     config: RoundConfig, rng: np.random.Generator,
                     check_assumption: bool = True, n_check: int = 2000):
    """Multi-round loop on the sequence environment.

    Returns a list of per-round dicts with infeasibility rate, mean reward,
    and the best reward seen so far. When ``check_assumption`` is set, the
    safe policy's own infeasibility rate is estimated up front and an
    error is raised if it exceeds the target (the method's precondition).
    """
    safe = env.safe_policy(rng)
    if check_assumption:
        probe = safe.sample_batch(rng, n_check)
        safe_risk = float(env.loss(probe).mean())
        if safe_risk > alpha:
            raise ValueError(
                f"initial policy violates the risk budget: {safe_risk:.3f} > {alpha}")
    state = RoundState(reference=safe)
    records = []
    best = -np.inf
    for _ in range(n_rounds):
        log, state = cpc_round(env, state, alpha, env_bound(), config, rng)
        rewards = log.rewards if len(log.rewards) else np.array([np.nan])
        best = max(best, float(np.nanmax(rewards)))
        records.append({
            "round": log.round_index,
            "beta_hat": log.beta_hat,
            "mean_loss": log.mean_loss,
            "mean_reward": log.mean_reward,
            "best_reward": best,
            "accept_rate": log.accept_stats.get("rate", float("nan")),
            "degenerate": log.degenerate,
        })
    return records


def env_bound() -> float:
    """The infeasibility indicator is bounded by one."""
    return 1.0
