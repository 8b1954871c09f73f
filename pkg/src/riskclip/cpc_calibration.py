"""Calibration of the likelihood-ratio clip level for a constrained policy.

Given calibration data from past policies (with losses) and fresh proposal
samples from the optimized policy, scan a grid of clip levels built from
the observed likelihood ratios, estimate the normalizer and conformal
weights at each level, and keep the largest level whose conservatively
weighted risk stays below the target. The scan stops at the first
exceedance; the full evaluated trace is kept for post-hoc verification.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .losses import Grid
from .policies import Policy, clip_log_density_values

__all__ = [
    "CalSample",
    "WeightSet",
    "CalibrationConfig",
    "BetaCalibrationReport",
    "prepare_grid",
    "estimate_log_psi",
    "mixture_log_density",
    "mixture_conformal_weights",
    "exact_permutation_weights",
    "estimate_w_max",
    "weighted_risk",
    "calibrate_beta",
]


@dataclass(frozen=True)
class CalSample:
    """One labeled calibration point with cached conditional log densities."""

    point: object
    loss: float
    round_id: int
    log_opt: float
    log_safe: float
    log_mix: float


@dataclass(frozen=True)
class WeightSet:
    """Normalized conformal weights plus the conservative test weight."""

    weights: np.ndarray
    w_max: float
    log_beta: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or self.w_max < 0:
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() + self.w_max - 1.0) > 1e-9:
            raise ValueError("weights plus test weight must sum to one")
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class CalibrationConfig:
    """Knobs for the clip-level scan; defaults are echoed into run logs."""

    beta_min: float = 1e-4
    w_max_safety: float = 1.0
    psi_proposal: str = "optimistic"
    n_safe_probes: int | None = None  # defaults to |proposal set|
    include_cal_probes: bool = False

    def __post_init__(self):
        if self.beta_min <= 0:
            raise ValueError("beta_min must be positive")
        if self.w_max_safety < 1.0:
            raise ValueError("the test-weight safety factor cannot shrink the estimate")
        if self.psi_proposal not in ("optimistic", "safe"):
            raise ValueError("psi_proposal must be 'optimistic' or 'safe'")


@dataclass(frozen=True)
class BetaCalibrationReport:
    """Scan trace and the selected clip level."""

    alpha: float
    bound: float
    beta_hat: float
    beta_index: int
    grid: Grid
    psi_hat: np.ndarray
    w_max_hat: np.ndarray
    weighted_risk: np.ndarray
    n_cal: int
    n_prop: int
    n_below_floor: int
    config: CalibrationConfig
    scanned: int = 0  # grid points actually visited by the early-stop scan

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "B": self.bound,
            "beta_hat": self.beta_hat,
            "grid": [float(b) for b in self.grid.points],
            "psi_hat": [float(v) for v in self.psi_hat],
            "w_max_hat": [float(v) for v in self.w_max_hat],
            "weighted_risk": [float(v) for v in self.weighted_risk],
            "n_cal": self.n_cal,
            "n_prop": self.n_prop,
            "n_below_floor": self.n_below_floor,
            "scanned": self.scanned,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        lines = ["beta,psi_hat,w_max_hat,weighted_risk"]
        for b, p, w, r in zip(self.grid.points, self.psi_hat,
                              self.w_max_hat, self.weighted_risk):
            lines.append(f"{b},{p},{w},{r}")
        return "\n".join(lines) + "\n"


def prepare_grid(log_lrs, beta_min: float) -> tuple[Grid, int]:
    """Clip-level candidates from observed log likelihood ratios.

    The grid is the deduplicated ascending set of exp(observed log ratios),
    floored at ``beta_min`` and capped with a +inf sentinel. Ratios at -inf
    are dropped; ratios at or below the floor are absorbed into it, and
    their count is reported so the floor assumption stays visible.
    """
    log_lrs = np.asarray(log_lrs, dtype=np.float64)
    finite = log_lrs[np.isfinite(log_lrs)]
    if finite.size == 0:
        raise ValueError("no finite likelihood ratios to build a grid from")
    betas = np.exp(np.unique(finite))
    n_below = int((betas <= beta_min).sum())
    betas = betas[betas > beta_min]
    points = np.concatenate(([beta_min], betas, [np.inf]))
    return Grid(points=points, safe_value=beta_min), n_below


def estimate_log_psi(log_lrs, log_beta: float, proposal: str = "optimistic") -> float:
    """Importance-weighted estimate of the clipped policy's log normalizer.

    With proposal samples from the optimized policy the summands are
    min(log beta - r_i, 0); with samples from the safe policy they are
    min(r_i, log beta). ``r_i`` are the sample log likelihood ratios.
    """
    log_lrs = np.asarray(log_lrs, dtype=np.float64)
    if log_lrs.size == 0:
        raise ValueError("normalizer estimation needs at least one sample")
    return float(_log_psi_grid(log_lrs, np.array([log_beta]), proposal)[0])


def _clip_grid(log_pt: np.ndarray, log_p0: np.ndarray, log_betas: np.ndarray) -> np.ndarray:
    """min(log_pt, log_beta + log_p0) over a (grid x points) lattice, inf-safe."""
    lb = log_betas[:, None]
    with np.errstate(invalid="ignore"):
        shifted = np.where(np.isneginf(log_p0)[None, :], -np.inf, lb + log_p0[None, :])
        out = np.minimum(log_pt[None, :], shifted)
    return np.where(np.isposinf(lb), log_pt[None, :], out)


def _log_psi_grid(log_lrs: np.ndarray, log_betas: np.ndarray, proposal: str) -> np.ndarray:
    """Vectorized log-normalizer estimates for a whole grid of clip levels."""
    r = log_lrs[None, :]
    lb = log_betas[:, None]
    if proposal == "optimistic":
        with np.errstate(invalid="ignore"):
            summands = np.minimum(lb - r, 0.0)
        # At the +inf sentinel the clip is inactive and every summand is 0
        # (this also covers the inf - inf indeterminacy).
        summands = np.where(np.isposinf(np.broadcast_to(lb, summands.shape)),
                            0.0, summands)
    elif proposal == "safe":
        summands = np.minimum(r, lb)
    else:
        raise ValueError("proposal must be 'optimistic' or 'safe'")
    return logsumexp(summands, axis=1) - math.log(log_lrs.size)


def mixture_log_density(policies, counts, points) -> np.ndarray:
    """Log density of the count-weighted mixture of past policies at points."""
    counts = np.asarray(counts, dtype=np.float64)
    if len(policies) != counts.size or counts.size == 0:
        raise ValueError("policies and counts must align and be non-empty")
    if np.any(counts <= 0):
        raise ValueError("round counts must be positive")
    log_w = np.log(counts / counts.sum())
    stacked = np.stack([lw + p.log_density_batch(points)
                        for lw, p in zip(log_w, policies)])
    return logsumexp(stacked, axis=0)


def mixture_conformal_weights(log_opt, log_safe, log_mix,
                              log_beta: float, log_psi: float) -> np.ndarray:
    """Raw (unnormalized) conformal weights of calibration points.

    Each weight is the candidate constrained policy's density over the
    calibration mixture's density; normalization is deferred until the
    conservative test weight joins.
    """
    log_mix = np.asarray(log_mix, dtype=np.float64)
    if np.any(np.isneginf(log_mix)):
        raise ValueError("mixture density is zero at a calibration point")
    clipped = clip_log_density_values(log_opt, log_safe, log_beta)
    with np.errstate(under="ignore"):
        return np.exp(clipped - log_psi - log_mix)


def estimate_w_max(log_opt_probe, log_safe_probe, log_mix_probe,
                   log_beta: float, log_psi: float, safety: float = 1.0) -> float:
    """Empirical maximum of the raw weight over probe points, times a safety factor."""
    log_mix_probe = np.asarray(log_mix_probe, dtype=np.float64)
    if log_mix_probe.size == 0:
        raise ValueError("test-weight estimation needs at least one probe point")
    clipped = clip_log_density_values(log_opt_probe, log_safe_probe, log_beta)
    log_w = clipped - log_psi - log_mix_probe
    return safety * float(np.exp(np.max(log_w)))


def weighted_risk(raw_weights, losses, w_max_raw: float, bound: float) -> float:
    """Jointly normalize weights with the test weight; mix losses with the bound."""
    raw_weights = np.asarray(raw_weights, dtype=np.float64)
    losses = np.asarray(losses, dtype=np.float64)
    if raw_weights.shape != losses.shape:
        raise ValueError("weights and losses must align")
    if np.any(raw_weights < 0) or w_max_raw < 0:
        raise ValueError("weights must be nonnegative")
    total = raw_weights.sum() + w_max_raw
    if total <= 0:
        raise ValueError("weights carry no mass")
    if np.isinf(total):
        # Unbounded weight mass: report the conservative worst case.
        return float(bound)
    return float((raw_weights @ losses + w_max_raw * bound) / total)


def exact_permutation_weights(policies, points) -> np.ndarray:
    """Permutation-exact conformal weights for small calibration sets.

    ``policies`` lists one (history-independent) policy per slot, oldest
    first with the candidate constrained policy last; ``points`` lists the
    corresponding observed points (the hypothetical test point last).
    Weight i is the probability that the final slot drew point i, given
    the unordered bag of points.
    """
    t1 = len(policies)
    if t1 != len(points):
        raise ValueError("need one point per policy slot")
    if t1 > 8:
        raise ValueError("factorial enumeration is limited to eight slots")
    # log density of every (slot, point) pair
    table = np.empty((t1, t1))
    for k, pol in enumerate(policies):
        table[k] = pol.log_density_batch(_as_batch(points))
    per_target: list[list[float]] = [[] for _ in range(t1)]
    for perm in itertools.permutations(range(t1)):
        joint = sum(table[k, perm[k]] for k in range(t1))
        per_target[perm[t1 - 1]].append(joint)
    log_w = np.array([logsumexp(v) if v else -np.inf for v in per_target])
    norm = logsumexp(log_w)
    if not np.isfinite(norm):
        raise ValueError("all permutations carry zero mass")
    with np.errstate(under="ignore"):
        return np.exp(log_w - norm)


def _as_batch(points):
    try:
        return np.asarray(points)
    except Exception:
        return list(points)


def calibrate_beta(
    safe: Policy,
    optimized: Policy,
    past_policies,
    past_counts,
    cal_points,
    cal_losses,
    prop_points,
    alpha: float,
    bound: float,
    config: CalibrationConfig = CalibrationConfig(),
    rng: np.random.Generator | None = None,
) -> tuple[float, BetaCalibrationReport]:
    """Scan clip levels in ascending order; keep the last level that holds.

    Follows the early-return loop: the first level whose weighted risk
    exceeds the target ends the scan, and the previously accepted level is
    returned (the floor if the very first level already violates; +inf if
    no level ever violates). The whole grid is evaluated vectorized first,
    then reduced sequentially, which matches the sequential scan exactly.

    ``prop_points`` must be drawn from the optimized policy; test-weight
    probes combine them with fresh draws from the safe policy (``rng``
    required unless ``config.n_safe_probes == 0``).
    """
    cal_losses = np.asarray(cal_losses, dtype=np.float64)
    if np.any(cal_losses < 0) or np.any(cal_losses > bound):
        raise ValueError("calibration losses must lie in [0, bound]")
    if not 0 < alpha:
        raise ValueError("alpha must be positive")
    n_cal = len(cal_losses)
    n_prop = _batch_len(prop_points)
    if n_prop == 0:
        raise ValueError("proposal data must be non-empty")

    log_opt_cal = optimized.log_density_batch(cal_points) if n_cal else np.zeros(0)
    log_safe_cal = safe.log_density_batch(cal_points) if n_cal else np.zeros(0)
    log_mix_cal = (mixture_log_density(past_policies, past_counts, cal_points)
                   if n_cal else np.zeros(0))
    log_opt_prop = optimized.log_density_batch(prop_points)
    log_safe_prop = safe.log_density_batch(prop_points)
    r_prop = log_opt_prop - log_safe_prop

    grid, n_below = prepare_grid(
        np.concatenate([log_opt_cal - log_safe_cal, r_prop]) if n_cal else r_prop,
        config.beta_min,
    )
    with np.errstate(divide="ignore"):
        log_betas = np.log(grid.points)

    log_psi = _log_psi_grid(r_prop, log_betas, config.psi_proposal)

    # Probe points for the conservative test weight: proposal draws plus
    # fresh safe-policy draws (half-and-half by default).
    n_safe = config.n_safe_probes if config.n_safe_probes is not None else n_prop
    probes_logs = [(log_opt_prop, log_safe_prop,
                    mixture_log_density(past_policies, past_counts, prop_points))]
    if n_safe > 0:
        if rng is None:
            raise ValueError("safe-policy probes need a random generator")
        safe_probes = safe.sample_batch(rng, n_safe)
        probes_logs.append((optimized.log_density_batch(safe_probes),
                            safe.log_density_batch(safe_probes),
                            mixture_log_density(past_policies, past_counts, safe_probes)))
    if config.include_cal_probes and n_cal:
        probes_logs.append((log_opt_cal, log_safe_cal, log_mix_cal))
    probe_opt = np.concatenate([p[0] for p in probes_logs])
    probe_safe = np.concatenate([p[1] for p in probes_logs])
    probe_mix = np.concatenate([p[2] for p in probes_logs])

    n_grid = len(grid)
    psi_arr = np.asarray(log_psi)

    # Raw-weight matrices over (grid x points), evaluated in one shot; the
    # sequential reduction below reproduces the early-stop scan exactly.
    def raw_weight_matrix(log_opt, log_safe, log_mix):
        clipped = _clip_grid(log_opt, log_safe, log_betas)
        with np.errstate(under="ignore"):
            return np.exp(clipped - psi_arr[:, None] - log_mix[None, :])

    w_max_arr = config.w_max_safety * raw_weight_matrix(
        probe_opt, probe_safe, probe_mix).max(axis=1)
    if n_cal:
        if np.any(np.isneginf(log_mix_cal)):
            raise ValueError("mixture density is zero at a calibration point")
        raw_cal = raw_weight_matrix(log_opt_cal, log_safe_cal, log_mix_cal)
        totals = raw_cal.sum(axis=1) + w_max_arr
        with np.errstate(invalid="ignore"):
            risk_arr = (raw_cal @ cal_losses + w_max_arr * bound) / totals
        # An unbounded test weight swamps the average: worst-case risk.
        risk_arr = np.where(np.isinf(w_max_arr), bound, risk_arr)
    else:
        risk_arr = np.full(n_grid, float(bound))

    beta_hat = grid.points[0]
    beta_index = 0
    scanned = n_grid
    for g in range(n_grid):
        if risk_arr[g] > alpha:
            scanned = g + 1
            break
        beta_hat = grid.points[g]
        beta_index = g
    else:
        beta_hat = grid.points[-1]  # +inf sentinel: never violated
        beta_index = n_grid - 1

    report = BetaCalibrationReport(
        alpha=alpha,
        bound=bound,
        beta_hat=float(beta_hat),
        beta_index=int(beta_index),
        grid=grid,
        psi_hat=np.exp(psi_arr),
        w_max_hat=w_max_arr,
        weighted_risk=risk_arr,
        n_cal=n_cal,
        n_prop=n_prop,
        n_below_floor=n_below,
        config=config,
        scanned=scanned,
    )
    return float(beta_hat), report


def _batch_len(points) -> int:
    if isinstance(points, np.ndarray):
        return points.shape[0]
    return len(points)
