"""Hyperparameter selection on parameterized bounded losses.

The searches all operate on finite grids. Two selection rules share one
adjusted-risk curve, (B + sum_i l_i(lambda)) / (n + 1):

* first-crossing: the smallest grid point where the adjusted risk dips
  below the target (the classical rule, valid for monotone losses);
* suffix rule: the smallest grid point from which the adjusted risk stays
  below the target at every larger grid point (valid without
  monotonicity, up to a Lipschitz-times-stability slack).

Both fall back to the declared safe terminal (the largest grid point)
when no candidate qualifies. Ties at exactly the target are accepted
(weak inequality); comparisons use a tiny absolute tolerance so that
ties survive floating-point rounding of the adjusted-risk arithmetic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .losses import Grid, LossCurve

__all__ = [
    "CalibrationReport",
    "LTTReport",
    "crc_lambda",
    "gcrc_lambda_plus",
    "oracle_lambda_plus",
    "replace_one_instability",
    "conservative_alpha_hat",
    "ltt_hoeffding",
    "suffix_select_index",
    "first_crossing_index",
    "adjusted_risk",
    "loss_matrix",
    "gcrc_index_batch",
    "crc_index_batch",
    "epsilon_hat_from_matrix",
]


@dataclass(frozen=True)
class CalibrationReport:
    """Outcome of a grid calibration: the chosen point plus diagnostics."""

    chosen: float
    chosen_index: int
    risk_trace: np.ndarray
    alpha: float
    bound: float
    epsilon_hat: np.ndarray | None = None
    alpha_hat: float | None = None
    alpha_hat_found: bool | None = None
    extras: dict = field(default_factory=dict)

    @property
    def epsilon_mean(self) -> float | None:
        if self.epsilon_hat is None:
            return None
        return float(np.mean(self.epsilon_hat))

    def to_dict(self) -> dict:
        out = {
            "target": self.alpha,
            "bound": self.bound,
            "chosen": self.chosen,
            "risk_trace": [float(v) for v in self.risk_trace],
        }
        if self.epsilon_hat is not None:
            out["epsilon_hat"] = [float(v) for v in self.epsilon_hat]
        if self.alpha_hat is not None:
            out["alpha_hat"] = self.alpha_hat
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class LTTReport:
    """Fixed-sequence multiple-testing outcome."""

    chosen: float
    chosen_index: int
    accepted: np.ndarray  # bool per grid point: certified safe
    p_values: np.ndarray
    alpha: float
    delta: float


def loss_matrix(losses, grid: Grid | None = None, bound: float | None = None):
    """Normalize loss input to an (n, G) float array plus grid length check."""
    if isinstance(losses, np.ndarray):
        mat = np.asarray(losses, dtype=np.float64)
        if mat.ndim != 2:
            raise ValueError("loss array must be 2-D (curves x grid)")
    else:
        curves: Sequence[LossCurve] = list(losses)
        if not curves:
            raise ValueError("empty loss set")
        if bound is not None and any(c.bound != bound for c in curves):
            raise ValueError("loss curves disagree with the declared bound")
        lengths = {len(c) for c in curves}
        if len(lengths) != 1:
            raise ValueError("loss curves evaluated on mismatched grids")
        mat = np.stack([c.values for c in curves])
    if mat.shape[0] == 0:
        raise ValueError("empty loss set")
    if grid is not None and mat.shape[1] != len(grid):
        raise ValueError("loss curves evaluated on mismatched grids")
    return mat


def adjusted_risk(mat: np.ndarray, bound: float) -> np.ndarray:
    """(B + sum_i l_i(lambda)) / (n + 1) along the curve axis."""
    n = mat.shape[-2]
    return (bound + mat.sum(axis=-2)) / (n + 1)


# Absolute slack applied to "risk <= alpha" so exact ties survive float
# rounding; losses and bounds in this artifact are O(1).
RISK_TIE_TOL = 1e-12


def suffix_select_index(risk: np.ndarray, alpha: float,
                        tol: float = RISK_TIE_TOL) -> np.ndarray | int:
    """Smallest index from which risk <= alpha holds at all larger indices.

    Works on any leading batch shape; the last axis is the grid. Returns the
    last index (the safe terminal) when no index qualifies.
    """
    risk = np.asarray(risk)
    ok = risk <= alpha + tol
    suffix = np.logical_and.accumulate(ok[..., ::-1], axis=-1)[..., ::-1]
    idx = np.argmax(suffix, axis=-1)
    idx = np.where(suffix[..., -1], idx, risk.shape[-1] - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def first_crossing_index(risk: np.ndarray, alpha: float,
                         tol: float = RISK_TIE_TOL) -> np.ndarray | int:
    """Smallest index with risk <= alpha; the last index when none qualifies."""
    risk = np.asarray(risk)
    ok = risk <= alpha + tol
    idx = np.argmax(ok, axis=-1)
    idx = np.where(ok.any(axis=-1), idx, risk.shape[-1] - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def crc_lambda(losses, grid: Grid, alpha: float, bound: float) -> CalibrationReport:
    """First-crossing selection on the adjusted empirical risk."""
    _check_target(alpha, bound)
    mat = loss_matrix(losses, grid, bound)
    risk = adjusted_risk(mat, bound)
    idx = first_crossing_index(risk, alpha)
    return CalibrationReport(
        chosen=float(grid.points[idx]),
        chosen_index=int(idx),
        risk_trace=risk,
        alpha=alpha,
        bound=bound,
    )


def gcrc_lambda_plus(losses, grid: Grid, alpha: float, bound: float) -> CalibrationReport:
    """Suffix-rule selection on the adjusted empirical risk.

    Equivalent to running the suffix rule on the calibration bag augmented
    with a constant curve at the bound, standing in for the unknown test
    loss. Coincides with :func:`crc_lambda` whenever every curve is
    nonincreasing.
    """
    _check_target(alpha, bound)
    mat = loss_matrix(losses, grid, bound)
    risk = adjusted_risk(mat, bound)
    idx = suffix_select_index(risk, alpha)
    return CalibrationReport(
        chosen=float(grid.points[idx]),
        chosen_index=int(idx),
        risk_trace=risk,
        alpha=alpha,
        bound=bound,
    )


def oracle_lambda_plus(losses, grid: Grid, alpha: float) -> float:
    """Suffix rule on the full bag (test curve included, no bound stand-in).

    For analysis only: requires the test loss, so it is not deployable.
    """
    mat = loss_matrix(losses, grid)
    risk = mat.mean(axis=-2)
    idx = suffix_select_index(risk, alpha)
    return float(grid.points[idx])


def gcrc_index_batch(loss_tensor: np.ndarray, alpha: float, bound: float) -> np.ndarray:
    """Batched suffix-rule selection: loss_tensor is (..., n, G)."""
    risk = adjusted_risk(loss_tensor, bound)
    return suffix_select_index(risk, alpha)


def crc_index_batch(loss_tensor: np.ndarray, alpha: float, bound: float) -> np.ndarray:
    """Batched first-crossing selection: loss_tensor is (..., n, G)."""
    risk = adjusted_risk(loss_tensor, bound)
    return first_crossing_index(risk, alpha)


def replace_one_instability(losses, grid: Grid, alpha: float, bound: float):
    """Per-sample selection perturbation when one curve is swapped out.

    For each calibration curve, the curve is replaced by a constant at 0 and
    at the bound; the reported value is the larger absolute change in the
    selected hyperparameter. Returns ``(per_sample, mean)``.
    """
    mat = loss_matrix(losses, grid, bound)
    n = mat.shape[0]
    if n < 2:
        raise ValueError("instability needs at least two calibration curves")
    eps = epsilon_hat_from_matrix(mat, grid.points, alpha, bound)
    return eps, float(eps.mean())


def epsilon_hat_from_matrix(mat: np.ndarray, points: np.ndarray,
                            alpha: float, bound: float) -> np.ndarray:
    """Vector of replace-one perturbations for an (n, G) loss matrix."""
    n = mat.shape[0]
    base_sum = mat.sum(axis=0)
    base_risk = (bound + base_sum) / (n + 1)
    base_idx = suffix_select_index(base_risk, alpha)
    base_lam = points[base_idx]
    # Replace curve i by the constant b: risk shifts by (b - l_i) / (n + 1).
    eps = np.zeros(n)
    for rep in (0.0, bound):
        risk_rep = (bound + base_sum[None, :] - mat + rep) / (n + 1)
        idx = suffix_select_index(risk_rep, alpha)
        eps = np.maximum(eps, np.abs(points[idx] - base_lam))
    return eps


def conservative_alpha_hat(losses, grid: Grid, alpha: float, lipschitz: float,
                           scan_points: int = 100, bound: float | None = None):
    """Largest target level whose instability-corrected risk stays below alpha.

    Scans a descending grid of candidate levels alpha' in [alpha/100, alpha]
    and returns the first (largest) one satisfying
    ``alpha' + (K / (n + 1)) * sum_i eps_i(alpha') <= alpha``, together with
    the report of the suffix rule run at that level. If no scanned level
    qualifies, the most conservative scanned level is returned with
    ``alpha_hat_found=False``.
    """
    if lipschitz < 0:
        raise ValueError("Lipschitz constant must be nonnegative")
    bound = _infer_bound(losses, bound)
    _check_target(alpha, bound)
    mat = loss_matrix(losses, grid, bound)
    n = mat.shape[0]
    candidates = np.linspace(alpha, alpha / 100.0, scan_points)
    found = None
    for a_prime in candidates:
        eps = epsilon_hat_from_matrix(mat, grid.points, a_prime, bound)
        # The stand-in bound element is its own replacement, contributing 0.
        if a_prime + lipschitz * eps.sum() / (n + 1) <= alpha:
            found = a_prime
            break
    flag = found is not None
    a_hat = found if flag else float(candidates[-1])
    report = gcrc_lambda_plus(mat, grid, a_hat, bound)
    eps = epsilon_hat_from_matrix(mat, grid.points, a_hat, bound)
    return CalibrationReport(
        chosen=report.chosen,
        chosen_index=report.chosen_index,
        risk_trace=report.risk_trace,
        alpha=alpha,
        bound=bound,
        epsilon_hat=eps,
        alpha_hat=float(a_hat),
        alpha_hat_found=flag,
    )


def ltt_hoeffding(losses, grid: Grid, alpha: float, delta: float,
                  bound: float | None = None) -> LTTReport:
    """Fixed-sequence testing from the safe terminal downward.

    Each grid point is tested against the null "true risk exceeds alpha"
    with the one-sided Hoeffding p-value exp(-2 n ((alpha - mean)^+)^2 / B^2);
    testing stops at the first non-rejection. The selected point is the last
    rejected (most aggressive certified) one, or the safe terminal when
    nothing is rejected. Plain Hoeffding is deliberately conservative.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    bound = _infer_bound(losses, bound)
    mat = loss_matrix(losses, grid, bound)
    n, n_grid = mat.shape
    mean_risk = mat.mean(axis=0)
    gap = np.maximum(alpha - mean_risk, 0.0)
    p_values = np.exp(-2.0 * n * (gap / bound) ** 2)
    accepted = np.zeros(n_grid, dtype=bool)
    chosen_index = n_grid - 1
    for idx in range(n_grid - 1, -1, -1):
        if p_values[idx] <= delta:
            accepted[idx] = True
            chosen_index = idx
        else:
            break
    if not accepted.any():
        chosen_index = n_grid - 1
    return LTTReport(
        chosen=float(grid.points[chosen_index]),
        chosen_index=chosen_index,
        accepted=accepted,
        p_values=p_values,
        alpha=alpha,
        delta=delta,
    )


def _check_target(alpha: float, bound: float) -> None:
    if not 0 < alpha <= bound:
        raise ValueError("target level must lie in (0, bound]")


def _infer_bound(losses, bound: float | None = None) -> float:
    if bound is not None:
        return bound
    if isinstance(losses, np.ndarray):
        raise ValueError("array input requires an explicit bound")
    curves = list(losses)
    if not curves:
        raise ValueError("empty loss set")
    bounds = {c.bound for c in curves}
    if len(bounds) != 1:
        raise ValueError("loss curves carry mismatched bounds")
    return bounds.pop()
