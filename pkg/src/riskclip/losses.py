"""Bounded losses over hyperparameter grids, and claim-filtering losses.

Loss curves are step functions over a shared finite grid (right-continuous
by convention); calibrators only ever query grid points. All types are
immutable after construction and all operations are pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "Grid",
    "LossCurve",
    "ClaimRecord",
    "fdr_loss",
    "recall",
    "binary_loss",
    "monotonize",
    "monotonize_values",
    "counterexample_losses",
    "synthetic_nonmonotonic_values",
    "synthetic_nonmonotonic_family",
    "load_claims",
    "claims_from_json",
    "jitter_scores",
    "claim_loss_curves",
    "claim_recall_curves",
]


@dataclass(frozen=True)
class Grid:
    """A strictly increasing finite grid of hyperparameter candidates.

    ``safe_value``, when declared, must be a terminal element: the largest
    point for threshold-style grids (safe = include nothing) or the smallest
    for ratio-bound grids (safe = stay at the reference policy). A ``+inf``
    sentinel is permitted as the last point of ratio-bound grids.
    """

    points: np.ndarray
    safe_value: float | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("grid must be a non-empty 1-D sequence")
        if np.any(np.isnan(pts)) or np.isinf(pts[0]) or np.any(np.isinf(pts[:-1])):
            raise ValueError("grid points must be real (only the last may be +inf)")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        object.__setattr__(self, "points", pts)
        if self.safe_value is not None:
            if self.safe_value != pts[0] and self.safe_value != pts[-1]:
                raise ValueError("declared safe value must be a terminal grid element")

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def safe_index(self) -> int | None:
        if self.safe_value is None:
            return None
        return 0 if self.safe_value == self.points[0] else len(self) - 1

    def index_of(self, value: float) -> int:
        idx = int(np.searchsorted(self.points, value))
        if idx >= len(self) or self.points[idx] != value:
            raise ValueError(f"{value} is not a grid point")
        return idx


@dataclass(frozen=True)
class LossCurve:
    """One bounded loss evaluated at every grid point."""

    values: np.ndarray
    bound: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("loss curve must be a non-empty 1-D sequence")
        if not self.bound > 0:
            raise ValueError("bound must be positive")
        if np.any(vals < 0) or np.any(vals > self.bound):
            raise ValueError("loss values must lie in [0, bound]")
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class ClaimRecord:
    """Confidence scores and factuality labels for one set of claims."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        labels = np.asarray(self.labels)
        if scores.ndim != 1 or labels.ndim != 1 or scores.size != labels.size:
            raise ValueError("scores and labels must be 1-D and equal length")
        if scores.size and (scores.min() < 0 or scores.max() > 1):
            raise ValueError("scores must lie in [0, 1]")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels.astype(np.int64))

    def __len__(self) -> int:
        return int(self.scores.size)


def fdr_loss(claims: ClaimRecord, tau: float) -> float:
    """Fraction of included claims (score >= tau) that are false; 0 if none."""
    included = claims.scores >= tau
    n_inc = int(included.sum())
    if n_inc == 0:
        return 0.0
    return float((included & (claims.labels == 0)).sum() / n_inc)


def recall(claims: ClaimRecord, tau: float) -> float:
    """Fraction of true claims retained at threshold tau; 1 if no true claims."""
    true = claims.labels == 1
    n_true = int(true.sum())
    if n_true == 0:
        # Vacuous records carry no information; there is nothing to retain.
        return 1.0
    return float((true & (claims.scores >= tau)).sum() / n_true)


def binary_loss(claims: ClaimRecord, tau: float) -> int:
    """1 iff any included claim is false. Nonincreasing in tau."""
    included = claims.scores >= tau
    return int((included & (claims.labels == 0)).any())


def monotonize(curve: LossCurve) -> LossCurve:
    """Suffix maximum: value at index k becomes max of values at indices >= k.

    The output is nonincreasing over the grid, pointwise dominates the
    input, and the operation is idempotent.
    """
    env = np.maximum.accumulate(curve.values[::-1])[::-1]
    return LossCurve(values=env, bound=curve.bound)


def monotonize_values(values: np.ndarray) -> np.ndarray:
    """Array form of :func:`monotonize` along the last axis."""
    return np.maximum.accumulate(values[..., ::-1], axis=-1)[..., ::-1]


def counterexample_losses(alpha: float, grid: Grid | None = None):
    """The three-curve adversarial family over a 4-point grid, with B = 1.5*alpha.

    Returns ``(grid, curves, bound)``. The held-out loss at the generalized
    selector equals the bound in every leave-one-out case, so the
    bag-conditional mean risk is exactly 1.5*alpha.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if grid is None:
        grid = Grid(points=np.array([1.0, 2.0, 3.0, 4.0]), safe_value=4.0)
    if len(grid) != 4:
        raise ValueError("counterexample family is defined over a 4-point grid")
    bound = 1.5 * alpha
    half = bound / 2.0
    curves = [
        LossCurve(values=np.array([bound, half, 0.0, 0.0]), bound=bound),
        LossCurve(values=np.array([half, bound, 0.0, 0.0]), bound=bound),
        LossCurve(values=np.array([half, 0.0, bound, 0.0]), bound=bound),
    ]
    return grid, curves, bound


def synthetic_nonmonotonic_values(
    rng: np.random.Generator,
    n: int,
    grid: Grid,
    bound: float = 1.0,
) -> np.ndarray:
    """i.i.d. smooth bounded losses with an interior bump, zero at the safe end.

    Each curve is a sigmoid bump (random center and width) on top of a
    decreasing baseline; the curve's own value at the last grid point is
    subtracted so the safe terminal always sits at exactly zero, then the
    result is clipped to [0, bound]. Smooth on the grid, hence Lipschitz
    with a modest constant.
    """
    if len(grid) == 0:
        raise ValueError("empty grid")
    pts = grid.points
    lo, hi = pts[0], pts[-1]
    span = hi - lo if hi > lo else 1.0
    x = (pts - lo) / span  # normalized to [0, 1]
    n = int(n)
    if n == 0:
        return np.zeros((0, len(grid)))
    base_height = rng.uniform(0.2, 0.5, size=n)[:, None] * bound
    baseline = base_height * (1.0 - x)[None, :]
    amp = rng.uniform(0.3, 1.0, size=n)[:, None] * bound
    center = rng.uniform(0.15, 0.65, size=n)[:, None]
    width = rng.uniform(0.05, 0.2, size=n)[:, None]
    sharp = width / 3.0
    rise = 1.0 / (1.0 + np.exp(-(x[None, :] - (center - width)) / sharp))
    fall = 1.0 / (1.0 + np.exp(-((center + width) - x[None, :]) / sharp))
    raw = baseline + amp * rise * fall
    raw = raw - raw[:, -1:]
    return np.clip(raw, 0.0, bound)


def synthetic_nonmonotonic_family(
    rng: np.random.Generator | int,
    n: int,
    grid: Grid,
    bound: float = 1.0,
) -> list[LossCurve]:
    """:func:`synthetic_nonmonotonic_values` wrapped as LossCurve objects."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    values = synthetic_nonmonotonic_values(rng, n, grid, bound)
    return [LossCurve(values=row, bound=bound) for row in values]


def jitter_scores(
    records: Sequence[ClaimRecord],
    rng: np.random.Generator,
    magnitude: float = 1e-8,
) -> list[ClaimRecord]:
    """Break score ties with additive uniform noise of the given magnitude.

    The result is rescaled by 1/(1 + magnitude) so jittered scores stay in
    [0, 1]; the rescaling is monotone, so orderings among jittered scores
    are preserved.
    """
    out = []
    for rec in records:
        noisy = (rec.scores + rng.uniform(0.0, magnitude, size=len(rec))) / (1.0 + magnitude)
        out.append(ClaimRecord(scores=noisy, labels=rec.labels))
    return out


def claims_from_json(data) -> list[ClaimRecord]:
    """Validate a parsed claims array, reporting the first malformed record."""
    if not isinstance(data, list):
        raise ValueError("claims file must contain a JSON array of records")
    records = []
    for idx, item in enumerate(data):
        try:
            if not isinstance(item, dict):
                raise ValueError("record must be an object")
            records.append(ClaimRecord(scores=np.asarray(item["scores"], dtype=np.float64),
                                       labels=np.asarray(item["labels"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed claim record at index {idx}: {exc}") from exc
    return records


def load_claims(path) -> list[ClaimRecord]:
    """Load and validate a claims JSON file."""
    with open(path) as fh:
        data = json.load(fh)
    return claims_from_json(data)


def claim_loss_curves(
    records: Sequence[ClaimRecord],
    thresholds: np.ndarray,
    kind: str = "fdr",
) -> np.ndarray:
    """Evaluate per-record claim losses over a threshold grid.

    Returns an (n_records, n_thresholds) array. ``kind`` is one of
    ``fdr`` or ``binary``.
    """
    thresholds = np.asarray(thresholds, dtype=np.float64)
    out = np.zeros((len(records), thresholds.size))
    for i, rec in enumerate(records):
        if len(rec) == 0:
            continue
        included = rec.scores[:, None] >= thresholds[None, :]
        n_inc = included.sum(axis=0)
        false_inc = (included & (rec.labels == 0)[:, None]).sum(axis=0)
        if kind == "fdr":
            with np.errstate(invalid="ignore"):
                vals = np.where(n_inc > 0, false_inc / np.maximum(n_inc, 1), 0.0)
        elif kind == "binary":
            vals = (false_inc > 0).astype(np.float64)
        else:
            raise ValueError(f"unknown claim loss kind: {kind}")
        out[i] = vals
    return out


def claim_recall_curves(
    records: Sequence[ClaimRecord],
    thresholds: np.ndarray,
) -> np.ndarray:
    """Per-record recall over a threshold grid; vacuous records score 1."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    out = np.ones((len(records), thresholds.size))
    for i, rec in enumerate(records):
        n_true = int((rec.labels == 1).sum())
        if n_true == 0:
            continue
        retained = ((rec.scores[:, None] >= thresholds[None, :])
                    & (rec.labels == 1)[:, None]).sum(axis=0)
        out[i] = retained / n_true
    return out
