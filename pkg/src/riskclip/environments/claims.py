"""Claim-filtering experiment: threshold calibration under a rate loss.

Synthetic claim records substitute for annotated question-answering data:
each record carries confidence scores and binary truth labels, the loss at
a threshold is the fraction of retained claims that are false, and the
reward metric is the recall of true claims. The experiment compares the
suffix-rule selector against a monotonized first-crossing baseline and a
fixed-sequence multiple-testing baseline over a grid of target levels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..losses import (ClaimRecord, Grid, claim_loss_curves, claim_recall_curves,
                      jitter_scores, monotonize_values)
from ..risk_control import (adjusted_risk, first_crossing_index, ltt_hoeffding,
                            suffix_select_index)

__all__ = ["synthetic_claims", "FdrExperimentConfig", "fdr_experiment",
           "summarize_fdr_trials"]


def synthetic_claims(rng: np.random.Generator, n_records: int,
                     mean_claims: float = 8.0, score_a: float = 1.6,
                     score_b: float = 1.2, truth_slope: float = 5.0,
                     truth_center: float = 0.45, all_true: bool = False,
                     ) -> list[ClaimRecord]:
    """Generate claim records whose labels correlate loosely with scores.

    Scores are Beta(a, b); labels are Bernoulli with probability a
    logistic function of the score, so confident claims are usually (not
    always) true. ``all_true`` yields fully factual records for degenerate
    checks.
    """
    records = []
    for _ in range(n_records):
        k = 1 + rng.poisson(mean_claims - 1.0)
        scores = rng.beta(score_a, score_b, size=k)
        if all_true:
            labels = np.ones(k, dtype=np.int64)
        else:
            p_true = 1.0 / (1.0 + np.exp(-truth_slope * (scores - truth_center)))
            labels = (rng.random(k) < p_true).astype(np.int64)
        records.append(ClaimRecord(scores=scores, labels=labels))
    return records


@dataclass(frozen=True)
class FdrExperimentConfig:
    """Protocol parameters; defaults mirror the experiment tables."""

    cal_fraction: float = 0.7
    grid_size: int = 200
    jitter: float = 1e-8
    ltt_delta: float = 0.05
    methods: tuple = ("gcrc", "monotonized_crc", "ltt")
    bound: float = 1.0


def _threshold_grid(cal_records, size: int) -> Grid:
    """Candidate thresholds from the empirical score distribution.

    The safe terminal sits above every possible (jittered) score, where
    nothing is retained and the rate loss is identically zero.
    """
    scores = np.concatenate([r.scores for r in cal_records if len(r)])
    qs = np.quantile(scores, np.linspace(0.0, 1.0, size))
    pts = np.unique(qs)
    terminal = 1.0 + 1e-6
    pts = pts[pts < terminal]
    return Grid(points=np.append(pts, terminal), safe_value=terminal)


def fdr_experiment(records, alphas, n_trials: int, rng: np.random.Generator,
                   config: FdrExperimentConfig = FdrExperimentConfig()):
    """Split-and-calibrate trials; per-(alpha, method) mean rate loss and recall.

    Per trial: jitter scores, split records into calibration and test,
    select a threshold on the calibration split per method and target
    level, then score the test split. Returns a dict with arrays of shape
    (n_alphas,) per method under keys ``mean_fdr``, ``se_fdr``,
    ``mean_recall``, ``se_recall``.
    """
    records = list(records)
    if len(records) < 2:
        raise ValueError("need at least two claim records")
    alphas = np.asarray(alphas, dtype=np.float64)
    n_alpha = alphas.size
    methods = config.methods
    fdr_vals = {m: np.zeros((n_trials, n_alpha)) for m in methods}
    rec_vals = {m: np.zeros((n_trials, n_alpha)) for m in methods}

    for trial in range(n_trials):
        jittered = jitter_scores(records, rng, config.jitter)
        perm = rng.permutation(len(jittered))
        n_cal = int(round(len(jittered) * config.cal_fraction))
        if n_cal < 1 or n_cal >= len(jittered):
            raise ValueError("degenerate calibration/test split")
        cal = [jittered[i] for i in perm[:n_cal]]
        test = [jittered[i] for i in perm[n_cal:]]
        grid = _threshold_grid(cal, config.grid_size)
        cal_curves = claim_loss_curves(cal, grid.points, kind="fdr")
        test_curves = claim_loss_curves(test, grid.points, kind="fdr")
        test_recall = claim_recall_curves(test, grid.points)
        risk = adjusted_risk(cal_curves, config.bound)
        mono_risk = adjusted_risk(monotonize_values(cal_curves), config.bound)
        for a_i, alpha in enumerate(alphas):
            for method in methods:
                if method == "gcrc":
                    idx = suffix_select_index(risk, alpha)
                elif method == "monotonized_crc":
                    idx = first_crossing_index(mono_risk, alpha)
                elif method == "ltt":
                    idx = ltt_hoeffding(cal_curves, grid, alpha, config.ltt_delta,
                                        bound=config.bound).chosen_index
                else:
                    raise ValueError(f"unknown method: {method}")
                fdr_vals[method][trial, a_i] = test_curves[:, idx].mean()
                rec_vals[method][trial, a_i] = test_recall[:, idx].mean()

    return summarize_fdr_trials(alphas, methods, fdr_vals, rec_vals)


def summarize_fdr_trials(alphas, methods, fdr_vals, rec_vals) -> dict:
    """Aggregate per-trial matrices into means and standard errors."""
    n_trials = next(iter(fdr_vals.values())).shape[0]
    ddof = 1 if n_trials > 1 else 0
    out = {"alphas": np.asarray(alphas), "methods": tuple(methods),
           "n_trials": n_trials, "per_trial": {"fdr": fdr_vals, "recall": rec_vals}}
    for m in methods:
        out[m] = {
            "mean_fdr": fdr_vals[m].mean(axis=0),
            "se_fdr": fdr_vals[m].std(axis=0, ddof=ddof) / np.sqrt(n_trials),
            "mean_recall": rec_vals[m].mean(axis=0),
            "se_recall": rec_vals[m].std(axis=0, ddof=ddof) / np.sqrt(n_trials),
        }
    return out
