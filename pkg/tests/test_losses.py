import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from riskclip.losses import (ClaimRecord, Grid, LossCurve, binary_loss,
                             claim_loss_curves, claim_recall_curves,
                             claims_from_json, counterexample_losses, fdr_loss,
                             jitter_scores, load_claims, monotonize,
                             monotonize_values, recall,
                             synthetic_nonmonotonic_values)


def record(scores, labels):
    return ClaimRecord(scores=np.asarray(scores, float), labels=np.asarray(labels))


class TestGrid:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            Grid(points=np.array([1.0, 1.0, 2.0]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Grid(points=np.array([]))

    def test_safe_value_must_be_terminal(self):
        with pytest.raises(ValueError):
            Grid(points=np.array([1.0, 2.0, 3.0]), safe_value=2.0)

    def test_inf_sentinel_allowed_last(self):
        g = Grid(points=np.array([0.5, 1.0, np.inf]), safe_value=0.5)
        assert g.safe_index == 0
        with pytest.raises(ValueError):
            Grid(points=np.array([np.inf, 1.0]))

    def test_index_of(self):
        g = Grid(points=np.array([1.0, 2.0, 4.0]))
        assert g.index_of(2.0) == 1
        with pytest.raises(ValueError):
            g.index_of(3.0)


class TestClaimLosses:
    def test_fdr_hand_example(self):
        rec = record([0.9, 0.6, 0.3], [1, 0, 1])
        # Included at 0.5: scores 0.9 (true) and 0.6 (false) -> 1/2 false.
        assert fdr_loss(rec, 0.5) == 0.5

    def test_fdr_nothing_included_is_zero(self):
        rec = record([0.4, 0.2], [0, 0])
        assert fdr_loss(rec, 0.9) == 0.0

    def test_fdr_all_true_is_zero(self):
        rec = record([0.9, 0.1], [1, 1])
        for tau in (0.0, 0.5, 0.95):
            assert fdr_loss(rec, tau) == 0.0

    def test_fdr_empty_record(self):
        assert fdr_loss(record([], []), 0.5) == 0.0

    def test_recall_hand_example(self):
        rec = record([0.9, 0.6, 0.3], [1, 0, 1])
        assert recall(rec, 0.5) == 0.5

    def test_recall_threshold_zero_keeps_all(self):
        rec = record([0.9, 0.6, 0.3], [1, 0, 1])
        assert recall(rec, 0.0) == 1.0

    def test_recall_above_max_score(self):
        rec = record([0.9, 0.6], [1, 1])
        assert recall(rec, 0.95) == 0.0

    def test_recall_no_true_claims_is_one(self):
        assert recall(record([0.9], [0]), 0.5) == 1.0

    def test_binary_hand_example(self):
        rec = record([0.9, 0.6], [1, 0])
        assert binary_loss(rec, 0.5) == 1

    def test_binary_nothing_included(self):
        rec = record([0.9, 0.6], [1, 0])
        assert binary_loss(rec, 0.95) == 0

    def test_binary_all_true(self):
        assert binary_loss(record([0.9, 0.6], [1, 1]), 0.1) == 0

    def test_binary_nonincreasing_in_tau(self):
        rec = record([0.8, 0.5, 0.2], [0, 1, 0])
        taus = np.linspace(0, 1, 20)
        vals = [binary_loss(rec, t) for t in taus]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_fdr_not_monotone_exists(self):
        # True claim at high score, false at mid, true at low: the rate
        # loss rises then falls as the threshold sweeps up.
        rec = record([0.9, 0.5, 0.1], [1, 0, 1])
        lo, mid, hi = fdr_loss(rec, 0.05), fdr_loss(rec, 0.3), fdr_loss(rec, 0.7)
        assert mid > lo and mid > hi


class TestMonotonize:
    def test_suffix_maximum_hand_example(self):
        curve = LossCurve(values=np.array([0.1, 0.4, 0.2, 0.0]), bound=1.0)
        assert monotonize(curve).values.tolist() == [0.4, 0.4, 0.2, 0.0]

    def test_idempotent_on_monotone(self):
        curve = LossCurve(values=np.array([0.5, 0.3, 0.1]), bound=1.0)
        assert monotonize(curve).values.tolist() == [0.5, 0.3, 0.1]

    def test_constant_unchanged(self):
        curve = LossCurve(values=np.full(4, 0.3), bound=1.0)
        assert monotonize(curve).values.tolist() == [0.3] * 4

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30))
    def test_dominates_and_nonincreasing(self, values):
        curve = LossCurve(values=np.array(values), bound=1.0)
        out = monotonize(curve)
        assert np.all(out.values >= curve.values)
        assert np.all(np.diff(out.values) <= 0)
        again = monotonize(out)
        assert np.array_equal(again.values, out.values)

    def test_array_form_matches(self):
        vals = np.random.default_rng(0).uniform(size=(5, 8))
        rowwise = np.stack([monotonize(LossCurve(values=v, bound=1.0)).values
                            for v in vals])
        assert np.allclose(monotonize_values(vals), rowwise)


class TestCounterexample:
    @pytest.mark.parametrize("alpha", [0.1, 0.4, 0.9, 1.0])
    def test_table_reproduced(self, alpha):
        grid, curves, bound = counterexample_losses(alpha)
        assert bound == 1.5 * alpha
        half = bound / 2
        assert curves[0].values.tolist() == [bound, half, 0.0, 0.0]
        assert curves[1].values.tolist() == [half, bound, 0.0, 0.0]
        assert curves[2].values.tolist() == [half, 0.0, bound, 0.0]
        for c in curves:
            assert c.values[-1] == 0.0 <= alpha
            assert c.values.max() == bound

    def test_rejects_bad_alpha(self):
        for alpha in (0.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                counterexample_losses(alpha)


class TestSyntheticFamily:
    def test_deterministic_given_seed(self):
        grid = Grid(np.linspace(0, 1, 30), safe_value=1.0)
        a = synthetic_nonmonotonic_values(np.random.default_rng(7), 20, grid)
        b = synthetic_nonmonotonic_values(np.random.default_rng(7), 20, grid)
        assert np.array_equal(a, b)

    def test_bounded_and_safe_at_terminal(self):
        grid = Grid(np.linspace(0, 1, 50), safe_value=1.0)
        vals = synthetic_nonmonotonic_values(np.random.default_rng(0), 200, grid, 0.7)
        assert vals.min() >= 0.0 and vals.max() <= 0.7
        assert np.all(vals[:, -1] == 0.0)

    def test_interior_maximum_common(self):
        grid = Grid(np.linspace(0, 1, 50), safe_value=1.0)
        vals = synthetic_nonmonotonic_values(np.random.default_rng(0), 200, grid)
        argmaxes = vals.argmax(axis=1)
        interior = (argmaxes > 0) & (argmaxes < len(grid) - 1)
        assert interior.mean() > 0.9

    def test_empty_count(self):
        grid = Grid(np.linspace(0, 1, 10), safe_value=1.0)
        assert synthetic_nonmonotonic_values(np.random.default_rng(0), 0, grid).shape == (0, 10)


class TestClaimsIO:
    def test_roundtrip(self, tmp_path):
        path = tmp_path / "claims.json"
        payload = [{"scores": [0.9, 0.2], "labels": [1, 0]},
                   {"scores": [], "labels": []}]
        path.write_text(json.dumps(payload))
        recs = load_claims(path)
        assert len(recs) == 2 and len(recs[0]) == 2 and len(recs[1]) == 0

    def test_reports_first_malformed_index(self):
        payload = [{"scores": [0.9], "labels": [1]},
                   {"scores": [1.4], "labels": [1]}]
        with pytest.raises(ValueError, match="index 1"):
            claims_from_json(payload)

    def test_label_domain_checked(self):
        with pytest.raises(ValueError, match="index 0"):
            claims_from_json([{"scores": [0.5], "labels": [2]}])

    def test_jitter_breaks_ties_and_stays_valid(self, rng):
        recs = [record([0.5, 0.5, 0.5], [1, 0, 1])]
        out = jitter_scores(recs, rng)[0]
        assert len(set(out.scores.tolist())) == 3
        assert out.scores.min() >= 0 and out.scores.max() <= 1
        assert np.max(np.abs(out.scores - 0.5)) < 1e-7


class TestCurveEvaluation:
    def test_matches_scalar_ops(self):
        recs = [record([0.9, 0.6, 0.3], [1, 0, 1]), record([0.7], [0])]
        taus = np.array([0.2, 0.5, 0.8])
        fdr = claim_loss_curves(recs, taus, kind="fdr")
        rec_curves = claim_recall_curves(recs, taus)
        for i, r in enumerate(recs):
            for j, t in enumerate(taus):
                assert fdr[i, j] == fdr_loss(r, t)
                assert rec_curves[i, j] == recall(r, t)

    def test_binary_kind(self):
        recs = [record([0.9, 0.6], [1, 0])]
        out = claim_loss_curves(recs, np.array([0.5, 0.95]), kind="binary")
        assert out.tolist() == [[1.0, 0.0]]
