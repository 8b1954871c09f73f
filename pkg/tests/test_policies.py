import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from riskclip.policies import (Categorical, ClippedPolicy, DiagonalGaussian,
                               MarkovSequencePolicy, MixturePolicy,
                               clip_log_density_values,
                               clipped_unnorm_log_density, fit_markov,
                               load_banned_bigrams, log_likelihood_ratio,
                               normalize_exact, policy_from_dict,
                               policy_to_dict, tilted_acquisition, tv_distance)

NEG_INF = float("-inf")


class TestCategorical:
    def test_normalization_enforced(self):
        with pytest.raises(ValueError):
            Categorical(np.log([0.5, 0.4]))

    def test_sampling_never_leaves_support(self, rng):
        pol = Categorical.from_probs([0.5, 0.0, 0.5])
        draws = pol.sample_batch(rng, 10_000)
        assert set(np.unique(draws)) <= {0, 2}

    def test_empirical_frequencies(self, rng):
        pol = Categorical.from_probs([0.2, 0.3, 0.5])
        draws = pol.sample_batch(rng, 200_000)
        freq = np.bincount(draws, minlength=3) / draws.size
        assert tv_distance(freq, pol.probs) < 0.01


class TestGaussian:
    def test_log_density_matches_formula(self):
        pol = DiagonalGaussian(1.0, 2.0)
        x = 0.3
        expected = -0.5 * math.log(2 * math.pi * 4.0) - 0.5 * ((x - 1.0) / 2.0) ** 2
        assert pol.log_density(x) == pytest.approx(expected)

    def test_batch_matches_scalar(self, rng):
        pol = DiagonalGaussian([0.0, 1.0], [1.0, 0.5])
        pts = rng.normal(size=(6, 2))
        batch = pol.log_density_batch(pts)
        assert np.allclose(batch, [pol.log_density(p) for p in pts])


class TestMixture:
    def test_log_density_is_weighted_sum(self):
        a = Categorical.from_probs([0.7, 0.3])
        b = Categorical.from_probs([0.1, 0.9])
        mix = MixturePolicy([a, b], [0.25, 0.75])
        for i in range(2):
            expected = math.log(0.25 * a.probs[i] + 0.75 * b.probs[i])
            assert mix.log_density(i) == pytest.approx(expected)

    def test_enumeration_sums_to_one(self):
        a = Categorical.from_probs([0.7, 0.3])
        b = Categorical.from_probs([0.1, 0.9])
        mix = MixturePolicy([a, b], [0.5, 0.5])
        _, logp = mix.enumerate_support()
        assert logsumexp(logp) == pytest.approx(0.0, abs=1e-12)


class TestLikelihoodRatio:
    def test_identity_pair_is_zero(self, finite_pair):
        safe, _ = finite_pair
        for i in range(safe.size):
            assert log_likelihood_ratio(safe, safe, i) == pytest.approx(0.0)

    def test_hand_example(self):
        safe = Categorical.from_probs([0.5, 0.3, 0.2])
        opt = Categorical.from_probs([0.2, 0.3, 0.5])
        assert log_likelihood_ratio(opt, safe, 0) == pytest.approx(math.log(0.2 / 0.5))

    def test_infeasible_under_optimized(self):
        safe = Categorical.from_probs([0.5, 0.5])
        opt = Categorical.from_probs([1.0, 0.0])
        assert log_likelihood_ratio(opt, safe, 1) == NEG_INF

    def test_zero_safe_density_rejected(self):
        safe = Categorical.from_probs([1.0, 0.0])
        opt = Categorical.from_probs([0.5, 0.5])
        with pytest.raises(ValueError):
            log_likelihood_ratio(opt, safe, 1)


class TestClipping:
    def test_inactive_clip_returns_optimized(self, finite_pair):
        safe, opt = finite_pair
        r_max = (opt.log_probs - safe.log_probs).max()
        for i in range(safe.size):
            got = clipped_unnorm_log_density(opt, safe, r_max + 1.0, i)
            assert got == pytest.approx(opt.log_probs[i])

    def test_always_active_clip_returns_scaled_safe(self, finite_pair):
        safe, opt = finite_pair
        r_min = (opt.log_probs - safe.log_probs).min()
        for i in range(safe.size):
            got = clipped_unnorm_log_density(opt, safe, r_min, i)
            assert got == pytest.approx(r_min + safe.log_probs[i])

    def test_infinite_level_passes_optimized_through(self):
        log_pt = np.array([-1.0, NEG_INF])
        log_p0 = np.array([NEG_INF, -2.0])
        out = clip_log_density_values(log_pt, log_p0, math.inf)
        assert out.tolist() == [-1.0, NEG_INF]

    def test_zero_safe_mass_blocks_finite_level(self):
        out = clip_log_density_values(np.array([-1.0]), np.array([NEG_INF]), 0.0)
        assert out[0] == NEG_INF


class TestNormalizeExact:
    def test_three_outcome_hand_sum(self):
        safe = Categorical.from_probs([0.5, 0.3, 0.2])
        opt = Categorical.from_probs([0.2, 0.3, 0.5])
        psi, pol = normalize_exact(safe, opt, 1.0)
        assert psi == pytest.approx(0.2 + 0.3 + 0.2)
        assert np.allclose(pol.probs, np.array([0.2, 0.3, 0.2]) / 0.7)

    def test_endpoints(self, finite_pair):
        safe, opt = finite_pair
        lr = np.exp(opt.log_probs - safe.log_probs)
        psi_hi, pol_hi = normalize_exact(safe, opt, lr.max())
        assert psi_hi == pytest.approx(1.0)
        assert tv_distance(pol_hi.probs, opt.probs) < 1e-12
        psi_lo, pol_lo = normalize_exact(safe, opt, lr.min())
        assert psi_lo == pytest.approx(lr.min())
        assert tv_distance(pol_lo.probs, safe.probs) < 1e-12

    def test_psi_monotone_in_level(self, big_pair):
        safe, opt = big_pair
        lr = np.exp(opt.log_probs - safe.log_probs)
        betas = np.quantile(lr, np.linspace(0, 1, 9))
        psis = [normalize_exact(safe, opt, b)[0] for b in betas]
        assert all(a <= b + 1e-12 for a, b in zip(psis, psis[1:]))
        assert 0 < psis[0] and psis[-1] <= 1 + 1e-12

    def test_output_normalized(self, big_pair):
        safe, opt = big_pair
        _, pol = normalize_exact(safe, opt, 1.3)
        assert logsumexp(pol.log_probs) == pytest.approx(0.0, abs=1e-12)

    def test_mismatched_support_rejected(self):
        a = Categorical.from_probs([0.5, 0.5])
        b = Categorical.from_probs([0.3, 0.3, 0.4])
        with pytest.raises(ValueError):
            normalize_exact(a, b, 1.0)


class TestClippedPolicy:
    def test_normalized_density_requires_psi(self, finite_pair):
        safe, opt = finite_pair
        pol = ClippedPolicy(safe, opt, 0.0)
        with pytest.raises(ValueError):
            pol.log_density(0)

    def test_sampling_matches_exact_law(self, finite_pair, rng):
        safe, opt = finite_pair
        beta = 1.5
        psi, exact = normalize_exact(safe, opt, beta)
        pol = ClippedPolicy(safe, opt, math.log(beta), log_psi=math.log(psi))
        draws = pol.sample_batch(rng, 20_000)
        freq = np.bincount(np.asarray(draws), minlength=safe.size) / 20_000
        assert tv_distance(freq, exact.probs) < 0.02


class TestTiltedAcquisition:
    def test_zero_temperature_uniform(self):
        pol = tilted_acquisition([1.0, 5.0, 9.0], 0.0)
        assert np.allclose(pol.probs, 1 / 3)

    def test_equal_variances_uniform(self):
        pol = tilted_acquisition([2.0, 2.0, 2.0, 2.0], 10.0)
        assert np.allclose(pol.probs, 0.25)

    def test_hand_computation(self):
        pol = tilted_acquisition([1.0, 2.0, 4.0], 10.0)
        logits = 10.0 * (np.array([1.0, 2.0, 4.0]) - 1.0) / 3.0
        expected = np.exp(logits - logsumexp(logits))
        assert np.allclose(pol.probs, expected)

    def test_rejects_negative_temperature(self):
        with pytest.raises(ValueError):
            tilted_acquisition([1.0], -1.0)


class TestMarkov:
    def test_rows_sum_to_one_and_bans_zero(self):
        banned = np.zeros((3, 3), dtype=bool)
        banned[0, 1] = True
        seqs = np.array([[0, 2, 1], [1, 0, 2], [2, 1, 0]])
        pol = fit_markov(seqs, 3, smoothing=0.5, banned_mask=banned)
        assert np.allclose(pol.trans_probs.sum(axis=1), 1.0)
        assert pol.trans_probs[0, 1] == 0.0

    def test_single_repeated_sequence_deterministic(self):
        seqs = np.tile(np.array([0, 1, 2, 1, 2]), (4, 1))
        pol = fit_markov(seqs, 3, smoothing=0.0)
        assert pol.trans_probs[0, 1] == 1.0
        assert pol.trans_probs[1, 2] == 1.0
        draws = pol.sample_batch(np.random.default_rng(0), 16)
        assert np.all(draws == seqs[0])

    def test_banned_sequence_has_zero_density(self):
        banned = np.zeros((3, 3), dtype=bool)
        banned[1, 1] = True
        seqs = np.array([[0, 1, 2], [2, 1, 0]])
        pol = fit_markov(seqs, 3, smoothing=1.0, banned_mask=banned)
        assert pol.log_density([0, 1, 1]) == NEG_INF

    def test_positive_smoothing_positive_allowed_probs(self):
        seqs = np.array([[0, 1], [1, 0]])
        pol = fit_markov(seqs, 3, smoothing=0.1)
        assert np.all(pol.trans_probs > 0)

    def test_all_banned_row_rejected(self):
        banned = np.ones((2, 2), dtype=bool)
        banned[1] = False
        with pytest.raises(ValueError, match="banned"):
            fit_markov(np.array([[0, 1]]), 2, smoothing=1.0, banned_mask=banned)

    def test_log_density_matches_chain_rule(self, rng):
        pol = fit_markov(rng.integers(0, 4, size=(30, 6)), 4, smoothing=0.5)
        seq = pol.sample(rng)
        manual = pol.init_logp[seq[0]] + sum(
            pol.trans_logp[a, b] for a, b in zip(seq[:-1], seq[1:]))
        assert pol.log_density(seq) == pytest.approx(manual)

    def test_enumeration_sums_to_one(self):
        pol = fit_markov(np.array([[0, 1, 0], [1, 0, 1]]), 2, smoothing=0.5)
        _, logp = pol.enumerate_support()
        assert logsumexp(logp) == pytest.approx(0.0, abs=1e-12)

    def test_underflow_free_long_sequences(self):
        # Vocabulary 32, length 128: log densities stay finite and sane.
        gen = np.random.default_rng(5)
        seqs = gen.integers(0, 32, size=(50, 128))
        pol = fit_markov(seqs, 32, smoothing=1.0)
        ld = pol.log_density_batch(pol.sample_batch(gen, 100))
        assert np.all(np.isfinite(ld))
        assert ld.min() > -128 * math.log(32) * 2


class TestSerialization:
    @pytest.mark.parametrize("builder", [
        lambda: Categorical.from_probs([0.2, 0.8]),
        lambda: DiagonalGaussian([0.5, -1.0], [1.0, 2.0]),
        lambda: MixturePolicy([Categorical.from_probs([0.2, 0.8]),
                               Categorical.from_probs([0.6, 0.4])], [0.3, 0.7]),
    ])
    def test_roundtrip_preserves_density(self, builder, rng):
        pol = builder()
        clone = policy_from_dict(policy_to_dict(pol))
        pts = pol.sample_batch(rng, 20)
        assert np.allclose(pol.log_density_batch(pts), clone.log_density_batch(pts))

    def test_markov_roundtrip_with_bans(self):
        banned = np.zeros((3, 3), dtype=bool)
        banned[2, 0] = True
        pol = fit_markov(np.array([[0, 1, 2], [1, 2, 1]]), 3, smoothing=0.5,
                         banned_mask=banned)
        clone = policy_from_dict(policy_to_dict(pol))
        assert np.allclose(clone.trans_probs, pol.trans_probs)
        assert clone.banned_mask[2, 0]

    def test_clipped_roundtrip(self, finite_pair):
        safe, opt = finite_pair
        pol = ClippedPolicy(safe, opt, 0.3, log_psi=-0.2)
        clone = policy_from_dict(policy_to_dict(pol))
        assert clone.log_beta == 0.3 and clone.log_psi == -0.2
        assert clone.log_density(2) == pytest.approx(pol.log_density(2))

    def test_banned_bigram_file(self, tmp_path):
        path = tmp_path / "banned.json"
        path.write_text("[[0, 1], [2, 2]]")
        mask = load_banned_bigrams(path, 3)
        assert mask[0, 1] and mask[2, 2] and mask.sum() == 2
        path.write_text("[[0, 9]]")
        with pytest.raises(ValueError):
            load_banned_bigrams(path, 3)


@given(st.lists(st.floats(0.01, 10.0), min_size=2, max_size=20),
       st.floats(0.0, 20.0))
@settings(max_examples=50, deadline=None)
def test_tilted_acquisition_always_normalized(variances, temperature):
    pol = tilted_acquisition(variances, temperature)
    assert pol.probs.sum() == pytest.approx(1.0, abs=1e-9)
