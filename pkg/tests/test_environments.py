import math

import numpy as np
import pytest
from scipy.stats import norm

from riskclip.environments.active_learning import (ALConfig, active_learning_run,
                                                   build_feasibility, gp_fit,
                                                   gp_posterior_mean,
                                                   gp_posterior_variance,
                                                   load_dataset_csv,
                                                   pca_first_component,
                                                   synthetic_tabular)
from riskclip.environments.claims import (FdrExperimentConfig, fdr_experiment,
                                          synthetic_claims)
from riskclip.environments.gaussian import GaussianPairEnv
from riskclip.environments.rounds import (RoundConfig, RoundState, cpc_round,
                                          improve_by_tilting, run_rounds)
from riskclip.environments.sequences import make_sequence_env, sequence_opt_run
from riskclip.policies import Categorical, MarkovSequencePolicy, fit_markov


class TestImproveByTilting:
    def test_zero_temperature_identity(self):
        pol = Categorical.from_probs([0.2, 0.3, 0.5])
        out = improve_by_tilting(pol, lambda i: float(i), 0.0)
        assert np.allclose(out.probs, pol.probs)

    def test_three_outcome_arithmetic(self):
        pol = Categorical.from_probs([0.2, 0.3, 0.5])
        temp = 2.0
        out = improve_by_tilting(pol, lambda i: float(i), temp)
        raw = pol.probs * np.exp(temp * np.arange(3))
        assert np.allclose(out.probs, raw / raw.sum())

    def test_large_temperature_concentrates_on_argmax(self):
        pol = Categorical.from_probs([0.3, 0.4, 0.3])
        rewards = {0: 0.1, 1: 0.9, 2: 0.5}
        out = improve_by_tilting(pol, lambda i: rewards[int(i)], 50.0)
        assert out.probs.argmax() == 1 and out.probs[1] > 0.99

    def test_markov_bigram_tilt_preserves_bans(self):
        banned = np.zeros((3, 3), dtype=bool)
        banned[0, 2] = True
        pol = fit_markov(np.array([[0, 1, 2], [1, 0, 1]]), 3, smoothing=0.5,
                         banned_mask=banned)
        bonus = np.zeros((3, 3))
        bonus[1, 2] = 1.0
        out = improve_by_tilting(pol, bonus, 3.0)
        assert out.trans_probs[0, 2] == 0.0
        assert out.trans_probs[1, 2] > pol.trans_probs[1, 2]

    def test_gaussian_linear_tilt_shifts_mean(self):
        from riskclip.policies import DiagonalGaussian
        pol = DiagonalGaussian(0.5, 2.0)
        out = improve_by_tilting(pol, "linear", 0.25)
        assert out.mean[0] == pytest.approx(0.5 + 0.25 * 4.0)
        assert out.std[0] == 2.0


class TestGaussianEnv:
    def test_safe_risk_below_defaults(self):
        env = GaussianPairEnv()
        assert env.safe_risk == pytest.approx(norm.sf(1.2816), rel=1e-6)
        assert env.safe_risk < 0.2 < env.optimized_risk

    def test_quadrature_limits(self):
        env = GaussianPairEnv()
        assert env.expected_clipped_loss(math.inf) == pytest.approx(
            env.optimized_risk, abs=1e-4)
        tiny = env.expected_clipped_loss(1e-9)
        assert tiny == pytest.approx(env.safe_risk, abs=1e-4)

    def test_round_follows_alpha_geq_bound(self, rng):
        env = GaussianPairEnv()
        cfg = RoundConfig(n_collect=60, n_prop=40, n_deploy=40)
        log, _ = cpc_round(env, RoundState(reference=env.safe_policy()),
                           alpha=1.0, bound=1.0, config=cfg, rng=rng)
        assert math.isinf(log.beta_hat)
        assert log.accept_stats["kind"] == "direct"

    def test_identity_improvement_means_unit_ratio(self, rng):
        env = GaussianPairEnv(mu_opt=0.0, sigma_opt=1.0)  # optimized == safe
        cfg = RoundConfig(n_collect=60, n_prop=40, n_deploy=200)
        log, _ = cpc_round(env, RoundState(reference=env.safe_policy()),
                           alpha=0.2, bound=1.0, config=cfg, rng=rng)
        # Likelihood ratio is one everywhere, so deployment stays at the
        # reference law regardless of the chosen level.
        assert abs(log.mean_loss - env.safe_risk) < 3 * math.sqrt(
            env.safe_risk * (1 - env.safe_risk) / len(log.losses)) + 0.05

    def test_realized_loss_matches_quadrature_oracle(self, rng):
        env = GaussianPairEnv()
        cfg = RoundConfig(n_collect=200, n_prop=200, n_deploy=400)
        log, _ = cpc_round(env, RoundState(reference=env.safe_policy()),
                           alpha=0.3, bound=1.0, config=cfg, rng=rng)
        expected = env.expected_clipped_loss(log.beta_hat)
        se = math.sqrt(max(expected * (1 - expected), 1e-6) / len(log.losses))
        assert abs(log.mean_loss - expected) <= 3 * se + 1e-3

    def test_round_log_reproducible(self):
        env = GaussianPairEnv()
        cfg = RoundConfig(n_collect=60, n_prop=40, n_deploy=20)
        logs = []
        for _ in range(2):
            rng = np.random.default_rng(77)
            log, _ = cpc_round(env, RoundState(reference=env.safe_policy()),
                               alpha=0.25, bound=1.0, config=cfg, rng=rng)
            logs.append(log)
        assert logs[0].beta_hat == logs[1].beta_hat
        assert np.array_equal(np.asarray(logs[0].actions),
                              np.asarray(logs[1].actions))
        assert logs[0].to_json() == logs[1].to_json()


class TestSequenceEnv:
    def test_loss_detects_banned_bigrams(self, rng):
        env = make_sequence_env(rng)
        pairs = np.argwhere(env.banned_mask)
        a, b = pairs[0]
        seq = env.seed_sequences(rng, 1)[0]
        assert env.loss(seq[None, :])[0] == 0.0
        bad = seq.copy()
        bad[3], bad[4] = a, b
        assert env.loss(bad[None, :])[0] == 1.0

    def test_reward_counts_motifs(self, rng):
        env = make_sequence_env(rng)
        motif = np.asarray(env.motifs[0])
        seq = np.zeros(env.length, dtype=np.int64)
        seq[: len(motif)] = motif
        got = env.reward(seq[None, :])[0]
        # Motif 0 is present, so at least its weight share is earned.
        assert got >= env.motif_weights[0] / env.motif_weights.sum() - 1e-12
        assert got <= 1.0 + 1e-12
        # Recompute by hand from substring membership.
        present = [any(np.array_equal(seq[o:o + len(m)], m)
                       for o in range(env.length - len(m) + 1))
                   for m in map(np.asarray, env.motifs)]
        expected = env.motif_weights[np.asarray(present)].sum() / env.motif_weights.sum()
        assert got == pytest.approx(expected)

    def test_seed_sequences_always_feasible(self, rng):
        env = make_sequence_env(rng)
        seeds = env.seed_sequences(rng, 500)
        assert env.loss(seeds).sum() == 0

    def test_safe_policy_mostly_feasible_optimized_less_so(self, rng):
        env = make_sequence_env(rng)
        safe = env.safe_policy(rng)
        opt = env.improve(safe, safe.sample_batch(rng, 300), None, None, rng)
        safe_risk = env.loss(safe.sample_batch(rng, 3000)).mean()
        opt_risk = env.loss(opt.sample_batch(rng, 3000)).mean()
        assert safe_risk < 0.05
        assert opt_risk > safe_risk + 0.02

    def test_run_checks_initial_policy_risk(self, rng):
        env = make_sequence_env(rng)
        cfg = RoundConfig(n_collect=60, n_prop=30, n_deploy=30)
        with pytest.raises(ValueError, match="risk budget"):
            sequence_opt_run(env, 1, alpha=1e-9, config=cfg, rng=rng)

    def test_multi_round_records(self, rng):
        env = make_sequence_env(rng)
        cfg = RoundConfig(n_collect=100, n_prop=50, n_deploy=50)
        recs = sequence_opt_run(env, 3, alpha=0.5, config=cfg,
                                rng=np.random.default_rng(5))
        assert [r["round"] for r in recs] == [0, 1, 2]
        best = [r["best_reward"] for r in recs]
        assert all(a <= b + 1e-12 for a, b in zip(best, best[1:]))
        for r in recs:
            assert 0.0 <= r["mean_loss"] <= 1.0


class TestPCA:
    def test_diagonal_direction(self):
        gen = np.random.default_rng(0)
        u = gen.normal(size=400)
        x = np.stack([u, u], axis=1) + 0.01 * gen.normal(size=(400, 2))
        v, z = pca_first_component(x)
        assert np.allclose(np.abs(v), 1 / math.sqrt(2), atol=1e-2)
        assert np.linalg.norm(v) == pytest.approx(1.0)

    def test_matches_dense_eigensolver(self, rng):
        x = rng.normal(size=(5, 3)) @ np.diag([3.0, 1.0, 0.5])
        v, _ = pca_first_component(x)
        centered = x - x.mean(axis=0)
        cov = centered.T @ centered / 4
        evals, evecs = np.linalg.eigh(cov)
        lead = evecs[:, -1]
        if lead[np.argmax(np.abs(lead))] < 0:
            lead = -lead
        assert np.allclose(v, lead, atol=1e-8)

    def test_zero_variance_rejected(self):
        with pytest.raises(ValueError):
            pca_first_component(np.ones((5, 2)))


class TestFeasibility:
    def test_location_tied_to_target(self, rng):
        x = rng.normal(size=(200, 3))
        model = build_feasibility(x, alpha=0.2, gamma=1.0, rng=rng)
        assert model.mu == pytest.approx(0.5)
        model2 = build_feasibility(x, alpha=0.5, gamma=1.0, rng=rng)
        assert model2.mu == pytest.approx(0.98)

    def test_top_rank_probability(self, rng):
        x = rng.normal(size=(100, 2))
        model = build_feasibility(x, alpha=0.2, gamma=1.0, rng=rng)
        top = np.argmax(model.projections)
        expected = 1.0 / (1.0 + math.exp(-(1.0 - 0.5) / 0.1))
        assert model.probabilities[top] == pytest.approx(expected)

    def test_probabilities_monotone_in_rank(self, rng):
        x = rng.normal(size=(150, 4))
        model = build_feasibility(x, alpha=0.2, gamma=1.0, rng=rng)
        order = np.argsort(model.projections)
        assert np.all(np.diff(model.probabilities[order]) >= -1e-12)

    def test_requires_two_records(self, rng):
        with pytest.raises(ValueError):
            build_feasibility(np.ones((1, 2)), 0.2, 1.0, rng)


class TestGP:
    def test_variance_shrinks_at_training_point(self):
        x = np.array([[1.0, 0.0]])
        y = np.array([2.0])
        tight = gp_fit(x, y, signal_var=1.0, noise_var=1e-8)
        assert gp_posterior_variance(tight, x)[0] == pytest.approx(0.0, abs=1e-5)

    def test_single_point_closed_form(self):
        x = np.array([[2.0]])
        y = np.array([1.0])
        s0, sn = 1.5, 0.7
        model = gp_fit(x, y, s0, sn)
        k = s0 + 4.0
        expected_var = k - k * k / (k + sn)
        assert gp_posterior_variance(model, x)[0] == pytest.approx(expected_var)
        assert gp_posterior_mean(model, x)[0] == pytest.approx(k * y[0] / (k + sn))

    def test_posterior_below_prior(self, rng):
        x = rng.normal(size=(20, 3))
        y = rng.normal(size=20)
        model = gp_fit(x, y)
        q = rng.normal(size=(15, 3))
        prior = model.signal_var + (q * q).sum(axis=1)
        post = gp_posterior_variance(model, q)
        assert np.all(post <= prior + 1e-9)

    def test_mse_improves_with_data(self):
        # Linear data: predictive error trends down as training grows.
        mses = {5: [], 50: []}
        for seed in range(20):
            gen = np.random.default_rng(seed)
            w = gen.normal(size=3)
            x = gen.normal(size=(120, 3))
            y = x @ w + 0.05 * gen.normal(size=120)
            for n in (5, 50):
                model = gp_fit(x[:n], y[:n], 1.0, 0.1)
                pred = gp_posterior_mean(model, x[100:])
                mses[n].append(np.mean((pred - y[100:]) ** 2))
        assert np.mean(mses[50]) < np.mean(mses[5])


class TestActiveLearning:
    def test_alpha_one_matches_unconstrained(self):
        gen = np.random.default_rng(3)
        x, y = synthetic_tabular(gen, n=400)
        cfg = ALConfig(iterations=4)
        controlled = active_learning_run(x, y, 1.0, cfg, seed=11, controlled=True)
        for rec in controlled:
            assert math.isinf(rec["beta_hat"])

    def test_trajectories_reproducible(self):
        gen = np.random.default_rng(3)
        x, y = synthetic_tabular(gen, n=400)
        cfg = ALConfig(iterations=3)
        a = active_learning_run(x, y, 0.2, cfg, seed=5)
        b = active_learning_run(x, y, 0.2, cfg, seed=5)
        assert a == b

    def test_csv_loader(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("a,b,target\n1.0,2.0,3.0\n4.0,5.0,6.0\n")
        x, y, header = load_dataset_csv(path)
        assert x.shape == (2, 2) and y.tolist() == [3.0, 6.0]
        assert header == ["a", "b", "target"]


class TestClaimsExperiment:
    def test_all_true_claims_zero_fdr_and_monotone_recall(self, rng):
        records = synthetic_claims(rng, 120, all_true=True)
        alphas = np.array([0.02, 0.05, 0.1])
        res = fdr_experiment(records, alphas, 6, rng,
                             FdrExperimentConfig(methods=("gcrc",)))
        assert np.all(res["gcrc"]["mean_fdr"] == 0.0)
        recalls = res["gcrc"]["mean_recall"]
        assert np.all(np.diff(recalls) >= -1e-9)

    def test_requires_two_records(self, rng):
        with pytest.raises(ValueError):
            fdr_experiment(synthetic_claims(rng, 1), np.array([0.1]), 2, rng)

    def test_generator_determinism(self):
        a = synthetic_claims(np.random.default_rng(4), 10)
        b = synthetic_claims(np.random.default_rng(4), 10)
        assert all(np.array_equal(x.scores, y.scores) for x, y in zip(a, b))
