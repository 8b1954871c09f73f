"""Command-line entry points for calibrations and experiment harnesses.

Every run writes a manifest (resolved config, seeds, versions, kernel
backend) sufficient to reproduce it bitwise, exits 0 only when the run's
internal self-checks all pass, and emits CSV/JSON results for plotting.
Configuration comes from an optional YAML/JSON file plus flag overrides;
flags win. Trials fan out to a process pool sized by ``--jobs`` with
per-trial child seeds, so results are identical at any worker count.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__, kernel_backend
from .cpc_calibration import CalibrationConfig, calibrate_beta
from .environments.active_learning import (ALConfig, active_learning_run,
                                           load_dataset_csv, synthetic_tabular)
from .environments.claims import (FdrExperimentConfig, fdr_experiment,
                                  summarize_fdr_trials, synthetic_claims)
from .environments.rounds import RoundConfig
from .environments.sequences import make_sequence_env, sequence_opt_run
from .losses import (Grid, counterexample_losses, load_claims,
                     synthetic_nonmonotonic_values)
from .policies import load_policy
from .risk_control import (crc_index_batch, epsilon_hat_from_matrix,
                           first_crossing_index, gcrc_index_batch,
                           suffix_select_index, adjusted_risk)
from .samplers import (estimate_envelope, rejection_sample_mixture,
                       rejection_sample_optimized, rejection_sample_safe)

OUTPUT_ROOT_ENV = "RISKCLIP_OUT"

GCRC_DEFAULTS = {
    "alphas": [round(a, 3) for a in np.arange(0.05, 0.5001, 0.05)],
    "trials": 2000,
    "n_cal": 50,
    "grid_size": 40,
    "bound": 1.0,
    "eps_trials": 200,
}

FDR_DEFAULTS = {
    "alphas": [round(a, 4) for a in np.arange(0.005, 0.1001, 0.005)],
    "trials": 25,
    "n_records": 600,
    "cal_fraction": 0.7,
    "grid_size": 200,
    "ltt_delta": 0.05,
    "claims": None,
}

AL_DEFAULTS = {
    "alpha": 0.2,
    "trials": 200,
    "n_initial": 48,
    "iterations": 10,
    "train_fraction": 0.8,
    "new_point_train_prob": 0.5,
    "sampling_bias": 1.0,
    "acquisition_temperature": 10.0,
    "signal_var": 1.0,
    "noise_var": 1.0,
    "obs_noise": 0.05,
    "pool_size": 1200,
    "dataset": None,
}

SEQ_DEFAULTS = {
    "alpha": 0.5,
    "bound": 1.0,
    "trials": 50,
    "rounds": 5,
    "vocab": 8,
    "length": 12,
    "n_collect": 200,
    "n_prop": 100,
    "n_deploy": 100,
    "env_seed": 1234,
    "uncontrolled": True,
}


# ---------------------------------------------------------------------------
# runners


def run_counterexample(cfg: dict):
    """Exact leave-one-out risk of both selectors on the adversarial family."""
    alphas = cfg.get("alphas", [0.1, 0.4, 0.9])
    rows, checks = [], []
    for alpha in alphas:
        grid, curves, bound = counterexample_losses(alpha)
        values = np.stack([c.values for c in curves])
        for method, select in (("gcrc", suffix_select_index),
                               ("crc", first_crossing_index)):
            total = 0.0
            for i in range(3):
                others = np.delete(values, i, axis=0)
                risk = adjusted_risk(others, bound)
                total += values[i][select(risk, alpha)]
            mean = total / 3.0
            rows.append({"alpha": alpha, "method": method,
                         "bag_conditional_risk": mean, "bound": bound})
            if method == "gcrc":
                checks.append(_check(
                    f"bag-conditional risk equals 1.5*alpha at alpha={alpha}",
                    abs(mean - 1.5 * alpha) <= 1e-12,
                    f"got {mean!r}, expected {1.5 * alpha!r}"))
        print(f"alpha={alpha}: bag-conditional risk = {rows[-2]['bag_conditional_risk']:.12f}"
              f" = 1.5*alpha (bound {bound:.3f})")
    return rows, checks


def _gcrc_one_alpha(args):
    alpha, cfg, seed = args
    rng = np.random.default_rng(seed)
    trials, n_cal = cfg["trials"], cfg["n_cal"]
    bound = cfg["bound"]
    grid = Grid(np.linspace(0.0, 1.0, cfg["grid_size"]), safe_value=1.0)
    curves = synthetic_nonmonotonic_values(rng, trials * (n_cal + 1), grid, bound)
    curves = curves.reshape(trials, n_cal + 1, len(grid))
    cal, test = curves[:, :n_cal, :], curves[:, n_cal, :]
    g_idx = gcrc_index_batch(cal, alpha, bound)
    c_idx = crc_index_batch(cal, alpha, bound)
    rows_idx = np.arange(trials)
    g_loss = test[rows_idx, g_idx]
    c_loss = test[rows_idx, c_idx]
    slope = np.abs(np.diff(curves, axis=-1)) / np.diff(grid.points)
    k_lip = float(slope.max())
    eps_means = [epsilon_hat_from_matrix(cal[t], grid.points, alpha, bound).mean()
                 for t in range(min(cfg["eps_trials"], trials))]
    return {
        "alpha": alpha,
        "gcrc_mean": float(g_loss.mean()),
        "gcrc_se": float(g_loss.std(ddof=1) / math.sqrt(trials)),
        "crc_mean": float(c_loss.mean()),
        "crc_se": float(c_loss.std(ddof=1) / math.sqrt(trials)),
        "k_lipschitz": k_lip,
        "eps_mean": float(np.mean(eps_means)),
    }


def run_gcrc_synthetic(cfg: dict, seed: int, jobs: int = 1):
    """Risk-vs-target sweep of both selectors on the smooth synthetic family,
    plus the exact adversarial arm where the first-crossing rule fails."""
    alphas = list(cfg["alphas"])
    seeds = _child_seeds(seed, len(alphas))
    tasks = [(a, cfg, s) for a, s in zip(alphas, seeds)]
    results = _pmap(_gcrc_one_alpha, tasks, jobs)
    rows, checks = [], []
    for res in results:
        alpha = res["alpha"]
        slack = res["k_lipschitz"] * res["eps_mean"] + 3 * res["gcrc_se"]
        rows.append({"alpha": alpha, "method": "gcrc",
                     "mean_loss": res["gcrc_mean"], "se": res["gcrc_se"],
                     "slack": slack, "k_lipschitz": res["k_lipschitz"],
                     "eps_mean": res["eps_mean"]})
        rows.append({"alpha": alpha, "method": "crc",
                     "mean_loss": res["crc_mean"], "se": res["crc_se"],
                     "slack": "", "k_lipschitz": "", "eps_mean": ""})
        checks.append(_check(
            f"gcrc mean loss within budget at alpha={alpha}",
            res["gcrc_mean"] <= alpha + slack,
            f"mean={res['gcrc_mean']:.4f} budget={alpha + slack:.4f}"))
    # Adversarial arm: exact bag-conditional evaluation, no Monte Carlo.
    crc_violations = 0
    for alpha in alphas:
        grid, curves, bound = counterexample_losses(alpha)
        values = np.stack([c.values for c in curves])
        total = 0.0
        for i in range(3):
            risk = adjusted_risk(np.delete(values, i, axis=0), bound)
            total += values[i][first_crossing_index(risk, alpha)]
        mean = total / 3.0
        rows.append({"alpha": alpha, "method": "crc_adversarial",
                     "mean_loss": mean, "se": 0.0, "slack": "",
                     "k_lipschitz": "", "eps_mean": ""})
        crc_violations += mean > alpha
    checks.append(_check(
        "first-crossing rule exceeds the target on the adversarial family",
        crc_violations >= 1, f"{crc_violations} of {len(alphas)} levels exceeded"))
    return rows, checks


def run_fdr(cfg: dict, seed: int, jobs: int = 1):
    """Split-and-calibrate claim-filtering trials over a grid of targets."""
    rng = np.random.default_rng(seed)
    if cfg.get("claims"):
        records = load_claims(cfg["claims"])
    else:
        records = synthetic_claims(rng, cfg["n_records"])
    exp_cfg = FdrExperimentConfig(cal_fraction=cfg["cal_fraction"],
                                  grid_size=cfg["grid_size"],
                                  ltt_delta=cfg["ltt_delta"])
    alphas = np.asarray(cfg["alphas"], dtype=np.float64)
    trials = cfg["trials"]
    # One task per trial with its own child seed, so results do not depend
    # on the worker count; the reduction below is keyed by trial index.
    seeds = _child_seeds(seed + 1, trials)
    tasks = [(records, alphas, 1, s, exp_cfg) for s in seeds]
    parts = _pmap(_fdr_chunk, tasks, jobs)
    fdr_vals = {m: np.vstack([p["fdr"][m] for p in parts]) for m in exp_cfg.methods}
    rec_vals = {m: np.vstack([p["recall"][m] for p in parts]) for m in exp_cfg.methods}
    res = summarize_fdr_trials(alphas, exp_cfg.methods, fdr_vals, rec_vals)

    rows = []
    for m in exp_cfg.methods:
        for i, alpha in enumerate(alphas):
            rows.append({"alpha": alpha, "method": m,
                         "mean_fdr": res[m]["mean_fdr"][i],
                         "se_fdr": res[m]["se_fdr"][i],
                         "mean_recall": res[m]["mean_recall"][i],
                         "se_recall": res[m]["se_recall"][i]})
    g, mono = res["gcrc"], res["monotonized_crc"]
    viol = g["mean_fdr"] - (alphas + 3 * g["se_fdr"])
    rec_gap = g["mean_recall"] - (mono["mean_recall"] - 3 * mono["se_recall"])
    checks = [
        _check("gcrc controls the rate loss at every target",
               float(viol.max()) <= 0, f"max excess {viol.max():.5f}"),
        _check("gcrc recall at least matches the monotonized baseline",
               float(rec_gap.min()) >= 0, f"min gap {rec_gap.min():.5f}"),
    ]
    return rows, checks


def _fdr_chunk(args):
    records, alphas, n_trials, seed, exp_cfg = args
    rng = np.random.default_rng(seed)
    res = fdr_experiment(records, alphas, n_trials, rng, exp_cfg)
    return {"fdr": res["per_trial"]["fdr"], "recall": res["per_trial"]["recall"]}


def _al_one_seed(args):
    x, y, alpha, al_cfg, seed = args
    controlled = active_learning_run(x, y, alpha, al_cfg, seed, controlled=True)
    uncontrolled = active_learning_run(x, y, alpha, al_cfg, seed, controlled=False)
    return seed, controlled, uncontrolled


def run_active_learning(cfg: dict, seed: int, jobs: int = 1):
    """Controlled vs uncontrolled acquisition trajectories over many seeds."""
    rng = np.random.default_rng(seed)
    if cfg.get("dataset"):
        x, y, _ = load_dataset_csv(cfg["dataset"])
    else:
        x, y = synthetic_tabular(rng, n=cfg["pool_size"])
    al_cfg = ALConfig(
        n_initial=cfg["n_initial"], train_fraction=cfg["train_fraction"],
        iterations=cfg["iterations"],
        new_point_train_prob=cfg["new_point_train_prob"],
        sampling_bias=cfg["sampling_bias"],
        acquisition_temperature=cfg["acquisition_temperature"],
        signal_var=cfg["signal_var"], noise_var=cfg["noise_var"],
        obs_noise=cfg["obs_noise"],
    )
    alpha = cfg["alpha"]
    seeds = [int(s) for s in _child_seeds(seed + 1, cfg["trials"])]
    tasks = [(x, y, alpha, al_cfg, s) for s in seeds]
    results = _pmap(_al_one_seed, tasks, jobs)

    rows = []
    viol = {"cpc": [], "uncontrolled": []}
    for trial, (run_seed, controlled, uncontrolled) in enumerate(results):
        for method, recs in (("cpc", controlled), ("uncontrolled", uncontrolled)):
            best = -math.inf
            for rec in recs:
                reward = -rec["test_mse"]
                best = max(best, reward)
                viol[method].append(rec["loss"])
                rows.append({"trial": trial, "round": rec["iteration"],
                             "method": method, "beta_hat": rec["beta_hat"],
                             "mean_loss": rec["loss"], "mean_reward": reward,
                             "best_reward": best,
                             "accept_rate": rec["accept_rate"],
                             "test_mse": rec["test_mse"]})
    v_c = np.asarray(viol["cpc"])
    v_u = np.asarray(viol["uncontrolled"])
    se = v_c.std(ddof=1) / math.sqrt(v_c.size)
    checks = [
        _check("controlled violation rate within target",
               float(v_c.mean()) <= alpha + 3 * se,
               f"rate={v_c.mean():.4f} target={alpha}+3*{se:.4f}"),
        _check("uncontrolled violation rate exceeds target",
               float(v_u.mean()) > alpha, f"rate={v_u.mean():.4f}"),
    ]
    return rows, checks


def _seq_one_trial(args):
    cfg, env_seed, trial_seed, alpha, label = args
    env = make_sequence_env(np.random.default_rng(env_seed),
                            vocab=cfg["vocab"], length=cfg["length"])
    round_cfg = RoundConfig(n_collect=cfg["n_collect"], n_prop=cfg["n_prop"],
                            n_deploy=cfg["n_deploy"])
    recs = sequence_opt_run(env, cfg["rounds"], alpha, round_cfg,
                            np.random.default_rng(trial_seed))
    return label, recs


def run_sequence_opt(cfg: dict, seed: int, jobs: int = 1):
    """Multi-round sequence optimization, risk-controlled and uncontrolled."""
    alpha, bound = cfg["alpha"], cfg["bound"]
    trials = cfg["trials"]
    seeds = _child_seeds(seed + 2, trials)
    tasks = [(cfg, cfg["env_seed"], s, alpha, "cpc") for s in seeds]
    if cfg.get("uncontrolled", True):
        # The uncontrolled arm deploys the optimized policy unconstrained,
        # which is the loop run at a vacuous target level.
        tasks += [(cfg, cfg["env_seed"], s + 1, bound, "uncontrolled")
                  for s in seeds]
    results = _pmap(_seq_one_trial, tasks, jobs)

    rows = []
    per_round = {}
    trial_counter = {}
    for label, recs in results:
        trial = trial_counter.get(label, 0)
        trial_counter[label] = trial + 1
        for rec in recs:
            rows.append({"trial": trial, "round": rec["round"], "method": label,
                         "beta_hat": rec["beta_hat"], "mean_loss": rec["mean_loss"],
                         "mean_reward": rec["mean_reward"],
                         "best_reward": rec["best_reward"],
                         "accept_rate": rec["accept_rate"]})
            if label == "cpc":
                per_round.setdefault(rec["round"], []).append(rec["mean_loss"])
    checks = []
    for rnd in sorted(per_round):
        vals = np.asarray(per_round[rnd])
        vals = vals[np.isfinite(vals)]
        se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
        checks.append(_check(
            f"round {rnd} mean infeasibility within target",
            float(vals.mean()) <= alpha + 3 * se,
            f"mean={vals.mean():.4f} target={alpha}+3*{se:.4f}"))
    return rows, checks


def run_calibrate(cfg: dict, seed: int):
    """One-shot clip-level calibration from serialized policies and samples."""
    safe = load_policy(cfg["safe"])
    optimized = load_policy(cfg["optimized"])
    with open(cfg["data"]) as fh:
        data = json.load(fh)
    cal_points = _decode_points(data.get("cal_points", []))
    cal_losses = np.asarray(data.get("cal_losses", []), dtype=np.float64)
    prop_points = _decode_points(data["prop_points"])
    calib_cfg = CalibrationConfig(
        beta_min=cfg.get("beta_min", 1e-4),
        w_max_safety=cfg.get("w_max_safety", 1.0),
    )
    beta_hat, report = calibrate_beta(
        safe=safe, optimized=optimized, past_policies=[safe],
        past_counts=[max(len(cal_losses), 1)], cal_points=cal_points,
        cal_losses=cal_losses, prop_points=prop_points,
        alpha=cfg["alpha"], bound=cfg["bound"], config=calib_cfg,
        rng=np.random.default_rng(seed),
    )
    scanned_risk = report.weighted_risk[:report.beta_index + 1]
    checks = [_check("risk stays within target at every level up to the choice",
                     bool(np.all(scanned_risk <= report.alpha + 1e-12)),
                     f"max scanned risk {scanned_risk.max():.4f}")]
    print(f"beta_hat = {beta_hat}")
    return report, checks


def run_sample(cfg: dict, seed: int):
    """One-shot constrained sampling from serialized policies."""
    safe = load_policy(cfg["safe"])
    optimized = load_policy(cfg["optimized"])
    beta = cfg["beta"]
    log_beta = math.inf if math.isinf(beta) else math.log(beta)
    rng = np.random.default_rng(seed)
    budget = cfg.get("budget", 1_000_000)
    count = cfg["count"]
    proposal = cfg.get("proposal", "auto")
    if proposal == "auto":
        proposal = "optimized" if log_beta >= 0 else "safe"
    if proposal == "safe":
        batch = rejection_sample_safe(safe, optimized, log_beta, rng,
                                      budget=budget, max_accepts=count)
    elif proposal == "optimized":
        batch = rejection_sample_optimized(safe, optimized, log_beta, rng,
                                           budget=budget, max_accepts=count)
    elif proposal == "mixture":
        w = cfg.get("mixture_weight", 0.5)
        probes = list(safe.sample_batch(rng, 256)) + list(
            optimized.sample_batch(rng, 256))
        envelope = estimate_envelope(safe, optimized, log_beta, w, probes)
        batch = rejection_sample_mixture(safe, optimized, log_beta, w, envelope,
                                         rng, budget=budget, max_accepts=count)
    else:
        raise ValueError(f"unknown proposal kind: {proposal}")
    checks = [_check("requested number of samples accepted",
                     batch.accepted >= count,
                     f"{batch.accepted} of {count} within budget {budget}")]
    return batch, checks


# ---------------------------------------------------------------------------
# plumbing


def _check(name: str, passed: bool, detail: str = "") -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _child_seeds(seed: int, n: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def _pmap(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


def _decode_points(payload):
    arr = np.asarray(payload)
    if arr.dtype.kind in "if" and arr.ndim in (1, 2):
        return arr
    return list(payload)


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        return
    fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def _write_manifest(out_dir: Path, command: str, cfg: dict, seed: int,
                    jobs: int, duration: float) -> None:
    manifest = {
        "command": command,
        "config": _jsonable(cfg),
        "seed": seed,
        "jobs": jobs,
        "duration_s": duration,
        "versions": {
            "riskclip": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "kernel_backend": kernel_backend,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _finish(out_dir: Path, checks: list[dict]) -> int:
    for chk in checks:
        status = "PASS" if chk["passed"] else "FAIL"
        print(f"[{status}] {chk['name']}" + (f" ({chk['detail']})" if chk["detail"] else ""))
    failed = [c for c in checks if not c["passed"]]
    if failed:
        with open(out_dir / "failure_report.json", "w") as fh:
            json.dump({"failed_checks": failed}, fh, indent=2)
        return 1
    return 0


def _resolve_config(defaults: dict, file_cfg: dict, command: str,
                    overrides: dict) -> dict:
    cfg = dict(defaults)
    section = file_cfg.get(command, file_cfg)
    for key in cfg:
        if isinstance(section, dict) and key in section:
            cfg[key] = section[key]
    for key, value in overrides.items():
        if value is not None:
            cfg[key] = value
    return cfg


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return data or {}


def _make_out_dir(base: str | None, command: str) -> Path:
    root = Path(base) if base else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    out = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--bound", type=float, default=None)
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", type=str, default=None)
    parser.add_argument("--config", type=str, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="riskclip",
        description="Risk-controlled hyperparameter and policy calibration runs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gcrc-synthetic", help="risk-vs-target sweep on synthetic losses")
    _add_common(p)
    p.add_argument("--n-cal", type=int, default=None)
    p.add_argument("--grid-size", type=int, default=None)

    p = sub.add_parser("counterexample", help="exact adversarial-family risk")
    _add_common(p)

    p = sub.add_parser("fdr", help="claim-filtering rate-control experiment")
    _add_common(p)
    p.add_argument("--claims", type=str, default=None, help="claims JSON path")
    p.add_argument("--synthetic", action="store_true",
                   help="force the synthetic claims generator")
    p.add_argument("--n-records", type=int, default=None)

    p = sub.add_parser("active-learning", help="constrained acquisition experiment")
    _add_common(p)
    p.add_argument("--dataset", type=str, default=None, help="numeric CSV, last column target")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--n-initial", type=int, default=None)

    p = sub.add_parser("sequence-opt", help="constrained sequence optimization")
    _add_common(p)
    p.add_argument("--rounds", type=int, default=None)
    p.add_argument("--vocab", type=int, default=None)
    p.add_argument("--length", type=int, default=None)

    p = sub.add_parser("calibrate", help="one-shot clip calibration from files")
    _add_common(p)
    p.add_argument("--safe", type=str, required=True)
    p.add_argument("--optimized", type=str, required=True)
    p.add_argument("--data", type=str, required=True,
                   help="JSON with cal_points, cal_losses, prop_points")

    p = sub.add_parser("sample", help="one-shot constrained sampling")
    _add_common(p)
    p.add_argument("--safe", type=str, required=True)
    p.add_argument("--optimized", type=str, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--proposal", type=str, default="auto",
                   choices=["auto", "safe", "optimized", "mixture"])
    p.add_argument("--mixture-weight", type=float, default=None)
    p.add_argument("--budget", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    file_cfg = _load_config_file(args.config)
    out_dir = _make_out_dir(args.out, args.command)
    t0 = time.time()

    if args.command == "gcrc-synthetic":
        overrides = {"trials": args.trials, "n_cal": args.n_cal,
                     "grid_size": args.grid_size, "bound": args.bound}
        if args.alpha is not None:
            overrides["alphas"] = [args.alpha]
        cfg = _resolve_config(GCRC_DEFAULTS, file_cfg, "gcrc-synthetic", overrides)
        rows, checks = run_gcrc_synthetic(cfg, args.seed, args.jobs)
        _write_csv(out_dir / "gcrc_synthetic.csv", rows)
    elif args.command == "counterexample":
        overrides = {}
        if args.alpha is not None:
            overrides["alphas"] = [args.alpha]
        cfg = _resolve_config({"alphas": [0.1, 0.4, 0.9]}, file_cfg,
                              "counterexample", overrides)
        rows, checks = run_counterexample(cfg)
        with open(out_dir / "counterexample.json", "w") as fh:
            json.dump(_jsonable(rows), fh, indent=2)
    elif args.command == "fdr":
        overrides = {"trials": args.trials, "n_records": args.n_records,
                     "claims": None if args.synthetic else args.claims}
        if args.alpha is not None:
            overrides["alphas"] = [args.alpha]
        cfg = _resolve_config(FDR_DEFAULTS, file_cfg, "fdr", overrides)
        rows, checks = run_fdr(cfg, args.seed, args.jobs)
        _write_csv(out_dir / "fdr.csv", rows)
    elif args.command == "active-learning":
        overrides = {"alpha": args.alpha, "trials": args.trials,
                     "dataset": args.dataset, "iterations": args.iterations,
                     "n_initial": args.n_initial}
        cfg = _resolve_config(AL_DEFAULTS, file_cfg, "active-learning", overrides)
        rows, checks = run_active_learning(cfg, args.seed, args.jobs)
        _write_csv(out_dir / "active_learning.csv", rows)
    elif args.command == "sequence-opt":
        overrides = {"alpha": args.alpha, "bound": args.bound,
                     "trials": args.trials, "rounds": args.rounds,
                     "vocab": args.vocab, "length": args.length}
        cfg = _resolve_config(SEQ_DEFAULTS, file_cfg, "sequence-opt", overrides)
        rows, checks = run_sequence_opt(cfg, args.seed, args.jobs)
        _write_csv(out_dir / "sequence_opt.csv", rows)
    elif args.command == "calibrate":
        cfg = _resolve_config({"alpha": 0.1, "bound": 1.0}, file_cfg, "calibrate",
                              {"alpha": args.alpha, "bound": args.bound})
        cfg.update({"safe": args.safe, "optimized": args.optimized,
                    "data": args.data})
        report, checks = run_calibrate(cfg, args.seed)
        with open(out_dir / "calibration.json", "w") as fh:
            fh.write(report.to_json())
        with open(out_dir / "calibration.csv", "w") as fh:
            fh.write(report.to_csv())
    elif args.command == "sample":
        cfg = {"safe": args.safe, "optimized": args.optimized, "beta": args.beta,
               "count": args.count, "proposal": args.proposal}
        if args.mixture_weight is not None:
            cfg["mixture_weight"] = args.mixture_weight
        if args.budget is not None:
            cfg["budget"] = args.budget
        batch, checks = run_sample(cfg, args.seed)
        with open(out_dir / "samples.json", "w") as fh:
            json.dump(_jsonable({"samples": list(batch.points)}), fh)
        with open(out_dir / "diagnostics.json", "w") as fh:
            fh.write(batch.to_json())
    else:  # pragma: no cover - argparse enforces choices
        raise SystemExit(2)

    cfg_for_manifest = cfg if isinstance(cfg, dict) else {}
    _write_manifest(out_dir, args.command, cfg_for_manifest, args.seed,
                    args.jobs, time.time() - t0)
    code = _finish(out_dir, checks)
    print(f"results written to {out_dir}")
    return code


if __name__ == "__main__":
    sys.exit(main())
