"""Run orchestration and persistence.

Owns everything that touches disk: run directories, the manifest, CSV
schemas, checkpoints, and the report generators behind the CLI
subcommands.  Every CSV has a fixed documented header and all floats are
formatted with a deterministic ``%.12g`` so reruns with the same config
and seeds produce byte-identical files.
"""

from __future__ import annotations

import datetime
import json
import os
import time

import numpy as np

from . import __version__
from .approx import AttentionHeads, net_from_dict, net_to_dict
from .central import ActionSchedule, CentralAgent
from .config import ExperimentConfig, config_hash, flat_dict
from .envs import SpreadEnv
from .errors import DivergenceError, ValidationError
from .marl import build_components, evaluate, train
from .spectral import HistoryWindow, build_window_bank, decompose
from .theory import (LearnedControllerConfig, OUParams, regret_experiment,
                     theta_schedule)

METRICS_HEADER = ["episode", "mean_return", "central_entropy", "clip_fraction",
                  "value_loss", "alignment_sign"]
EVAL_HEADER = ["episode", "eval_mean_return", "eval_std_return", "length_entropy"]
DECISIONS_HEADER = ["episode", "step", "t", "action_index", "context_length",
                    "value_estimate"]
THEOREM_HEADER = ["t", "policy", "per_step_loss", "cumulative_loss"]
SPECTRAL_HEADER = ["band", "step", "feature", "value"]


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.12g}"
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            if isinstance(row, dict):
                fh.write(",".join(_fmt(row[col]) for col in header) + "\n")
            else:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    return header, [dict(zip(header, ln.split(","))) for ln in lines[1:]]


def save_checkpoint(path, result, config: ExperimentConfig) -> None:
    """JSON checkpoint bundling all nets, attention projections, and config hash."""
    agent = result.central_agent
    payload = {
        "version": __version__,
        "config_hash": config_hash(config),
        "seed": result.seed,
        "environment": config.environment,
        "episodes_trained": result.episodes_trained,
        "baseline_return": result.baseline_return,
        "central": {"M": agent.schedule.M, "k0": agent.schedule.k0,
                    "threshold": agent.schedule.threshold, "l_max": agent.l_max},
        "policy": net_to_dict(result.policy),
        "critic": net_to_dict(result.critic),
        "central_policy": net_to_dict(agent.policy),
        "central_critic": net_to_dict(agent.critic),
        "attention": {
            "head_count": result.attention.head_count,
            "d_k": result.attention.d_k,
            "seed": result.attention.seed,
            "w_q": [w.tolist() for w in result.attention.w_q],
            "w_k": [w.tolist() for w in result.attention.w_k],
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, config: ExperimentConfig):
    """Rebuild (policy, critic, central_agent, attention) from a checkpoint."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ValidationError(f"checkpoint not found: {path}") from exc
    policy = net_from_dict(data["policy"])
    critic = net_from_dict(data["critic"])
    central_meta = data["central"]
    schedule = ActionSchedule(M=int(central_meta["M"]), k0=int(central_meta["k0"]),
                              threshold=int(central_meta["threshold"]))
    central_policy = net_from_dict(data["central_policy"])
    agent = CentralAgent(schedule, feature_dim=central_policy.layer_sizes[0],
                         hidden_sizes=central_policy.layer_sizes[1:-1],
                         seed=0, lr=config.central.lr, l_max=int(central_meta["l_max"]))
    agent.policy = central_policy
    agent.critic = net_from_dict(data["central_critic"])
    att = data["attention"]
    attention = AttentionHeads(
        head_count=int(att["head_count"]), d_k=int(att["d_k"]),
        w_q=[np.asarray(w, dtype=np.float64) for w in att["w_q"]],
        w_k=[np.asarray(w, dtype=np.float64) for w in att["w_k"]],
        seed=int(att["seed"]))
    return policy, critic, agent, attention, data


def run_dir(config: ExperimentConfig) -> str:
    return os.path.join(config.out_dir, config.run_tag)


def seed_dir(config: ExperimentConfig, seed: int) -> str:
    return os.path.join(run_dir(config), f"seed_{seed}")


def train_run(config: ExperimentConfig, force: bool = False) -> dict:
    """Train every seed in the config, persisting one directory per seed.

    Refuses to overwrite an existing run with the same config hash unless
    forced.  Returns the manifest dict (also written to manifest.json).
    On divergence the last-good checkpoint is persisted before the error
    propagates.
    """
    config.validate()
    directory = run_dir(config)
    manifest_path = os.path.join(directory, "manifest.json")
    digest = config_hash(config)
    if os.path.exists(manifest_path) and not force:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            existing = json.load(fh)
        if existing.get("config_hash") == digest:
            raise ValidationError(
                f"run already exists at {directory} with the same config hash; "
                "pass --force to overwrite")
    os.makedirs(directory, exist_ok=True)
    started = time.time()
    outputs = {}
    diverged_error = None
    for seed in config.seeds:
        sdir = seed_dir(config, seed)
        os.makedirs(sdir, exist_ok=True)
        result = train(config, seed)
        write_csv(os.path.join(sdir, "metrics.csv"), METRICS_HEADER, result.metrics_rows)
        write_csv(os.path.join(sdir, "eval.csv"), EVAL_HEADER, result.eval_rows)
        write_csv(os.path.join(sdir, "decisions.csv"), DECISIONS_HEADER,
                  result.decision_rows)
        save_checkpoint(os.path.join(sdir, "checkpoint.json"), result, config)
        improvement = _improvement(result.baseline_return, result.final_eval_return)
        summary = {
            "seed": seed,
            "baseline_return": result.baseline_return,
            "final_eval_return": result.final_eval_return,
            "improvement": improvement,
            "episodes_trained": result.episodes_trained,
            "diverged": result.diverged,
            "error": result.error,
        }
        with open(os.path.join(sdir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1)
        outputs[str(seed)] = sdir
        if result.diverged and diverged_error is None:
            diverged_error = result.error or "training diverged"
    manifest = {
        "config_hash": digest,
        "version": __version__,
        "seeds": list(config.seeds),
        "outputs": outputs,
        "config": flat_dict(config),
        "started": datetime.datetime.fromtimestamp(started).isoformat(),
        "finished": datetime.datetime.now().isoformat(),
        "wall_clock_s": time.time() - started,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
    if diverged_error is not None:
        raise DivergenceError(diverged_error)
    return manifest


def _improvement(baseline: float, final: float) -> float:
    scale = max(abs(baseline), 1e-9)
    return (final - baseline) / scale


def eval_run(config: ExperimentConfig, checkpoint_path: str, episodes: int,
             seed: int, out_path: str | None = None) -> dict:
    """Evaluate a checkpoint over greedy episodes; optionally dump the decision log."""
    policy, critic, agent, attention, _ = load_checkpoint(checkpoint_path, config)
    env = SpreadEnv(config.trainer.episode_len)
    summary, rows = evaluate(env, policy, critic, agent, attention, config,
                             episodes, seed_base=seed * 1_000_003 + 750_000_000)
    if out_path:
        write_csv(out_path, DECISIONS_HEADER, rows)
    return summary


def compare_fixed(config: ExperimentConfig, lengths, window: float) -> tuple:
    """Post-convergence comparison table: adaptive vs fixed context lengths.

    For each method and seed, averages the evaluation-return series over
    the trailing ``window`` fraction of recorded evaluation points.
    Expects each method to live at <out_dir>/<tag>/seed_<s>/ with its
    checkpoint and eval series; a missing run fails naming the gap.
    Returns (header, rows) and writes compare_fixed.csv under out_dir.
    """
    if not 0 < window <= 1:
        raise ValidationError(f"window must be a fraction in (0, 1], got {window}")
    tags = ["adaptive"] + [f"fixed_{int(L)}" for L in lengths]
    header = ["seed"] + tags
    rows = []
    for seed in config.seeds:
        row = {"seed": seed}
        for tag in tags:
            sdir = os.path.join(config.out_dir, tag, f"seed_{seed}")
            ckpt = os.path.join(sdir, "checkpoint.json")
            eval_path = os.path.join(sdir, "eval.csv")
            if not os.path.exists(ckpt):
                raise ValidationError(f"missing checkpoint for method {tag!r}, "
                                      f"seed {seed}: {ckpt}")
            if not os.path.exists(eval_path):
                raise ValidationError(f"missing eval series for method {tag!r}, "
                                      f"seed {seed}: {eval_path}")
            _, eval_rows = read_csv(eval_path)
            values = np.array([float(r["eval_mean_return"]) for r in eval_rows])
            n_tail = int(np.floor(len(values) * window))
            if n_tail < 1:
                raise ValidationError(
                    f"window {window} covers zero evaluation points for {tag!r}")
            tail = values[-n_tail:]
            row[tag] = f"{tail.mean():.6g}±{tail.std():.6g}"
        rows.append(row)
    out_path = os.path.join(config.out_dir, "compare_fixed.csv")
    os.makedirs(config.out_dir, exist_ok=True)
    write_csv(out_path, header, rows)
    return header, rows


def theorem_check(config: ExperimentConfig, out_dir: str, seeds=None) -> dict:
    """Fixed-vs-adaptive cumulative information loss on the drift benchmark.

    Writes per-seed CSV curves plus one JSON summary with the fitted
    growth models and the cumulative-loss gap at the horizon (adaptive
    lead over the best fixed length).
    """
    th = config.theory
    seeds = list(seeds) if seeds is not None else list(config.seeds)
    params = OUParams(theta=th.theta_nominal, eta=th.eta, sigma_eps=th.sigma_eps,
                      dt=th.dt)
    if th.regime_switching:
        schedule = theta_schedule(th.T, th.theta_slow, th.theta_fast, th.switch_period)
    else:
        schedule = np.full(th.T, th.theta_nominal)
    controller = LearnedControllerConfig(
        feature_window=th.feature_window, feature_k0=th.feature_k0,
        hidden_sizes=th.controller_hidden, chunk=th.controller_chunk,
        lr=th.controller_lr, gamma=th.controller_gamma,
        entropy_coef=th.controller_entropy)
    os.makedirs(out_dir, exist_ok=True)

    oracle = regret_experiment(params, th.T, th.fixed_lengths, adaptive="oracle",
                               seed=seeds[0], theta_seq=schedule)
    summary = {"fits": {}, "per_seed": {}, "gap_at_T": None,
               "horizon": th.T, "fixed_lengths": list(th.fixed_lengths)}
    for key, fit in oracle.fits.items():
        summary["fits"][key] = fit
    gaps = []
    for seed in seeds:
        learned = regret_experiment(params, th.T, th.fixed_lengths, adaptive="learned",
                                    seed=seed, theta_seq=schedule,
                                    controller=controller)
        rows = []
        for key in sorted(oracle.losses) + ["adaptive_learned"]:
            src = oracle if key != "adaptive_learned" else learned
            cum = src.cumulative[key]
            per = src.losses[key]
            for i, t in enumerate(src.steps):
                rows.append((int(t), key, per[i], cum[i]))
        write_csv(os.path.join(out_dir, f"theorem_seed_{seed}.csv"),
                  THEOREM_HEADER, rows)
        summary["per_seed"][str(seed)] = {
            "gap_at_T": learned.gap_at_horizon,
            "learned_cumulative": float(learned.cumulative["adaptive_learned"][-1]),
            "best_fixed_cumulative": float(min(
                learned.cumulative[f"fixed_{L}"][-1] for L in th.fixed_lengths)),
            "tracking_beta": learned.tracking_beta,
            "learned_fit": learned.fits["adaptive_learned"],
        }
        gaps.append(learned.gap_at_horizon)
    summary["fits"]["adaptive_learned"] = learned.fits["adaptive_learned"]
    summary["gap_at_T"] = float(np.mean(gaps))
    if oracle.convexity is not None and oracle.convexity.applicable:
        summary["convexity_k"] = oracle.convexity.k_hat
        summary["convexity_r2"] = oracle.convexity.r2
    with open(os.path.join(out_dir, "theorem_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def spectral_demo(csv_path: str, m: int, mode: str, out_dir: str) -> dict:
    """Decompose a CSV of per-step feature columns against a window bank.

    Writes components as band,step,feature,value rows plus a JSON summary
    {t, m, mode, residual_indices, reconstruction_error}.
    """
    try:
        raw = np.genfromtxt(csv_path, delimiter=",", dtype=np.float64)
    except OSError as exc:
        raise ValidationError(f"cannot read input CSV: {csv_path}") from exc
    if raw.ndim == 1:
        raw = raw[:, None]
    if np.isnan(raw[0]).any():  # header row present
        raw = raw[1:]
    if raw.size == 0 or np.isnan(raw).any():
        raise ValidationError("input CSV must be purely numeric (one column per feature)")
    history = HistoryWindow(raw)
    bank = build_window_bank(history.t, m, mode)
    decomp = decompose(history, bank)
    rows = []
    names = ["lowpass"] + [f"band_{j}" for j in range(len(decomp.band_components))]
    comps = [decomp.lowpass_component, *decomp.band_components]
    for name, comp in zip(names, comps):
        for step in range(history.t):
            for feat in range(history.d):
                rows.append((name, step, feat, comp[step, feat]))
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "decomposition.csv"), SPECTRAL_HEADER, rows)
    recon_error = float(np.abs(decomp.reconstruction() - history.steps).max())
    summary = {"t": history.t, "m": m, "mode": mode,
               "residual_indices": list(bank.residual_set),
               "reconstruction_error": recon_error}
    with open(os.path.join(out_dir, "decomposition.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
    return summary


def case_log(config: ExperimentConfig, checkpoint_path: str, episodes: int,
             seed: int, out_path: str) -> dict:
    """Emit the per-step context-length decision log for a trained checkpoint."""
    return eval_run(config, checkpoint_path, episodes, seed, out_path=out_path)
