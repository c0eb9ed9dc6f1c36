"""End-to-end model-based RL: seed with random data, then alternate model
training and MPC episodes, growing the replay buffer each time.
"""

import json
import logging
import os
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import envs, models, persist
from .buffer import Episode, ReplayBuffer, sample_batches, sample_window_batches  # noqa: F401
from .config import RunConfig
from .control import mpc_episode, objective_for, open_loop_eval
from .planning import Plan, plan_for

log = logging.getLogger(__name__)

METRIC_FIELDS = ("episode", "return", "imagined_return", "gap", "mean_dae_penalty", "model_val_nll")


def collect_random_episode(env, seed):
    """One full episode of uniform-random actions."""
    rng = np.random.default_rng([seed, 7])
    s = envs.initial_state(env, rng)
    obs, acts, rews = [s], [], []
    diverged = False
    for _ in range(env.episode_length):
        a = rng.uniform(env.action_low, env.action_high)
        rews.append(float(envs.reward(env, s, a)))
        acts.append(a)
        s = envs.step(env, s, a)
        obs.append(s)
        if envs.is_diverged(s):
            diverged = True
            break
    truncated = len(acts) < env.episode_length
    return Episode(np.array(obs), np.array(acts).reshape(-1, env.action_dim), np.array(rews), truncated, diverged)


def swingup_solved(episode, tol=0.1, last=50, length=envs.CARTPOLE_PARAMS["length"]):
    """Pole tip within ``tol * length`` of the target for the final ``last`` states."""
    obs = episode.observations
    if episode.diverged or len(obs) < last:
        return False
    return bool(np.all(envs.cartpole_tip_distance(obs[-last:], length) <= tol * length))


class RunError(RuntimeError):
    """A stage of :func:`run_training` failed; partial artifacts were persisted."""

    def __init__(self, stage, episode, cause):
        super().__init__(f"stage {stage!r} failed at episode {episode}: {cause}")
        self.stage = stage
        self.episode = episode


@dataclass
class RunResult:
    returns: list
    metrics: list
    buffer: ReplayBuffer
    dynamics: Optional[models.DynamicsModel] = None
    regularizer: object = None
    episodes: list = field(default_factory=list)


def _mean_or_none(xs):
    return float(np.mean(xs)) if len(xs) else None


def _write_jsonl(path, rows):
    tmp = path + ".tmp"
    with open(tmp, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=False) + "\n")
    os.replace(tmp, path)


def persist_run(out_dir, cfg, seed, result, timings):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "run.json"), "w") as f:
        json.dump({"seed": seed, "config": cfg.to_dict()}, f, indent=2, sort_keys=True)
    _write_jsonl(os.path.join(out_dir, "metrics.jsonl"), result.metrics)
    _write_jsonl(os.path.join(out_dir, "timing.jsonl"), timings)
    result.buffer.dump_jsonl(os.path.join(out_dir, "buffer.jsonl"))
    if result.dynamics is not None:
        persist.save(result.dynamics, os.path.join(out_dir, "dynamics.bin"))
    if isinstance(result.regularizer, models.Denoiser):
        persist.save(result.regularizer, os.path.join(out_dir, "dae.bin"))


def _train_regularizer(cfg, buffer, seed):
    if cfg.regularizer == "dae":
        d = cfg.dae
        return models.train_dae(buffer, d.sigma, d.window, d.epochs, d.batch_size, d.lr, d.hidden, seed)
    if cfg.regularizer == "gaussian":
        return models.fit_gaussian(buffer, cfg.dae.window)
    return None


def run_training(cfg: RunConfig, seed=0, out_dir=None, callback=None):
    """Run the full learning loop for one seed.

    Returns a :class:`RunResult` whose ``returns`` is the per-episode learning
    curve (random seeding episodes first).  With ``out_dir`` the config echo,
    metrics, buffer and checkpoints are written there, also when a stage
    fails.  ``callback(index, episode, metrics_row)`` may return True to stop
    early.
    """
    env = envs.make(cfg.env_id)
    buffer = ReplayBuffer(env.obs_dim, env.action_dim)
    result = RunResult([], [], buffer)
    timings = []

    def finish():
        if out_dir is not None:
            persist_run(out_dir, cfg, seed, result, timings)
        return result

    for i in range(cfg.random_episodes):
        t0 = time.perf_counter()
        ep = collect_random_episode(env, [seed, i])
        buffer.add(ep)
        result.episodes.append(ep)
        result.returns.append(ep.total_return)
        row = dict.fromkeys(METRIC_FIELDS)
        row.update(episode=i, **{"return": ep.total_return})
        result.metrics.append(row)
        timings.append({"episode": i, "wall_time_s": time.perf_counter() - t0})
        if callback is not None and callback(i, ep, row):
            return finish()

    for i in range(cfg.random_episodes, cfg.episodes):
        t0 = time.perf_counter()
        stage = "train_dynamics"
        try:
            init = result.dynamics if cfg.model.warm_start else None
            m = cfg.model
            result.dynamics = models.train_dynamics(buffer, m.epochs, m.batch_size, m.lr, m.hidden, seed=[seed, i], init=init)
            stage = "train_regularizer"
            result.regularizer = _train_regularizer(cfg, buffer, [seed, i])
            stage = "mpc_episode"
            ep = mpc_episode(env, result.dynamics, cfg.mpc, [seed, i], result.regularizer)
        except Exception as exc:
            log.error("episode %d: %s failed: %s", i, stage, exc)
            finish()
            raise RunError(stage, i, exc) from exc
        buffer.add(ep)
        result.episodes.append(ep)
        result.returns.append(ep.total_return)
        _, (Sv, Av, S2v) = buffer.split(0.1)
        info = ep.info
        row = {
            "episode": i,
            "return": ep.total_return,
            "imagined_return": _mean_or_none(info.get("imagined", [])),
            "gap": _mean_or_none(info.get("gaps", [])),
            "mean_dae_penalty": _mean_or_none(info.get("penalties", [])),
            "model_val_nll": models.validation_nll(result.dynamics, Sv, Av, S2v),
        }
        result.metrics.append(row)
        timings.append({"episode": i, "wall_time_s": time.perf_counter() - t0})
        log.info("episode %d: return %.3f", i, ep.total_return)
        if callback is not None and callback(i, ep, row):
            break
    return finish()


# ------------------------------------------------------------- gap study

GAP_FIELDS = ("cell", "seed", "imagined", "realized", "gap")


def collect_random_data(env, n_episodes, seed):
    buffer = ReplayBuffer(env.obs_dim, env.action_dim)
    for i in range(n_episodes):
        buffer.add(collect_random_episode(env, [seed, i]))
    return buffer


def fit_models(cfg, buffer, seed):
    """Dynamics model plus the configured regularizer (a DAE when none is configured)."""
    m = cfg.model
    dyn = models.train_dynamics(buffer, m.epochs, m.batch_size, m.lr, m.hidden, seed=seed)
    reg_cfg = cfg if cfg.regularizer != "none" else replace(cfg, regularizer="dae")
    return dyn, _train_regularizer(reg_cfg, buffer, seed)


def gap_cells(cfg, alphas, optimizers=("cem", "adam")):
    """``(cell name, optimizer, alpha)``; the alpha is appended to the name only when sweeping."""
    name = "gaussian" if cfg.regularizer == "gaussian" else "dae"
    alphas = [float(a) for a in np.atleast_1d(alphas)]
    cells = []
    for opt in optimizers:
        cells.append((opt, opt, 0.0))
        for a in alphas:
            cells.append((f"{opt}+{name}" + (f"@{a:g}" if len(alphas) > 1 else ""), opt, a))
    return cells


def gap_study(cfg, n_episodes, seeds, alphas, optimizers=("cem", "adam"), oracle=False, starts=1):
    """Open-loop imagination-vs-reality gap for each optimizer with and without regularization.

    Per seed a model is trained on ``n_episodes`` random episodes, then every
    cell plans once from each of ``starts`` initial states and the plan is
    executed open loop in the true environment.  Cells of one seed share the
    start states and planner seeds, so the regularized and plain cells differ
    only in the penalty term.  With ``oracle`` the true dynamics serve as the
    model.  Returns one row per (cell, seed) with start-averaged returns.
    """
    env = envs.make(cfg.env_id)
    rows = []
    for seed in seeds:
        if oracle:
            dyn, reg = models.TrueDynamics(env), None
        else:
            dyn, reg = fit_models(cfg, collect_random_data(env, n_episodes, seed), [seed, 0])
        rng = np.random.default_rng([seed, 17])
        s0s = [envs.initial_state(env, rng) for _ in range(starts)]
        for cell, opt, a in gap_cells(cfg, alphas, optimizers):
            spec = objective_for(env, dyn, reg, a, cfg.mpc.stop_gradient)
            reps = []
            for j, s0 in enumerate(s0s):
                init = Plan.midpoint(cfg.mpc.horizon, env.action_low, env.action_high)
                plan = plan_for(spec, s0, init, opt, cfg.mpc.cem, cfg.mpc.grad, [seed, 19, j])
                reps.append(open_loop_eval(env, dyn, plan, s0))
            imagined = float(np.mean([r.imagined_return for r in reps]))
            realized = float(np.mean([r.realized_return for r in reps]))
            rows.append(dict(cell=cell, seed=seed, imagined=imagined, realized=realized, gap=imagined - realized))
    return rows
