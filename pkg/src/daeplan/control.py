"""Closed-loop MPC and open-loop imagination-vs-reality diagnostics."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import envs
from .buffer import Episode
from .errors import PlannerRejected
from .models import unroll
from .planning import CemConfig, GradPlanConfig, ObjectiveSpec, Plan, plan_for, trajectory_windows, warm_start_shift

log = logging.getLogger(__name__)


@dataclass
class MpcConfig:
    planner: str = "cem"  # cem | adam | cem-then-adam
    horizon: int = 25
    alpha: float = 0.0
    warm_start: str = "shift"  # shift | cold
    shift_fill: str = "zeros"
    exploration_std: float = 0.0
    stop_gradient: bool = False
    gap_every: int = 0  # run an open-loop gap probe every N steps; 0 disables
    cem: CemConfig = field(default_factory=CemConfig)
    grad: GradPlanConfig = field(default_factory=GradPlanConfig)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.exploration_std < 0:
            raise ValueError("exploration_std must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.planner not in ("cem", "adam", "cem-then-adam"):
            raise ValueError(f"unknown planner {self.planner!r}")
        if self.warm_start not in ("shift", "cold"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")


@dataclass
class GapReport:
    imagined: np.ndarray  # per-step model rewards, length H + 1
    realized: np.ndarray  # per-step true rewards, length H + 1
    penalties: np.ndarray  # penalty of the window starting at each step (0 where none fits)
    diverged: bool = False

    @property
    def imagined_return(self):
        return float(np.sum(self.imagined))

    @property
    def realized_return(self):
        return float(np.sum(self.realized))

    @property
    def gap(self):
        return self.imagined_return - self.realized_return


def objective_for(env, model, regularizer=None, alpha=0.0, stop_gradient=False):
    return ObjectiveSpec(
        model, lambda o, a: env.reward_fn(o, a, env.params), regularizer, alpha, stop_gradient
    )


def _window_penalties(regularizer, S, A, K):
    out = np.zeros(K)
    if regularizer is None:
        return out
    X = trajectory_windows(S, A, regularizer.window)
    if X is not None:
        p = np.asarray(regularizer.penalty(X))
        out[: len(p)] = p
    return out


def open_loop_eval(env, model, plan, s0, regularizer=None):
    """Roll ``plan`` through the model and through the true environment from ``s0``."""
    acts = plan.actions if isinstance(plan, Plan) else np.asarray(plan, dtype=np.float64)
    K = len(acts)
    s0 = np.asarray(s0, dtype=np.float64)
    with np.errstate(all="ignore"):
        S_model = np.stack(unroll(model, s0, acts, check=False))
        real = [s0]
        for k in range(K - 1):
            real.append(envs.step(env, real[-1], acts[k]))
        S_real = np.stack(real)
        imagined = np.asarray(envs.reward(env, S_model, acts), dtype=np.float64)
        realized = np.asarray(envs.reward(env, S_real, acts), dtype=np.float64)
        penalties = _window_penalties(regularizer, S_model, acts, K)
    diverged = not (np.all(np.isfinite(S_model)) and np.all(np.isfinite(S_real)))
    return GapReport(imagined, realized, penalties, diverged)


def _cold_plan(env, horizon):
    return Plan.midpoint(horizon, env.action_low, env.action_high)


def mpc_episode(env, model, cfg, seed, regularizer=None, s0=None):
    """Run one closed-loop episode, re-planning at every step.

    Planner rejection triggers one cold-start retry, then a zero (clipped)
    action.  A non-finite state truncates the episode with ``diverged`` set.
    ``episode.info`` collects planner fallbacks and gap-probe diagnostics.
    """
    rng = np.random.default_rng([seed, 11])
    s = envs.initial_state(env, rng) if s0 is None else np.asarray(s0, dtype=np.float64)
    spec = objective_for(env, model, regularizer, cfg.alpha, cfg.stop_gradient)
    obs, acts, rews = [s], [], []
    prev = None
    info = {"rejections": 0, "fallbacks": 0, "gaps": [], "imagined": [], "penalties": []}
    diverged = False
    for t in range(env.episode_length):
        step_seed = [seed, 13, t]
        if cfg.warm_start == "shift" and prev is not None:
            init = warm_start_shift(prev, cfg.shift_fill, rng)
        else:
            init = _cold_plan(env, cfg.horizon)
        try:
            plan = plan_for(spec, s, init, cfg.planner, cfg.cem, cfg.grad, step_seed)
        except PlannerRejected as exc:
            info["rejections"] += 1
            log.info("step %d: planner rejected (%s); retrying from a cold start", t, exc)
            try:
                plan = plan_for(spec, s, _cold_plan(env, cfg.horizon), cfg.planner, cfg.cem, cfg.grad, step_seed + [1])
            except PlannerRejected:
                info["fallbacks"] += 1
                log.warning("step %d: planner rejected twice; applying a zero action", t)
                plan = Plan(np.zeros((cfg.horizon + 1, env.action_dim)), env.action_low, env.action_high).clipped()
        prev = plan
        if cfg.gap_every and t % cfg.gap_every == 0:
            rep = open_loop_eval(env, model, plan, s, regularizer)
            info["gaps"].append(rep.gap)
            info["imagined"].append(rep.imagined_return)
            if regularizer is not None:
                info["penalties"].append(float(np.mean(rep.penalties)))
        a = plan.actions[0]
        if cfg.exploration_std > 0:
            a = a + rng.normal(0.0, cfg.exploration_std, size=a.shape)
        a = env.clip_action(a)
        r = float(envs.reward(env, s, a))
        s_next = envs.step(env, s, a)
        acts.append(a)
        rews.append(r)
        obs.append(s_next)
        if envs.is_diverged(s_next):
            diverged = True
            log.warning("environment diverged at step %d; truncating", t)
            break
        s = s_next
    truncated = len(acts) < env.episode_length
    return Episode(np.array(obs), np.array(acts).reshape(-1, env.action_dim), np.array(rews), truncated, diverged, info)
