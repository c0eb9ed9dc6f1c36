"""Trajectory optimization over a learned model.

A plan holds ``H + 1`` actions ``a_0 .. a_H``.  The model is unrolled with
``a_0 .. a_{H-1}`` to give states ``s_0 .. s_H`` and the return sums
``r(s_k, a_k)`` for ``k = 0 .. H``.  The regularized return subtracts
``alpha`` times the regularizer penalty of every complete window of ``w``
consecutive ``(s_k, a_k)`` pairs.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Optional

import numpy as np

from . import autodiff as ad
from .errors import NonFiniteError, PlannerRejected
from .models import actions_of, unroll

log = logging.getLogger(__name__)


@dataclass
class Plan:
    actions: np.ndarray  # (H + 1, action_dim)
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.actions = np.array(self.actions, dtype=np.float64)
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        self.low = np.broadcast_to(np.asarray(self.low, dtype=np.float64), self.actions.shape[-1:]).copy()
        self.high = np.broadcast_to(np.asarray(self.high, dtype=np.float64), self.actions.shape[-1:]).copy()

    @property
    def horizon(self):
        return len(self.actions) - 1

    def clipped(self):
        return Plan(np.clip(self.actions, self.low, self.high), self.low, self.high)

    def within_bounds(self):
        return bool(np.all(self.actions >= self.low) and np.all(self.actions <= self.high))

    @classmethod
    def constant(cls, horizon, value, low, high):
        low = np.atleast_1d(np.asarray(low, dtype=np.float64))
        return cls(np.broadcast_to(value, (horizon + 1, low.size)), low, high)

    @classmethod
    def midpoint(cls, horizon, low, high):
        return cls.constant(horizon, (np.asarray(low) + np.asarray(high)) / 2.0, low, high)


@dataclass
class ObjectiveSpec:
    dynamics: Any  # anything with predict_mean(s, a), state_dim, action_dim
    reward: Callable  # generic r(obs, action) over trailing axes
    regularizer: Any = None  # None, models.Denoiser or models.GaussianRegularizer
    alpha: float = 0.0
    stop_gradient: bool = False

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")

    @property
    def window(self):
        return getattr(self.regularizer, "window", 1)

    @property
    def regularized(self):
        return self.regularizer is not None and self.alpha != 0

    def plain(self):
        return replace(self, regularizer=None, alpha=0.0)


@dataclass
class CemConfig:
    population: int = 400
    elites: int = 40
    iterations: int = 5
    init_std: Optional[np.ndarray] = None  # default: a quarter of the bound range
    std_floor: float = 1e-3
    smoothing: float = 0.1

    def __post_init__(self):
        if self.elites > self.population or self.elites < 1:
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


@dataclass
class GradPlanConfig:
    iterations: int = 10
    lr: float = 0.1
    restarts: Optional[int] = None  # default: 1 after a CEM warm start, else 4
    warm_start: str = "cold"  # cold | shift | cem-init
    cem_init_iters: int = 0
    cem: CemConfig = field(default_factory=CemConfig)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.warm_start not in ("cold", "shift", "cem-init"):
            raise ValueError(f"unknown warm start {self.warm_start!r}")
        if self.restarts is not None and self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def n_restarts(self):
        if self.restarts is not None:
            return self.restarts
        return 1 if self.warm_start == "cem-init" else 4


# ---------------------------------------------------------------- objectives


def _stack(states):
    """List of ``(..., d)`` states -> ``(..., K, d)``."""
    if not any(isinstance(s, ad.Node) for s in states):
        return np.stack(states, axis=-2)
    parts = [ad.reshape(s, np.shape(ad.value_of(s))[:-1] + (1, np.shape(ad.value_of(s))[-1])) for s in states]
    return ad.concat(parts, axis=-2)


def trajectory_windows(S, A, w):
    """Concatenate ``w`` consecutive (s, a) pairs: ``(..., H + 2 - w, w * d)``."""
    pairs = ad.concat([S, A], axis=-1)
    K = np.shape(ad.value_of(pairs))[-2]
    n = K - w + 1
    if n <= 0:
        return None
    if w == 1:
        return pairs
    return ad.concat([pairs[..., j : j + n, :] for j in range(w)], axis=-1)


def rollout_terms(spec, s0, plan, tape=None, check=True):
    """Per-step rewards and per-window penalties of one plan (or a batch)."""
    acts = actions_of(plan)
    if tape is not None and not isinstance(acts, ad.Node):
        acts = tape.const(acts)
    states = unroll(spec.dynamics, s0, acts, tape, check)
    S = _stack(states)
    rewards = spec.reward(S, acts)
    penalties = None
    if spec.regularized:
        X = trajectory_windows(S, acts, spec.window)
        if X is not None:
            penalties = spec.regularizer.penalty(X, spec.stop_gradient)
    return S, rewards, penalties


def expected_return(spec, s0, plan, tape=None, check=True):
    """``G``: summed rewards along the mean model rollout."""
    _, rewards, _ = rollout_terms(spec.plain(), s0, plan, tape, check)
    return ad.sum(rewards, axis=-1)


def regularized_return(spec, s0, plan, tape=None, check=True):
    """``G - alpha * sum of window penalties``; identical to ``G`` when alpha is 0."""
    _, rewards, penalties = rollout_terms(spec, s0, plan, tape, check)
    G = ad.sum(rewards, axis=-1)
    if penalties is None:
        return G
    return G - ad.sum(penalties, axis=-1) * spec.alpha


def batch_objective(spec, s0):
    """Vectorized ``plans (P, H + 1, adim) -> G_reg (P,)``; divergent plans give NaN."""

    def f(acts):
        with np.errstate(all="ignore"):
            return np.asarray(regularized_return(spec, s0, acts, check=False), dtype=np.float64)

    return f


# ----------------------------------------------------------------------- CEM


def cem_optimize(objective, init, cfg, seed, history=None):
    """Cross-entropy method over the flattened plan.

    ``objective`` maps a batch of action arrays ``(P, H + 1, adim)`` to ``(P,)``
    values to maximize.  Non-finite values rank last.  Elites are chosen by a
    stable sort, so ties break by sample index and selection depends only on
    the ordering of the objective values.  If ``history`` is a list, each
    iteration's elite indices are appended to it.
    """
    rng = np.random.default_rng(seed)
    low, high = init.low, init.high
    mean = np.clip(init.actions, low, high)
    std0 = (high - low) / 4.0 if cfg.init_std is None else np.asarray(cfg.init_std, dtype=np.float64)
    std = np.broadcast_to(std0, mean.shape).copy()
    for _ in range(cfg.iterations):
        samples = mean + std * rng.standard_normal((cfg.population,) + mean.shape)
        samples = np.clip(samples, low, high)
        values = np.asarray(objective(samples), dtype=np.float64)
        finite = np.isfinite(values)
        if not finite.any():
            raise PlannerRejected("every CEM sample produced a non-finite objective")
        order = np.argsort(np.where(finite, -values, np.inf), kind="stable")
        elite_idx = order[: cfg.elites]
        if history is not None:
            history.append(elite_idx.copy())
        elites = samples[elite_idx]
        mean = cfg.smoothing * mean + (1.0 - cfg.smoothing) * elites.mean(axis=0)
        std = cfg.smoothing * std + (1.0 - cfg.smoothing) * elites.std(axis=0)
        std = np.maximum(std, cfg.std_floor)
    return Plan(np.clip(mean, low, high), low, high)


# ---------------------------------------------------------- gradient planner


def adam_optimize(spec, s0, init, cfg, seed):
    """Maximize ``G_reg`` over the action matrix with Adam and backprop-through-time.

    Restart 0 starts from ``init`` (after ``cfg.cem_init_iters`` CEM iterations
    when ``cfg.warm_start == "cem-init"``); the remaining restarts start from
    uniform samples within the bounds.  All restarts are optimized together as
    one batch.  Actions are clipped to the bounds after every step.  A restart
    whose objective or gradient turns non-finite is frozen and dropped.
    """
    if not init.within_bounds():
        raise ValueError("initial plan violates the action bounds")
    rng = np.random.default_rng(seed)
    low, high = init.low, init.high
    first = init.actions
    if cfg.warm_start == "cem-init" and cfg.cem_init_iters > 0:
        cem_cfg = replace(cfg.cem, iterations=cfg.cem_init_iters)
        first = cem_optimize(batch_objective(spec, s0), init, cem_cfg, rng.integers(2**31)).actions
    starts = [first] + [rng.uniform(low, high, size=first.shape) for _ in range(cfg.n_restarts - 1)]
    A = np.stack(starts)
    alive = np.ones(len(A), dtype=bool)
    state = ad.adam_state([A], cfg.lr)
    for _ in range(cfg.iterations):
        tape = ad.Tape()
        X = tape.var(A)
        with np.errstate(all="ignore"):
            values = regularized_return(spec, s0, X, tape, check=False)
            grad = ad.backward(tape, ad.sum(values))[X.id]
        bad = ~np.isfinite(grad).reshape(len(A), -1).all(axis=1) | ~np.isfinite(values.value)
        alive &= ~bad
        if not alive.any():
            raise PlannerRejected("gradient planner diverged on every restart")
        step = np.where(alive[:, None, None], -grad, 0.0)
        (new_A,), state = ad.adam_step([A], [step], state)
        A = np.where(alive[:, None, None], np.clip(new_A, low, high), A)
    with np.errstate(all="ignore"):
        final = np.asarray(regularized_return(spec, s0, A, check=False), dtype=np.float64)
    final = np.where(alive & np.isfinite(final), final, -np.inf)
    if not np.isfinite(final).any():
        raise PlannerRejected("gradient planner produced no finite plan")
    best = int(np.argmax(final))
    return Plan(A[best], low, high)


def warm_start_shift(previous, fill="zeros", rng=None):
    """Drop the first action, shift left, and fill the last slot."""
    acts = previous.actions
    out = np.empty_like(acts)
    out[:-1] = acts[1:]
    if fill == "zeros":
        out[-1] = np.clip(0.0, previous.low, previous.high)
    elif fill == "repeat-last":
        out[-1] = acts[-1]
    elif fill == "resample":
        rng = rng if rng is not None else np.random.default_rng()
        out[-1] = rng.uniform(previous.low, previous.high)
    else:
        raise ValueError(f"unknown fill policy {fill!r}")
    return Plan(out, previous.low, previous.high)


def plan_for(spec, s0, init, planner, cem_cfg, grad_cfg, seed):
    """Dispatch to the configured optimizer (``cem``, ``adam`` or ``cem-then-adam``)."""
    if planner == "cem":
        return cem_optimize(batch_objective(spec, s0), init, cem_cfg, seed)
    if planner == "adam":
        return adam_optimize(spec, s0, init, grad_cfg, seed)
    if planner == "cem-then-adam":
        cfg = replace(grad_cfg, warm_start="cem-init", cem_init_iters=max(grad_cfg.cem_init_iters, 1), cem=cem_cfg)
        return adam_optimize(spec, s0, init, cfg, seed)
    raise ValueError(f"unknown planner {planner!r}")


__all__ = [
    "Plan",
    "ObjectiveSpec",
    "CemConfig",
    "GradPlanConfig",
    "NonFiniteError",
    "expected_return",
    "regularized_return",
    "rollout_terms",
    "trajectory_windows",
    "batch_objective",
    "cem_optimize",
    "adam_optimize",
    "warm_start_shift",
    "plan_for",
]
