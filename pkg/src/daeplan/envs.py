"""Analytic, deterministic, fully observable control environments.

Each environment's state is its observation (``observe`` is the identity), so
a model of the environment and the environment itself act on the same
vectors.  Dynamics and rewards are written with the ``autodiff`` primitives and
therefore work on numpy arrays of any leading batch shape as well as on tape
nodes.  Batched numpy stepping dispatches to the compiled kernels when numba is
enabled.

Available ids: ``cartpole``, ``reacher2d``, ``reactor``.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _kernels
from . import autodiff as ad


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    episode_length: int
    params: np.ndarray
    dynamics: Callable  # generic (state, action, params) -> state
    reward_fn: Callable  # generic (obs, action, params) -> reward
    init_fn: Callable  # (rng, params) -> state
    kernel: Optional[Callable] = None  # compiled (states2d, actions2d, params) -> states2d

    @property
    def state_dim(self):
        return self.obs_dim

    def clip_action(self, a):
        return np.clip(a, self.action_low, self.action_high)


def step(spec, state, action):
    """Next state.  Accepts one state or a batch (leading axes), or tape nodes."""
    if isinstance(state, ad.Node) or isinstance(action, ad.Node):
        return spec.dynamics(state, action, spec.params)
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    if _kernels.NUMBA_ENABLED and spec.kernel is not None:
        lead = state.shape[:-1]
        s2 = np.ascontiguousarray(state.reshape(-1, spec.obs_dim))
        a2 = np.ascontiguousarray(np.broadcast_to(action, lead + (spec.action_dim,)).reshape(-1, spec.action_dim))
        return spec.kernel(s2, a2, spec.params).reshape(state.shape)
    return spec.dynamics(state, action, spec.params)


def observe(spec, state):
    return state


def reward(spec, obs, action, tape=None):
    """Reward ``r(o, a)``; differentiable when either argument is a tape node."""
    if tape is not None:
        if not isinstance(obs, ad.Node):
            obs = tape.const(obs)
        if not isinstance(action, ad.Node):
            action = tape.const(action)
    return spec.reward_fn(obs, action, spec.params)


def initial_state(spec, rng):
    return spec.init_fn(rng, spec.params)


def is_diverged(state):
    return not np.all(np.isfinite(state))


# ------------------------------------------------------------------- cartpole
# state/obs: (x, x_dot, sin(theta), cos(theta), theta_dot), theta = 0 upright.

CARTPOLE_PARAMS = dict(
    cart_mass=1.0, pole_mass=0.1, length=0.6, gravity=9.81, dt=0.05, force_scale=10.0, damping=0.002, substeps=10
)


def _cartpole_dynamics(s, a, p):
    M, m, ell, g, dt, fs, damp = (float(v) for v in p[:7])
    nsub = int(p[7])
    h = dt / nsub
    x, xd, sn, cs, td = (s[..., i : i + 1] for i in range(5))
    F = a[..., 0:1] * fs
    for _ in range(nsub):
        r1 = F + m * ell * (sn * (td * td))
        r2 = sn * (m * g * ell) - td * damp
        den = (m * (sn * sn) + M) * ell
        xdd = (r1 * ell - cs * r2) / den
        tdd = (r2 * (M + m) - (cs * r1) * (m * ell)) / (den * (m * ell))
        xd = xd + xdd * h
        td = td + tdd * h
        x = x + xd * h
        d = td * h
        cd, sd = ad.cos(d), ad.sin(d)
        sn, cs = sn * cd + cs * sd, cs * cd - sn * sd
    return ad.concat([x, xd, sn, cs, td], axis=-1)


def cartpole_tip(obs, length=CARTPOLE_PARAMS["length"]):
    """Pole-tip position ``(x, y)``; the target is ``(0, length)``."""
    x, sn, cs = obs[..., 0], obs[..., 2], obs[..., 3]
    return x + length * sn, length * cs


def cartpole_tip_distance(obs, length=CARTPOLE_PARAMS["length"]):
    tx, ty = cartpole_tip(np.asarray(obs), length)
    return np.hypot(tx, ty - length)


def _cartpole_reward(o, a, p):
    ell = float(p[2])
    x, sn, cs = o[..., 0], o[..., 2], o[..., 3]
    dx = x + sn * ell
    dy = cs * ell - ell
    d2 = dx * dx + dy * dy
    return ad.exp(d2 * (-1.0 / ell**2)) - ad.sum(ad.square(a), axis=-1) * 0.01


def _cartpole_init(rng, p):
    theta = np.pi + rng.normal(0.0, 0.05)
    return np.array([rng.normal(0.0, 0.02), rng.normal(0.0, 0.02), np.sin(theta), np.cos(theta), rng.normal(0.0, 0.02)])


def cartpole_swingup(**overrides):
    """Cart-pole swing-up: continuous force, 200-step episodes, 5-d observation."""
    prm = {**CARTPOLE_PARAMS, **overrides}
    p = np.array([prm[k] for k in CARTPOLE_PARAMS], dtype=np.float64)
    return EnvSpec(
        name="cartpole",
        obs_dim=5,
        action_dim=1,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        episode_length=200,
        params=p,
        dynamics=_cartpole_dynamics,
        reward_fn=_cartpole_reward,
        init_fn=_cartpole_init,
        kernel=_kernels.cartpole_step_numba,
    )


def cartpole_energy(obs, params=None):
    """Mechanical energy of the cart-pole (potential zero at the pivot height)."""
    M, m, ell, g = (float(v) for v in (params if params is not None else cartpole_swingup().params)[:4])
    xd, cs, td = obs[..., 1], obs[..., 3], obs[..., 4]
    return 0.5 * (M + m) * xd**2 + m * ell * cs * td * xd + 0.5 * m * ell**2 * td**2 + m * g * ell * cs


# -------------------------------------------------------------------- reacher
# state/obs: (px, py, vx, vy, gx, gy); the goal rides along as a constant.

REACHER_DT = 0.05


def _reacher_dynamics(s, a, p):
    dt = float(p[0])
    pos, vel, goal = s[..., 0:2], s[..., 2:4], s[..., 4:6]
    new_pos = pos + vel * dt + a * (0.5 * dt * dt)
    new_vel = vel + a * dt
    return ad.concat([new_pos, new_vel, goal], axis=-1)


def _reacher_reward(o, a, p):
    d = o[..., 0:2] - o[..., 4:6]
    return -ad.sum(ad.square(d), axis=-1)


def _reacher_init(rng, p):
    pos = rng.uniform(-0.1, 0.1, size=2)
    goal = rng.uniform(-1.0, 1.0, size=2)
    return np.concatenate([pos, np.zeros(2), goal])


def point_reacher(dt=REACHER_DT):
    """Planar double integrator that must reach a goal resampled every episode."""
    return EnvSpec(
        name="reacher2d",
        obs_dim=6,
        action_dim=2,
        action_low=-np.ones(2),
        action_high=np.ones(2),
        episode_length=150,
        params=np.array([dt]),
        dynamics=_reacher_dynamics,
        reward_fn=_reacher_reward,
        init_fn=_reacher_init,
        kernel=_kernels.reacher_step_numba,
    )


# -------------------------------------------------------------------- reactor
# A qualitative tank reactor, not a model of any real plant.
# state/obs: (level, pressure, composition); actions: (feed valve, vent valve).

REACTOR_PARAMS = dict(
    dt=0.1, k_feed=1.0, k_out=0.3, k_react=0.5, k_level=0.4, k_vent=0.8, k_comp=0.6, level_half=0.5, feed_comp=0.9
)
REACTOR_EQUILIBRIUM_VALVES = np.array([0.5, 0.5])
# Equilibrium of the dynamics at REACTOR_EQUILIBRIUM_VALVES (tests re-solve it numerically).
REACTOR_SETPOINT = np.array([1.0, 0.7552095840123909, 0.5241357381709192])
REACTOR_SCALE = np.array([0.3, 0.2, 0.1])
REACTOR_PRESSURE_LIMIT = 1.2
REACTOR_BARRIER = 100.0


def _reactor_dynamics(s, a, p):
    dt, kf, ko, kr, kl, kv, kc, lh, cf = (float(v) for v in p)
    L, P, c = s[..., 0], s[..., 1], s[..., 2]
    u1, u2 = a[..., 0], a[..., 1]
    rate = P * c * kr
    dL = u1 * kl - L * ko / (L + lh)
    dP = u1 * kf - u2 * P * kv - rate
    dc = u1 * (cf - c) * kc - rate / (P + 1.0)
    return ad.concat(
        [ad.reshape(v, np.shape(ad.value_of(v)) + (1,)) for v in (L + dL * dt, P + dP * dt, c + dc * dt)], axis=-1
    )


def _reactor_reward(o, a, p):
    err = (o - REACTOR_SETPOINT) / REACTOR_SCALE
    over = ad.relu(o[..., 1] - REACTOR_PRESSURE_LIMIT)
    return -ad.sum(ad.square(err), axis=-1) * (1.0 / 3.0) - ad.square(over) * REACTOR_BARRIER


def _reactor_init(rng, p):
    return np.array([rng.uniform(0.2, 0.4), rng.uniform(0.3, 0.6), rng.uniform(0.1, 0.3)])


def reactor_surrogate():
    """Nonlinear tank reactor with a setpoint and a pressure limit, 300 steps."""
    return EnvSpec(
        name="reactor",
        obs_dim=3,
        action_dim=2,
        action_low=np.zeros(2),
        action_high=np.ones(2),
        episode_length=300,
        params=np.array([REACTOR_PARAMS[k] for k in REACTOR_PARAMS], dtype=np.float64),
        dynamics=_reactor_dynamics,
        reward_fn=_reactor_reward,
        init_fn=_reactor_init,
        kernel=_kernels.reactor_step_numba,
    )


REGISTRY = {"cartpole": cartpole_swingup, "reacher2d": point_reacher, "reactor": reactor_surrogate}


def make(env_id):
    try:
        return REGISTRY[env_id]()
    except KeyError:
        raise ValueError(f"unknown environment {env_id!r}; choose from {sorted(REGISTRY)}") from None
