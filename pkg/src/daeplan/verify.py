"""Self-check suites run by ``daeplan verify``.

Each suite returns a list of :class:`Check` rows; a suite passes when every
row does.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import envs, models
from .control import objective_for
from .planning import CemConfig, Plan, cem_optimize, regularized_return

SUITES = ("gradcheck", "dae-oracle", "cem-sanity", "env-checks")


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float
    detail: str = ""


def rel_err(a, b):
    """``|a - b| / max(|a|, |b|)`` in the Euclidean norm."""
    a, b = np.ravel(a), np.ravel(b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / den)


# --------------------------------------------------------------- gradcheck


def _random_mlp(rng):
    depth = int(rng.integers(1, 4))
    sizes = [int(rng.integers(1, 6)) for _ in range(depth + 1)]
    acts = [str(rng.choice(["swish", "tanh", "identity"])) for _ in range(depth)]
    return ad.init_mlp(sizes, acts, rng)


def mlp_gradcheck(params, x, c):
    """Relative error of the reverse-mode gradient of ``sum(c * mlp(x))`` w.r.t. every weight and the input."""
    acts = params.activations
    arrays = params.arrays() + [x]

    def f_taped(tape, nodes):
        out = ad.mlp_forward(ad.MlpParams.from_arrays(nodes[:-1], acts), nodes[-1])
        return ad.sum(out * c)

    tape = ad.Tape()
    nodes = [tape.var(a) for a in arrays]
    g = ad.grad(tape, f_taped(tape, nodes), nodes)
    worst = 0.0
    for i, arr in enumerate(arrays):

        def f(v, i=i):
            vals = list(arrays)
            vals[i] = v
            return np.sum(ad.mlp_forward(ad.MlpParams.from_arrays(vals[:-1], acts), vals[-1]) * c)

        worst = max(worst, rel_err(g[i], ad.finite_diff_grad(f, arr)))
    return worst


def unroll_gradcheck(seed=0, horizon=5, alpha=0.1):
    """Relative error of dG_reg/d(actions) through a random model and denoiser on cartpole."""
    rng = np.random.default_rng(seed)
    env = envs.cartpole_swingup()
    dyn = models.init_dynamics(env.obs_dim, env.action_dim, (8, 8), seed)
    dae = models.Denoiser(
        ad.init_mlp([12, 8, 12], ["tanh", "identity"], rng), 0.1, 2, models.Normalizer.identity(12), 5, 1
    )
    spec = objective_for(env, dyn, dae, alpha)
    s0 = envs.initial_state(env, rng) + rng.normal(0, 0.3, 5)
    A = rng.uniform(-1, 1, (horizon + 1, 1))
    tape = ad.Tape()
    X = tape.var(A)
    g = ad.grad(tape, regularized_return(spec, s0, X, tape), X)
    fd = ad.finite_diff_grad(lambda v: regularized_return(spec, s0, v), A)
    return rel_err(g, fd)


def suite_gradcheck(n_mlps=20, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_mlps):
        p = _random_mlp(rng)
        x = rng.normal(size=(3, p.weights[0].shape[0]))
        c = rng.normal(size=(3, p.weights[-1].shape[1]))
        worst = max(worst, mlp_gradcheck(p, x, c))
    return [
        Check(f"{n_mlps} random MLPs", worst <= 1e-5, worst, 1e-5),
        Check("H=5 unrolled G_reg", (e := unroll_gradcheck(seed)) <= 1e-4, e, 1e-4),
    ]


# -------------------------------------------------------------- dae oracle


def dae_oracle_slope(sigma=0.5, n=4000, epochs=60, seed=0):
    """Train a DAE on 1-D N(0, 1) data and return its least-squares slope on [-2, 2].

    The optimal denoiser is the posterior mean ``x / (1 + sigma^2)``.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 1))
    dae = models.train_denoiser_on(X, sigma, epochs, 64, 1e-3, (32, 32), seed, state_dim=1)
    grid = np.linspace(-2, 2, 81)[:, None]
    g = models.denoise(dae, grid)
    return float(np.polyfit(grid[:, 0], g[:, 0], 1)[0])


def suite_dae_oracle(seed=0):
    target = 1.0 / (1.0 + 0.5**2)
    slope = dae_oracle_slope(seed=seed)
    return [Check("1-D Gaussian posterior-mean slope", abs(slope - target) <= 0.05, slope, target, "target 0.8 +- 0.05")]


# -------------------------------------------------------------- cem sanity


def quadratic_target(horizon=10, action_dim=2, seed=0):
    return np.random.default_rng(seed).uniform(-0.8, 0.8, (horizon + 1, action_dim))


def suite_cem_sanity(seed=0):
    target = quadratic_target(seed=seed)
    init = Plan(np.zeros_like(target), -1.0, 1.0)
    cfg = CemConfig(population=400, elites=40, iterations=25)

    def f(A):
        return -np.sum((A - target) ** 2, axis=(-2, -1))

    base = []
    final = cem_optimize(f, init, cfg, seed, base).actions
    same = True
    for g in (lambda A: 2.0 * f(A) + 7.0, lambda A: np.exp(3.0 * f(A)) - 7.0):
        h = []
        other = cem_optimize(g, init, cfg, seed, h).actions
        same &= np.array_equal(final, other) and all(np.array_equal(a, b) for a, b in zip(base, h))
    err = float(np.max(np.abs(final - target)))
    return [
        Check("quadratic optimum in 25 iterations", err <= 1e-2, err, 1e-2),
        Check("elites invariant under monotone transform", same, float(not same), 0.0),
    ]


def replace_iters(cfg, n):
    return CemConfig(cfg.population, cfg.elites, n, cfg.init_std, cfg.std_floor, cfg.smoothing)


# -------------------------------------------------------------- env checks


def suite_env_checks():
    out = []
    cp = envs.cartpole_swingup()
    s = np.array([0.0, 0.0, 0.0, 1.0, 0.0])
    r_top = float(envs.reward(cp, s, np.zeros(1)))
    r_off = float(envs.reward(cp, np.array([0.1, 0, np.sin(0.2), np.cos(0.2), 0]), np.zeros(1)))
    out.append(Check("cartpole reward peaks upright", r_top > r_off and abs(r_top - 1.0) < 1e-12, r_top, 1.0))
    hang = np.array([0.0, 0.0, 0.0, -1.0, 0.0])
    drift = float(np.max(np.abs(envs.step(cp, hang, np.zeros(1)) - hang)))
    out.append(Check("cartpole hanging fixed point", drift == 0.0, drift, 0.0))

    worst = 0.0
    for th in np.linspace(0.1, np.pi - 0.1, 7):
        s = np.array([0.0, 0.0, np.sin(th), np.cos(th), 0.0])
        e_prev = envs.cartpole_energy(s)
        for _ in range(1000):
            s = envs.step(cp, s, np.zeros(1))
            e = envs.cartpole_energy(s)
            worst = max(worst, e - e_prev)
            e_prev = e
    out.append(Check("cartpole energy non-increasing (1000 steps)", worst <= 1e-12, worst, 1e-12))

    re = envs.point_reacher()
    g = np.array([0.3, -0.2])
    s = np.concatenate([g, [0.0, 0.0], g])
    out.append(Check("reacher at goal", float(envs.reward(re, s, np.zeros(2))) == 0.0, 0.0, 0.0))
    steps = reacher_bang_bang_steps(0.5)
    out.append(Check("reacher bang-bang reaches goal", steps is not None, float(steps or -1), 0.0))

    rx = envs.reactor_surrogate()
    s = envs.REACTOR_SETPOINT.copy()
    drift = float(np.max(np.abs(envs.step(rx, s, envs.REACTOR_EQUILIBRIUM_VALVES) - s)))
    r = float(envs.reward(rx, s, envs.REACTOR_EQUILIBRIUM_VALVES))
    out.append(Check("reactor equilibrium drift", drift <= 1e-9 and abs(r) <= 1e-9, drift, 1e-9))

    A = np.random.default_rng(0).uniform(-1, 1, 1)
    s = np.array([0.1, -0.2, np.sin(2.0), np.cos(2.0), 0.4])
    same = np.array_equal(envs.step(cp, s, A), envs.step(cp, s, A))
    out.append(Check("step determinism", same, float(not same), 0.0))
    return out


def reacher_bang_bang_steps(distance, dt=envs.REACHER_DT, a_max=1.0):
    """Run the time-optimal switch-at-midpoint plan along x; None if it misses the goal."""
    env = envs.point_reacher(dt)
    n = minimal_bang_bang_steps(distance, dt, a_max)
    goal = np.array([distance, 0.0])
    s = np.concatenate([[0.0, 0.0, 0.0, 0.0], goal])
    # accelerate for k steps, then brake for k steps; the closed form gives d = a dt^2 k^2
    k = n // 2
    a_scale = distance / (dt**2 * k**2)
    if a_scale > a_max:
        return None
    for i in range(n):
        a = np.array([a_scale if i < k else -a_scale, 0.0])
        s = envs.step(env, s, a)
    ok = np.allclose(s[:2], goal, atol=1e-9) and np.allclose(s[2:4], 0.0, atol=1e-9)
    return n if ok else None


def minimal_bang_bang_steps(distance, dt=envs.REACHER_DT, a_max=1.0):
    """Fewest even step count ``2k`` with ``a_max dt^2 k^2 >= distance`` (exact discrete double integrator)."""
    k = int(np.ceil(np.sqrt(distance / (a_max * dt**2)) - 1e-12))
    return 2 * max(k, 1)


RUNNERS = {
    "gradcheck": suite_gradcheck,
    "dae-oracle": suite_dae_oracle,
    "cem-sanity": suite_cem_sanity,
    "env-checks": suite_env_checks,
}


def run(suite):
    """Run one suite (or ``all``); returns ``[(suite, Check, seconds)]``."""
    names = SUITES if suite == "all" else (suite,)
    out = []
    for name in names:
        t0 = time.perf_counter()
        checks = RUNNERS[name]()
        dt = time.perf_counter() - t0
        out += [(name, c, dt) for c in checks]
    return out
