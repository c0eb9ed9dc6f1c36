import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daeplan import autodiff as ad
from daeplan import config, envs, models
from daeplan.control import objective_for
from daeplan.errors import NonFiniteError, PlannerRejected
from daeplan.planning import (
    CemConfig,
    GradPlanConfig,
    ObjectiveSpec,
    Plan,
    adam_optimize,
    batch_objective,
    cem_optimize,
    expected_return,
    plan_for,
    regularized_return,
    warm_start_shift,
)
from daeplan.verify import rel_err


class Integrator:
    """s' = s + a, on or off the tape."""

    state_dim = 1
    action_dim = 1

    def predict_mean(self, s, a):
        return s + a


def quad_reward(goal, lam):
    def r(o, a):
        return -ad.sum(ad.square(o - goal), axis=-1) - ad.sum(ad.square(a), axis=-1) * lam

    return r


def small_problem(seed=0, alpha=0.3, window=2):
    rng = np.random.default_rng(seed)
    dyn = models.init_dynamics(3, 2, (8,), seed=seed)
    d = 3 + 2
    dae = models.Denoiser(ad.init_mlp([d * window, 8, d * window], ["tanh", "identity"], rng), 0.1, window, models.Normalizer.identity(d * window), 3, 2)
    spec = ObjectiveSpec(dyn, quad_reward(np.array([0.5, 0.0, -0.5]), 0.01), dae, alpha)
    return spec, rng.normal(size=3), Plan(rng.uniform(-1, 1, (6, 2)), -1.0, 1.0)


def test_constant_reward_sums_over_horizon():
    spec = ObjectiveSpec(Integrator(), lambda o, a: ad.sum(o * 0.0, axis=-1) + 2.5)
    for H in (0, 3, 25):
        assert expected_return(spec, np.array([0.1]), Plan(np.zeros((H + 1, 1)), -1, 1)) == pytest.approx((H + 1) * 2.5)


def test_zero_horizon_is_single_reward():
    r = quad_reward(np.array([1.0]), 0.1)
    spec = ObjectiveSpec(Integrator(), r)
    s0, a0 = np.array([0.2]), np.array([[0.4]])
    assert expected_return(spec, s0, Plan(a0, -1, 1)) == r(s0, a0[0])


def test_alpha_zero_identical_value():
    spec, s0, plan = small_problem(alpha=0.0)
    assert regularized_return(spec, s0, plan) == expected_return(spec, s0, plan)


def test_identity_denoiser_has_no_effect():
    spec, s0, plan = small_problem()
    spec.regularizer = models.Denoiser.identity(3, 2, window=2)
    assert regularized_return(spec, s0, plan) == expected_return(spec, s0, plan)


def test_half_cheetah_cem_alpha_reference():
    assert config.REFERENCE_HYPERPARAMS[("half-cheetah", "cem")]["alpha"] == 2.0
    hc = config.REFERENCE_HYPERPARAMS[("half-cheetah", "adam")]
    assert (hc["optim_iters"], hc["adam_lr"], hc["alpha"], hc["dae_sigma"]) == (10, 0.1, 1.0, 0.2)
    assert config.REFERENCE_HYPERPARAMS[("cartpole", "cem")]["optim_iters"] == 5
    assert CemConfig().iterations == 5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.001, 10.0))
def test_regularized_never_exceeds_plain(seed, alpha):
    spec, s0, plan = small_problem(seed, alpha)
    assert regularized_return(spec, s0, plan) <= expected_return(spec, s0, plan)


def test_unroll_gradient_matches_fd():
    spec, s0, plan = small_problem(alpha=0.5)
    tape = ad.Tape()
    X = tape.var(plan.actions)
    g = ad.grad(tape, regularized_return(spec, s0, X, tape), X)
    fd = ad.finite_diff_grad(lambda v: regularized_return(spec, s0, v), plan.actions)
    assert rel_err(g, fd) <= 1e-4


def test_batch_objective_matches_single_plans():
    spec, s0, _ = small_problem()
    P = np.random.default_rng(9).uniform(-1, 1, (7, 6, 2))
    batched = batch_objective(spec, s0)(P)
    for i in range(7):
        assert batched[i] == pytest.approx(regularized_return(spec, s0, P[i]), rel=1e-12)


def test_divergent_rollout_reports_step():
    spec = ObjectiveSpec(Integrator(), quad_reward(np.array([0.0]), 0.0))
    with pytest.raises(NonFiniteError) as exc:
        expected_return(spec, np.array([np.inf]), Plan(np.zeros((3, 1)), -1, 1))
    assert exc.value.step == 1


# ----------------------------------------------------------------------- CEM


def test_cem_quadratic_h10():
    target = np.random.default_rng(0).uniform(-0.8, 0.8, (11, 2))
    out = cem_optimize(lambda A: -np.sum((A - target) ** 2, axis=(-2, -1)), Plan(np.zeros((11, 2)), -1, 1), CemConfig(iterations=25), 0)
    assert np.max(np.abs(out.actions - target)) <= 1e-2


def test_cem_affine_transform_same_elites():
    target = np.random.default_rng(1).uniform(-0.8, 0.8, (11, 2))

    def f(A):
        return -np.sum((A - target) ** 2, axis=(-2, -1))

    h1, h2 = [], []
    p1 = cem_optimize(f, Plan(np.zeros((11, 2)), -1, 1), CemConfig(), 3, h1)
    p2 = cem_optimize(lambda A: 2 * f(A) + 7, Plan(np.zeros((11, 2)), -1, 1), CemConfig(), 3, h2)
    assert np.array_equal(p1.actions, p2.actions)
    assert all(np.array_equal(a, b) for a, b in zip(h1, h2))


def test_cem_non_finite_rank_last_and_all_rejected():
    def f(A):
        v = -np.sum(A**2, axis=(-2, -1))
        v[::2] = np.nan
        return v

    h = []
    cem_optimize(f, Plan(np.zeros((3, 1)), -1, 1), CemConfig(population=20, elites=5, iterations=1), 0, h)
    assert np.all(h[0] % 2 == 1)
    with pytest.raises(PlannerRejected):
        cem_optimize(lambda A: np.full(len(A), np.inf), Plan(np.zeros((3, 1)), -1, 1), CemConfig(), 0)


def test_cem_config_validation():
    with pytest.raises(ValueError):
        CemConfig(population=10, elites=11)
    with pytest.raises(ValueError):
        CemConfig(iterations=0)
    with pytest.raises(ValueError):
        GradPlanConfig(iterations=0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_cem_output_within_bounds(seed):
    low, high = np.array([-0.3, 0.0]), np.array([0.2, 1.0])
    out = cem_optimize(lambda A: np.sum(A, axis=(-2, -1)) * 100, Plan(np.zeros((4, 2)), low, high), CemConfig(population=50, elites=5), seed)
    assert out.within_bounds()


# ---------------------------------------------------------------------- Adam


def test_adam_leaves_optimal_plan_alone():
    goal = np.array([0.3])
    spec = ObjectiveSpec(Integrator(), quad_reward(goal, 0.0))
    # s0 at the goal with zero actions is a stationary point
    init = Plan(np.zeros((4, 1)), -1, 1)
    out = adam_optimize(spec, goal, init, GradPlanConfig(iterations=10, restarts=1), 0)
    assert np.array_equal(out.actions, init.actions)


def test_adam_one_step_lqr_closed_form():
    g, lam, s0 = 0.7, 0.5, np.array([-0.1])
    spec = ObjectiveSpec(Integrator(), quad_reward(np.array([g]), lam))
    out = adam_optimize(spec, s0, Plan(np.zeros((2, 1)), -2, 2), GradPlanConfig(iterations=600, lr=0.01, restarts=1), 0)
    # maximize -(s0+a0-g)^2 - lam a0^2 - lam a1^2 - (s0-g)^2
    assert abs(out.actions[0, 0] - (g - s0[0]) / (1 + lam)) <= 1e-3
    assert abs(out.actions[1, 0]) <= 1e-3


def test_adam_clips_to_bounds():
    spec = ObjectiveSpec(Integrator(), quad_reward(np.array([10.0]), 0.0))
    out = adam_optimize(spec, np.zeros(1), Plan(np.zeros((3, 1)), -0.5, 0.5), GradPlanConfig(iterations=50, lr=0.2, restarts=3), 0)
    assert out.within_bounds() and out.actions[0, 0] == 0.5


def test_adam_rejects_out_of_bounds_init():
    spec = ObjectiveSpec(Integrator(), quad_reward(np.array([0.0]), 0.0))
    with pytest.raises(ValueError):
        adam_optimize(spec, np.zeros(1), Plan(np.full((2, 1), 2.0), -1, 1), GradPlanConfig(), 0)


def test_adam_all_restarts_diverge():
    class Exploding(Integrator):
        def predict_mean(self, s, a):
            return s * 1e200 + a

    spec = ObjectiveSpec(Exploding(), quad_reward(np.array([0.0]), 0.0))
    with pytest.raises(PlannerRejected):
        adam_optimize(spec, np.ones(1), Plan(np.zeros((4, 1)), -1, 1), GradPlanConfig(restarts=2), 0)


def test_adam_deterministic():
    spec, s0, plan = small_problem()
    cfg = GradPlanConfig(iterations=5, restarts=3)
    a = adam_optimize(spec, s0, plan.clipped(), cfg, 4)
    b = adam_optimize(spec, s0, plan.clipped(), cfg, 4)
    assert np.array_equal(a.actions, b.actions)


def test_restart_defaults():
    assert GradPlanConfig().n_restarts == 4
    assert GradPlanConfig(warm_start="cem-init", cem_init_iters=2).n_restarts == 1
    assert GradPlanConfig(restarts=7).n_restarts == 7


@pytest.mark.parametrize("planner", ["cem", "adam", "cem-then-adam"])
def test_alpha_zero_bit_identical_plans(planner):
    spec, s0, plan = small_problem(alpha=0.0)
    plain = ObjectiveSpec(spec.dynamics, spec.reward)
    cem, grad = CemConfig(population=60, elites=6, iterations=3), GradPlanConfig(iterations=4, restarts=2)
    a = plan_for(spec, s0, plan, planner, cem, grad, [1, 2])
    b = plan_for(plain, s0, plan, planner, cem, grad, [1, 2])
    assert np.array_equal(a.actions, b.actions)


# ---------------------------------------------------------------- warm start


def test_shift_examples():
    p = Plan(np.array([[1.0], [2.0], [3.0]]), -5, 5)
    assert np.array_equal(warm_start_shift(p).actions[:, 0], [2.0, 3.0, 0.0])
    assert np.array_equal(warm_start_shift(p, "repeat-last").actions[:, 0], [2.0, 3.0, 3.0])
    r = warm_start_shift(p, "resample", np.random.default_rng(0))
    assert -5 <= r.actions[-1, 0] <= 5


def test_shift_zero_fill_respects_bounds():
    p = Plan(np.full((3, 1), 0.5), 0.2, 1.0)
    assert warm_start_shift(p).actions[-1, 0] == 0.2


def test_repeated_shift_reaches_zeros():
    p = Plan(np.random.default_rng(0).uniform(-1, 1, (6, 2)), -1, 1)
    for _ in range(6):
        p = warm_start_shift(p)
    assert np.array_equal(p.actions, np.zeros((6, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 10_000))
def test_shift_preserves_overlap(H, seed):
    p = Plan(np.random.default_rng(seed).uniform(-1, 1, (H + 1, 2)), -1, 1)
    q = warm_start_shift(p)
    assert np.array_equal(q.actions[:-1], p.actions[1:])
    assert np.array_equal(q.low, p.low) and np.array_equal(q.high, p.high)


def test_bad_fill():
    with pytest.raises(ValueError):
        warm_start_shift(Plan(np.zeros((2, 1)), -1, 1), "mirror")


# ------------------------------------------------------------ oracle planner


def test_reacher_oracle_plan_value_matches_reality():
    env = envs.make("reacher2d")
    oracle = models.TrueDynamics(env)
    s0 = envs.initial_state(env, np.random.default_rng(0))
    spec = objective_for(env, oracle)
    plan = plan_for(spec, s0, Plan.midpoint(25, env.action_low, env.action_high), "cem", CemConfig(), GradPlanConfig(), 0)
    G = expected_return(spec, s0, plan)
    # execute the plan open loop in the environment itself
    s, realized = s0, 0.0
    for k, a in enumerate(plan.actions):
        realized += float(envs.reward(env, s, a))
        s = envs.step(env, s, a)
    assert abs(G - realized) <= 0.05 * abs(realized)
    # and the plan actually moves toward the goal
    assert G > expected_return(spec, s0, Plan.midpoint(25, env.action_low, env.action_high))
