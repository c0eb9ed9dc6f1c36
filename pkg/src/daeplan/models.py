"""Learned models: the probabilistic dynamics network, the denoising
autoencoder used as a trajectory regularizer, and a diagonal-Gaussian
regularizer baseline.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import MlpParams, Tape
from .buffer import iter_batches
from .errors import EmptyBufferError, NonFiniteError, ShapeError

log = logging.getLogger(__name__)

LOG_VAR_MIN = -10.0
LOG_VAR_MAX = 4.0
STD_FLOOR = 1e-6
GAUSSIAN_VAR_FLOOR = 1e-6
DEFAULT_HIDDEN = (200, 200, 200)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X, floor=STD_FLOOR):
        X = np.asarray(X, dtype=np.float64)
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), floor))

    @classmethod
    def identity(cls, dim):
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, x):
        return (x - self.mean) * (1.0 / self.std)

    def denormalize(self, x):
        return x * self.std + self.mean


# ------------------------------------------------------------------ dynamics


@dataclass
class DynamicsModel:
    """Gaussian next-state-delta model.

    The trunk maps normalized ``(s, a)`` to features; two affine heads emit the
    normalized delta mean and its log-variance.
    """

    trunk: MlpParams
    mean_head: MlpParams
    logvar_head: MlpParams
    in_norm: Normalizer
    out_norm: Normalizer
    state_dim: int
    action_dim: int

    def param_arrays(self):
        return self.trunk.arrays() + self.mean_head.arrays() + self.logvar_head.arrays()

    def with_params(self, arrays):
        nt, nm = len(self.trunk.weights) * 2, len(self.mean_head.weights) * 2
        return DynamicsModel(
            MlpParams.from_arrays(arrays[:nt], self.trunk.activations),
            MlpParams.from_arrays(arrays[nt : nt + nm], self.mean_head.activations),
            MlpParams.from_arrays(arrays[nt + nm :], self.logvar_head.activations),
            self.in_norm,
            self.out_norm,
            self.state_dim,
            self.action_dim,
        )

    def on_tape(self, tape):
        return self.with_params([tape.var(p) for p in self.param_arrays()])

    def _features(self, s, a):
        return ad.mlp_forward(self.trunk, self.in_norm.normalize(ad.concat([s, a], axis=-1)))

    def heads(self, s, a):
        """Normalized delta mean and clamped log-variance for ``(s, a)``."""
        h = self._features(s, a)
        mu = ad.mlp_forward(self.mean_head, h)
        lv = ad.mlp_forward(self.logvar_head, h)
        lv = LOG_VAR_MAX - ad.softplus(LOG_VAR_MAX - lv)
        lv = LOG_VAR_MIN + ad.softplus(lv - LOG_VAR_MIN)
        return mu, lv

    def predict(self, s, a):
        mu, lv = self.heads(s, a)
        mean = s + self.out_norm.denormalize(mu)
        var = ad.exp(lv) * self.out_norm.std**2
        return mean, var

    def predict_mean(self, s, a):
        # planning only needs the mean, so skip the variance head
        return s + self.out_norm.denormalize(ad.mlp_forward(self.mean_head, self._features(s, a)))


def init_dynamics(state_dim, action_dim, hidden=DEFAULT_HIDDEN, seed=0, in_norm=None, out_norm=None):
    rng = np.random.default_rng(seed)
    sizes = [state_dim + action_dim, *hidden]
    trunk = ad.init_mlp(sizes, ["swish"] * len(hidden), rng)
    mean_head = ad.init_mlp([sizes[-1], state_dim], ["identity"], rng)
    logvar_head = ad.init_mlp([sizes[-1], state_dim], ["identity"], rng)
    return DynamicsModel(
        trunk,
        mean_head,
        logvar_head,
        in_norm or Normalizer.identity(state_dim + action_dim),
        out_norm or Normalizer.identity(state_dim),
        state_dim,
        action_dim,
    )


def _check_dims(model, s, a):
    if np.shape(ad.value_of(s))[-1:] != (model.state_dim,) or np.shape(ad.value_of(a))[-1:] != (model.action_dim,):
        raise ShapeError(
            f"model expects state dim {model.state_dim} and action dim {model.action_dim}, "
            f"got {np.shape(ad.value_of(s))} and {np.shape(ad.value_of(a))}"
        )


def predict(model, s, a, tape=None):
    """Next-state mean ``s + delta`` and the delta variance."""
    _check_dims(model, s, a)
    if not (np.all(np.isfinite(ad.value_of(s))) and np.all(np.isfinite(ad.value_of(a)))):
        raise NonFiniteError("non-finite input to predict")
    if tape is not None and not isinstance(s, ad.Node):
        s = tape.const(s)
    return model.predict(s, a)


def _broadcast_start(s0, lead):
    s0 = np.asarray(ad.value_of(s0), dtype=np.float64) if not isinstance(s0, ad.Node) else s0
    if isinstance(s0, ad.Node) or s0.shape[:-1] == lead:
        return s0
    return np.broadcast_to(s0, lead + s0.shape[-1:]).copy()


def actions_of(plan):
    return plan.actions if hasattr(plan, "actions") and not isinstance(plan, ad.Node) else plan


def unroll(model, s0, plan, tape=None, check=True):
    """Mean rollout ``[s0, s1, ..., sH]`` under the first ``H`` plan actions.

    ``plan`` holds ``H + 1`` actions (array of shape ``(..., H + 1, adim)``, a
    tape node, or a :class:`~daeplan.planning.Plan`); the last action only
    enters the reward.  With ``check`` a non-finite state raises
    :class:`NonFiniteError` carrying the step index.
    """
    acts = actions_of(plan)
    if tape is not None and not isinstance(acts, ad.Node):
        acts = tape.const(acts)
    shape = np.shape(ad.value_of(acts))
    if len(shape) < 2 or shape[-1] != model.action_dim:
        raise ShapeError(f"plan of shape {shape} does not match action dim {model.action_dim}")
    H = shape[-2] - 1
    s = _broadcast_start(s0, shape[:-2])
    states = [s]
    for k in range(H):
        s = model.predict_mean(s, acts[..., k, :])
        if check and not np.all(np.isfinite(ad.value_of(s))):
            raise NonFiniteError("rollout diverged", step=k + 1)
        states.append(s)
    return states


def gaussian_nll(mu, lv, target):
    """Mean Gaussian negative log-likelihood (constant term dropped)."""
    return ad.mean(ad.square(mu - target) * ad.exp(-lv) + lv) * 0.5


def dynamics_loss(model, S, A, S2):
    mu, lv = model.heads(S, A)
    target = model.out_norm.normalize(S2 - S)
    return gaussian_nll(mu, lv, target)


def validation_nll(model, S, A, S2):
    """Untaped mean NLL in normalized units (no constant term)."""
    if len(S) == 0:
        return float("nan")
    return float(dynamics_loss(model, S, A, S2))


def _adam_fit(params, loss_fn, batches, lr):
    """Minimize ``loss_fn(tape, param_nodes, batch)`` with Adam over ``batches``."""
    state = ad.adam_state(params, lr)
    last = float("nan")
    for batch in batches:
        tape = Tape()
        nodes = [tape.var(p) for p in params]
        loss = loss_fn(tape, nodes, batch)
        grads = ad.backward(tape, loss)
        params, state = ad.adam_step(params, [grads[n.id] for n in nodes], state)
        last = float(loss.value)
    return params, last


def train_dynamics(buffer, epochs, batch_size, lr=1e-3, hidden=DEFAULT_HIDDEN, seed=0, init=None):
    """Fit a :class:`DynamicsModel` to every transition in ``buffer``.

    Normalization statistics are taken from the buffer at call time.  ``init``
    warm-starts the weights from a previous model of the same shape.
    """
    S, A, S2 = buffer.transitions()
    if len(S) == 0:
        raise EmptyBufferError("cannot train dynamics on an empty buffer")
    in_norm = Normalizer.fit(np.concatenate([S, A], axis=1))
    out_norm = Normalizer.fit(S2 - S)
    if init is not None:
        model = DynamicsModel(
            init.trunk.copy(), init.mean_head.copy(), init.logvar_head.copy(), in_norm, out_norm, S.shape[1], A.shape[1]
        )
    else:
        model = init_dynamics(S.shape[1], A.shape[1], hidden, seed, in_norm, out_norm)
    rng = np.random.default_rng([seed, 1])

    def loss_fn(tape, nodes, idx):
        return dynamics_loss(model.with_params(nodes), S[idx], A[idx], S2[idx])

    batches = (idx for _ in range(epochs) for idx in iter_batches(len(S), batch_size, rng))
    params, last = _adam_fit(model.param_arrays(), loss_fn, batches, lr)
    log.debug("dynamics training finished, last batch loss %.4f", last)
    return model.with_params(params)


# ------------------------------------------------------------------ denoiser


@dataclass
class Denoiser:
    """Denoising autoencoder over windows of ``window`` concatenated (s, a) pairs."""

    net: MlpParams
    sigma: float
    window: int
    norm: Normalizer
    state_dim: int
    action_dim: int

    @property
    def dim(self):
        return self.window * (self.state_dim + self.action_dim)

    @classmethod
    def identity(cls, state_dim, action_dim, window=1, sigma=0.1):
        d = window * (state_dim + action_dim)
        net = MlpParams([np.eye(d)], [np.zeros(d)], ["identity"])
        return cls(net, sigma, window, Normalizer.identity(d), state_dim, action_dim)

    def _check(self, x):
        if np.shape(ad.value_of(x))[-1:] != (self.dim,):
            raise ShapeError(f"window of shape {np.shape(ad.value_of(x))} does not match denoiser dim {self.dim}")

    def residual(self, x, stop_gradient=False):
        """``g(x) - x`` in normalized coordinates."""
        xn = self.norm.normalize(x)
        g = ad.mlp_forward(self.net, xn)
        if stop_gradient:
            g = ad.stop_gradient(g)
        return g - xn

    def penalty(self, x, stop_gradient=False):
        """Per-window ``||g(x) - x||^2`` (normalized units) over the last axis."""
        self._check(x)
        return ad.sum(ad.square(self.residual(x, stop_gradient)), axis=-1)


def denoise(denoiser, x, tape=None):
    """Reconstruction ``g(x)`` in the original coordinates."""
    denoiser._check(x)
    if tape is not None and not isinstance(x, ad.Node):
        x = tape.const(x)
    return denoiser.norm.denormalize(ad.mlp_forward(denoiser.net, denoiser.norm.normalize(x)))


def dae_penalty(denoiser, x, tape=None, stop_gradient=False):
    """Scalar ``||g(x) - x||^2`` for one window (summed if ``x`` is a batch)."""
    if tape is not None and not isinstance(x, ad.Node):
        x = tape.const(x)
    p = denoiser.penalty(x, stop_gradient)
    return ad.sum(p) if np.ndim(ad.value_of(p)) else p


def train_denoiser_on(X, sigma, epochs, batch_size, lr=1e-3, hidden=DEFAULT_HIDDEN, seed=0, state_dim=None, action_dim=0, window=1):
    """Train a denoiser on the rows of ``X`` (already-built windows).

    Rows are normalized, corrupted with fresh ``N(0, sigma^2)`` noise every
    mini-batch, and reconstructed under a mean-squared loss.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyBufferError("no windows to train the denoiser on")
    d = X.shape[1]
    norm = Normalizer.fit(X)
    Xn = norm.normalize(X)
    rng = np.random.default_rng([seed, 2])
    net = ad.init_mlp([d, *hidden, d], ["swish"] * len(hidden) + ["identity"], rng)
    acts = net.activations

    def loss_fn(tape, nodes, idx):
        clean = Xn[idx]
        noisy = clean + rng.normal(0.0, sigma, size=clean.shape)
        out = ad.mlp_forward(MlpParams.from_arrays(nodes, acts), tape.const(noisy))
        return ad.mean(ad.square(out - clean))

    batches = (idx for _ in range(epochs) for idx in iter_batches(len(X), batch_size, rng))
    params, last = _adam_fit(net.arrays(), loss_fn, batches, lr)
    log.debug("denoiser training finished, last batch loss %.4f", last)
    if state_dim is None:
        state_dim = d // window - action_dim
    return Denoiser(MlpParams.from_arrays(params, acts), float(sigma), window, norm, state_dim, action_dim)


def train_dae(buffer, sigma, window, epochs, batch_size, lr=1e-3, hidden=DEFAULT_HIDDEN, seed=0):
    """Train a denoiser on every length-``window`` (s, a) window in ``buffer``."""
    if buffer.num_transitions == 0:
        raise EmptyBufferError("cannot train a denoiser on an empty buffer")
    X = buffer.windows(window)
    if len(X) == 0:
        raise EmptyBufferError(f"window size {window} exceeds every episode length")
    return train_denoiser_on(
        X, sigma, epochs, batch_size, lr, hidden, seed, buffer.obs_dim, buffer.action_dim, window
    )


# -------------------------------------------------------- gaussian baseline


@dataclass
class GaussianRegularizer:
    mean: np.ndarray
    var: np.ndarray
    window: int = 1
    floor: float = GAUSSIAN_VAR_FLOOR

    def penalty(self, x, stop_gradient=False):
        """Per-window negative log-density over the last axis."""
        if np.shape(ad.value_of(x))[-1:] != self.mean.shape:
            raise ShapeError(f"window of shape {np.shape(ad.value_of(x))} does not match {self.mean.shape}")
        const = 0.5 * np.log(2.0 * np.pi * self.var)
        return ad.sum(ad.square(x - self.mean) * (0.5 / self.var) + const, axis=-1)


def fit_gaussian_to(X, window=1, floor=GAUSSIAN_VAR_FLOOR):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyBufferError("cannot fit a Gaussian to no data")
    mean = X.mean(axis=0)
    var = np.maximum(((X - mean) ** 2).mean(axis=0), floor)
    return GaussianRegularizer(mean, var, window, floor)


def fit_gaussian(buffer, window=1, floor=GAUSSIAN_VAR_FLOOR):
    """Maximum-likelihood diagonal Gaussian over the buffer's (s, a) windows."""
    if buffer.num_transitions == 0:
        raise EmptyBufferError("cannot fit a Gaussian to an empty buffer")
    return fit_gaussian_to(buffer.windows(window), window, floor)


def gaussian_penalty(reg, x, tape=None):
    if tape is not None and not isinstance(x, ad.Node):
        x = tape.const(x)
    p = reg.penalty(x)
    return ad.sum(p) if np.ndim(ad.value_of(p)) else p


class TrueDynamics:
    """The environment's own dynamics wrapped as a model (the oracle planner's model)."""

    def __init__(self, env):
        self.env = env
        self.state_dim = env.obs_dim
        self.action_dim = env.action_dim

    def predict_mean(self, s, a):
        from . import envs

        return envs.step(self.env, s, a)

    def predict(self, s, a):
        mean = self.predict_mean(s, a)
        return mean, np.zeros(np.shape(ad.value_of(mean)))
