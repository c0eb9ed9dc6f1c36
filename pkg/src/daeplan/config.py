"""Run configuration and the flat ``section.key = value`` config format.

Example::

    # cartpole, CEM with denoiser regularization
    env.id = cartpole
    run.episodes = 15
    planner.type = cem
    planner.regularizer = dae
    planner.alpha = 0.001
    dae.sigma = 0.1
"""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .control import MpcConfig
from .errors import ConfigError

# Per-environment hyperparameters reported for the MuJoCo experiments
# (optimizer iterations, training epochs, Adam planning rate, alpha, DAE noise).
REFERENCE_HYPERPARAMS = {
    ("cartpole", "cem"): dict(optim_iters=5, epochs=500, adam_lr=None, alpha=0.001, dae_sigma=0.1),
    ("cartpole", "adam"): dict(optim_iters=10, epochs=500, adam_lr=0.001, alpha=0.001, dae_sigma=0.2),
    ("reacher", "cem"): dict(optim_iters=5, epochs=500, adam_lr=None, alpha=0.01, dae_sigma=0.1),
    ("reacher", "adam"): dict(optim_iters=5, epochs=300, adam_lr=1.0, alpha=0.01, dae_sigma=0.1),
    ("pusher", "cem"): dict(optim_iters=5, epochs=500, adam_lr=None, alpha=0.01, dae_sigma=0.1),
    ("pusher", "adam"): dict(optim_iters=5, epochs=300, adam_lr=1.0, alpha=0.01, dae_sigma=0.1),
    ("half-cheetah", "cem"): dict(optim_iters=5, epochs=100, adam_lr=None, alpha=2.0, dae_sigma=0.1),
    ("half-cheetah", "adam"): dict(optim_iters=10, epochs=200, adam_lr=0.1, alpha=1.0, dae_sigma=0.2),
    ("ant", "cem"): dict(optim_iters=5, epochs=400, adam_lr=None, alpha=0.045, dae_sigma=0.3),
    ("ant", "adam"): dict(optim_iters=10, epochs=1000, adam_lr=0.075, alpha=0.03, dae_sigma=0.4),
}
# CEM iterations used before gradient planning on these environments.
REFERENCE_CEM_INIT_ITERS = {"reacher": 2, "pusher": 5}
REFERENCE_HORIZONS = {"cartpole": 25, "reacher": 25, "pusher": 25, "half-cheetah": 30, "ant": 35}
REFERENCE_HIDDEN = (200, 200, 200)


@dataclass
class ModelConfig:
    hidden: tuple = REFERENCE_HIDDEN
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3
    warm_start: bool = True


@dataclass
class DaeConfig:
    sigma: float = 0.1
    window: int = 1
    hidden: tuple = REFERENCE_HIDDEN
    epochs: int = 500
    batch_size: int = 32
    lr: float = 1e-3


@dataclass
class GapConfig:
    episodes: int = 5  # random episodes the studied model is trained on
    alphas: tuple = (0.1, 1.0, 10.0)
    starts: int = 2  # open-loop plans per seed, averaged


@dataclass
class RunConfig:
    env_id: str
    episodes: int = 15  # total, including the random seeding episodes
    random_episodes: int = 1
    regularizer: str = "dae"  # none | dae | gaussian
    model: ModelConfig = field(default_factory=ModelConfig)
    dae: DaeConfig = field(default_factory=DaeConfig)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    gap: GapConfig = field(default_factory=GapConfig)

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        d = asdict(self)
        d["mpc"]["cem"]["init_std"] = None if self.mpc.cem.init_std is None else np.asarray(self.mpc.cem.init_std).tolist()
        d["mpc"]["grad"]["cem"]["init_std"] = d["mpc"]["cem"]["init_std"]
        return d


def validate(cfg):
    from .envs import REGISTRY

    if cfg.env_id not in REGISTRY:
        raise ConfigError("env.id", f"unknown environment {cfg.env_id!r} (choose from {', '.join(sorted(REGISTRY))})")
    if cfg.episodes < cfg.random_episodes or cfg.random_episodes < 0:
        raise ConfigError("run.episodes", "must be >= run.random_episodes >= 0")
    if cfg.regularizer not in ("none", "dae", "gaussian"):
        raise ConfigError("planner.regularizer", "must be none, dae or gaussian")
    for name, value in [
        ("model.epochs", cfg.model.epochs),
        ("model.batch_size", cfg.model.batch_size),
        ("dae.epochs", cfg.dae.epochs),
        ("dae.batch_size", cfg.dae.batch_size),
        ("dae.window", cfg.dae.window),
        ("gap.episodes", cfg.gap.episodes),
        ("gap.starts", cfg.gap.starts),
    ]:
        if value < 1:
            raise ConfigError(name, "must be positive")
    if cfg.dae.sigma <= 0:
        raise ConfigError("dae.sigma", "must be positive")
    if cfg.mpc.alpha < 0:
        raise ConfigError("planner.alpha", "must be non-negative")
    if not cfg.gap.alphas or min(cfg.gap.alphas) < 0:
        raise ConfigError("gap.alphas", "need at least one non-negative value")


def _bool(s):
    s = s.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s):
    return tuple(int(v) for v in s.replace(",", " ").split())


def _restarts(s):
    return None if s.strip() == "auto" else int(s)


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


# key -> (path into RunConfig, parser)
KEYS = {
    "env.id": ("env_id", str),
    "run.episodes": ("episodes", int),
    "run.random_episodes": ("random_episodes", int),
    "model.hidden": ("model.hidden", _ints),
    "model.epochs": ("model.epochs", int),
    "model.batch_size": ("model.batch_size", int),
    "model.lr": ("model.lr", float),
    "model.warm_start": ("model.warm_start", _bool),
    "dae.sigma": ("dae.sigma", float),
    "dae.window": ("dae.window", int),
    "dae.hidden": ("dae.hidden", _ints),
    "dae.epochs": ("dae.epochs", int),
    "dae.batch_size": ("dae.batch_size", int),
    "dae.lr": ("dae.lr", float),
    "planner.type": ("mpc.planner", str),
    "planner.regularizer": ("regularizer", str),
    "planner.alpha": ("mpc.alpha", float),
    "planner.stop_gradient": ("mpc.stop_gradient", _bool),
    "mpc.horizon": ("mpc.horizon", int),
    "mpc.warm_start": ("mpc.warm_start", str),
    "mpc.shift_fill": ("mpc.shift_fill", str),
    "mpc.exploration_std": ("mpc.exploration_std", float),
    "mpc.gap_every": ("mpc.gap_every", int),
    "cem.population": ("mpc.cem.population", int),
    "cem.elites": ("mpc.cem.elites", int),
    "cem.iterations": ("mpc.cem.iterations", int),
    "cem.smoothing": ("mpc.cem.smoothing", float),
    "cem.std_floor": ("mpc.cem.std_floor", float),
    "adam.iterations": ("mpc.grad.iterations", int),
    "adam.lr": ("mpc.grad.lr", float),
    "adam.restarts": ("mpc.grad.restarts", _restarts),
    "adam.cem_init_iters": ("mpc.grad.cem_init_iters", int),
    "adam.warm_start": ("mpc.grad.warm_start", str),
    "gap.episodes": ("gap.episodes", int),
    "gap.alphas": ("gap.alphas", _floats),
    "gap.starts": ("gap.starts", int),
}


def parse_text(text):
    """``key = value`` lines -> dict of raw strings.  ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", "expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(key, "unknown key")
        out[key] = value
    return out


def _apply(obj, updates):
    """``replace`` with nested ``{field: value or {subfield: ...}}`` updates, one level at a time."""
    kw = {}
    for name, v in updates.items():
        kw[name] = _apply(getattr(obj, name), v) if isinstance(v, dict) else v
    return replace(obj, **kw)


def from_dict(raw):
    """Build a validated :class:`RunConfig` from ``{dotted key: string}``."""
    if "env.id" not in raw:
        raise ConfigError("env.id", "missing required key")
    updates = {}
    for key, text in raw.items():
        path, parser = KEYS[key]
        try:
            value = parser(text)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {text!r}: {exc}") from None
        node = updates
        *parents, leaf = path.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    env_id = updates.pop("env_id")
    if env_id not in _env_ids():
        raise ConfigError("env.id", f"unknown environment {env_id!r} (choose from {', '.join(sorted(_env_ids()))})")
    base = RunConfig(env_id)
    try:
        cfg = _apply(base, updates)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(_guess_key(str(exc), raw), str(exc)) from None
    return replace(cfg, mpc=replace(cfg.mpc, grad=replace(cfg.mpc.grad, cem=cfg.mpc.cem)))


def _env_ids():
    from .envs import REGISTRY

    return REGISTRY


def _guess_key(message, raw):
    for key in raw:
        if key.split(".")[-1] in message:
            return key
    return "config"


def load(path):
    with open(path) as f:
        return from_dict(parse_text(f.read()))


def dumps(cfg):
    """Render a config back into the flat text format."""
    lines = []
    for key, (path, parser) in KEYS.items():
        obj = cfg
        for part in path.split("."):
            obj = getattr(obj, part)
        if isinstance(obj, tuple):
            obj = ", ".join(str(v) for v in obj)
        elif obj is None and key == "adam.restarts":
            obj = "auto"
        elif isinstance(obj, bool):
            obj = "true" if obj else "false"
        lines.append(f"{key} = {obj}")
    return "\n".join(lines) + "\n"
