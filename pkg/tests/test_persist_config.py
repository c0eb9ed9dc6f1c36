import struct

import numpy as np
import pytest

from daeplan import autodiff as ad
from daeplan import config, models, persist
from daeplan.errors import ConfigError

CONFIG_DIR = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"


def test_dynamics_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    m = models.init_dynamics(5, 1, (7, 6), seed=3, in_norm=models.Normalizer(rng.normal(size=6), rng.uniform(1, 2, 6)))
    persist.save(m, tmp_path / "d.bin")
    back = persist.load(tmp_path / "d.bin")
    assert all(np.array_equal(a, b) for a, b in zip(m.param_arrays(), back.param_arrays()))
    s, a = rng.normal(size=(4, 5)), rng.normal(size=(4, 1))
    assert np.array_equal(models.predict(m, s, a)[0], models.predict(back, s, a)[0])
    assert persist.dumps_dynamics(back) == persist.dumps_dynamics(m)


def test_denoiser_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    d = models.Denoiser(ad.init_mlp([6, 4, 6], ["swish", "identity"], rng), 0.2, 2, models.Normalizer.identity(6), 2, 1)
    persist.save(d, tmp_path / "g.bin")
    back = persist.load(tmp_path / "g.bin")
    assert (back.sigma, back.window, back.state_dim, back.action_dim) == (0.2, 2, 2, 1)
    x = rng.normal(size=(3, 6))
    assert np.array_equal(models.denoise(d, x), models.denoise(back, x))


def test_header_layout():
    m = models.init_dynamics(2, 1, (3,), seed=0)
    data = persist.dumps_dynamics(m)
    assert data[:8] == b"DAEPLAN1"
    assert struct.unpack_from("<IIIId", data, 8) == (persist.KIND_DYNAMICS, 2, 1, 1, 0.0)


def test_bad_magic():
    with pytest.raises(ValueError):
        persist.loads(b"NOTAFILE" + bytes(40))


# ------------------------------------------------------------------- config


def test_shipped_configs_load():
    paths = sorted(CONFIG_DIR.glob("*.cfg"))
    assert paths
    for p in paths:
        cfg = config.load(p)
        assert config.from_dict(config.parse_text(config.dumps(cfg))) == cfg


def test_dump_round_trip_defaults():
    cfg = config.RunConfig("reacher2d")
    assert config.from_dict(config.parse_text(config.dumps(cfg))) == cfg


def test_missing_env_names_field():
    with pytest.raises(ConfigError) as exc:
        config.from_dict(config.parse_text("run.episodes = 3"))
    assert exc.value.field == "env.id"


@pytest.mark.parametrize(
    "text, field",
    [
        ("env.id = moon", "env.id"),
        ("env.id = cartpole\nplanner.alpha = -1", "planner.alpha"),
        ("env.id = cartpole\ndae.sigma = 0", "dae.sigma"),
        ("env.id = cartpole\nmodel.epochs = many", "model.epochs"),
        ("env.id = cartpole\nwat = 1", "wat"),
        ("env.id = cartpole\nrun.episodes = 0\nrun.random_episodes = 1", "run.episodes"),
        ("env.id = cartpole\ngap.alphas = ", "gap.alphas"),
    ],
)
def test_field_level_errors(text, field):
    with pytest.raises(ConfigError) as exc:
        config.from_dict(config.parse_text(text))
    assert exc.value.field == field


def test_comments_and_lists():
    cfg = config.from_dict(config.parse_text("# c\nenv.id = cartpole  # trailing\nmodel.hidden = 8, 8\ngap.alphas = 0.5 2\nadam.restarts = auto"))
    assert cfg.model.hidden == (8, 8) and cfg.gap.alphas == (0.5, 2.0) and cfg.mpc.grad.restarts is None


def test_cem_section_shared_with_grad_planner():
    cfg = config.from_dict(config.parse_text("env.id = cartpole\ncem.population = 50\ncem.elites = 5"))
    assert cfg.mpc.grad.cem.population == 50


def test_reference_tables_consistent():
    for (env_id, opt), row in config.REFERENCE_HYPERPARAMS.items():
        assert opt in ("cem", "adam")
        assert (row["adam_lr"] is None) == (opt == "cem")
        assert row["alpha"] > 0 and row["dae_sigma"] > 0
    assert config.REFERENCE_HIDDEN == (200, 200, 200)
