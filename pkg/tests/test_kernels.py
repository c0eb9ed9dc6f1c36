import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from daeplan import _kernels

ACTS = [_kernels.ACT_IDENTITY, _kernels.ACT_SWISH, _kernels.ACT_TANH]


@pytest.mark.parametrize("act", ACTS)
def test_dense_paths_agree(act):
    rng = np.random.default_rng(act)
    x, W, b = rng.normal(size=(3, 7, 5)), rng.normal(size=(5, 4)), rng.normal(size=4)
    a = _kernels.dense_numpy(x, W, b, act)
    c = _kernels.dense_numba(x, W, b, act)
    assert a.shape == c.shape == (3, 7, 4)
    assert np.max(np.abs(a - c)) <= 1e-12


def test_swish_extreme_inputs_stay_finite():
    z = np.array([[-800.0, -40.0, 0.0, 40.0, 800.0]])
    eye = np.eye(5)
    for fn in (_kernels.dense_numpy, _kernels.dense_numba):
        out = fn(z, eye, np.zeros(5), _kernels.ACT_SWISH)
        assert np.all(np.isfinite(out)) and out[0, 0] == 0.0 and out[0, -1] == 800.0


def test_sigmoid_matches_scipy():
    from scipy.special import expit

    z = np.linspace(-50, 50, 1001)
    assert np.max(np.abs(_kernels.sigmoid(z) - expit(z))) <= 1e-15


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_dense_paths_agree_random_shapes(n_in, n_out, seed):
    rng = np.random.default_rng(seed)
    x, W, b = rng.normal(size=(4, n_in)) * 3, rng.normal(size=(n_in, n_out)), rng.normal(size=n_out)
    for act in ACTS:
        assert np.allclose(_kernels.dense_numpy(x, W, b, act), _kernels.dense_numba(x, W, b, act), rtol=1e-12, atol=1e-12)


def test_env_flag_disables_numba():
    code = "from daeplan import _kernels; print(_kernels.NUMBA_ENABLED)"
    env = {**os.environ, "DAEPLAN_NUMBA": "0"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "False"
