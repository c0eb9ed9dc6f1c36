"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba env steps are used unless ``DAEPLAN_NUMBA=0`` is set in the
environment (or numba cannot be imported).  Both paths compute the same thing; they agree
to rounding, not bit-for-bit, so a single run never mixes them.
"""

import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

NUMBA_ENABLED = _HAVE_NUMBA and os.environ.get("DAEPLAN_NUMBA", "1") != "0"

ACT_IDENTITY = 0
ACT_SWISH = 1
ACT_TANH = 2


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, fastmath=False)(fn)


# ---------------------------------------------------------------- dense layer


def sigmoid(z):
    # faster than scipy's expit on this workload; exp(-z) overflowing to inf still gives 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def dense_numpy(x, W, b, act):
    z = x @ W + b
    if act == ACT_SWISH:
        return z * sigmoid(z)
    if act == ACT_TANH:
        return np.tanh(z)
    return z


@_njit
def _dense_numba(x, W, b, act):
    z = np.dot(x, W)
    n, m = z.shape
    for i in range(n):
        for j in range(m):
            v = z[i, j] + b[j]
            if act == 1:
                v = v / (1.0 + np.exp(-v))
            elif act == 2:
                v = np.tanh(v)
            z[i, j] = v
    return z


def dense_numba(x, W, b, act):
    lead = x.shape[:-1]
    x2 = np.ascontiguousarray(x.reshape(-1, x.shape[-1]), dtype=np.float64)
    out = _dense_numba(x2, np.ascontiguousarray(W), np.ascontiguousarray(b), act)
    return out.reshape(lead + (W.shape[1],))


def dense(x, W, b, act):
    """``act(x @ W + b)`` over the last axis of ``x``.

    Always the numpy path: without SVML the jitted loop calls scalar ``exp``
    and ``tanh`` while numpy's are SIMD, so ``dense_numba`` only breaks even
    on swish and loses on tanh (see benchmarks/bench_kernels.py).
    """
    return dense_numpy(x, W, b, act)


# ------------------------------------------------------------ env dynamics
# Parameter vectors are laid out by the env constructors in envs.py.


@_njit
def cartpole_step_numba(states, actions, p):
    # p = [cart_mass, pole_mass, length, gravity, dt, force_scale, damping, substeps]
    M, m, ell, g, dt, fs, damp = p[0], p[1], p[2], p[3], p[4], p[5], p[6]
    nsub = int(p[7])
    h = dt / nsub
    n = states.shape[0]
    out = np.empty_like(states)
    for i in range(n):
        x, xd, s, c, td = states[i, 0], states[i, 1], states[i, 2], states[i, 3], states[i, 4]
        F = fs * actions[i, 0]
        for _ in range(nsub):
            r1 = F + m * ell * s * td * td
            r2 = m * g * ell * s - damp * td
            den = ell * (M + m * s * s)
            xdd = (ell * r1 - c * r2) / den
            tdd = ((M + m) * r2 - m * ell * c * r1) / (m * ell * den)
            xd = xd + h * xdd
            td = td + h * tdd
            x = x + h * xd
            d = h * td
            cd = np.cos(d)
            sd = np.sin(d)
            s, c = s * cd + c * sd, c * cd - s * sd
        out[i, 0] = x
        out[i, 1] = xd
        out[i, 2] = s
        out[i, 3] = c
        out[i, 4] = td
    return out


@_njit
def reacher_step_numba(states, actions, p):
    # p = [dt]; state = [px, py, vx, vy, gx, gy]
    dt = p[0]
    n = states.shape[0]
    out = states.copy()
    for i in range(n):
        for k in range(2):
            a = actions[i, k]
            out[i, k] = states[i, k] + dt * states[i, 2 + k] + 0.5 * dt * dt * a
            out[i, 2 + k] = states[i, 2 + k] + dt * a
    return out


@_njit
def reactor_step_numba(states, actions, p):
    # p = [dt, k_feed, k_out, k_react, k_level, k_vent, k_comp, level_half, feed_comp]
    dt, kf, ko, kr, kl, kv, kc, lh, cf = p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7], p[8]
    n = states.shape[0]
    out = np.empty_like(states)
    for i in range(n):
        L, P, c = states[i, 0], states[i, 1], states[i, 2]
        u1, u2 = actions[i, 0], actions[i, 1]
        rate = kr * P * c
        dL = kl * u1 - ko * L / (lh + L)
        dP = kf * u1 - kv * u2 * P - rate
        dc = kc * u1 * (cf - c) - rate / (1.0 + P)
        out[i, 0] = L + dt * dL
        out[i, 1] = P + dt * dP
        out[i, 2] = c + dt * dc
    return out
