"""Binary checkpoints for trained networks.

Layout (all little-endian)::

    magic        8 bytes   b"DAEPLAN1"
    kind         u32       1 = dynamics model, 2 = denoiser
    state_dim    u32
    action_dim   u32
    window       u32       1 for dynamics models
    sigma        f64       denoiser corruption std, 0 for dynamics models
    n_vectors    u32       normalization statistics, each: u32 length + f64 values
                           dynamics: input mean, input std, delta mean, delta std
                           denoiser: window mean, window std
    n_layers     u32       each: u32 rows, u32 cols, u32 activation code
    layer data             per layer: rows*cols f64 weights (row-major), cols f64 bias

For dynamics models the last two layers are the mean and log-variance heads;
both read the output of the preceding (trunk) layer.
"""

import struct

import numpy as np

from .autodiff import ACTIVATIONS, MlpParams
from .models import Denoiser, DynamicsModel, Normalizer

MAGIC = b"DAEPLAN1"
KIND_DYNAMICS = 1
KIND_DENOISER = 2
_ACT_NAMES = {v: k for k, v in ACTIVATIONS.items()}


def _pack(kind, state_dim, action_dim, window, sigma, vectors, layers):
    out = [MAGIC, struct.pack("<IIIId", kind, state_dim, action_dim, window, sigma)]
    out.append(struct.pack("<I", len(vectors)))
    for v in vectors:
        v = np.asarray(v, dtype="<f8")
        out += [struct.pack("<I", v.size), v.tobytes()]
    out.append(struct.pack("<I", len(layers)))
    for W, _, act in layers:
        out.append(struct.pack("<III", W.shape[0], W.shape[1], ACTIVATIONS[act]))
    for W, b, _ in layers:
        out += [np.ascontiguousarray(W, dtype="<f8").tobytes(), np.asarray(b, dtype="<f8").tobytes()]
    return b"".join(out)


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, fmt):
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def floats(self, n):
        arr = np.frombuffer(self.data, dtype="<f8", count=n, offset=self.pos).astype(np.float64)
        self.pos += 8 * n
        return arr


def _unpack(data):
    if data[:8] != MAGIC:
        raise ValueError("not a daeplan checkpoint")
    r = _Reader(data)
    r.pos = 8
    kind, sd, adim, window, sigma = r.take("<IIIId")
    (nvec,) = r.take("<I")
    vectors = []
    for _ in range(nvec):
        (n,) = r.take("<I")
        vectors.append(r.floats(n))
    (nl,) = r.take("<I")
    shapes = [r.take("<III") for _ in range(nl)]
    layers = []
    for rows, cols, act in shapes:
        W = r.floats(rows * cols).reshape(rows, cols)
        b = r.floats(cols)
        layers.append((W, b, _ACT_NAMES[act]))
    if r.pos != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return kind, sd, adim, window, sigma, vectors, layers


def _layers(params):
    return list(zip(params.weights, params.biases, params.activations))


def _params(layers):
    return MlpParams([W for W, _, _ in layers], [b for _, b, _ in layers], [a for _, _, a in layers])


def dumps_dynamics(model):
    vectors = [model.in_norm.mean, model.in_norm.std, model.out_norm.mean, model.out_norm.std]
    layers = _layers(model.trunk) + _layers(model.mean_head) + _layers(model.logvar_head)
    return _pack(KIND_DYNAMICS, model.state_dim, model.action_dim, 1, 0.0, vectors, layers)


def dumps_denoiser(dae):
    return _pack(
        KIND_DENOISER, dae.state_dim, dae.action_dim, dae.window, dae.sigma, [dae.norm.mean, dae.norm.std], _layers(dae.net)
    )


def loads(data):
    kind, sd, adim, window, sigma, vectors, layers = _unpack(data)
    if kind == KIND_DYNAMICS:
        return DynamicsModel(
            _params(layers[:-2]),
            _params(layers[-2:-1]),
            _params(layers[-1:]),
            Normalizer(vectors[0], vectors[1]),
            Normalizer(vectors[2], vectors[3]),
            sd,
            adim,
        )
    if kind == KIND_DENOISER:
        return Denoiser(_params(layers), sigma, window, Normalizer(vectors[0], vectors[1]), sd, adim)
    raise ValueError(f"unknown checkpoint kind {kind}")


def save(obj, path):
    data = dumps_dynamics(obj) if isinstance(obj, DynamicsModel) else dumps_denoiser(obj)
    with open(path, "wb") as f:
        f.write(data)


def load(path):
    with open(path, "rb") as f:
        return loads(f.read())
