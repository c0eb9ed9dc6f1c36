"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every primitive accepts plain numpy values or :class:`Node` objects.  When no
argument is a node the primitive simply evaluates with numpy, so the same
model/reward code runs both untaped (batched planning) and taped (training,
backprop-through-time).
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import NonFiniteError, ShapeError


class Tape:
    """Append-only record of primitive operations.

    A tape is single-threaded; build a fresh one for every forward pass.
    """

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents=(), vjp=None, op="leaf", is_var=False):
        node = Node(self, len(self.nodes), np.asarray(value, dtype=np.float64), parents, vjp, op, is_var)
        self.nodes.append(node)
        return node

    def var(self, value):
        """A differentiable leaf."""
        return self._push(np.array(value, dtype=np.float64), is_var=True)

    def const(self, value):
        """A non-differentiable leaf."""
        return self._push(np.array(value, dtype=np.float64), op="const")


class Node:
    __slots__ = ("tape", "id", "value", "parents", "vjp", "op", "is_var")
    __array_priority__ = 100.0
    __array_ufunc__ = None

    def __init__(self, tape, id, value, parents, vjp, op, is_var):
        self.tape = tape
        self.id = id
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.is_var = is_var

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, k):
        if k == 2:
            return square(self)
        raise NotImplementedError("only square is supported")

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return sum(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return reshape(self, shape)


def value_of(x):
    return x.value if isinstance(x, Node) else x


def _tape_of(*args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _lift(tape, x):
    if isinstance(x, Node):
        if x.tape is not tape:
            raise ValueError("nodes belong to different tapes")
        return x
    return tape.const(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _record(op, value, args, vjp):
    tape = _tape_of(*args)
    keep = [i for i, a in enumerate(args) if isinstance(a, Node)]
    for i in keep:
        if args[i].tape is not tape:
            raise ValueError("nodes belong to different tapes")
    parents = tuple(args[i].id for i in keep)
    if len(keep) < len(args):
        # plain arrays are constants: no leaf on the tape, their adjoints are dropped
        full = vjp

        def vjp(g):
            out = full(g)
            return [out[i] for i in keep]

    return tape._push(value, parents, vjp, op)


# ------------------------------------------------------------------ primitives


def add(a, b):
    va, vb = value_of(a), value_of(b)
    out = va + vb
    if _tape_of(a, b) is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _record("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    out = va - vb
    if _tape_of(a, b) is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _record("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def neg(a):
    va = value_of(a)
    if _tape_of(a) is None:
        return -va
    return _record("neg", -va, (a,), lambda g: (-g,))


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va * vb
    if _tape_of(a, b) is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _record("mul", out, (a, b), lambda g: (_unbroadcast(g * vb, sa), _unbroadcast(g * va, sb)))


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb
    if _tape_of(a, b) is None:
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "div", out, (a, b), lambda g: (_unbroadcast(g / vb, sa), _unbroadcast(-g * out / vb, sb))
    )


def matmul(a, b):
    """``a @ b`` where ``b`` is a matrix and ``a`` has any leading batch axes."""
    va, vb = value_of(a), value_of(b)
    if va.shape[-1] != vb.shape[0] or vb.ndim != 2:
        raise ShapeError(f"matmul: cannot multiply {va.shape} by {vb.shape}")
    out = va @ vb
    if _tape_of(a, b) is None:
        return out

    def vjp(g):
        ga = g @ vb.T
        if va.ndim == 1:
            gb = np.outer(va, g)
        else:
            gb = va.reshape(-1, va.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _record("matmul", out, (a, b), vjp)


def square(a):
    va = value_of(a)
    out = va * va
    if _tape_of(a) is None:
        return out
    return _record("square", out, (a,), lambda g: (2.0 * va * g,))


def exp(a):
    va = value_of(a)
    out = np.exp(va)
    if _tape_of(a) is None:
        return out
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a):
    va = value_of(a)
    out = np.log(va)
    if _tape_of(a) is None:
        return out
    return _record("log", out, (a,), lambda g: (g / va,))


def sin(a):
    va = value_of(a)
    out = np.sin(va)
    if _tape_of(a) is None:
        return out
    return _record("sin", out, (a,), lambda g: (g * np.cos(va),))


def cos(a):
    va = value_of(a)
    out = np.cos(va)
    if _tape_of(a) is None:
        return out
    return _record("cos", out, (a,), lambda g: (-g * np.sin(va),))


def tanh(a):
    va = value_of(a)
    out = np.tanh(va)
    if _tape_of(a) is None:
        return out
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    va = value_of(a)
    out = _kernels.sigmoid(va)
    if _tape_of(a) is None:
        return out
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def swish(a):
    """``x * sigmoid(x)``."""
    va = value_of(a)
    sig = _kernels.sigmoid(va)
    out = va * sig
    if _tape_of(a) is None:
        return out
    return _record("swish", out, (a,), lambda g: (g * (sig + out * (1.0 - sig)),))


def softplus(a):
    va = value_of(a)
    out = np.logaddexp(0.0, va)
    if _tape_of(a) is None:
        return out
    return _record("softplus", out, (a,), lambda g: (g * _kernels.sigmoid(va),))


def relu(a):
    va = value_of(a)
    out = np.maximum(va, 0.0)
    if _tape_of(a) is None:
        return out
    return _record("relu", out, (a,), lambda g: (g * (va > 0.0),))


def sum(a, axis=None):
    va = value_of(a)
    out = np.sum(va, axis=axis)
    if _tape_of(a) is None:
        return out
    shape = va.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", out, (a,), vjp)


def mean(a, axis=None):
    va = value_of(a)
    n = va.size if axis is None else va.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def concat(xs, axis=-1):
    vals = [np.asarray(value_of(x), dtype=np.float64) for x in xs]
    if _tape_of(*xs) is None:
        return np.concatenate(vals, axis=axis)
    out = np.concatenate(vals, axis=axis)
    ax = axis % out.ndim
    splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
    return _record("concat", out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=ax)))


def getitem(a, idx):
    """Basic (non-fancy) slicing."""
    va = value_of(a)
    out = va[idx]
    if _tape_of(a) is None:
        return out
    shape = va.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _record("slice", np.array(out), (a,), vjp)


def reshape(a, shape):
    va = value_of(a)
    out = np.reshape(va, shape)
    if _tape_of(a) is None:
        return out
    old = va.shape
    return _record("reshape", out, (a,), lambda g: (g.reshape(old),))


def stop_gradient(a):
    if isinstance(a, Node):
        return a.tape.const(a.value)
    return a


# ----------------------------------------------------------------- backward


def backward(tape, root):
    """Adjoints of ``root`` with respect to every variable leaf on ``tape``.

    Returns ``{leaf id: gradient array}``.  Leaves ``root`` does not depend on
    get zeros.
    """
    if not isinstance(root, Node) or root.tape is not tape:
        raise ValueError("root must be a node of this tape")
    if root.value.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
    adj = [None] * len(tape.nodes)
    adj[root.id] = np.ones_like(root.value)
    for i in range(root.id, -1, -1):
        g = adj[i]
        node = tape.nodes[i]
        if g is None or node.vjp is None:
            continue
        for pid, pg in zip(node.parents, node.vjp(g)):
            if adj[pid] is None:
                adj[pid] = pg
            else:
                adj[pid] = adj[pid] + pg
    grads = {}
    for node in tape.nodes:
        if node.is_var:
            g = adj[node.id]
            grads[node.id] = np.zeros_like(node.value) if g is None else np.asarray(g).reshape(node.value.shape)
    return grads


def grad(tape, root, leaves):
    """Convenience: gradients for ``leaves`` (a node or a list of nodes)."""
    g = backward(tape, root)
    if isinstance(leaves, Node):
        return g[leaves.id]
    return [g[n.id] for n in leaves]


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f`` at ``x``."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def check_finite(x, what="value"):
    v = value_of(x)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"non-finite {what}")
    return x


# ---------------------------------------------------------------------- MLP

ACTIVATIONS = {"identity": _kernels.ACT_IDENTITY, "swish": _kernels.ACT_SWISH, "tanh": _kernels.ACT_TANH}


@dataclass
class MlpParams:
    """Dense network parameters; ``weights[k]`` has shape ``(in, out)``."""

    weights: list
    biases: list
    activations: list

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ShapeError("weights, biases and activations must have equal length")
        for k, (W, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
            if value_of(W).ndim != 2 or value_of(b).shape != (value_of(W).shape[1],):
                raise ShapeError(f"layer {k}: weight {value_of(W).shape} and bias {value_of(b).shape} disagree")
            if k and value_of(W).shape[0] != value_of(self.weights[k - 1]).shape[1]:
                raise ShapeError(
                    f"layer {k} expects {value_of(W).shape[0]} inputs but layer {k - 1} "
                    f"emits {value_of(self.weights[k - 1]).shape[1]}"
                )

    @property
    def in_dim(self):
        return value_of(self.weights[0]).shape[0]

    @property
    def out_dim(self):
        return value_of(self.weights[-1]).shape[1]

    def arrays(self):
        """Flat parameter list, in the order used by :func:`adam_step`."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays, activations):
        return cls(list(arrays[0::2]), list(arrays[1::2]), list(activations))

    def on_tape(self, tape):
        """Copy of the parameters as variable leaves of ``tape``."""
        return MlpParams(
            [tape.var(W) for W in self.weights], [tape.var(b) for b in self.biases], list(self.activations)
        )

    def copy(self):
        return MlpParams(
            [np.array(W) for W in self.weights], [np.array(b) for b in self.biases], list(self.activations)
        )


def dense(x, W, b, act="identity"):
    """Fused ``act(x @ W + b)`` recorded as a single tape node.

    Only arguments that are nodes become parents, so plain-array weights
    are neither copied onto the tape nor differentiated.
    """
    vx, vW, vb = value_of(x), value_of(W), value_of(b)
    if vx.shape[-1] != vW.shape[0]:
        raise ShapeError(f"dense: cannot multiply {vx.shape} by {vW.shape}")
    z = vx @ vW + vb
    if act == "swish":
        sig = _kernels.sigmoid(z)
        out = z * sig
    elif act == "tanh":
        out = np.tanh(z)
    elif act == "identity":
        out = z
    else:
        raise ValueError(f"unknown activation {act!r}")
    tape = _tape_of(x, W, b)
    if tape is None:
        return out
    which = [i for i, a in enumerate((x, W, b)) if isinstance(a, Node)]
    parents = [(x, W, b)[i] for i in which]
    if any(p.tape is not tape for p in parents):
        raise ValueError("nodes belong to different tapes")

    def vjp(g):
        if act == "swish":
            g = g * (sig + out * (1.0 - sig))
        elif act == "tanh":
            g = g * (1.0 - out * out)
        res = []
        for i in which:
            if i == 0:
                res.append(g @ vW.T)
            elif i == 1:
                res.append(np.outer(vx, g) if vx.ndim == 1 else vx.reshape(-1, vx.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            else:
                res.append(g.reshape(-1, g.shape[-1]).sum(axis=0))
        return res

    return tape._push(out, tuple(p.id for p in parents), vjp, "dense")


def init_mlp(sizes, activations, rng):
    """Random parameters with ``N(0, 1/fan_in)`` weights and zero biases."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    weights = [rng.normal(0.0, 1.0 / np.sqrt(n), size=(n, m)) for n, m in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(m) for m in sizes[1:]]
    return MlpParams(weights, biases, list(activations))


def mlp_forward(params, x, tape=None):
    """Evaluate the network on the last axis of ``x``.

    With no tape and plain arrays the untaped kernels in ``_kernels`` do the
    work.  Otherwise every layer is recorded on the tape.
    """
    vx = value_of(x)
    if np.shape(vx)[-1:] != (params.in_dim,):
        raise ShapeError(f"input shape {np.shape(vx)} does not match network input dimension {params.in_dim}")
    taped = tape is not None or _tape_of(x, *params.weights, *params.biases) is not None
    if not taped:
        h = np.asarray(x, dtype=np.float64)
        for W, b, act in zip(params.weights, params.biases, params.activations):
            h = _kernels.dense(h, W, b, ACTIVATIONS[act])
        return h
    if tape is not None and not isinstance(x, Node):
        x = tape.const(x)
    h = x
    for W, b, act in zip(params.weights, params.biases, params.activations):
        h = dense(h, W, b, act)
    return h


# --------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_state(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState(lr, beta1, beta2, eps, 0, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state):
    """One bias-corrected Adam descent step.

    Returns ``(new_params, new_state)``; the inputs are left untouched.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and moments must have the same length")
    for p, g, m in zip(params, grads, state.m):
        if np.shape(p) != np.shape(g) or np.shape(p) != np.shape(m):
            raise ShapeError(f"shape mismatch: param {np.shape(p)}, grad {np.shape(g)}, moment {np.shape(m)}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient in adam_step")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m = [b1 * m + (1.0 - b1) * g for m, g in zip(state.m, grads)]
    new_v = [b2 * v + (1.0 - b2) * g * g for v, g in zip(state.v, grads)]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p = [p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps) for p, m, v in zip(params, new_m, new_v)]
    return new_p, AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
