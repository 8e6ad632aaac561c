"""Dense numerics for small MLPs: flat parameter stores, a minimal
reverse-mode tape over numpy arrays, network evaluation and Adam.

Everything here is float64 by default. Gradients are exact (checked against
central finite differences in the test suite); `forward` is pure and
bit-deterministic for fixed inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "sigmoid", "tanh", "identity")


class NonFiniteError(ValueError):
    """A NaN or Inf showed up where a finite value is required."""


class AlignmentError(ValueError):
    """Two ParamStores (or a FIM and a ParamStore) have different layouts."""


def require_finite(arr, what="array"):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


# ---------------------------------------------------------------------------
# Parameter storage


@dataclass
class ParamStore:
    """Named segments tiling one flat float vector.

    Two stores are *aligned* iff their segment lists are identical; alignment
    is a precondition for all EWC arithmetic.
    """

    segments: list  # of (name, shape, offset)
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        offset = 0
        for name, shape, off in self.segments:
            if off != offset:
                raise ValueError(f"segment {name!r} offset {off} != {offset}")
            offset += int(np.prod(shape, dtype=int))
        if offset != self.values.size:
            raise ValueError(
                f"segments cover {offset} values, vector has {self.values.size}"
            )

    @classmethod
    def from_arrays(cls, named):
        """Build from an ordered iterable of (name, array)."""
        segments, chunks, offset = [], [], 0
        for name, arr in named:
            arr = np.asarray(arr, dtype=np.float64)
            segments.append((name, tuple(arr.shape), offset))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(segments, values)

    def _slot(self, name):
        for seg_name, shape, offset in self.segments:
            if seg_name == name:
                return shape, offset
        raise KeyError(name)

    def get(self, name):
        shape, offset = self._slot(name)
        size = int(np.prod(shape, dtype=int))
        return self.values[offset : offset + size].reshape(shape)

    def set(self, name, arr):
        shape, offset = self._slot(name)
        arr = np.asarray(arr, dtype=np.float64)
        if tuple(arr.shape) != tuple(shape):
            raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {shape}")
        size = arr.size
        self.values[offset : offset + size] = arr.ravel()

    def names(self):
        return [name for name, _, _ in self.segments]

    def copy(self):
        return ParamStore(list(self.segments), self.values.copy())

    def zeros_like(self):
        return ParamStore(list(self.segments), np.zeros_like(self.values))

    def aligned_with(self, other):
        return self.segments == other.segments

    def require_aligned(self, other, what="ParamStore"):
        if not self.aligned_with(other):
            raise AlignmentError(f"misaligned {what}: segment lists differ")

    def __len__(self):
        return self.values.size


# ---------------------------------------------------------------------------
# Reverse-mode tape


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (undo numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """A numpy array plus the closure needed to backpropagate through it."""

    __slots__ = ("value", "grad", "parents", "vjp")

    # keep numpy from consuming mixed expressions; reflected ops run instead
    __array_ufunc__ = None

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    # -- graph traversal ----------------------------------------------------

    def backward(self):
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.vjp is None or node.grad is None:
                continue
            for parent, g in zip(node.parents, node.vjp(node.grad)):
                if g is None:
                    continue
                g = _unbroadcast(np.asarray(g, dtype=np.float64), parent.value.shape)
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        o, ov = _split(other)
        return Var(self.value + ov, _par(self, o), lambda g: (g, g if o else None))

    __radd__ = __add__

    def __neg__(self):
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other):
        o, ov = _split(other)
        return Var(self.value - ov, _par(self, o), lambda g: (g, -g if o else None))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o, ov = _split(other)
        sv = self.value
        return Var(sv * ov, _par(self, o), lambda g: (g * ov, g * sv if o else None))

    __rmul__ = __mul__

    def __truediv__(self, other):
        o, ov = _split(other)
        sv = self.value
        return Var(
            sv / ov,
            _par(self, o),
            lambda g: (g / ov, -g * sv / (ov * ov) if o else None),
        )

    def __rtruediv__(self, other):
        ov = np.asarray(other, dtype=np.float64)
        sv = self.value
        return Var(ov / sv, (self,), lambda g: (-g * ov / (sv * sv),))

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only constant exponents are supported")
        sv = self.value
        return Var(sv**n, (self,), lambda g: (g * n * sv ** (n - 1),))

    def __matmul__(self, other):
        o, ov = _split(other)
        sv = self.value
        return Var(
            sv @ ov,
            _par(self, o),
            lambda g: (g @ ov.T, sv.T @ g if o else None),
        )

    def __rmatmul__(self, other):
        ov = np.asarray(other, dtype=np.float64)
        sv = self.value
        return Var(ov @ sv, (self,), lambda g: (ov.T @ g,))

    def reshape(self, *shape):
        sv = self.value
        return Var(sv.reshape(*shape), (self,), lambda g: (g.reshape(sv.shape),))


def _split(other):
    if isinstance(other, Var):
        return other, other.value
    return None, np.asarray(other, dtype=np.float64)


def _par(a, b):
    return (a, b) if b is not None else (a,)


# Elementwise / reduction helpers. Each works on plain ndarrays too, so the
# same model code serves training (Var) and inference (numpy).


def _is_var(x):
    return isinstance(x, Var)


def exp(x):
    if _is_var(x):
        out = np.exp(x.value)
        return Var(out, (x,), lambda g: (g * out,))
    return np.exp(x)


def log(x):
    if _is_var(x):
        return Var(np.log(x.value), (x,), lambda g: (g / x.value,))
    return np.log(x)


def tanh(x):
    if _is_var(x):
        out = np.tanh(x.value)
        return Var(out, (x,), lambda g: (g * (1.0 - out * out),))
    return np.tanh(x)


def sigmoid(x):
    if _is_var(x):
        out = _sigmoid_np(x.value)
        return Var(out, (x,), lambda g: (g * out * (1.0 - out),))
    return _sigmoid_np(x)


def _sigmoid_np(v):
    out = np.empty_like(v, dtype=np.float64)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def relu(x):
    if _is_var(x):
        mask = x.value > 0
        return Var(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))
    return np.maximum(x, 0.0)


def clip(x, lo, hi):
    if _is_var(x):
        mask = (x.value >= lo) & (x.value <= hi)
        return Var(np.clip(x.value, lo, hi), (x,), lambda g: (g * mask,))
    return np.clip(x, lo, hi)


def vsum(x, axis=None):
    if _is_var(x):
        sv = x.value

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, sv.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), sv.shape).copy(),)

        return Var(sv.sum(axis=axis), (x,), vjp)
    return np.sum(x, axis=axis)


def vmean(x, axis=None):
    if _is_var(x):
        n = x.value.size if axis is None else x.value.shape[axis]
        return vsum(x, axis=axis) * (1.0 / n)
    return np.mean(x, axis=axis)


def concat(parts, axis=-1):
    if any(_is_var(p) for p in parts):
        vars_ = [p if _is_var(p) else Var(p) for p in parts]
        vals = [v.value for v in vars_]
        sizes = [v.shape[axis] for v in vals]
        splits = np.cumsum(sizes)[:-1]

        def vjp(g):
            return tuple(np.split(g, splits, axis=axis))

        return Var(np.concatenate(vals, axis=axis), tuple(vars_), vjp)
    return np.concatenate(parts, axis=axis)


def slice_cols(x, start, stop):
    """Column slice along the last axis, with gradient scatter."""
    if _is_var(x):
        sv = x.value

        def vjp(g):
            full = np.zeros_like(sv)
            full[..., start:stop] = g
            return (full,)

        return Var(sv[..., start:stop], (x,), vjp)
    return x[..., start:stop]


def value_of(x):
    return x.value if _is_var(x) else np.asarray(x, dtype=np.float64)


_ACT_FN = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh, "identity": lambda x: x}


# ---------------------------------------------------------------------------
# Network specification and evaluation


@dataclass(frozen=True)
class NetworkSpec:
    """A chain of affine layers with optional class conditioning.

    `conditioning` is "none", "concat" (condition appended to the input) or
    "film" (per-layer feature-wise affine modulation of every hidden
    pre-activation by the condition vector).
    """

    in_dim: int
    widths: tuple
    activations: tuple
    cond_dim: int = 0
    conditioning: str = "none"

    def __post_init__(self):
        if len(self.widths) != len(self.activations):
            raise ValueError("widths and activations must have equal length")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.conditioning not in ("none", "concat", "film"):
            raise ValueError(f"unknown conditioning {self.conditioning!r}")
        if self.conditioning != "none" and self.cond_dim <= 0:
            raise ValueError("conditioning requires cond_dim > 0")

    @property
    def out_dim(self):
        return self.widths[-1]

    def segment_shapes(self):
        """Ordered (name, shape) pairs for an aligned ParamStore."""
        fan_in = self.in_dim + (self.cond_dim if self.conditioning == "concat" else 0)
        out = []
        for i, width in enumerate(self.widths):
            out.append((f"layer{i}.W", (fan_in, width)))
            out.append((f"layer{i}.b", (width,)))
            if self.conditioning == "film" and i < len(self.widths) - 1:
                out.append((f"layer{i}.film_gain", (self.cond_dim, width)))
                out.append((f"layer{i}.film_shift", (self.cond_dim, width)))
            fan_in = width
        return out

    def to_dict(self):
        return {
            "in_dim": self.in_dim,
            "widths": list(self.widths),
            "activations": list(self.activations),
            "cond_dim": self.cond_dim,
            "conditioning": self.conditioning,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            in_dim=int(d["in_dim"]),
            widths=tuple(int(w) for w in d["widths"]),
            activations=tuple(d["activations"]),
            cond_dim=int(d["cond_dim"]),
            conditioning=d["conditioning"],
        )


def init_params(spec, rng, prefix=""):
    """He-style init: weights ~ N(0, 2/fan_in), zero biases."""
    named = []
    for name, shape in spec.segment_shapes():
        if name.endswith(".b"):
            arr = np.zeros(shape)
        else:
            arr = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        named.append((prefix + name, arr))
    return ParamStore.from_arrays(named)


def _getter(params, prefix=""):
    if isinstance(params, ParamStore):
        return lambda name: params.get(prefix + name)
    if callable(params):
        return lambda name: params(prefix + name)
    return lambda name: params[prefix + name]


def forward(spec, params, x, cond=None, prefix="", return_hidden=False):
    """Evaluate the network. `params` may hold ndarrays (pure numpy path) or
    Vars (tape path); `x`/`cond` likewise. Batched: x is (n, in_dim) or
    (in_dim,).
    """
    get = _getter(params, prefix)
    squeeze = value_of(x).ndim == 1
    if squeeze:
        x = x.reshape(1, -1) if _is_var(x) else np.asarray(x, float).reshape(1, -1)
        if cond is not None:
            cond = (
                cond.reshape(1, -1)
                if _is_var(cond)
                else np.asarray(cond, float).reshape(1, -1)
            )
    if value_of(x).shape[-1] != spec.in_dim:
        raise ValueError(
            f"input dim {value_of(x).shape[-1]} != spec.in_dim {spec.in_dim}"
        )
    if spec.conditioning != "none":
        if cond is None:
            raise ValueError("spec requires a condition vector")
        if value_of(cond).shape[-1] != spec.cond_dim:
            raise ValueError(
                f"condition dim {value_of(cond).shape[-1]} != cond_dim {spec.cond_dim}"
            )
    h = concat([x, cond], axis=-1) if spec.conditioning == "concat" else x
    hidden = []
    last = len(spec.widths) - 1
    for i, act in enumerate(spec.activations):
        z = h @ get(f"layer{i}.W") + get(f"layer{i}.b")
        if spec.conditioning == "film" and i < last:
            z = z * (1.0 + cond @ get(f"layer{i}.film_gain")) + cond @ get(
                f"layer{i}.film_shift"
            )
        h = _ACT_FN[act](z)
        if i < last:
            hidden.append(h)
    require_finite(value_of(h), "network output")
    if squeeze:
        h = h.reshape(-1) if _is_var(h) else h.reshape(-1)
        hidden = [a.reshape(-1) if _is_var(a) else a.reshape(-1) for a in hidden]
    if return_hidden:
        return h, hidden
    return h


# ---------------------------------------------------------------------------
# Gradients


def value_and_grad(loss_fn, params):
    """Evaluate `loss_fn` on tape leaves built from `params`.

    `loss_fn` receives a dict name -> Var and must return a scalar Var (a
    plain float return means the loss does not depend on the parameters).
    Returns (loss value, gradient ParamStore aligned with `params`).
    """
    leaves = {name: Var(params.get(name).copy()) for name in params.names()}
    out = loss_fn(leaves)
    grads = params.zeros_like()
    if not isinstance(out, Var):
        value = float(out)
        if not np.isfinite(value):
            raise NonFiniteError("non-finite loss")
        return value, grads
    value = float(out.value)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite loss")
    out.backward()
    for name, leaf in leaves.items():
        if leaf.grad is not None:
            grads.set(name, leaf.grad)
    require_finite(grads.values, "gradient")
    return value, grads


def gradient(loss_fn, params):
    """d loss / d theta_i, aligned with `params`."""
    return value_and_grad(loss_fn, params)[1]


def loss_value(loss_fn, params):
    """Evaluate the loss on plain numpy arrays (no tape)."""
    arrays = {name: params.get(name) for name in params.names()}
    out = loss_fn(arrays)
    return float(value_of(out))


def finite_diff_check(loss_fn, params, step=1e-6):
    """Max relative error between analytic and central-difference gradients."""
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = value_and_grad(loss_fn, params)
    work = params.copy()
    worst = 0.0
    for i in range(len(work)):
        orig = work.values[i]
        work.values[i] = orig + step
        hi = loss_value(loss_fn, work)
        work.values[i] = orig - step
        lo = loss_value(loss_fn, work)
        work.values[i] = orig
        numeric = (hi - lo) / (2.0 * step)
        if not np.isfinite(numeric):
            raise NonFiniteError("non-finite finite-difference evaluation")
        a = analytic.values[i]
        err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
        worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params):
        return cls(np.zeros(len(params)), np.zeros(len(params)))


def adam_step(params, grads, state, lr):
    """One in-place Adam update on params.values."""
    params.require_aligned(grads, "gradient")
    state.t += 1
    g = grads.values
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = state.m / (1.0 - state.beta1**state.t)
    vhat = state.v / (1.0 - state.beta2**state.t)
    params.values -= lr * mhat / (np.sqrt(vhat) + state.eps)
