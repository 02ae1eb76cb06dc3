"""Dense tensors with define-by-run reverse-mode differentiation.

A :class:`Tape` records every differentiable operation executed while it is
active (``with Tape() as tape: ...``).  :func:`backward` then walks the
records once in reverse to accumulate gradients.  Outside an active tape the
same operations simply compute values, which is how inference runs.

Forward matrix products are evaluated one row at a time (a stacked matmul of
(1, K) rows) so that each output row depends only on its own input row.  A
plain 2-D GEMM changes its blocking with the batch size, which would make the
result for one edge depend on which other edges happen to share the batch.

Every operation checks its output for NaN/Inf and raises
:class:`~gtea.errors.NumericError` naming the operation.
"""

from __future__ import annotations

import dataclasses
import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NumericError, ShapeError

GradFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_state = threading.local()


class Tensor:
    """An immutable n-d array that may participate in gradient computation."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # Internal constructor for op outputs: the array is freshly owned, no copy.
        t = cls.__new__(cls)
        if arr.flags.writeable and arr.flags.owndata:
            arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item(): tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: neg(self)
    __getitem__ = lambda self, idx: getitem(self, idx)


@dataclass
class _Record:
    op: str
    out: Tensor
    inputs: tuple[Tensor, ...]
    grad_fn: GradFn


class Tape:
    """Ordered log of executed operations, rebuilt for every forward pass.

    A tape is single-owner.  Each thread has its own active-tape stack, so
    independent tapes can run concurrently in different threads.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def __len__(self) -> int:
        return len(self.records)


def active_tape() -> Tape | None:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class no_tape:
    """Context manager that suspends recording (values only)."""

    def __enter__(self):
        self._saved = getattr(_state, "stack", None)
        _state.stack = []

    def __exit__(self, *exc):
        _state.stack = self._saved


def record_op(op: str, value: np.ndarray, inputs: Sequence[Tensor], grad_fn: GradFn) -> Tensor:
    """Wrap ``value`` as the output of ``op`` and log it on the active tape.

    ``grad_fn`` maps the upstream gradient to one gradient (or ``None``) per
    input.  Public so that other modules can define fused operations.
    """
    if not np.all(np.isfinite(value)):
        raise NumericError(f"{op}: produced non-finite values (shape {np.shape(value)})")
    needs = any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(value), needs)
    tape = active_tape()
    if needs and tape is not None:
        tape.records.append(_Record(op, out, tuple(inputs), grad_fn))
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return as_tensor(a, b.dtype), b
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape
    return record_op("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape
    return record_op("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_check("multiply", a, b)
    ad, bd = a.data, b.data
    return record_op("multiply", ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def neg(a: Tensor) -> Tensor:
    return record_op("neg", -a.data, (a,), lambda g: (-g,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # tanh form never overflows.
    s = 0.5 * (1 + np.tanh(0.5 * x))
    return record_op("sigmoid", s, (a,), lambda g: (g * s * (1 - s),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return record_op("tanh", y, (a,), lambda g: (g * (1 - y * y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return record_op("relu", np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,),
                     lambda g: (g * mask,))


def cos(a: Tensor) -> Tensor:
    x = a.data
    return record_op("cos", np.cos(x), (a,), lambda g: (-g * np.sin(x),))


def where(mask: np.ndarray, a, b) -> Tensor:
    """Select ``a`` where ``mask`` holds, else ``b``; ``mask`` is a constant."""
    a, b = _pair(a, b)
    mask = np.asarray(mask, dtype=bool)
    if a.shape != b.shape:
        raise ShapeError(f"where: shapes {a.shape} and {b.shape} differ")
    m = np.broadcast_to(mask, a.shape)
    return record_op("where", np.where(m, a.data, b.data), (a, b),
                     lambda g: (np.where(m, g, 0), np.where(m, 0, g)))


# ---------------------------------------------------------------- structural


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., K) with 2-D ``b`` (K, N), or batched
    (..., M, K) @ (..., K, N) with identical leading dimensions."""
    a, b = _pair(a, b)
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    if b.ndim == 2:
        out = np.matmul(ad[..., None, :], bd)[..., 0, :]

        def grad(g):
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: batch shapes {a.shape} and {b.shape} do not conform")
        out = np.matmul(ad, bd)

        def grad(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g
    return record_op("matmul", out, (a, b), grad)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no inputs")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1:] != ts[0].shape[:ax] + ts[0].shape[ax + 1:]:
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} do not conform on axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in ts], axis=ax)

    def grad(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(ts)))
    return record_op("concat", out, ts, grad)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: shapes {ts[0].shape} and {t.shape} differ")
    out = np.stack([t.data for t in ts], axis=axis)
    return record_op("stack", out, ts,
                     lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(ts))))


def getitem(a: Tensor, idx) -> Tensor:
    """Slice or gather.  Integer-array indices may repeat (gradients add up)."""
    out = a.data[idx]
    fancy = any(isinstance(i, (np.ndarray, list)) for i in (idx if isinstance(idx, tuple) else (idx,)))
    # Basic slices are views of an already read-only parent.
    return record_op("slice", out, (a,), lambda g: (_SliceGrad(idx, g, fancy),))


class _SliceGrad:
    """Gradient of a slice, scattered lazily into the parent's buffer."""

    __slots__ = ("idx", "g", "fancy")

    def __init__(self, idx, g, fancy):
        self.idx, self.g, self.fancy = idx, g, fancy

    def add_into(self, buf: np.ndarray) -> None:
        if self.fancy:
            np.add.at(buf, self.idx, self.g)
        else:
            buf[self.idx] += self.g


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} into {shape}") from None
    return record_op("reshape", out.copy(), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return record_op("transpose", np.ascontiguousarray(np.transpose(a.data, axes)), (a,),
                     lambda g: (np.transpose(g, inv),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return record_op("sum", np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), grad)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    n = a.data.size if axis is None else np.prod([shape[i] for i in np.atleast_1d(axis)])

    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)
    return record_op("mean", np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), grad)


def segment_sum(x: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets.

    Rows are accumulated strictly in array order, so dropping a row whose
    value is exactly zero leaves every bucket bitwise unchanged.
    """
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != x.shape[:1]:
        raise ShapeError(f"segment_sum: ids shape {ids.shape} vs rows {x.shape}")
    out = np.zeros((num_segments,) + x.shape[1:], dtype=x.dtype)
    np.add.at(out, ids, x.data)
    return record_op("segment_sum", out, (x,), lambda g: (g[ids],))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: input {x.shape} with gain {gamma.shape} and bias {beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def grad(g):
        n = xd.shape[-1]
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        flat = (-1, n)
        return dx, (g * xhat).reshape(flat).sum(0), g.reshape(flat).sum(0)
    return record_op("layer_norm", (xhat * gd + beta.data).astype(xd.dtype, copy=False),
                     (x, gamma, beta), grad)


# ---------------------------------------------------------------- simplex maps


def softmax_np(z: np.ndarray, axis: int = -1) -> np.ndarray:
    if z.size == 0:
        raise ShapeError("softmax: empty input")
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(z: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along ``axis``."""
    p = softmax_np(z.data, axis)
    return record_op("softmax", p, (z,),
                     lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),))


def sparsemax_threshold(z: np.ndarray) -> tuple[float, int]:
    """Return the threshold tau(z) and support size k(z) for a 1-D vector.

    Sort descending, find the largest k with 1 + k z_(k) > sum_{j<=k} z_(j),
    then tau = (sum_{j<=k} z_(j) - 1) / k.
    """
    z = np.asarray(z)
    if z.ndim != 1 or z.size == 0:
        raise ShapeError(f"sparsemax: expected a non-empty vector, got shape {z.shape}")
    zs = -np.sort(-z, kind="stable")
    cs = np.cumsum(zs)
    ks = np.arange(1, z.size + 1, dtype=z.dtype)
    # Algorithm uses >=; at equality the k-th entry maps to exactly zero either way.
    k = int(np.nonzero(1 + ks * zs >= cs)[0][-1]) + 1
    tau = (cs[k - 1] - 1) / k
    return tau, k


def sparsemax_np(z: np.ndarray) -> np.ndarray:
    tau, _ = sparsemax_threshold(z)
    return np.maximum(np.asarray(z) - tau, 0)


def sparsemax_backward(p: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of sparsemax at output ``p``.

    The Jacobian is diag(s) - s s^T / |S| with s the indicator of the
    support S = {i : p_i > 0}; it is symmetric, so J^T g = J g.
    """
    p = np.asarray(p)
    g = np.asarray(upstream)
    if p.shape != g.shape:
        raise ShapeError(f"sparsemax_backward: shapes {p.shape} and {g.shape} differ")
    s = p > 0
    return np.where(s, g - g[s].sum() / s.sum(), 0).astype(g.dtype, copy=False)


def sparsemax(z: Tensor) -> Tensor:
    """Euclidean projection of a score vector onto the probability simplex."""
    p = sparsemax_np(z.data)
    return record_op("sparsemax", p, (z,), lambda g: (sparsemax_backward(p, g),))


def _segments(offsets: np.ndarray, n: int) -> list[slice]:
    offsets = np.asarray(offsets, dtype=np.int64)
    if offsets.ndim != 1 or offsets[0] != 0 or offsets[-1] != n or np.any(np.diff(offsets) < 0):
        raise ShapeError(f"segment offsets must rise from 0 to {n}")
    return [slice(int(a), int(b)) for a, b in zip(offsets[:-1], offsets[1:]) if b > a]


def segment_sparsemax(z: Tensor, offsets: np.ndarray) -> Tensor:
    """Apply sparsemax independently to ``z[offsets[i]:offsets[i+1]]``."""
    segs = _segments(offsets, z.shape[0])
    p = np.zeros_like(z.data)
    for s in segs:
        p[s] = sparsemax_np(z.data[s])

    def grad(g):
        out = np.zeros_like(g)
        for s in segs:
            out[s] = sparsemax_backward(p[s], g[s])
        return (out,)
    return record_op("sparsemax", p, (z,), grad)


def segment_softmax(z: Tensor, offsets: np.ndarray) -> Tensor:
    segs = _segments(offsets, z.shape[0])
    p = np.zeros_like(z.data)
    for s in segs:
        p[s] = softmax_np(z.data[s])

    def grad(g):
        out = np.zeros_like(g)
        for s in segs:
            out[s] = p[s] * (g[s] - (g[s] * p[s]).sum())
        return (out,)
    return record_op("softmax", p, (z,), grad)


# ---------------------------------------------------------------- gradients


def backward(tape: Tape, loss: Tensor, wrt):
    """Reverse-accumulate d loss / d param for every tensor in ``wrt``.

    ``wrt`` is a mapping name -> Tensor or a sequence of Tensors; the result has
    the same structure with numpy gradients.  Parameters the loss does not
    reach receive zeros.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    # Buffers allocated here may be updated in place; arrays handed back by
    # grad rules may be shared between inputs and must not be.
    owned: set[int] = set()
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for t, gi in zip(rec.inputs, rec.grad_fn(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            prev = grads.get(key)
            if isinstance(gi, _SliceGrad):
                if prev is None:
                    prev = np.zeros(t.shape, dtype=gi.g.dtype)
                elif key not in owned:
                    prev = np.array(prev, copy=True)
                gi.add_into(prev)
                grads[key] = prev
                owned.add(key)
            elif prev is None:
                grads[key] = gi
            elif key in owned:
                prev += gi
            else:
                grads[key] = prev + gi
                owned.add(key)

    def pick(t: Tensor) -> np.ndarray:
        g = grads.get(id(t))
        if g is None:
            return np.zeros_like(t.data)
        return np.asarray(g, dtype=t.dtype).reshape(t.shape)

    if isinstance(wrt, Mapping):
        return {k: pick(t) for k, t in wrt.items()}
    return [pick(t) for t in wrt]


def gradient_check(f: Callable[[Tensor], Tensor], point, h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    Error per coordinate is |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    x0 = np.array(point, dtype=np.float64)
    with Tape() as tape:
        x = Tensor(x0, requires_grad=True)
        y = f(x)
    (analytic,) = backward(tape, y, [x])

    def value(arr):
        with no_tape():
            v = f(Tensor(arr)).data
        if v.size != 1 or not np.isfinite(v).all():
            raise NumericError(f"gradient_check: f evaluated to {v!r}")
        return float(v.reshape(-1)[0])

    numeric = np.zeros_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy().reshape(-1)
        xm = x0.copy().reshape(-1)
        xp[i] += h
        xm[i] -= h
        flat[i] = (value(xp.reshape(x0.shape)) - value(xm.reshape(x0.shape))) / (2 * h)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if x0.size else 0.0


def gradient_check_params(
    f: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-6,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Per-parameter version of :func:`gradient_check` for multi-tensor models.

    ``f`` receives a name -> Tensor mapping.  With ``max_coords`` only a random
    subset of coordinates of each tensor is probed numerically.
    """
    rng = rng or np.random.default_rng(0)
    base = {k: np.array(t.data, dtype=np.float64) for k, t in params.items()}
    with Tape() as tape:
        live = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
        y = f(live)
    analytic = backward(tape, y, live)

    def value(name, arr):
        trial = {k: Tensor(arr if k == name else v) for k, v in base.items()}
        with no_tape():
            v = f(trial).data
        if not np.isfinite(v).all():
            raise NumericError(f"gradient_check: non-finite loss perturbing {name}")
        return float(v.reshape(-1)[0])

    errors = {}
    for name, x0 in base.items():
        n = x0.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else rng.choice(n, max_coords, replace=False)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for i in coords:
            xp = x0.copy().reshape(-1)
            xm = x0.copy().reshape(-1)
            xp[i] += h
            xm[i] -= h
            num = (value(name, xp.reshape(x0.shape)) - value(name, xm.reshape(x0.shape))) / (2 * h)
            err = abs(a_flat[i] - num) / max(1.0, abs(a_flat[i]), abs(num))
            worst = max(worst, err)
        errors[name] = worst
    return errors


# ---------------------------------------------------------------- parameter trees


def flatten_params(obj, prefix: str = "") -> dict[str, Tensor]:
    """Name every Tensor inside nested dataclasses / lists, in field order.

    ``None`` leaves are skipped.  Names look like ``mt.layers.0.W_i``.
    """
    out: dict[str, Tensor] = {}
    if obj is None:
        return out
    if isinstance(obj, Tensor):
        out[prefix.rstrip(".")] = obj
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.update(flatten_params(item, f"{prefix}{i}."))
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            out.update(flatten_params(getattr(obj, f.name), f"{prefix}{f.name}."))
    return out


def rebind_params(obj, values: Mapping[str, Tensor], prefix: str = ""):
    """Copy of ``obj`` with each named Tensor replaced by ``values[name]``."""
    if obj is None:
        return None
    if isinstance(obj, Tensor):
        return values.get(prefix.rstrip("."), obj)
    if isinstance(obj, list):
        return [rebind_params(x, values, f"{prefix}{i}.") for i, x in enumerate(obj)]
    if isinstance(obj, tuple):
        return tuple(rebind_params(x, values, f"{prefix}{i}.") for i, x in enumerate(obj))
    if dataclasses.is_dataclass(obj):
        changes = {f.name: rebind_params(getattr(obj, f.name), values, f"{prefix}{f.name}.")
                   for f in dataclasses.fields(obj) if f.init}
        return dataclasses.replace(obj, **changes)
    return obj


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float64, name=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype),
                  requires_grad=True, name=name)


def zeros(shape, dtype=np.float64, name=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)
