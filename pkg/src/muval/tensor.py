"""Small reverse-mode autodiff engine over numpy arrays.

Every operation builds a node holding its float64 result, references to its
inputs and a closure mapping the output gradient to input gradients.
:func:`backward` walks the recorded graph once in reverse topological order.
Values are always held in float64 so reductions, matrix products and
convolutions accumulate in double precision regardless of how parameters are
stored between steps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from muval.errors import ContractError, DimensionError, NumericError

DTYPE = np.float64


class Tensor:
    __slots__ = ("data", "parents", "grad_fn", "name", "requires_grad")

    def __init__(self, data, parents: tuple = (), grad_fn=None, name: str | None = None,
                 requires_grad: bool = False):
        arr = np.asarray(data, dtype=DTYPE)
        # one reduction pass; an inf/nan sum is re-checked elementwise in case it only overflowed
        with np.errstate(over="ignore", invalid="ignore"):
            total = arr.sum()
        if not np.isfinite(total) and not np.isfinite(arr).all():
            raise NumericError("non-finite value produced" + (f" in {name}" if name else ""))
        self.data = arr
        self.parents = parents
        self.grad_fn = grad_fn
        self.name = name
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ContractError(f"tensor of shape {self.shape} is not a scalar")

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)

    @property
    def T(self): return transpose(self)


def tensor(data) -> Tensor:
    """Wrap a constant (no gradient)."""
    return data if isinstance(data, Tensor) else Tensor(data)


def parameter(name: str, data) -> Tensor:
    """A named leaf whose gradient :func:`backward` reports."""
    return Tensor(data, name=name, requires_grad=True)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {a.shape} with {b.shape}") from exc


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data
    return Tensor(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


# linear algebra and shape

def matmul(a, b) -> Tensor:
    """Rank-2 matrix product ``C[i, j] = sum_k A[i, k] B[k, j]``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return Tensor(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape) if not isinstance(shape, int) else (shape,)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {a.shape} to {shape}") from exc
    return Tensor(out, (a,), lambda g: (g.reshape(a.shape),))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(out, (a,), grad_fn)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


# nonlinearities

def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the open interval (0, 1) even where double precision saturates
    return np.clip(out, np.finfo(DTYPE).tiny, np.nextafter(1.0, 0.0))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = _stable_sigmoid(a.data)
    return Tensor(s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return Tensor(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if (a.data <= 0).any():
        raise NumericError("log of a non-positive value")
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a, floor: float) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > floor
    return Tensor(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,))


def softmax(a, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; shift invariant by construction."""
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return Tensor(p, (a,), grad_fn)


# volumetric operators

def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * 3
    v = tuple(int(x) for x in v)
    if len(v) != 3:
        raise DimensionError(f"expected 3 values, got {v}")
    return v


def _out_extent(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _pad_last3(x: np.ndarray, pd, fill: float = 0.0) -> np.ndarray:
    # np.pad is slow for small arrays; allocate and copy the interior
    if not any(pd):
        return x
    lead = x.ndim - 3
    out = np.full(x.shape[:lead] + tuple(n + 2 * p for n, p in zip(x.shape[lead:], pd)), fill)
    out[(Ellipsis,) + tuple(slice(p, p + n) for n, p in zip(x.shape[lead:], pd))] = x
    return out


def conv3d(x, w, stride=1, padding=0) -> Tensor:
    """Direct 3D cross-correlation with zero padding.

    ``x`` is ``(C_in, D, H, W)`` or batched ``(N, C_in, D, H, W)``; ``w`` is
    ``(C_out, C_in, kd, kh, kw)``. No kernel flip, no bias.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    unbatched = x.ndim == 4
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv3d got input {x.shape} and kernel {w.shape}")
    n, c, *spatial = xd.shape
    co, ci, *ks = w.shape
    if ci != c:
        raise DimensionError(f"input has {c} channels, kernel expects {ci}")
    st, pd = _triple(stride), _triple(padding)
    out_sp = [_out_extent(spatial[i], ks[i], st[i], pd[i]) for i in range(3)]
    if min(out_sp) < 1:
        raise DimensionError(f"conv3d output extent {tuple(out_sp)} is not positive")
    xp = _pad_last3(xd, pd)
    ends = [st[i] * (out_sp[i] - 1) + 1 for i in range(3)]
    offsets = [(a, b, e) for a in range(ks[0]) for b in range(ks[1]) for e in range(ks[2])]

    def window(a, b, e):
        return (slice(None), slice(None), slice(a, a + ends[0], st[0]),
                slice(b, b + ends[1], st[1]), slice(e, e + ends[2], st[2]))

    # columns laid out (N, C_in, k, P) so the kernel reshapes without copying
    cols = np.empty((n, c, len(offsets), *out_sp))
    for q, off in enumerate(offsets):
        cols[:, :, q] = xp[window(*off)]
    cols = cols.reshape(n, c * len(offsets), -1)
    wmat = w.data.reshape(co, -1)
    out = np.matmul(wmat, cols).reshape(n, co, *out_sp)
    if unbatched:
        out = out[0]

    def grad_fn(g):
        gb = (g[None] if unbatched else g).reshape(n, co, -1)
        gw = sum(gb[i] @ cols[i].T for i in range(n)).reshape(w.shape)
        gcols = np.matmul(wmat.T, gb).reshape(n, c, len(offsets), *out_sp)
        gxp = np.zeros_like(xp)
        for q, off in enumerate(offsets):
            gxp[window(*off)] += gcols[:, :, q]
        gx = gxp[:, :, pd[0]:pd[0] + spatial[0], pd[1]:pd[1] + spatial[1], pd[2]:pd[2] + spatial[2]]
        return (gx[0] if unbatched else gx, gw)

    return Tensor(out, (x, w), grad_fn)


def max_pool3d(x, kernel=3, stride=2, padding=1) -> Tensor:
    """Max pooling over the last three axes; padding never wins the max."""
    x = _as_tensor(x)
    if x.ndim < 3:
        raise DimensionError(f"max_pool3d needs at least 3 axes, got {x.shape}")
    ks, st, pd = _triple(kernel), _triple(stride), _triple(padding)
    lead = x.ndim - 3
    spatial = x.shape[lead:]
    out_sp = [_out_extent(spatial[i], ks[i], st[i], pd[i]) for i in range(3)]
    if min(out_sp) < 1:
        raise DimensionError(f"max_pool3d output extent {tuple(out_sp)} is not positive")
    xp = _pad_last3(x.data, pd, -np.inf)
    ends = [st[i] * (out_sp[i] - 1) + 1 for i in range(3)]
    windows = [(slice(None),) * lead + (slice(a, a + ends[0], st[0]), slice(b, b + ends[1], st[1]),
                                        slice(e, e + ends[2], st[2]))
               for a in range(ks[0]) for b in range(ks[1]) for e in range(ks[2])]
    out = xp[windows[0]].copy()
    for win in windows[1:]:
        np.maximum(out, xp[win], out=out)

    def grad_fn(g):
        # route to the first maximum in window order, as an argmax would
        gxp = np.zeros_like(xp)
        taken = np.zeros(out.shape, dtype=bool)
        for win in windows:
            hit = (xp[win] == out) & ~taken
            gxp[win] += np.where(hit, g, 0.0)
            taken |= hit
        crop = (slice(None),) * lead + tuple(slice(pd[i], pd[i] + spatial[i]) for i in range(3))
        return (gxp[crop],)

    return Tensor(out, (x,), grad_fn)


def batch_norm(x, gamma, beta, eps: float = 1e-5):
    """Training-mode batch normalisation over every axis except axis 1.

    Returns ``(out, batch_mean, batch_var)`` where the statistics are plain
    arrays (biased variance) for the caller's running-average update.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"norm affine shapes {gamma.shape}/{beta.shape} vs {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    m = x.data.size // c
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def grad_fn(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        dx = (inv_std.reshape(bshape) / m) * (
            m * dxhat - dxhat.sum(axis=axes).reshape(bshape)
            - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
        return (dx, dgamma, dbeta)

    return Tensor(out, (x, gamma, beta), grad_fn), mu, var


def affine_norm(x, gamma, beta, mean_: np.ndarray, var: np.ndarray, eps: float = 1e-5) -> Tensor:
    """Evaluation-mode normalisation with fixed (running) statistics."""
    x = _as_tensor(x)
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    scale = 1.0 / np.sqrt(np.asarray(var, dtype=DTYPE) + eps)
    xhat = (x - np.asarray(mean_, dtype=DTYPE).reshape(bshape)) * scale.reshape(bshape)
    return xhat * reshape(gamma, bshape) + reshape(beta, bshape)


# reverse accumulation

@dataclass
class GradRecord:
    loss: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[str] = ()) -> GradRecord:
    """Gradients of a scalar ``loss`` against every named leaf it depends on.

    Any name in ``params`` that never reaches the loss is an error.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    record = GradRecord(loss=float(loss.data.reshape(-1)[0]))
    owners: dict[str, int] = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.name is not None and not node.parents:
            if node.name in owners and owners[node.name] != id(node):
                raise ContractError(f"parameter name {node.name!r} registered twice")
            owners[node.name] = id(node)
            record.grads[node.name] = g
            continue
        if node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    for name in params:
        if name not in record.grads:
            raise ContractError(f"parameter {name!r} does not reach the loss")
    return record


def grad_check(model_eval: Callable[[Mapping[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray],
               epsilon: float = 1e-6,
               max_per_tensor: int = 64,
               seed: int = 0,
               analytic: Mapping[str, np.ndarray] | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``model_eval`` maps named tensors to a scalar loss tensor. At most
    ``max_per_tensor`` coordinates per parameter are probed, drawn with a
    seeded uniform choice. ``analytic`` overrides the gradients obtained from
    :func:`backward` (used to confirm the detector fires).
    """
    if epsilon <= 0:
        raise ContractError("epsilon must be positive")
    base = {k: np.array(v, dtype=DTYPE) for k, v in params.items()}
    if analytic is None:
        rec = backward(model_eval({k: parameter(k, v) for k, v in base.items()}))
        analytic = rec.grads
    rng = np.random.default_rng(seed)

    def probe(name, flat_idx, delta):
        arr = base[name].copy()
        arr.reshape(-1)[flat_idx] += delta
        trial = {k: tensor(arr if k == name else v) for k, v in base.items()}
        val = model_eval(trial).item()
        if not np.isfinite(val):
            raise NumericError(f"non-finite loss probing {name}[{flat_idx}]")
        return val

    worst = 0.0
    for name, arr in base.items():
        g = np.asarray(analytic.get(name, np.zeros_like(arr)), dtype=DTYPE).reshape(-1)
        size = arr.size
        idx = np.arange(size) if size <= max_per_tensor else np.sort(
            rng.choice(size, max_per_tensor, replace=False))
        for i in idx:
            num = (probe(name, i, epsilon) - probe(name, i, -epsilon)) / (2 * epsilon)
            rel = abs(g[i] - num) / max(1e-8, abs(g[i]) + abs(num))
            worst = max(worst, rel)
    return worst
