"""Dense float64 tensors with a reverse-mode gradient tape.

Covers exactly the operation set the token bridge needs: matmul, add, mul,
row softmax, layer norm, gelu, reshape, transpose, slicing, concat and mean.
There is no broadcasting beyond the trailing-dimension affine inside
layer_norm; mismatched shapes raise instead of broadcasting silently.

Tensors are immutable once created (the backing array is marked read-only).
A gradient tape is built implicitly through operations on tensors whose
``requires_grad`` flag is set, and is confined to one thread of execution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_GELU_K = math.sqrt(2.0 / math.pi)
_GELU_C = 0.044715


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf, which is an error state."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def _from_op(cls, arr: np.ndarray, op: str, parents: tuple["Tensor", ...], vjp) -> "Tensor":
        arr = np.asarray(arr, dtype=np.float64)
        _check_finite(arr, op)
        out = cls.__new__(cls)
        arr.setflags(write=False)
        out.data = arr
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = None
        if out.requires_grad:
            out._parents = parents
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

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
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def assign(self, data) -> None:
        """Replace a leaf tensor's value in place, keeping its identity.

        Only parameters (graph leaves) may be assigned; rewriting a node that
        other tensors were computed from would silently corrupt their tape.
        """
        if self._parents or self._vjp is not None:
            raise ShapeError("assign() is only valid on leaf tensors")
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "assign")
        if arr.shape != self.data.shape:
            raise ShapeError(f"assign() cannot change shape {self.data.shape} to {arr.shape}")
        arr.setflags(write=False)
        self.data = arr

    def backward(self) -> None:
        """Reverse-mode pass from a scalar output; accumulates into ``.grad``."""
        if self.data.size != 1:
            raise ShapeError("backward() can only start from a scalar tensor")
        # iterative topological sort; training graphs are deep enough to
        # overflow the recursion limit
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._vjp is not None:
                node._vjp(node)

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def mean(self) -> "Tensor":
        return mean(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _tensorify(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- operations ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _tensorify(a), _tensorify(b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs identical shapes, got {a.shape} and {b.shape}")

    def vjp(out):
        if a.requires_grad:
            a._accum(out.grad)
        if b.requires_grad:
            b._accum(out.grad)

    return Tensor._from_op(a.data + b.data, "add", (a, b), vjp)


def mul(a, b) -> Tensor:
    a = _tensorify(a)
    if isinstance(b, (int, float)):
        s = float(b)

        def vjp_scalar(out):
            if a.requires_grad:
                a._accum(out.grad * s)

        return Tensor._from_op(a.data * s, "mul", (a,), vjp_scalar)

    b = _tensorify(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul needs identical shapes, got {a.shape} and {b.shape}")

    def vjp(out):
        if a.requires_grad:
            a._accum(out.grad * b.data)
        if b.requires_grad:
            b._accum(out.grad * a.data)

    return Tensor._from_op(a.data * b.data, "mul", (a, b), vjp)


def matmul(a, b) -> Tensor:
    a, b = _tensorify(a), _tensorify(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul is 2-D only, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")

    def vjp(out):
        if a.requires_grad:
            a._accum(out.grad @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ out.grad)

    return Tensor._from_op(a.data @ b.data, "matmul", (a, b), vjp)


def softmax_rows(x) -> Tensor:
    """Row-wise softmax of a 2-D tensor; numerically shift-invariant."""
    x = _tensorify(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows needs a 2-D tensor, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(out):
        if x.requires_grad:
            g = out.grad
            dot = (g * y).sum(axis=1, keepdims=True)
            x._accum(y * (g - dot))

    return Tensor._from_op(y, "softmax_rows", (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing dimension to zero mean / unit variance, then affine."""
    x, gain, bias = _tensorify(x), _tensorify(gain), _tensorify(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def vjp(out):
        g = out.grad
        if x.requires_grad:
            dxhat = g * gain.data
            term1 = dxhat.mean(axis=-1, keepdims=True)
            term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x._accum(inv * (dxhat - term1 - xhat * term2))
        if gain.requires_grad:
            gain._accum((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias._accum(g.reshape(-1, d).sum(axis=0))

    return Tensor._from_op(y, "layer_norm", (x, gain, bias), vjp)


def gelu(x) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    x = _tensorify(x)
    u = _GELU_K * (x.data + _GELU_C * x.data**3)
    t = np.tanh(u)
    y = 0.5 * x.data * (1.0 + t)

    def vjp(out):
        if x.requires_grad:
            du = _GELU_K * (1.0 + 3.0 * _GELU_C * x.data**2)
            dy = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
            x._accum(out.grad * dy)

    return Tensor._from_op(y, "gelu", (x,), vjp)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _tensorify(x)
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    old = x.shape

    def vjp(out):
        if x.requires_grad:
            x._accum(out.grad.reshape(old))

    return Tensor._from_op(x.data.reshape(shape), "reshape", (x,), vjp)


def transpose(x, axes: tuple[int, ...] | None = None) -> Tensor:
    x = _tensorify(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def vjp(out):
        if x.requires_grad:
            x._accum(np.transpose(out.grad, inverse))

    return Tensor._from_op(np.transpose(x.data, axes), "transpose", (x,), vjp)


def tensor_slice(x, key) -> Tensor:
    """Basic (non-strided) slicing; gradients scatter back into place."""
    x = _tensorify(x)
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, slice) or k.step not in (None, 1):
            raise ShapeError("only contiguous slice indexing is supported")
    shape = x.shape

    def vjp(out):
        if x.requires_grad:
            g = np.zeros(shape, dtype=np.float64)
            g[key] = out.grad
            x._accum(g)

    return Tensor._from_op(x.data[key], "slice", (x,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_tensorify(t) for t in tensors]
    if not ts:
        raise ShapeError("concat needs at least one tensor")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(out):
        pieces = np.split(out.grad, splits, axis=axis)
        for t, g in zip(ts, pieces):
            if t.requires_grad:
                t._accum(g)

    return Tensor._from_op(np.concatenate([t.data for t in ts], axis=axis), "concat", tuple(ts), vjp)


def mean(x) -> Tensor:
    x = _tensorify(x)
    n = x.size

    def vjp(out):
        if x.requires_grad:
            x._accum(np.full(x.shape, out.grad / n))

    return Tensor._from_op(np.asarray(x.data.mean()), "mean", (x,), vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error between two same-shape tensors."""
    diff = pred - _tensorify(target)
    return mean(mul(diff, diff))


# -- gradient checking ---------------------------------------------------


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    max_abs_error: float
    n_entries: int


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    tol: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def grad_check(
    f,
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` is a zero-argument callable returning a scalar Tensor; it must close
    over the tensors in ``params``. Every element of every parameter is
    perturbed by ``h`` in both directions. Relative errors are measured
    against ``max(|analytic|, |numeric|, floor)``.
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"h must lie in [1e-6, 1e-3] for 64-bit floats, got {h}")
    for p in params.values():
        p.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError("grad_check needs a scalar-valued function")
    loss.backward()
    analytic = {
        name: (np.zeros(p.shape) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    # finite differences run with the tape off
    flags = {name: p.requires_grad for name, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        entries = []
        worst = ("", 0.0)
        for name, p in params.items():
            base = p.data
            an = analytic[name].reshape(-1)
            max_rel = 0.0
            max_abs = 0.0
            flat = base.reshape(-1)
            for i in range(flat.size):
                bumped = base.copy()
                bumped.reshape(-1)[i] = flat[i] + h
                p.data = bumped
                f_plus = f().item()
                bumped = base.copy()
                bumped.reshape(-1)[i] = flat[i] - h
                p.data = bumped
                f_minus = f().item()
                fd = (f_plus - f_minus) / (2.0 * h)
                abs_err = abs(an[i] - fd)
                rel = abs_err / max(abs(an[i]), abs(fd), floor)
                if rel > max_rel:
                    max_rel = rel
                max_abs = max(max_abs, abs_err)
            p.data = base
            entries.append(ParamCheck(name, max_rel, max_abs, flat.size))
            if max_rel >= worst[1]:
                worst = (name, max_rel)
    finally:
        for name, p in params.items():
            p.requires_grad = flags[name]

    return GradCheckReport(
        max_rel_error=worst[1], worst_param=worst[0], tol=tol, entries=entries
    )
