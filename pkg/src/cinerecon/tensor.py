"""Small reverse-mode autodiff engine over dense numpy arrays.

Complex data is carried as two real planes. Network code keeps them in a
channel layout ``[..., 2, h, w]`` (real plane first), which is what the
convolutions consume; :class:`ComplexTensor` wraps a pair of real tensors for
callers that prefer explicit ``real``/``imag`` fields.

Every op records its parents and a vector-Jacobian closure. ``backward``
walks the graph in reverse topological order and returns gradients in a
fresh mapping, so several graphs sharing the same parameter tensors can be
differentiated concurrently without touching shared state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericalError, UnsupportedSizeError

__all__ = [
    "Tensor",
    "ComplexTensor",
    "CompGraph",
    "Gradients",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "concat",
    "take",
    "stack",
    "conv2d",
    "relu",
    "fft2",
    "ifft2",
    "tsum",
    "mean",
    "mse",
    "backward",
    "grad_check",
]

VJP = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """A node in the computation graph holding a real numpy array."""

    __slots__ = ("data", "parents", "vjp", "requires_grad", "op", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: VJP | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.name = name

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

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(op={self.op}, shape={self.shape}, dtype={self.dtype})"

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

    def __neg__(self):
        return mul(self, -1.0)


Gradients = dict  # Tensor -> np.ndarray, keyed by identity


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _node(data: np.ndarray, parents: Sequence[Tensor], vjp: VJP, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite value produced by {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.parents = tuple(parents)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.vjp = vjp if out.requires_grad else None
    out.op = op
    out.name = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: {a.shape} vs {b.shape}") from exc

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as exc:
        raise DimensionError(f"sub: {a.shape} vs {b.shape}") from exc

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: {a.shape} vs {b.shape}") from exc

    def vjp(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(out, (a, b), vjp, "mul")


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype, copy=False)

    def vjp(g):
        return (g * pos,)

    return _node(out, (x,), vjp, "relu")


# --------------------------------------------------------------------------
# shape manipulation


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            "concat: " + ", ".join(str(t.shape) for t in tensors)
        ) from exc
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return [
            np.take(g, np.arange(lo, hi), axis=axis)
            for lo, hi in zip(bounds[:-1], bounds[1:])
        ]

    return _node(out, tensors, vjp, "concat")


def take(x: Tensor, index, axis: int = 0) -> Tensor:
    """Slice ``x`` along ``axis`` with an int, slice, or index array."""
    sl = [slice(None)] * x.ndim
    sl[axis] = index
    sl = tuple(sl)
    out = x.data[sl]
    if isinstance(index, (int, np.integer)):
        out = np.array(out)

    def vjp(g):
        full = np.zeros_like(x.data)
        if isinstance(index, (slice, int, np.integer)):
            full[sl] = g
        else:
            np.add.at(full, sl, g)
        return (full,)

    return _node(out, (x,), vjp, "take")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(
            "stack: " + ", ".join(str(t.shape) for t in tensors)
        ) from exc

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(len(tensors))]

    return _node(out, tensors, vjp, "stack")


# --------------------------------------------------------------------------
# convolution


def _correlate(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Same-padded 2-D cross-correlation: x (cin,h,w), w (cout,cin,k,k)."""
    k = w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # cin,h,w,k,k
    return np.tensordot(w, win, axes=([1, 2, 3], [0, 3, 4]))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Zero-padded ("same") 2-D convolution of a ``[c_in, h, w]`` input.

    ``kernel`` has shape ``[c_out, c_in, k, k]`` with odd ``k``; ``bias`` has
    shape ``[c_out]``. Output spatial extents equal the input's.
    """
    kernel = as_tensor(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernel {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise DimensionError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if c_in != x.shape[0]:
        raise DimensionError(
            f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}"
        )
    out = _correlate(x.data, kernel.data)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias {bias.shape}, expected ({c_out},)")
        out = out + bias.data[:, None, None]
        parents.append(bias)
    out = out.astype(x.dtype, copy=False)
    p = kh // 2

    def vjp(g):
        gx = gk = gb = None
        if x.requires_grad:
            flipped = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx = _correlate(g, flipped)
        if kernel.requires_grad:
            xp = np.pad(x.data, ((0, 0), (p, p), (p, p)))
            win = sliding_window_view(xp, (kh, kh), axis=(1, 2))
            gk = np.tensordot(g, win, axes=([1, 2], [1, 2]))
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(1, 2))
        return (gx, gk, gb) if bias is not None else (gx, gk)

    return _node(out, parents, vjp, "conv2d")


# --------------------------------------------------------------------------
# Fourier transforms on the [..., 2, h, w] channel layout


def _check_pow2(h: int, w: int):
    for n in (h, w):
        if n < 1 or n & (n - 1):
            raise UnsupportedSizeError(f"FFT extent {n} is not a power of two")


def _to_complex(a: np.ndarray) -> np.ndarray:
    return a[..., 0, :, :] + 1j * a[..., 1, :, :]


def _to_planes(z: np.ndarray, dtype) -> np.ndarray:
    return np.stack([z.real, z.imag], axis=-3).astype(dtype, copy=False)


def _fft_planes(a: np.ndarray, inverse: bool) -> np.ndarray:
    z = _to_complex(a)
    if inverse:
        z = np.fft.ifft2(z, norm="ortho")
    else:
        z = np.fft.fft2(z, norm="ortho")
    return _to_planes(z, a.dtype)


def _fft_op(x: Tensor, inverse: bool) -> Tensor:
    if x.ndim < 3 or x.shape[-3] != 2:
        raise DimensionError(f"fft expects [..., 2, h, w], got {x.shape}")
    _check_pow2(*x.shape[-2:])
    out = _fft_planes(x.data, inverse)

    def vjp(g):
        # orthonormal transform: adjoint is the opposite-direction transform
        return (_fft_planes(g, not inverse),)

    return _node(out, (x,), vjp, "ifft2" if inverse else "fft2")


def fft2(x):
    """Orthonormal 2-D DFT over the last two axes.

    Accepts a :class:`ComplexTensor` or a real tensor in ``[..., 2, h, w]``
    layout and returns the same kind.
    """
    if isinstance(x, ComplexTensor):
        return ComplexTensor.from_planes(_fft_op(x.planes(), inverse=False))
    return _fft_op(x, inverse=False)


def ifft2(x):
    if isinstance(x, ComplexTensor):
        return ComplexTensor.from_planes(_fft_op(x.planes(), inverse=True))
    return _fft_op(x, inverse=True)


# --------------------------------------------------------------------------
# reductions


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _node(out, (x,), vjp, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.sum() / n, dtype=x.dtype)

    def vjp(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _node(out, (x,), vjp, "mean")


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all real scalars of the squared difference."""
    target = as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.dot(diff.ravel(), diff.ravel()) / n, dtype=pred.dtype)

    def vjp(g):
        d = (2.0 / n) * g * diff
        return d.astype(pred.dtype, copy=False), (-d).astype(pred.dtype, copy=False)

    return _node(out, (pred, target), vjp, "mse")


# --------------------------------------------------------------------------
# complex wrapper


@dataclass
class ComplexTensor:
    real: Tensor
    imag: Tensor

    def __post_init__(self):
        if self.real.shape != self.imag.shape:
            raise DimensionError(
                f"real/imag shapes differ: {self.real.shape} vs {self.imag.shape}"
            )

    @classmethod
    def from_numpy(cls, z: np.ndarray, requires_grad=False, dtype=np.float64):
        z = np.asarray(z)
        return cls(
            Tensor(z.real.astype(dtype), requires_grad=requires_grad),
            Tensor(z.imag.astype(dtype), requires_grad=requires_grad),
        )

    @classmethod
    def from_planes(cls, t: Tensor) -> "ComplexTensor":
        return cls(take(t, 0, axis=-3), take(t, 1, axis=-3))

    @property
    def shape(self):
        return self.real.shape

    def planes(self) -> Tensor:
        """Stack into ``[..., 2, h, w]`` channel layout."""
        return stack([self.real, self.imag], axis=-3)

    def numpy(self) -> np.ndarray:
        return self.real.data + 1j * self.imag.data

    def relu(self) -> "ComplexTensor":
        return ComplexTensor(relu(self.real), relu(self.imag))

    def __add__(self, other):
        return ComplexTensor(self.real + other.real, self.imag + other.imag)

    def __sub__(self, other):
        return ComplexTensor(self.real - other.real, self.imag - other.imag)


# --------------------------------------------------------------------------
# graph traversal and gradients


class CompGraph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(output, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in reversed(node.parents):
                if id(p) not in seen:
                    stack_.append((p, False))

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.parents and n.requires_grad]

    def backward(self) -> dict:
        out = self.output
        if out.data.size != 1:
            raise DimensionError(f"backward needs a scalar output, got shape {out.shape}")
        grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
        result: dict = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None or not node.requires_grad:
                continue
            if not node.parents:
                if not np.all(np.isfinite(g)):
                    raise NumericalError(f"non-finite gradient for {node!r}")
                result[node] = g
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return result


def backward(loss: Tensor) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. every leaf requiring grad.

    Returns a dict keyed by the leaf :class:`Tensor` objects.
    """
    return CompGraph(loss).backward()


def grad_check(
    fn: Callable[..., Tensor],
    points: Iterable[np.ndarray],
    step: float = 1e-4,
    skip: Sequence[np.ndarray | None] | None = None,
) -> float:
    """Largest relative error between backward and central differences.

    ``fn`` maps leaf tensors (built from ``points``, 64-bit) to a scalar
    tensor. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``. ``skip`` optionally gives boolean
    masks of coordinates to exclude (e.g. inputs within ``step`` of a relu
    kink).
    """
    points = [np.array(p, dtype=np.float64) for p in points]
    leaves = [Tensor(p.copy(), requires_grad=True) for p in points]
    loss = fn(*leaves)
    grads = backward(loss)
    worst = 0.0
    for i, (leaf, p) in enumerate(zip(leaves, points)):
        analytic = grads.get(leaf, np.zeros_like(p))
        mask = None if skip is None else skip[i]
        flat = p.reshape(-1)
        for j in range(flat.size):
            if mask is not None and mask.reshape(-1)[j]:
                continue
            orig = flat[j]
            flat[j] = orig + step
            fp = float(fn(*[Tensor(q) for q in points]).data)
            flat[j] = orig - step
            fm = float(fn(*[Tensor(q) for q in points]).data)
            flat[j] = orig
            numeric = (fp - fm) / (2 * step)
            a = float(analytic.reshape(-1)[j])
            if not (np.isfinite(numeric) and np.isfinite(a)):
                raise NumericalError(f"NaN in gradient check at input {i}, index {j}")
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
