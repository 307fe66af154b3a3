"""Dense float tensors with a reverse-mode gradient tape.

Storage is a numpy array (float64 for verification work, float32 for
training). Differentiable operations are module-level functions that
compute the forward value eagerly and, when a tape is active and the
result requires gradients, append a backward closure to that tape.
``Tape.run`` replays the closures in exact reverse execution order, so
the tape itself is the topological order.

Conventions:
- tensors are immutable once written by an operation; the only sanctioned
  mutation is an optimizer updating parameter ``.data`` between tapes
- gradient buffers are write-once per accumulation (``grad = grad + g``),
  never mutated in place, so views may be stored safely
- binary ops require exact shape and dtype agreement; the only broadcasts
  are the dedicated per-pixel / per-row / last-axis-bias ops below
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "active_tape",
    "tensor",
    "zeros",
    "ones",
    "backward",
    "add",
    "sub",
    "neg",
    "mul",
    "scale",
    "add_scalar",
    "recip",
    "mul_scalar_t",
    "matmul",
    "transpose2d",
    "reshape",
    "tsum",
    "tmean",
    "relu",
    "sigmoid",
    "softmax",
    "layer_norm",
    "add_channel_bias",
    "scale_pixels",
    "scale_rows",
    "conv2d",
    "upsample_bilinear2x",
    "gather_rows",
    "bce_with_logits",
    "ce_logits",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense row-major float array, optionally tracked by a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Same storage, no gradient tracking, off any tape."""
        return Tensor(self.data)

    def assert_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise FloatingPointError(f"{what} contains non-finite values")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Small amount of sugar; everything routes through the functional ops.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other) -> "Tensor":
        return scale(self, float(other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Execution-ordered record of differentiable operations.

    Used as a context manager around a forward pass; ``run`` (usually via
    the free function :func:`backward`) replays backward rules in reverse
    execution order and then consumes the tape.
    """

    def __init__(self):
        self._backward_fns: list[Callable[[], None]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self, "tape stack corrupted"

    def record(self, fn: Callable[[], None]) -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        self._backward_fns.append(fn)

    def __len__(self) -> int:
        return len(self._backward_fns)

    def run(self, loss: "Tensor") -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by backward()")
        loss.grad = np.ones_like(loss.data)
        for fn in reversed(self._backward_fns):
            fn()
        self._backward_fns.clear()
        self._consumed = True


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ValueError("loss is not on a tape; run the forward pass inside `with Tape():`")
    loss.tape.run(loss)


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _out(data: np.ndarray, *parents: Tensor) -> Tensor:
    return Tensor(data, requires_grad=any(p.requires_grad for p in parents))


def _put(out: Tensor, backward_fn: Callable[[], None]) -> Tensor:
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(backward_fn)
        out.tape = tape
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / scalar ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    out = _out(a.data + b.data, a, b)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, g)

    return _put(out, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = _out(a.data - b.data, a, b)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g)
        _accumulate(b, -g)

    return _put(out, bwd)


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = _out(a.data * b.data, a, b)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _put(out, bwd)


def scale(x: Tensor, c: float) -> Tensor:
    out = _out(x.data * c, x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * c)

    return _put(out, bwd)


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = _out(x.data + c, x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g)

    return _put(out, bwd)


def recip(x: Tensor) -> Tensor:
    """Elementwise 1/x."""
    out = _out(1.0 / x.data, x)
    inv = out.data

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, -g * inv * inv)

    return _put(out, bwd)


def mul_scalar_t(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of x by a single-element tensor s."""
    if s.data.size != 1:
        raise ValueError(f"mul_scalar_t: scalar operand must be single-element, got shape {s.shape}")
    out = _out(x.data * s.data.reshape(()), x, s)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * s.data.reshape(()))
        _accumulate(s, np.asarray(np.sum(g * x.data)).reshape(s.shape))

    return _put(out, bwd)


# ---------------------------------------------------------------------------
# linear algebra / structure
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    out = _out(a.data @ b.data, a, b)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _put(out, bwd)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ValueError(f"transpose2d: expects a 2-D tensor, got {x.shape}")
    out = _out(x.data.T, x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g.T)

    return _put(out, bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    out = _out(x.data.reshape(shape), x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g.reshape(x.shape))

    return _put(out, bwd)


def tsum(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum over one axis, or over everything (axis=None, scalar result)."""
    out = _out(np.sum(x.data, axis=axis), x)

    def bwd():
        g = out.grad
        if g is None:
            return
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).copy())
        else:
            _accumulate(x, np.broadcast_to(np.expand_dims(g, axis), x.shape).copy())

    return _put(out, bwd)


def tmean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis=axis), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = _out(np.maximum(x.data, 0.0), x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * (x.data > 0))

    return _put(out, bwd)


def _sigmoid_np(z: np.ndarray) -> np.ndarray:
    # Piecewise form avoids exp overflow on large |z|.
    pos = z >= 0
    r = np.empty_like(z)
    r[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    r[~pos] = ez / (1.0 + ez)
    return r


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_np(x.data)
    out = _out(y, x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * y * (1.0 - y))

    return _put(out, bwd)


def softmax(x: Tensor, axis: int) -> Tensor:
    """Max-subtracted softmax along ``axis``; slices sum to 1."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / np.sum(e, axis=axis, keepdims=True)
    out = _out(y, x)

    def bwd():
        g = out.grad
        if g is None:
            return
        dot = np.sum(g * y, axis=axis, keepdims=True)
        _accumulate(x, y * (g - dot))

    return _put(out, bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and shift."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"layer_norm: gain/shift must have shape ({c},), got {gamma.shape} and {beta.shape}")
    mu = np.mean(x.data, axis=-1, keepdims=True)
    var = np.mean((x.data - mu) ** 2, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _out(xhat * gamma.data + beta.data, x, gamma, beta)

    def bwd():
        g = out.grad
        if g is None:
            return
        reduce_axes = tuple(range(x.data.ndim - 1))
        _accumulate(beta, np.sum(g, axis=reduce_axes))
        _accumulate(gamma, np.sum(g * xhat, axis=reduce_axes))
        gg = g * gamma.data
        m1 = np.mean(gg, axis=-1, keepdims=True)
        m2 = np.mean(gg * xhat, axis=-1, keepdims=True)
        _accumulate(x, inv * (gg - m1 - xhat * m2))

    return _put(out, bwd)


# ---------------------------------------------------------------------------
# dedicated broadcasts
# ---------------------------------------------------------------------------

def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a [C] bias along the last axis of x[..., C]."""
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_channel_bias: bias {b.shape} does not match last axis of {x.shape}")
    out = _out(x.data + b.data, x, b)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g)
        _accumulate(b, np.sum(g, axis=tuple(range(x.data.ndim - 1))))

    return _put(out, bwd)


def scale_pixels(x: Tensor, s: Tensor) -> Tensor:
    """Scale every channel of pixel (i,j) in x[h,w,c] by s[i,j]."""
    if x.data.ndim != 3 or s.data.ndim != 2 or x.shape[:2] != s.shape:
        raise ValueError(f"scale_pixels: incompatible shapes {x.shape} and {s.shape}")
    out = _out(x.data * s.data[:, :, None], x, s)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * s.data[:, :, None])
        _accumulate(s, np.sum(g * x.data, axis=2))

    return _put(out, bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Scale row i of x[n, m] by s[i]."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.shape[0] != s.shape[0]:
        raise ValueError(f"scale_rows: incompatible shapes {x.shape} and {s.shape}")
    out = _out(x.data * s.data[:, None], x, s)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, g * s.data[:, None])
        _accumulate(s, np.sum(g * x.data, axis=1))

    return _put(out, bwd)


# ---------------------------------------------------------------------------
# convolution / resampling / gather
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate x[H,W,Cin] with w[kh,kw,Cin,Cout], zero padding."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expects x[H,W,Cin] and w[kh,kw,Cin,Cout], got {x.shape} and {w.shape}")
    h, wd, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if cin != wcin:
        raise ValueError(f"conv2d: channel mismatch, input {x.shape} vs kernel {w.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(
            f"conv2d: kernel {(kh, kw)} larger than padded input {(hp, wp)}"
            f" (input {(h, wd)}, padding {padding})"
        )
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    cols = np.empty((ho, wo, kh, kw, cin), dtype=x.data.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :] = xp[i : i + (ho - 1) * stride + 1 : stride,
                                     j : j + (wo - 1) * stride + 1 : stride, :]
    cols2 = cols.reshape(ho * wo, kh * kw * cin)
    w2 = w.data.reshape(kh * kw * cin, cout)
    out = _out((cols2 @ w2).reshape(ho, wo, cout), x, w)

    def bwd():
        g = out.grad
        if g is None:
            return
        g2 = g.reshape(ho * wo, cout)
        _accumulate(w, (cols2.T @ g2).reshape(w.shape))
        if x.requires_grad:
            dcols = (g2 @ w2.T).reshape(ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[i : i + (ho - 1) * stride + 1 : stride,
                        j : j + (wo - 1) * stride + 1 : stride, :] += dcols[:, :, i, j, :]
            if padding:
                dxp = dxp[padding : padding + h, padding : padding + wd, :]
            _accumulate(x, dxp)

    return _put(out, bwd)


_LERP_CACHE: dict[tuple[int, str], np.ndarray] = {}


def _lerp2x_matrix(n: int, dtype) -> np.ndarray:
    """Row matrix M[2n, n] realizing 2x bilinear upsampling (edges clamped)."""
    key = (n, np.dtype(dtype).str)
    m = _LERP_CACHE.get(key)
    if m is None:
        m = np.zeros((2 * n, n), dtype=dtype)
        for a in range(2 * n):
            src = (a + 0.5) / 2.0 - 0.5
            i0 = math.floor(src)
            t = src - i0
            m[a, min(max(i0, 0), n - 1)] += 1.0 - t
            m[a, min(max(i0 + 1, 0), n - 1)] += t
        _LERP_CACHE[key] = m
    return m


def upsample_bilinear2x(x: Tensor) -> Tensor:
    """Double both spatial extents of x[H,W,C] by bilinear interpolation."""
    if x.data.ndim != 3:
        raise ValueError(f"upsample_bilinear2x: expects x[H,W,C], got {x.shape}")
    h, w, c = x.shape
    rm = _lerp2x_matrix(h, x.data.dtype)
    cm = _lerp2x_matrix(w, x.data.dtype)

    def _apply(a: np.ndarray, row: np.ndarray, col: np.ndarray) -> np.ndarray:
        hh, ww = row.shape[0], col.shape[0]
        t = (row @ a.reshape(a.shape[0], -1)).reshape(hh, a.shape[1], c)
        t = t.transpose(1, 0, 2)
        t = (col @ t.reshape(t.shape[0], -1)).reshape(ww, hh, c)
        return t.transpose(1, 0, 2)

    out = _out(_apply(x.data, rm, cm), x)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(x, _apply(g, rm.T.copy(), cm.T.copy()))

    return _put(out, bwd)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows of x[M, C]; gradients scatter-add back to the source rows."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.data.ndim != 2 or idx.ndim != 1:
        raise ValueError(f"gather_rows: expects x[M,C] and 1-D indices, got {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise ValueError(f"gather_rows: index out of range for {x.shape[0]} rows")
    out = _out(x.data[idx], x)

    def bwd():
        g = out.grad
        if g is None:
            return
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        _accumulate(x, dx)

    return _put(out, bwd)


# ---------------------------------------------------------------------------
# classification losses (kept as primitives for numerical stability)
# ---------------------------------------------------------------------------

def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy on logits, log-sum-exp stable."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=logits.data.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"bce_with_logits: target shape {t.shape} != logits shape {logits.shape}")
    z = logits.data
    loss = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = _out(loss, logits)

    def bwd():
        g = out.grad
        if g is None:
            return
        _accumulate(logits, g * (_sigmoid_np(z) - t))

    return _put(out, bwd)


def ce_logits(logits: Tensor, class_indices) -> Tensor:
    """Mean cross-entropy of logits[N, K] against integer class indices [N]."""
    idx = np.asarray(class_indices, dtype=np.int64)
    if logits.data.ndim != 2 or idx.shape != (logits.shape[0],):
        raise ValueError(f"ce_logits: expects logits[N,K] and indices[N], got {logits.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= logits.shape[1]):
        raise ValueError(f"ce_logits: class index out of range for {logits.shape[1]} classes")
    z = logits.data
    zmax = np.max(z, axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.sum(np.exp(z - zmax), axis=1))
    n = z.shape[0]
    rows = np.arange(n)
    out = _out(np.asarray(np.mean(lse - z[rows, idx])), logits)

    def bwd():
        g = out.grad
        if g is None:
            return
        p = np.exp(z - zmax)
        p /= np.sum(p, axis=1, keepdims=True)
        p[rows, idx] -= 1.0
        _accumulate(logits, p * (float(g.reshape(())) / n))

    return _put(out, bwd)
