"""Dense-tensor reverse-mode autodiff, just enough to train the model.

Define-by-run: every op appends its output to the owning Tape, so creation
order is already a topological order and backward() simply walks the node
list in reverse. Each Tensor made by an op carries a closure that routes its
gradient into its parents. Ops are plain numpy in the forward pass; the
engine precision (float32 for training, float64 for finite-difference
checks) is fixed when the Tape is built.

Broadcasting is deliberately limited: add/mul accept numpy-broadcastable
pairs (gradients are summed back over broadcast axes); everything else wants
exact shapes and raises naming the op.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Tape:
    """Single-owner op recorder. Build one per forward/backward pass.

    The recorded graph is cyclic (tape -> nodes -> tape, plus backward
    closures), so dropping the last reference leaves the buffers to the
    generational collector, which does not see ndarray bytes and can lag
    far behind. Call release() when a pass is done to free them promptly.
    """

    def __init__(self, dtype: str = "float32", debug_nan: bool = False):
        if dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {dtype!r}")
        self.dtype = np.dtype(dtype)
        self.debug_nan = debug_nan
        self.nodes: list[Tensor] = []

    def release(self) -> None:
        """Discard the recorded graph, breaking its reference cycles.

        Tensors already handed out keep their .data readable, but gradients
        are gone and the tape must not record further ops or run backward().
        """
        for node in self.nodes:
            node._parents = ()
            node._backward = None
            node.grad = None
        self.nodes.clear()

    def tensor(self, data, requires_grad: bool = False) -> "Tensor":
        arr = np.asarray(data, dtype=self.dtype)
        return Tensor(self, arr, requires_grad=requires_grad)

    def const(self, data) -> "Tensor":
        return self.tensor(data, requires_grad=False)

    def leaf(self, data) -> "Tensor":
        return self.tensor(data, requires_grad=True)


class Tensor:
    __slots__ = ("tape", "data", "grad", "requires_grad", "_backward", "_parents", "__weakref__")

    def __init__(self, tape: Tape, data: np.ndarray, requires_grad: bool = False):
        self.tape = tape
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def gradient(self) -> np.ndarray:
        """Gradient after backward(); zeros if the node was never reached."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # conveniences used throughout the model code
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def sum(self, axis=None) -> "Tensor":
        return tensor_sum(self, axis)

    def mean(self, axis=None) -> "Tensor":
        return tensor_mean(self, axis)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def __repr__(self) -> str:
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"


def _same_tape(op: str, *tensors: Tensor) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ValueError(f"{op}: tensors belong to different tapes")
    return tape


def _make(op: str, tape: Tape, data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if tape.debug_nan and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: non-finite values in forward output")
    req = any(p.requires_grad for p in parents)
    out = Tensor(tape, data, requires_grad=req)
    if req:
        out._parents = parents
        out._backward = backward
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Reverse-topological gradient sweep seeded at a scalar loss."""
    if loss.tape is not tape:
        raise ValueError("backward: loss does not belong to this tape")
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {tuple(loss.shape)}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape("add", a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make("add", tape, data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape("mul", a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None

    def back(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make("mul", tape, data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def back(g):
        a._accumulate(c * g)

    return _make("scale", a.tape, c * a.data, (a,), back)


def absolute(a: Tensor) -> Tensor:
    def back(g):
        a._accumulate(g * np.sign(a.data))

    return _make("abs", a.tape, np.abs(a.data), (a,), back)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def back(g):
        a._accumulate(g * mask)

    return _make("relu", a.tape, a.data * mask, (a,), back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        a._accumulate(g * (1.0 - y * y))

    return _make("tanh", a.tape, y, (a,), back)


# ---------------------------------------------------------------------------
# reductions and shape ops


def _axis_tuple(axis, ndim) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tensor_sum(a: Tensor, axis=None) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    data = a.data.sum(axis=axes)

    def back(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g, axes), a.shape))

    return _make("sum", a.tape, data, (a,), back)


def tensor_mean(a: Tensor, axis=None) -> Tensor:
    axes = _axis_tuple(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes)

    def back(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g / count, axes), a.shape))

    return _make("mean", a.tape, data, (a,), back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)

    def back(g):
        a._accumulate(g.reshape(a.shape))

    return _make("reshape", a.tape, data, (a,), back)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def back(g):
        a._accumulate(np.transpose(g, inv))

    return _make("transpose", a.tape, np.transpose(a.data, axes), (a,), back)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    tape = _same_tape("concat", *tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _make("concat", tape, data, tuple(tensors), back)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along one axis."""
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(
            f"slice: [{start}:{start + length}) out of range for axis {axis} of {a.shape}"
        )
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def back(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        a.grad[sl] += g

    return _make("slice", a.tape, a.data[sl].copy(), (a,), back)


def tile0(a: Tensor, n: int) -> Tensor:
    """Repeat a size-1 leading axis n times (batch broadcast)."""
    if a.shape[0] != 1:
        raise ValueError(f"tile0: leading axis must be 1, got shape {a.shape}")
    data = np.repeat(a.data, n, axis=0)

    def back(g):
        a._accumulate(g.sum(axis=0, keepdims=True))

    return _make("tile0", a.tape, data, (a,), back)


def broadcast_spatial(a: Tensor, hw: tuple[int, int]) -> Tensor:
    """(B, C) -> (B, C, H, W) by constant broadcast over space."""
    if a.data.ndim != 2:
        raise ValueError(f"broadcast_spatial: expected rank 2, got shape {a.shape}")
    h, w = hw
    data = np.broadcast_to(a.data[:, :, None, None], (*a.shape, h, w)).copy()

    def back(g):
        a._accumulate(g.sum(axis=(2, 3)))

    return _make("broadcast_spatial", a.tape, data, (a,), back)


def upsample_nearest2x(a: Tensor) -> Tensor:
    if a.data.ndim != 4:
        raise ValueError(f"upsample_nearest2x: expected rank 4, got shape {a.shape}")
    data = np.repeat(np.repeat(a.data, 2, axis=2), 2, axis=3)
    b, c, h, w = a.shape

    def back(g):
        a._accumulate(g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _make("upsample_nearest2x", a.tape, data, (a,), back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2D @ 2D, batched 3D @ 3D, or 3D @ 2D (shared right operand)."""
    tape = _same_tape("matmul", a, b)
    an, bn = a.data.ndim, b.data.ndim
    if an == 2 and bn == 2:
        if a.shape[1] != b.shape[0]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

        def back(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

    elif an == 3 and bn == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

        def back(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.transpose(0, 2, 1))
            if b.requires_grad:
                b._accumulate(a.data.transpose(0, 2, 1) @ g)

    elif an == 3 and bn == 2:
        if a.shape[2] != b.shape[0]:
            raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

        def back(g):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                m = a.shape[2]
                b._accumulate(a.data.reshape(-1, m).T @ g.reshape(-1, g.shape[-1]))

    else:
        raise ValueError(f"matmul: unsupported ranks {an} x {bn}")
    return _make("matmul", tape, a.data @ b.data, (a, b), back)


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        a._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make("softmax", a.tape, y, (a,), back)


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance. No affine part."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        a._accumulate((g - gm - y * gym) * inv)

    return _make("layer_norm", a.tape, y, (a,), back)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or ids.max(initial=-1) >= table.shape[0]:
        raise ValueError(
            f"embedding_lookup: ids out of range for table of {table.shape[0]} rows"
        )
    data = table.data[ids]

    def back(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _make("embedding_lookup", table.tape, data, (table,), back)


# ---------------------------------------------------------------------------
# spatial ops


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution via im2col. stride in {1, 2}; zero padding."""
    tape = _same_tape("conv2d", x, w) if b is None else _same_tape("conv2d", x, w, b)
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected rank-4 input/weight, got {x.shape} and {w.shape}")
    bn, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ValueError(f"conv2d: input channels {cin} != weight channels {cin_w}")
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({cout},)")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: kernel {kh}x{kw} too large for input {h}x{wd} with pad {pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (B, C, Ho, Wo, kh, kw) -> (B*Ho*Wo, C*kh*kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bn * ho * wo, -1)
    wr = w.data.reshape(cout, -1)
    out = (cols @ wr.T).reshape(bn, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data[None, :, None, None]

    def back(g):
        gr = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bn * ho * wo, cout)
        if b is not None and b.requires_grad:
            b._accumulate(gr.sum(axis=0))
        if w.requires_grad:
            w._accumulate((gr.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (gr @ wr).reshape(bn, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                        dcols[:, :, :, :, ki, kj]
                    )
            x._accumulate(dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp)

    parents = (x, w) if b is None else (x, w, b)
    return _make("conv2d", tape, np.ascontiguousarray(out), parents, back)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 1, pad: int = 1) -> Tensor:
    """NCHW max pooling; padding uses -inf so it never wins."""
    if x.data.ndim != 4:
        raise ValueError(f"max_pool2d: expected rank-4 input, got {x.shape}")
    bn, c, h, wd = x.shape
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (wd + 2 * pad - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"max_pool2d: kernel {kernel} too large for input {h}x{wd}")
    xp = (
        np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=-np.inf)
        if pad
        else x.data
    )
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(bn, c, ho, wo, kernel * kernel)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def back(g):
        dxp = np.zeros_like(xp)
        for idx in range(kernel * kernel):
            mask = arg == idx
            ki, kj = divmod(idx, kernel)
            dxp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += (
                g * mask
            )
        x._accumulate(dxp[:, :, pad : pad + h, pad : pad + wd] if pad else dxp)

    return _make("max_pool2d", x.tape, np.ascontiguousarray(out), (x,), back)


# ---------------------------------------------------------------------------
# losses


def huber(pred: Tensor, target: np.ndarray, delta: float = 1.0) -> Tensor:
    """Mean Huber loss; r = target - pred, quadratic inside |r| <= delta."""
    if not (delta > 0):
        raise ValueError("huber: delta must be positive")
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ValueError(f"huber: shapes {pred.shape} and {target.shape} differ")
    r = target - pred.data
    a = np.abs(r)
    quad = a <= delta
    vals = np.where(quad, 0.5 * r * r, delta * a - 0.5 * delta * delta)
    n = r.size

    def back(g):
        pred._accumulate(g * (-np.clip(r, -delta, delta)) / n)

    return _make("huber", pred.tape, np.asarray(vals.mean(), dtype=pred.data.dtype), (pred,), back)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            step=0,
            m={k: np.zeros_like(a) for k, a in params.items()},
            v={k: np.zeros_like(a) for k, a in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam with bias correction; iteration order is sorted-by-name."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in sorted(params):
        g = grads[name]
        if g.shape != params[name].shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param shape "
                             f"{params[name].shape} for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state
