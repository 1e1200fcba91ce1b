"""Differentiable primitives on :class:`~src.autograd.tensor.Tensor`.

Broadcasting is limited to scalar-against-tensor and equal shapes; anything
else goes through :func:`expand` explicitly. Convolutions are im2col + one
matrix product, so ``matmul`` is the only correctness-critical kernel.
"""
from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autograd.tensor import Function, Tensor
from src.errors import ContractError, DimensionError, DomainError

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715

IntPair = int | tuple[int, int]


def as_tensor(value: Tensor | float | np.ndarray) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _pair(value: IntPair) -> tuple[int, int]:
    if isinstance(value, int):
        return value, value
    return int(value[0]), int(value[1])


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum()).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = a.shape, b.shape
        return a + b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return _reduce_to(grad, self.shapes[0]), _reduce_to(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.shapes = a.shape, b.shape
        return a - b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return _reduce_to(grad, self.shapes[0]), _reduce_to(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return _reduce_to(grad * self.b, self.a.shape), _reduce_to(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if np.any(b == 0.0):
            raise DomainError("division by zero")
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        ga = grad / self.b
        gb = -grad * self.a / (self.b * self.b)
        return _reduce_to(ga, self.a.shape), _reduce_to(gb, self.b.shape)


class Neg(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        return -x

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (-grad,)


class Exp(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.exp(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        if np.any(x <= 0.0):
            raise DomainError(f"log of non-positive value (min={float(np.min(x))!r})")
        self.x = x
        return np.log(x)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad / self.x,)


class Square(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        return x * x

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (2.0 * grad * self.x,)


class Sqrt(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        if np.any(x < 0.0):
            raise DomainError("sqrt of negative value")
        self.out = np.sqrt(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * 0.5 / self.out,)


class Tanh(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * (1.0 - self.out * self.out),)


class Sigmoid(Function):
    # Clipped so the output stays strictly inside (0, 1) in float64.
    LO = 1e-15
    HI = 1.0 - 1e-15

    def forward(self, x: np.ndarray) -> np.ndarray:
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        self.out = np.clip(out, self.LO, self.HI)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.out * (1.0 - self.out),)


class Relu(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.mask,)


class Gelu(Function):
    """tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        self.x = x
        self.t = np.tanh(GELU_C * (x + GELU_A * x**3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        x, t = self.x, self.t
        dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
        return (grad * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)


class Clamp(Function):
    def forward(self, x: np.ndarray, lo: float, hi: float) -> np.ndarray:
        self.mask = (x >= lo) & (x <= hi)
        return np.clip(x, lo, hi)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad * self.mask,)


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return Add.apply(a, b)


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return Sub.apply(a, b)


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    return Mul.apply(a, b)


def div(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    return Div.apply(a, b)


def neg(x: Tensor) -> Tensor:
    return Neg.apply(x)


def exp(x: Tensor) -> Tensor:
    return Exp.apply(x)


def log(x: Tensor) -> Tensor:
    return Log.apply(x)


def square(x: Tensor) -> Tensor:
    return Square.apply(x)


def sqrt(x: Tensor) -> Tensor:
    return Sqrt.apply(x)


def tanh(x: Tensor) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: Tensor) -> Tensor:
    return Sigmoid.apply(x)


def relu(x: Tensor) -> Tensor:
    return Relu.apply(x)


def gelu(x: Tensor) -> Tensor:
    return Gelu.apply(x)


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    if lo > hi:
        raise ContractError(f"clamp bounds out of order: {lo} > {hi}")
    return Clamp.apply(x, lo=lo, hi=hi)


_UNARY = {
    "sigmoid": sigmoid,
    "relu": relu,
    "gelu": gelu,
    "exp": exp,
    "log": log,
    "square": square,
    "tanh": tanh,
    "sqrt": sqrt,
    "neg": neg,
}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, *args: Tensor | float) -> Tensor:
    """Dispatch by name: ``elementwise("sigmoid", x)``, ``elementwise("add", a, b)``."""
    if op in _UNARY and len(args) == 1:
        return _UNARY[op](as_tensor(args[0]))
    if op in _BINARY and len(args) == 2:
        return _BINARY[op](args[0], args[1])
    raise ContractError(f"unknown elementwise op '{op}' for {len(args)} argument(s)")


# ---------------------------------------------------------------------------
# linear algebra and reductions


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return np.matmul(grad, np.swapaxes(self.b, -1, -2)), np.matmul(np.swapaxes(self.a, -1, -2), grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a[..., m, k] @ b[..., k, n]``; leading axes must match exactly."""
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    return MatMul.apply(a, b)


class Sum(Function):
    def forward(self, x: np.ndarray, axis: int | None, keepdims: bool) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape),)


class Mean(Function):
    def forward(self, x: np.ndarray, axis: int | None, keepdims: bool) -> np.ndarray:
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        self.count = x.size if axis is None else x.shape[axis]
        return np.mean(x, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad / self.count, self.shape),)


def reduce_sum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def reduce_mean(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


# Tensor.sum / Tensor.mean bind to these names.
sum = reduce_sum  # noqa: A001
mean = reduce_mean


class Linear(Function):
    def forward(self, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.in_shape = x.shape
        self.x2 = x.reshape(-1, w.shape[0])
        self.w = w
        out = self.x2 @ w + b
        return out.reshape(*x.shape[:-1], w.shape[1])

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        g2 = grad.reshape(-1, self.w.shape[1])
        return (g2 @ self.w.T).reshape(self.in_shape), self.x2.T @ g2, g2.sum(axis=0)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x[..., in] @ w[in, out] + b[out]``."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    if b is None:
        b = Tensor(np.zeros(w.shape[1]))
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    return Linear.apply(x, w, b)


# ---------------------------------------------------------------------------
# shape manipulation


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x: np.ndarray, axes: tuple[int, ...]) -> np.ndarray:
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return (np.transpose(grad, self.inverse),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class SliceAxis(Function):
    def forward(self, x: np.ndarray, axis: int, start: int, stop: int) -> np.ndarray:
        self.in_shape = x.shape
        self.index = (slice(None),) * axis + (slice(start, stop),)
        return x[self.index]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        full = np.zeros(self.in_shape)
        full[self.index] = grad
        return (full,)


class Expand(Function):
    def forward(self, x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        self.in_shape = x.shape
        return np.broadcast_to(x, shape)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        lead = grad.ndim - len(self.in_shape)
        if lead:
            grad = grad.sum(axis=tuple(range(lead)))
        axes = tuple(i for i, n in enumerate(self.in_shape) if n == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
        return (grad,)


def reshape(x: Tensor, shape: Sequence[int] | Sequence[Sequence[int]]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = shape[0]
    shape = tuple(int(s) for s in shape)  # type: ignore[arg-type]
    try:
        np.empty(x.shape).reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from exc
    return Reshape.apply(x, shape=shape)


def transpose(x: Tensor, axes: Sequence[int] | Sequence[Sequence[int]] | None = None) -> Tensor:
    if axes and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = axes[0]
    axes = tuple(reversed(range(x.ndim))) if not axes else tuple(int(a) for a in axes)  # type: ignore[arg-type]
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} are not a permutation for shape {x.shape}")
    return Transpose.apply(x, axes=axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of an empty list")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    if len(tensors) == 1:
        return tensors[0]
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        shape.insert(axis % (t.ndim + 1), 1)
        expanded.append(reshape(t, shape))
    return concat(expanded, axis=axis)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise DimensionError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    return SliceAxis.apply(x, axis=axis, start=start, stop=stop)


def expand(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        np.broadcast_shapes(x.shape, shape)
    except ValueError as exc:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}") from exc
    if np.broadcast_shapes(x.shape, shape) != shape:
        raise DimensionError(f"expand: cannot broadcast {x.shape} to {shape}")
    return Expand.apply(x, shape=shape)


# ---------------------------------------------------------------------------
# normalisation


class Softmax(Function):
    def forward(self, x: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=self.axis, keepdims=True)),)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ContractError(f"softmax axis {axis} invalid for shape {x.shape}")
    return Softmax.apply(x, axis=axis % x.ndim)


class LayerNorm(Function):
    def forward(self, x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
        mu = np.mean(x, axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.xhat = xc * self.inv
        self.gain = gain
        return self.xhat * gain + bias

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        d = self.xhat.shape[-1]
        dxhat = grad * self.gain
        dx = (self.inv / d) * (
            d * dxhat
            - np.sum(dxhat, axis=-1, keepdims=True)
            - self.xhat * np.sum(dxhat * self.xhat, axis=-1, keepdims=True)
        )
        dgain = (grad * self.xhat).reshape(-1, d).sum(axis=0)
        dbias = grad.reshape(-1, d).sum(axis=0)
        return dx, dgain, dbias


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if d < 1 or gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: input {x.shape}, gain {gain.shape}, bias {bias.shape}")
    return LayerNorm.apply(x, gain, bias, eps=eps)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> tuple[np.ndarray, int, int]:
    n, c, hp, wp = xp.shape
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(cols6: np.ndarray, hp: int, wp: int, sh: int, sw: int) -> np.ndarray:
    n, ho, wo, c, kh, kw = cols6.shape
    out = np.zeros((n, c, hp, wp))
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += cols6[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return out


class Conv2d(Function):
    def forward(
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: tuple[int, int], padding: tuple[int, int]
    ) -> np.ndarray:
        (sh, sw), (ph, pw) = stride, padding
        n, c, h, wd = x.shape
        cout, _, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols, ho, wo = _im2col(xp, kh, kw, sh, sw)
        w2 = w.reshape(cout, -1)
        out = cols @ w2.T + b
        self.saved = cols, w2, (n, c, h, wd, kh, kw, ho, wo, sh, sw, ph, pw), w.shape
        return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2)

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        cols, w2, dims, w_shape = self.saved
        n, c, h, wd, kh, kw, ho, wo, sh, sw, ph, pw = dims
        g2 = grad.transpose(0, 2, 3, 1).reshape(-1, w2.shape[0])
        dw = (g2.T @ cols).reshape(w_shape)
        db = g2.sum(axis=0)
        dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
        dxp = _col2im(dcols, h + 2 * ph, wd + 2 * pw, sh, sw)
        return dxp[:, :, ph : ph + h, pw : pw + wd], dw, db


class ConvTranspose2d(Function):
    def forward(
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: tuple[int, int], padding: tuple[int, int]
    ) -> np.ndarray:
        (sh, sw), (ph, pw) = stride, padding
        n, cin, h, wd = x.shape
        _, cout, kh, kw = w.shape
        x2 = x.transpose(0, 2, 3, 1).reshape(-1, cin)
        w2 = w.reshape(cin, -1)
        cols6 = (x2 @ w2).reshape(n, h, wd, cout, kh, kw)
        hp, wp = (h - 1) * sh + kh, (wd - 1) * sw + kw
        outp = _col2im(cols6, hp, wp, sh, sw)
        ho, wo = hp - 2 * ph, wp - 2 * pw
        self.saved = x2, w2, (n, cin, h, wd, kh, kw, sh, sw, ph, pw), w.shape
        return outp[:, :, ph : ph + ho, pw : pw + wo] + b[None, :, None, None]

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        x2, w2, dims, w_shape = self.saved
        n, cin, h, wd, kh, kw, sh, sw, ph, pw = dims
        gp = np.pad(grad, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        cols, _, _ = _im2col(gp, kh, kw, sh, sw)
        dx = (cols @ w2.T).reshape(n, h, wd, cin).transpose(0, 3, 1, 2)
        dw = (x2.T @ cols).reshape(w_shape)
        return dx, dw, grad.sum(axis=(0, 2, 3))


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1, *x.shape)), True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected (C, H, W) or (N, C, H, W), got {x.shape}")


def conv2d(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: IntPair = 1, padding: IntPair = 0
) -> Tensor:
    """Cross-correlation with zero padding; ``x`` is (C, H, W) or (N, C, H, W)."""
    xb, squeeze = _batched(x)
    st, pad = _pair(stride), _pair(padding)
    if w.ndim != 4 or w.shape[1] != xb.shape[1]:
        raise DimensionError(f"conv2d: input {x.shape} does not fit kernel {w.shape}")
    hp, wp = xb.shape[2] + 2 * pad[0], xb.shape[3] + 2 * pad[1]
    if w.shape[2] > hp or w.shape[3] > wp:
        raise DimensionError(f"conv2d: kernel {w.shape} larger than padded input {(hp, wp)} of {x.shape}")
    if b is None:
        b = Tensor(np.zeros(w.shape[0]))
    out = Conv2d.apply(xb, w, b, stride=st, padding=pad)
    return reshape(out, out.shape[1:]) if squeeze else out


def conv2d_transpose(
    x: Tensor, w: Tensor, b: Tensor | None = None, stride: IntPair = 1, padding: IntPair = 0
) -> Tensor:
    """Adjoint of :func:`conv2d` with kernel (C_in, C_out, kh, kw).

    Output extent is ``(H - 1) * s - 2p + k``.
    """
    xb, squeeze = _batched(x)
    st, pad = _pair(stride), _pair(padding)
    if w.ndim != 4 or w.shape[0] != xb.shape[1]:
        raise DimensionError(f"conv2d_transpose: input {x.shape} does not fit kernel {w.shape}")
    ho = (xb.shape[2] - 1) * st[0] - 2 * pad[0] + w.shape[2]
    wo = (xb.shape[3] - 1) * st[1] - 2 * pad[1] + w.shape[3]
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d_transpose: padding {pad} leaves no output for {x.shape}, {w.shape}")
    if b is None:
        b = Tensor(np.zeros(w.shape[1]))
    out = ConvTranspose2d.apply(xb, w, b, stride=st, padding=pad)
    return reshape(out, out.shape[1:]) if squeeze else out


class AvgPool2d(Function):
    def forward(self, x: np.ndarray, k: int) -> np.ndarray:
        self.k = k
        n, c, h, w = x.shape
        return x.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray | None, ...]:
        k = self.k
        return (np.repeat(np.repeat(grad, k, axis=2), k, axis=3) / (k * k),)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    xb, squeeze = _batched(x)
    if xb.shape[2] % k or xb.shape[3] % k:
        raise DimensionError(f"avg_pool2d: {x.shape} not divisible by {k}")
    out = AvgPool2d.apply(xb, k=k)
    return reshape(out, out.shape[1:]) if squeeze else out


def mse(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mse: shapes {a.shape} and {b.shape} differ")
    return reduce_mean(square(sub(a, b)))
