"""Small reverse-mode autodiff engine over dense float64 arrays.

Every op builds a node holding its parents and a closure that pushes the
output gradient back into them. ``Tensor.backward`` topologically sorts the
graph reachable from a scalar and runs the closures once each. The graph is
rebuilt on every forward pass.

Broadcasting is deliberately limited to scalar-vs-tensor; anything else is a
:class:`ShapeError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_DEBUG = False


class ShapeError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class DegenerateRowError(ValueError):
    def __init__(self, row: int):
        super().__init__(f"mask row {row} has no nonzero entry")
        self.row = row


def set_debug(flag: bool) -> None:
    """Toggle finiteness assertions on every op output and gradient."""
    global _DEBUG
    _DEBUG = bool(flag)


def _check_finite(arr: np.ndarray, what: str) -> None:
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {what}")


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _op: str = "",
    ):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op or 'leaf'}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        # iterative post-order DFS; recursion would overflow on long tapes
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = node.grad + g
                _check_finite(node.grad, "backward")
            else:
                # interior nodes keep their grad too; handy when inspecting
                if node.grad is not None:
                    node.grad = node.grad + g
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    _check_finite(pg, f"backward of {node._op}")
                    if id(parent) in grads:
                        grads[id(parent)] = grads[id(parent)] + pg
                    else:
                        grads[id(parent)] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), float(other))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ShapeError("tensor/tensor division is not supported; use mul with a reciprocal")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    _check_finite(data, op)
    req = any(p.requires_grad for p in parents)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = req
    out.grad = None
    out._parents = tuple(parents) if req else ()
    out._backward = backward if req else None
    out._op = op
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(_lift(a), float(b))
    if not isinstance(a, Tensor):
        return add_scalar(b, float(a))
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), "add", lambda g: ((a, g), (b, g)))


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add_scalar(_lift(a), -float(b))
    a = _lift(a)
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub", lambda g: ((a, g), (b, -g)))


def mul(a, b) -> Tensor:
    """Hadamard product, or scaling when one side is a plain number."""
    if not isinstance(b, Tensor):
        return scale(_lift(a), float(b))
    if not isinstance(a, Tensor):
        return scale(b, float(a))
    _same_shape(a, b, "mul")
    return _make(a.data * b.data, (a, b), "mul", lambda g: ((a, g * b.data), (b, g * a.data)))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _make(a.data + c, (a,), "add_scalar", lambda g: ((a, g),))


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), "scale", lambda g: ((a, g * c),))


def square(a: Tensor) -> Tensor:
    return _make(a.data**2, (a,), "square", lambda g: ((a, 2.0 * a.data * g),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: ((a, g * out),))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), "log", lambda g: ((a, g / a.data),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), "sigmoid", lambda g: ((a, g * out * (1.0 - out)),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    x = a.data
    neg = alpha * np.expm1(np.minimum(x, 0.0))
    out = np.where(x > 0, x, neg)
    d = np.where(x > 0, 1.0, neg + alpha)
    return _make(out, (a,), "elu", lambda g: ((a, g * d),))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = a.data
    d = np.where(x > 0, 1.0, slope)
    return _make(x * d, (a,), "leaky_relu", lambda g: ((a, g * d),))


def hinge_max0(a: Tensor, delta: float) -> Tensor:
    """max(a - delta, 0) elementwise."""
    shifted = a.data - delta
    active = (shifted > 0).astype(np.float64)
    return _make(shifted * active, (a,), "hinge_max0", lambda g: ((a, g * active),))


def identity(a: Tensor) -> Tensor:
    return a


# ---------------------------------------------------------------- structural

def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T.copy(), (a,), "transpose", lambda g: ((a, g.T),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    out = a.data.reshape(tuple(shape))
    return _make(out, (a,), "reshape", lambda g: ((a, g.reshape(old)),))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row mismatch {a.shape} vs {b.shape}")
    k = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _make(out, (a, b), "concat_cols", lambda g: ((a, g[:, :k]), (b, g[:, k:])))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _make(a.data @ b.data, (a, b), "matmul", lambda g: ((a, g @ b.data.T), (b, a.data.T @ g)))


# ---------------------------------------------------------------- reductions

def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return _make(np.array(a.data.sum()), (a,), "sum", lambda g: ((a, np.full(shape, float(g))),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    shape = a.shape
    return _make(np.array(a.data.mean()), (a,), "mean", lambda g: ((a, np.full(shape, float(g) / n)),))


def frobenius_norm_sq(a: Tensor) -> Tensor:
    return _make(np.array(np.sum(a.data**2)), (a,), "frobenius_norm_sq", lambda g: ((a, 2.0 * float(g) * a.data),))


# ---------------------------------------------------------------- row-wise

def masked_softmax_rows(logits: Tensor, mask) -> Tensor:
    """Row softmax restricted to ``mask == 1``; exactly zero elsewhere."""
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if logits.shape != m.shape or logits.data.ndim != 2:
        raise ShapeError(f"masked_softmax_rows: logits {logits.shape} vs mask {m.shape}")
    on = m != 0
    empty = np.flatnonzero(~on.any(axis=1))
    if empty.size:
        raise DegenerateRowError(int(empty[0]))
    x = np.where(on, logits.data, -np.inf)
    x = x - x.max(axis=1, keepdims=True)
    e = np.where(on, np.exp(x), 0.0)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return ((logits, out * (g - inner)),)

    return _make(out, (logits,), "masked_softmax_rows", back)


def log_softmax_rows(logits: Tensor) -> Tensor:
    x = logits.data
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        return ((logits, g - soft * g.sum(axis=1, keepdims=True)),)

    return _make(out, (logits,), "log_softmax_rows", back)


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row to unit norm. Rows with norm <= eps pass through untouched."""
    x = a.data
    norms = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
    live = norms > eps
    safe = np.where(live, norms, 1.0)
    out = np.where(live, x / safe, x)

    def back(g):
        proj = np.sum(g * out, axis=1, keepdims=True)
        return ((a, np.where(live, (g - out * proj) / safe, g)),)

    return _make(out, (a,), "l2_normalize_rows", back)


# ---------------------------------------------------------------- convolution

def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # (B, C, oh, ow, k, k)
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, bias: Tensor | None = None) -> Tensor:
    """Valid cross-correlation. x: B x C_in x H x W, kernels: C_out x C_in x k x k."""
    if x.data.ndim != 4 or kernels.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernels, got {x.shape} and {kernels.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    B, C, H, W = x.shape
    O, Ck, k, k2 = kernels.shape
    if Ck != C or k != k2:
        raise ShapeError(f"conv2d: kernels {kernels.shape} incompatible with input {x.shape}")
    if H < k or W < k:
        raise ShapeError(f"conv2d: kernel {k}x{k} larger than input {H}x{W}")
    win = _windows(x.data, k, stride)
    oh, ow = win.shape[2], win.shape[3]
    out = np.einsum("bchwij,ocij->bohw", win, kernels.data, optimize=True)
    parents: tuple[Tensor, ...] = (x, kernels)
    if bias is not None:
        if bias.shape != (O,):
            raise ShapeError(f"conv2d bias must have shape ({O},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
        parents = (x, kernels, bias)

    def back(g):
        gk = np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
        gx = np.zeros_like(x.data)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += np.einsum(
                    "bohw,oc->bchw", g, kernels.data[:, :, i, j]
                )
        res = [(x, gx), (kernels, gk)]
        if bias is not None:
            res.append((bias, g.sum(axis=(0, 2, 3))))
        return res

    return _make(out, parents, "conv2d", back)


def conv_transpose2d(
    x: Tensor,
    kernels: Tensor,
    stride: int = 1,
    output_padding: int = 0,
    bias: Tensor | None = None,
) -> Tensor:
    """Adjoint of :func:`conv2d`. x: B x C_in x H x W, kernels: C_in x C_out x k x k."""
    if x.data.ndim != 4 or kernels.data.ndim != 4 or kernels.shape[0] != x.shape[1]:
        raise ShapeError(f"conv_transpose2d: kernels {kernels.shape} incompatible with input {x.shape}")
    B, C, H, W = x.shape
    _, O, k, _ = kernels.shape
    oh = (H - 1) * stride + k + output_padding
    ow = (W - 1) * stride + k + output_padding
    out = np.zeros((B, O, oh, ow))
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * H : stride, j : j + stride * W : stride] += np.einsum(
                "bchw,co->bohw", x.data, kernels.data[:, :, i, j]
            )
    parents: tuple[Tensor, ...] = (x, kernels)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
        parents = (x, kernels, bias)

    def back(g):
        gx = np.zeros_like(x.data)
        gk = np.zeros_like(kernels.data)
        for i in range(k):
            for j in range(k):
                gs = g[:, :, i : i + stride * H : stride, j : j + stride * W : stride]
                gx += np.einsum("bohw,co->bchw", gs, kernels.data[:, :, i, j])
                gk[:, :, i, j] = np.einsum("bchw,bohw->co", x.data, gs)
        res = [(x, gx), (kernels, gk)]
        if bias is not None:
            res.append((bias, g.sum(axis=(0, 2, 3))))
        return res

    return _make(out, parents, "conv_transpose2d", back)


def add_row_bias(x: Tensor, b: Tensor) -> Tensor:
    """x (N x D) plus the row vector b (D,) on every row."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_row_bias: bias {b.shape} does not fit {x.shape}")
    return _make(x.data + b.data, (x, b), "add_row_bias", lambda g: ((x, g), (b, g.sum(axis=0))))


# ---------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: Iterable[Tensor], **kw) -> "AdamState":
        params = list(params)
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            **kw,
        )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState, lr: float) -> None:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("adam_step: params, grads and moments differ in length")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape or state.first_moment[i].shape != p.shape:
            raise ShapeError(f"adam_step: gradient {g.shape} does not match parameter {p.shape}")
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)


class Adam:
    """Thin stateful wrapper pairing a parameter list with its AdamState."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, **kw):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(self.params, **kw)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, self.lr)
