"""
Dense float64 tensors with reverse-mode automatic differentiation.

Covers the operations a DPN-SE classifier and its softmax cross-entropy loss need:
convolution, max/average pooling, dense layers, activations, batch normalization,
channel concatenation/slicing and channel-wise rescaling.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import DimensionError, InputError, UsageError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph construction for the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    """N-dimensional float64 array participating in a gradient graph."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


class GradGraph:
    """Operations reachable from an output, in topological order."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_output(cls, output: Tensor) -> "GradGraph":
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return cls(order)

    def operations(self) -> List[Tensor]:
        return [node for node in self.nodes if node._backward is not None]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor) -> None:
    """Populate .grad on every requires_grad tensor reachable from a scalar loss."""
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    graph = GradGraph.from_output(loss)
    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(graph.nodes):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, grad in zip(node._parents, parent_grads):
            if grad is not None and parent.requires_grad:
                parent.accumulate_grad(grad)


def zero_grad(params: Sequence[Tensor]) -> None:
    for param in params:
        param.zero_grad()


def _require_ndim(x: Tensor, ndim: int, op: str) -> None:
    if x.data.ndim != ndim:
        raise DimensionError(f"{op} expects a {ndim}-d tensor, got shape {x.shape}")


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# Elementwise

def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# Reductions and reshapes

def sum(x: Tensor) -> Tensor:  # noqa: A001
    return _result(np.array(x.data.sum()), (x,), lambda g: (np.full_like(x.data, g),), "sum")


def mean(x: Tensor) -> Tensor:
    count = x.size
    return _result(np.array(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / count),), "mean")


def flatten(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(x.data.reshape(shape[0], -1), (x,), lambda g: (g.reshape(shape),), "flatten")


# Softmax family

def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the class axis of an [N, C] tensor."""
    _require_ndim(x, 2, "softmax")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    out = exp / exp.sum(axis=1, keepdims=True)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return _result(out, (x,), _backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    _require_ndim(x, 2, "log_softmax")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - log_norm
    probs = np.exp(out)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return _result(out, (x,), _backward, "log_softmax")


def cross_entropy(logits: Tensor, labels: ArrayLike) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    _require_ndim(logits, 2, "cross_entropy")
    n, c = logits.shape
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise InputError(f"got {labels.shape[0]} labels for a batch of {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(log_norm - shifted[rows, labels])

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(shifted - log_norm[:, None])
        grad[rows, labels] -= 1.0
        return (grad * (g / n),)

    return _result(np.array(loss), (logits,), _backward, "cross_entropy")


# Layers

def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x [N, D], w [D, M], b [M]."""
    _require_ndim(x, 2, "dense")
    _require_ndim(w, 2, "dense weight")
    if x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(f"dense: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    out = x.data @ w.data + b.data

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return _result(out, (x, w, b), _backward, "dense")


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded cross-correlation of x [N, C, H, W] with w [K, C, kh, kw]."""
    _require_ndim(x, 4, "conv2d")
    _require_ndim(w, 4, "conv2d weight")
    n, c, h, width = x.shape
    k, wc, kh, kw = w.shape
    if wc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {wc}")
    if stride < 1 or pad < 0:
        raise DimensionError(f"conv2d: invalid stride={stride} pad={pad}")
    hp, wp = h + 2 * pad, width + 2 * pad
    if kh > hp or kw > wp:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    out_h = (hp - kh) // stride + 1
    out_w = (wp - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # windows: [N, C, out_h, out_w, kh, kw]
    out = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        grad_w = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, w.data, axes=([1], [0]))  # [N, out_h, out_w, C, kh, kw]
        grad_xp = np.zeros((n, c, hp, wp))
        row_stop = stride * (out_h - 1) + 1
        col_stop = stride * (out_w - 1) + 1
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + row_stop:stride, j:j + col_stop:stride] += cols[..., i, j].transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, pad:pad + h, pad:pad + width] if pad else grad_xp
        return grad_x, grad_w

    return _result(np.ascontiguousarray(out), (x, w), _backward, "conv2d")


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """k x k max pooling; ties route the gradient to the first window position in row-major order."""
    _require_ndim(x, 4, "maxpool2d")
    n, c, h, width = x.shape
    if k < 1 or stride < 1:
        raise DimensionError(f"maxpool2d: invalid k={k} stride={stride}")
    if k > h or k > width:
        raise DimensionError(f"maxpool2d: window {k} exceeds spatial extent {h}x{width}")
    windows = sliding_window_view(x.data, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    flat = windows.reshape(n, c, out_h, out_w, k * k)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        di, dj = np.divmod(argmax, k)
        rows = np.arange(out_h)[None, None, :, None] * stride + di
        cols = np.arange(out_w)[None, None, None, :] * stride + dj
        batch = np.arange(n)[:, None, None, None]
        chan = np.arange(c)[None, :, None, None]
        grad = np.zeros_like(x.data)
        np.add.at(grad, (batch, chan, rows, cols), g)
        return (grad,)

    return _result(out, (x,), _backward, "maxpool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes: [N, C, H, W] -> [N, C]."""
    _require_ndim(x, 4, "global_avg_pool")
    h, width = x.shape[2], x.shape[3]
    if h < 1 or width < 1:
        raise DimensionError("global_avg_pool: empty spatial extent")
    count = h * width
    out = x.data.mean(axis=(2, 3))

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (np.broadcast_to(g[:, :, None, None] / count, x.shape).copy(),)

    return _result(out, (x,), _backward, "global_avg_pool")


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    eps: float = 1e-5,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    training: bool = True,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization of [N, C, H, W] followed by the affine gamma/beta.

    In training mode batch statistics are used and the running buffers, when given,
    are updated in place. Otherwise the running buffers are read and nothing mutates.
    """
    _require_ndim(x, 4, "batch_norm")
    n, c, h, width = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: gamma/beta must have shape ({c},)")
    scale = gamma.data[None, :, None, None]
    if training:
        count = n * h * width
        if count < 2:
            raise DimensionError("batch_norm needs N*H*W >= 2 in training mode")
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if running_mean is not None and running_var is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / (count - 1)
    else:
        if running_mean is None or running_var is None:
            raise UsageError("batch_norm inference needs running statistics")
        mu, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = scale * xhat + beta.data[None, :, None, None]

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        grad_gamma = (g * xhat).sum(axis=(0, 2, 3))
        grad_beta = g.sum(axis=(0, 2, 3))
        gxhat = g * scale
        if training:
            m = n * h * width
            grad_x = (inv_std[None, :, None, None] / m) * (
                m * gxhat
                - gxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            grad_x = gxhat * inv_std[None, :, None, None]
        return grad_x, grad_gamma, grad_beta

    return _result(out, (x, gamma, beta), _backward, "batch_norm")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack b's channels after a's: [N, Ca, H, W] + [N, Cb, H, W] -> [N, Ca+Cb, H, W]."""
    _require_ndim(a, 4, "concat_channels")
    _require_ndim(b, 4, "concat_channels")
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise DimensionError(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    split = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return _result(out, (a, b), lambda g: (g[:, :split].copy(), g[:, split:].copy()), "concat_channels")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    """Channels [start, stop) of a [N, C, H, W] tensor."""
    _require_ndim(x, 4, "slice_channels")
    if not 0 <= start <= stop <= x.shape[1]:
        raise DimensionError(f"slice_channels: [{start}, {stop}) outside 0..{x.shape[1]}")

    def _backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.zeros_like(x.data)
        grad[:, start:stop] = g
        return (grad,)

    return _result(x.data[:, start:stop].copy(), (x,), _backward, "slice_channels")


def scale_channels(x: Tensor, z: Tensor) -> Tensor:
    """out[n, c] = z[n, c] * x[n, c] for x [N, C, H, W] and z [N, C]."""
    _require_ndim(x, 4, "scale_channels")
    if z.shape != x.shape[:2]:
        raise DimensionError(f"scale_channels: gate shape {z.shape} does not match {x.shape[:2]}")
    gate = z.data[:, :, None, None]

    def _backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g * gate, (g * x.data).sum(axis=(2, 3))

    return _result(x.data * gate, (x, z), _backward, "scale_channels")


# Finite-difference checking

def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def gradcheck(
    fn: Callable[[], Tensor],
    inputs: Sequence[Tensor],
    n_points: int = 5,
    h: float = 1e-5,
    seed: int = 0,
    smooth_tol: Optional[float] = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` must rebuild a scalar output from the current contents of ``inputs``.
    ``n_points`` coordinates are checked per input (all of them if fewer exist).
    With ``smooth_tol`` set, a coordinate whose second difference exceeds
    ``smooth_tol * max(|numeric|, 1e-6)`` is treated as straddling a ReLU or
    max-pool kink and replaced by another coordinate.
    """
    rng = np.random.default_rng(seed)
    zero_grad(inputs)
    output = fn()
    backward(output)
    centre = output.item()
    worst = 0.0
    skipped = 0
    for tensor in inputs:
        if tensor.size == 0:
            continue
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        wanted = min(n_points, tensor.size)
        flat = tensor.data.reshape(-1)
        checked = 0
        for index in rng.permutation(tensor.size):
            if checked == wanted:
                break
            original = flat[index]
            flat[index] = original + h
            with no_grad():
                upper = fn().item()
            flat[index] = original - h
            with no_grad():
                lower = fn().item()
            flat[index] = original
            numeric = (upper - lower) / (2.0 * h)
            if smooth_tol is not None:
                kink = abs(upper - 2.0 * centre + lower) / (2.0 * h)
                if kink > smooth_tol * max(abs(numeric), 1e-6):
                    skipped += 1
                    continue
            err = float(relative_error(np.array(analytic.reshape(-1)[index]), np.array(numeric)))
            worst = max(worst, err)
            checked += 1
    logger.debug("gradcheck over %d inputs: worst relative error %.3e (%d non-smooth points skipped)",
                 len(inputs), worst, skipped)
    return worst
