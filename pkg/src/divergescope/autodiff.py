"""Minimal reverse-mode automatic differentiation on dense numpy arrays.

The graph is built implicitly as ops run (define-by-run): every op returns a
Tensor holding references to its parents and a closure that routes the output
gradient to them.  `backward(loss)` walks the graph in reverse topological
order exactly once.  Computation defaults to 32-bit floats; grad checks build
64-bit graphs.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        # Leaves that require grad start at zero so "loss independent of p"
        # leaves grad(p) == 0 rather than undefined.
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            # Copy: closures may hand over views (e.g. concat slices).
            self.grad = np.array(grad, dtype=self.data.dtype)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad or p._parents for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g_dim, s_dim) in enumerate(zip(grad.shape, shape)):
        if s_dim == 1 and g_dim != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dParam into every participating tensor's grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    # Intermediate grads are only needed during the sweep.
    for node in topo:
        if node._parents and node is not loss:
            node.grad = None


# ---------------------------------------------------------------------------
# Elementwise and linear-algebra ops


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bw(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    return _make(data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bw(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), bw)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bw(g):
        a.accumulate(_unbroadcast(g / b.data, a.shape))
        b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(data, (a, b), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    return _make(data, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got {a.shape}")

    def bw(g):
        a.accumulate(g.T)

    return _make(a.data.T, (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, stop)
            t.accumulate(g[tuple(index)])

    return _make(data, tuple(tensors), bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries along `axis` starting at `start`."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a.accumulate(full)

    return _make(a.data[index], (a,), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bw(g):
        a.accumulate(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), bw)


def reverse(a: Tensor, axis: int = 0) -> Tensor:
    def bw(g):
        a.accumulate(np.flip(g, axis=axis))

    return _make(np.flip(a.data, axis=axis), (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        a.accumulate(g * (1.0 - data * data))

    return _make(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid(a.data)

    def bw(g):
        a.accumulate(g * data * (1.0 - data))

    return _make(data, (a,), bw)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Exact identity with tanh, which saturates instead of overflowing.
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def bw(g):
        a.accumulate(g * (a.data > 0))

    return _make(data, (a,), bw)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def bw(g):
        a.accumulate(g * data)

    return _make(data, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(g):
        a.accumulate(g / a.data)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a: Tensor) -> Tensor:
    data = np.sqrt(a.data)

    def bw(g):
        a.accumulate(g * 0.5 / data)

    return _make(data, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    data = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        a.accumulate((g - inner) * data)

    return _make(data, (a,), bw)


def tensor_sum(a: Tensor, axis: int | None = None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.shape).copy())
        else:
            a.accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(data, (a,), bw)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    data = a.data.mean(axis=axis)

    def bw(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g / count, a.shape).copy())
        else:
            a.accumulate(np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy())

    return _make(data, (a,), bw)


def tensor_max(a: Tensor, axis: int | None = None) -> Tensor:
    """Maximum over all entries or along one axis; ties route the gradient to
    the first maximal entry.
    """
    if axis is None:
        data = a.data.max()
        flat_idx = int(np.argmax(a.data))

        def bw(g):
            full = np.zeros_like(a.data)
            full.flat[flat_idx] = g
            a.accumulate(full)

    else:
        data = a.data.max(axis=axis)
        idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)

        def bw(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, idx, np.expand_dims(g, axis), axis)
            a.accumulate(full)

    return _make(data, (a,), bw)


# ---------------------------------------------------------------------------
# Convolution and pooling (NCHW layout; conv2d is cross-correlation)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, padding: int):
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (w + 2 * padding - kw) // stride + 1
    cols = np.empty((n, c, kh, kw, h_out, w_out), dtype=x.dtype)
    for a in range(kh):
        for b in range(kw):
            cols[:, :, a, b] = x[:, :, a : a + stride * h_out : stride, b : b + stride * w_out : stride]
    return cols, h_out, w_out


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x_shape
    h_out, w_out = cols.shape[4], cols.shape[5]
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for a in range(kh):
        for b in range(kw):
            padded[:, :, a : a + stride * h_out : stride, b : b + stride * w_out : stride] += cols[:, :, a, b]
    if padding:
        return padded[:, :, padding : padding + h, padding : padding + w]
    return padded


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(f"conv2d channel mismatch: input {x.shape}, kernel {weight.shape}")
    n = x.shape[0]
    out_c, _, kh, kw = weight.shape
    cols, h_out, w_out = _im2col(x.data, kh, kw, stride, padding)
    cols_mat = cols.reshape(n, -1, h_out * w_out)
    w_mat = weight.data.reshape(out_c, -1)
    data = (w_mat @ cols_mat).reshape(n, out_c, h_out, w_out)
    if bias is not None:
        data = data + bias.data[None, :, None, None]

    def bw(g):
        g_mat = g.reshape(n, out_c, h_out * w_out)
        weight.accumulate(np.tensordot(g_mat, cols_mat, axes=([0, 2], [0, 2])).reshape(weight.shape))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0, 2, 3)))
        d_cols = np.matmul(w_mat.T[None], g_mat).reshape(cols.shape)
        x.accumulate(_col2im(d_cols, x.shape, kh, kw, stride, padding))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, bw)


def maxpool2d(x: Tensor, window: int, stride: int | None = None) -> Tensor:
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d expects a 4-D input, got {x.shape}")
    stride = window if stride is None else stride
    cols, h_out, w_out = _im2col(x.data, window, window, stride, 0)
    n, c = x.shape[0], x.shape[1]
    flat = cols.reshape(n, c, window * window, h_out, w_out)
    idx = np.expand_dims(np.argmax(flat, axis=2), 2)
    data = np.take_along_axis(flat, idx, axis=2).reshape(n, c, h_out, w_out)

    def bw(g):
        d_flat = np.zeros_like(flat)
        np.put_along_axis(d_flat, idx, g.reshape(n, c, 1, h_out, w_out), axis=2)
        d_cols = d_flat.reshape(n, c, window, window, h_out, w_out)
        x.accumulate(_col2im(d_cols, x.shape, window, window, stride, 0))

    return _make(data, (x,), bw)


# ---------------------------------------------------------------------------
# Fused LSTM sequence (the training hot path); gate order is [i, f, o, g]
# so the three sigmoid gates share one call.


def lstm_seq(x: Tensor, w: Tensor, u: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over a (length, input_dim) sequence with zero initial
    states; returns the (length, hidden) per-step hidden states.

    w: (input_dim, 4*hidden), u: (hidden, 4*hidden), b: (4*hidden,).
    """
    length = x.shape[0]
    hidden = u.shape[0]
    if w.shape != (x.shape[1], 4 * hidden) or b.shape != (4 * hidden,):
        raise ValueError(
            f"lstm_seq parameter shapes inconsistent: x {x.shape}, w {w.shape}, "
            f"u {u.shape}, b {b.shape}"
        )
    x_proj = x.data @ w.data + b.data
    gates = np.empty((length, 4 * hidden), dtype=x_proj.dtype)
    c_all = np.empty((length, hidden), dtype=x_proj.dtype)
    tanh_c = np.empty_like(c_all)
    h_all = np.empty_like(c_all)
    h_prev = np.zeros(hidden, dtype=x_proj.dtype)
    c_prev = np.zeros(hidden, dtype=x_proj.dtype)
    for t in range(length):
        pre = x_proj[t] + h_prev @ u.data
        row = gates[t]
        row[: 3 * hidden] = _sigmoid(pre[: 3 * hidden])
        row[3 * hidden :] = np.tanh(pre[3 * hidden :])
        c_t = row[hidden : 2 * hidden] * c_prev + row[:hidden] * row[3 * hidden :]
        th = np.tanh(c_t)
        h_t = row[2 * hidden : 3 * hidden] * th
        c_all[t], tanh_c[t], h_all[t] = c_t, th, h_t
        h_prev, c_prev = h_t, c_t

    def bw(g):
        i_g = gates[:, :hidden]
        f_g = gates[:, hidden : 2 * hidden]
        o_g = gates[:, 2 * hidden : 3 * hidden]
        g_g = gates[:, 3 * hidden :]
        da_all = np.empty((length, 4 * hidden), dtype=x_proj.dtype)
        dh_next = np.zeros(hidden, dtype=x_proj.dtype)
        dc_next = np.zeros(hidden, dtype=x_proj.dtype)
        u_t = u.data.T
        for t in range(length - 1, -1, -1):
            c_before = c_all[t - 1] if t > 0 else np.zeros(hidden, dtype=x_proj.dtype)
            dh = g[t] + dh_next
            do = dh * tanh_c[t]
            dc = dh * o_g[t] * (1.0 - tanh_c[t] * tanh_c[t]) + dc_next
            da = da_all[t]
            da[:hidden] = dc * g_g[t] * i_g[t] * (1.0 - i_g[t])
            da[hidden : 2 * hidden] = dc * c_before * f_g[t] * (1.0 - f_g[t])
            da[2 * hidden : 3 * hidden] = do * o_g[t] * (1.0 - o_g[t])
            da[3 * hidden :] = dc * i_g[t] * (1.0 - g_g[t] * g_g[t])
            dh_next = da @ u_t
            dc_next = dc * f_g[t]
        h_shifted = np.vstack([np.zeros((1, hidden), dtype=x_proj.dtype), h_all[:-1]])
        x.accumulate(da_all @ w.data.T)
        w.accumulate(x.data.T @ da_all)
        u.accumulate(h_shifted.T @ da_all)
        b.accumulate(da_all.sum(axis=0))

    return _make(h_all, (x, w, u, b), bw)


# ---------------------------------------------------------------------------
# Loss


def kl_loss(predicted: Tensor, gold: Tensor) -> Tensor:
    """KL(gold || predicted) over probability vectors, with 0*ln(0) = 0 and
    predictions clamped at 1e-12 before the log.
    """
    p = predicted.data
    q = gold.data
    if p.shape != q.shape:
        raise ValueError(f"kl_loss length mismatch: {p.shape} vs {q.shape}")
    for name, vec in (("predicted", p), ("gold", q)):
        if abs(vec.sum() - 1.0) > 1e-6:
            raise ValueError(f"kl_loss {name} does not sum to 1 (sum={vec.sum()!r})")
    clamped = np.maximum(p, 1e-12)
    terms = np.where(q > 0, q * (np.log(np.maximum(q, 1e-12)) - np.log(clamped)), 0.0)
    data = np.asarray(terms.sum(), dtype=p.dtype)

    def bw(g):
        grad = np.where((q > 0) & (p > 1e-12), -q / clamped, 0.0)
        predicted.accumulate(g * grad.astype(p.dtype))

    return _make(data, (predicted,), bw)


# ---------------------------------------------------------------------------
# Op registry; `forward_op` dispatches by kind name


OPS: dict[str, Callable] = {
    "matmul": matmul,
    "transpose": transpose,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "concat": concat,
    "narrow": narrow,
    "reshape": reshape,
    "reverse": reverse,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
    "exp": exp,
    "log": log,
    "sqrt": sqrt,
    "softmax": softmax,
    "sum": tensor_sum,
    "mean": mean,
    "max": tensor_max,
    "conv2d": conv2d,
    "maxpool2d": maxpool2d,
    "lstm_seq": lstm_seq,
    "kl_loss": kl_loss,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    if kind not in OPS:
        raise ValueError(f"unknown op kind {kind!r}")
    return OPS[kind](*inputs, **kwargs)


# ---------------------------------------------------------------------------
# Optimizers


class SGD:
    def __init__(self, parameters: Sequence[Tensor], learning_rate: float):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        for p in self.parameters:
            if p.grad is None:
                raise ValueError("optimizer step with missing gradient")
            p.data -= self.learning_rate * p.grad
            p.grad[...] = 0


class Adam:
    def __init__(
        self,
        parameters: Sequence[Tensor],
        learning_rate: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        epsilon: float = 1e-8,
    ):
        self.parameters = list(parameters)
        self.learning_rate = learning_rate
        self.betas = betas
        self.epsilon = epsilon
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.parameters]
        self._v = [np.zeros_like(p.data) for p in self.parameters]

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        bias1 = 1.0 - b1**self.step_count
        bias2 = 1.0 - b2**self.step_count
        for p, m, v in zip(self.parameters, self._m, self._v):
            if p.grad is None:
                raise ValueError("optimizer step with missing gradient")
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + self.epsilon)
            p.grad[...] = 0


# ---------------------------------------------------------------------------
# Parameter container: exact-precision text format (name, dtype, shape,
# hex-float row-major values), used by model checkpoints and test fixtures.


def write_params(params: dict[str, Tensor], out) -> None:
    for name in sorted(params):
        tensor = params[name]
        shape = ",".join(str(d) for d in tensor.shape)
        values = " ".join(float(x).hex() for x in tensor.data.reshape(-1))
        out.write(f"{name}\t{tensor.data.dtype.name}\t{shape}\t{values}\n")


def read_params(lines: Sequence[str], origin: str) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for line in lines:
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValueError(f"{origin}: malformed parameter line")
        name, dtype_name, shape_str, values = fields
        shape = tuple(int(x) for x in shape_str.split(",")) if shape_str else ()
        data = np.asarray([float.fromhex(x) for x in values.split()], dtype=dtype_name)
        params[name] = data.reshape(shape)
    return params


# ---------------------------------------------------------------------------
# Gradient checking


def grad_check(
    fn: Callable[..., Tensor],
    input_shapes: Sequence[tuple[int, ...]],
    eps: float = 1e-4,
    seed: int = 0,
    sampler: Callable | None = None,
    reject: Callable[[list[np.ndarray]], bool] | None = None,
) -> float:
    """Compare backward-pass gradients against central finite differences.

    The output is reduced to a scalar by a fixed random projection so that
    symmetric outputs (e.g. softmax) still produce informative gradients.
    Returns the max over components of |a - n| / max(1e-8, |a| + |n|).
    """
    rng = np.random.default_rng(seed)
    for _ in range(100):
        arrays = [
            (sampler(rng, shape) if sampler else rng.standard_normal(shape)).astype(np.float64)
            for shape in input_shapes
        ]
        if reject is None or not reject(arrays):
            break
    else:
        raise ValueError("grad_check could not sample an acceptable input")
    probe = fn(*[Tensor(arr) for arr in arrays])
    projection = rng.standard_normal(probe.data.shape)

    def scalar(arrs: list[np.ndarray]) -> float:
        out = fn(*[Tensor(arr) for arr in arrs])
        return float((out.data * projection).sum())

    inputs = [Tensor(arr, requires_grad=True) for arr in arrays]
    out = fn(*inputs)
    loss = tensor_sum(mul(out, Tensor(projection)))
    backward(loss)
    worst = 0.0
    for k, tensor in enumerate(inputs):
        analytic = tensor.grad
        flat = arrays[k].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            plus = scalar(arrays)
            flat[idx] = original - eps
            minus = scalar(arrays)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
