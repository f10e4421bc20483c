"""Dense tensors with recorded operations and exact reverse-mode gradients.

Every operation computes its result eagerly with numpy and remembers its
inputs together with a backward rule.  ``backward(loss)`` walks the recording
in reverse topological order and accumulates gradients into ``.grad``;
repeated calls accumulate additively until grads are cleared.

Default precision is 64-bit; 32-bit is opt-in per tensor.  Reductions run in
a fixed order, so results are bitwise reproducible for a fixed BLAS thread
count.  A :class:`Graph` is confined to one execution context; concurrent
graphs over disjoint tensors are fine.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

DEFAULT_DTYPE = np.float64

_ids = itertools.count()


class _Local(threading.local):
    def __init__(self):
        self.graphs: list[Graph] = []
        self.grad_enabled = True


_local = _Local()


class Tensor:
    """A dense float array plus the recording needed for reverse-mode grads.

    Leaf tensors (parameters, constants) have no parents.  Op outputs carry
    their parent tensors and a backward rule; ``grad`` stays ``None`` until a
    ``backward`` pass reaches the tensor.
    """

    __slots__ = ("data", "grad", "node_id", "op", "meta", "_parents", "_backward")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype != np.float32:
            arr = arr.astype(DEFAULT_DTYPE, copy=False)
        self.data = arr
        self.grad = None
        self.node_id = next(_ids)
        self.op = "leaf"
        self.meta = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """A leaf tensor sharing this tensor's data, cut from the recording."""
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # Arithmetic sugar; scalar operands are plain Python numbers.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return rsub_scalar(self, other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else mul_scalar(self, other)

    def __rmul__(self, other):
        return mul_scalar(self, other)

    def __neg__(self):
        return mul_scalar(self, -1.0)


class Graph:
    """Execution context for one forward/backward pass.

    Holds the ordered op records (op name, input node ids, output node id)
    and the rng used by stochastic ops such as dropout.  Re-running a forward
    pass under a graph with identical rng state reproduces outputs bitwise.
    """

    def __init__(self, seed=None, rng=None):
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.records: list[tuple[str, tuple[int, ...], int]] = []

    def __enter__(self):
        _local.graphs.append(self)
        return self

    def __exit__(self, *exc):
        _local.graphs.pop()
        return False


def active_graph() -> Graph | None:
    return _local.graphs[-1] if _local.graphs else None


class no_grad:
    """Context manager: ops inside produce leaf outputs (nothing recorded)."""

    def __enter__(self):
        self._prev = _local.grad_enabled
        _local.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _local.grad_enabled = self._prev
        return False


def custom_op(data, name: str, parents: Sequence[Tensor],
              backward: Callable) -> Tensor:
    """Wrap an externally computed result as a recorded operation.

    ``backward(out_grad)`` must return one contribution per parent: an array
    added to the parent's grad buffer, a callable mutating the buffer in
    place, or ``None``.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.meta = None
    if _local.grad_enabled:
        out.op = name
        out._parents = tuple(parents)
        out._backward = backward
        g = active_graph()
        if g is not None:
            g.records.append((name, tuple(p.node_id for p in parents), out.node_id))
    else:
        out.op = "leaf"
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(tensor) into ``.grad`` of every reachable tensor.

    ``loss`` must be scalar.  Calling twice without clearing grads adds the
    two passes together.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward target must be scalar, got shape {loss.data.shape}")

    # Reverse post-order over the recording: inputs always precede outputs.
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen or node._backward is None:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p._backward is not None and p.node_id not in seen:
                stack.append((p, False))

    pending: dict[int, tuple[Tensor, np.ndarray]] = {
        loss.node_id: (loss, np.ones((), dtype=loss.data.dtype))
    }
    for node in reversed(order):
        entry = pending.pop(node.node_id, None)
        if entry is None:
            continue
        g = entry[1]
        node.grad = g if node.grad is None else node.grad + g
        for parent, contrib in zip(node._parents, node._backward(g)):
            if contrib is None:
                continue
            buf = pending.get(parent.node_id)
            if buf is None:
                buf = (parent, np.zeros_like(parent.data))
                pending[parent.node_id] = buf
            if callable(contrib):
                contrib(buf[1])
            else:
                np.add(buf[1], contrib, out=buf[1])
    for node, g in pending.values():  # remaining entries are leaves
        node.grad = g if node.grad is None else node.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# elementwise and linear-algebra primitives


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.data.shape != b.data.shape:
        raise DimensionError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return custom_op(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    return custom_op(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    av, bv = a.data, b.data
    return custom_op(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def add_scalar(a: Tensor, s) -> Tensor:
    return custom_op(a.data + s, "add_scalar", (a,), lambda g: (g,))


def mul_scalar(a: Tensor, s) -> Tensor:
    return custom_op(a.data * s, "mul_scalar", (a,), lambda g: (g * s,))


def rsub_scalar(a: Tensor, s) -> Tensor:
    """s - a, elementwise."""
    return custom_op(s - a.data, "rsub_scalar", (a,), lambda g: (-g,))


def mul_array(a: Tensor, arr: np.ndarray) -> Tensor:
    """Elementwise product with a constant array (masks, scales)."""
    out = a.data * arr
    if out.shape != a.data.shape:
        raise DimensionError(f"mul_array: mask {arr.shape} does not broadcast onto {a.data.shape}")
    return custom_op(out, "mul_array", (a,), lambda g: (g * arr,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return custom_op(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return custom_op(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    x = a.data
    return custom_op(np.maximum(x, 0.0), "relu", (a,), lambda g: (g * (x > 0),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    av, bv = a.data, b.data
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: shapes {av.shape} and {bv.shape} incompatible")
    return custom_op(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def affine(x: Tensor, w: Tensor, b_vec: Tensor) -> Tensor:
    """y = x @ w + b_vec, bias broadcast over rows."""
    xv, wv, bv = x.data, w.data, b_vec.data
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[0]:
        raise DimensionError(f"affine: input {xv.shape} incompatible with weight {wv.shape}")
    if bv.shape != (wv.shape[1],):
        raise DimensionError(f"affine: bias {bv.shape} incompatible with weight {wv.shape}")
    y = xv @ wv
    y += bv
    return custom_op(y, "affine", (x, w, b_vec),
                     lambda g: (g @ wv.T, xv.T @ g, g.sum(axis=0)))


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    def bw(g):
        return (lambda buf: np.add(buf, g, out=buf),)
    return custom_op(a.data.sum(), "sum", (a,), bw)


def tmean(a: Tensor) -> Tensor:
    size = a.data.size
    def bw(g):
        return (lambda buf: np.add(buf, g / size, out=buf),)
    return custom_op(a.data.mean(), "mean", (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape
    return custom_op(a.data.reshape(shape), "reshape", (a,),
                     lambda g: (g.reshape(orig),))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the last axis."""
    widths = [t.data.shape[1] for t in tensors]
    offs = np.concatenate([[0], np.cumsum(widths)])
    out = np.concatenate([t.data for t in tensors], axis=1)
    def bw(g):
        return tuple(g[:, offs[i]:offs[i + 1]] for i in range(len(widths)))
    return custom_op(out, "concat_cols", tuple(tensors), bw)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        def scatter(buf):
            buf[start:stop] += g
        return (scatter,)
    return custom_op(a.data[start:stop], "slice_rows", (a,), bw)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        def scatter(buf):
            buf[:, start:stop] += g
        return (scatter,)
    return custom_op(a.data[:, start:stop], "slice_cols", (a,), bw)


def stack_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the first axis."""
    counts = [t.data.shape[0] for t in tensors]
    offs = np.concatenate([[0], np.cumsum(counts)])
    out = np.concatenate([t.data for t in tensors], axis=0)
    def bw(g):
        return tuple(g[offs[i]:offs[i + 1]] for i in range(len(counts)))
    return custom_op(out, "stack_rows", tuple(tensors), bw)


def lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradients flow only to looked-up rows."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"lookup: id out of range for table with {table.data.shape[0]} rows")
    width = table.data.shape[1]
    def bw(g):
        def scatter(buf):
            np.add.at(buf, ids.reshape(-1), g.reshape(-1, width))
        return (scatter,)
    return custom_op(table.data[ids], "lookup", (table,), bw)


def position_scores(table: Tensor, ids: np.ndarray) -> Tensor:
    """out[i, t] = table[ids[i, t], t]; a per-type, per-position gather."""
    ids = np.asarray(ids)
    m, n = ids.shape
    if n > table.data.shape[1]:
        raise DimensionError(
            f"position_scores: {n} positions exceed table width {table.data.shape[1]}")
    cols = np.broadcast_to(np.arange(n), (m, n))
    def bw(g):
        def scatter(buf):
            np.add.at(buf, (ids, cols), g)
        return (scatter,)
    return custom_op(table.data[ids, cols], "position_scores", (table,), bw)


def tile_rows(v: Tensor, count: int) -> Tensor:
    """Repeat a vector as ``count`` identical rows."""
    out = np.broadcast_to(v.data, (count,) + v.data.shape).copy()
    return custom_op(out, "tile_rows", (v,), lambda g: (g.sum(axis=0),))


def masked_softmax(scores: Tensor, lengths: np.ndarray) -> Tensor:
    """Row-wise softmax over the first ``lengths[i]`` entries; rest exactly 0."""
    sv = scores.data
    m, n = sv.shape
    lengths = np.asarray(lengths)
    if lengths.min() < 1:
        raise ValueError("masked_softmax: every row needs at least one valid entry")
    valid = np.arange(n) < lengths[:, None]
    z = np.where(valid, sv, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    alpha = e / e.sum(axis=1, keepdims=True)
    def bw(g):
        dot = (g * alpha).sum(axis=1, keepdims=True)
        return (alpha * (g - dot),)
    return custom_op(alpha, "masked_softmax", (scores,), bw)


def weighted_sum_time(seq: Tensor, alpha) -> Tensor:
    """out[i] = sum_t alpha[i, t] * seq[i, t, :].

    ``alpha`` may be a Tensor (learned weights) or a plain array (fixed
    weights or masks); only Tensor weights receive gradients.
    """
    sv = seq.data
    av = alpha.data if isinstance(alpha, Tensor) else np.asarray(alpha)
    if av.shape != sv.shape[:2]:
        raise DimensionError(f"weighted_sum_time: weights {av.shape} vs sequence {sv.shape}")
    out = np.einsum("mn,mnd->md", av, sv)
    if isinstance(alpha, Tensor):
        def bw(g):
            return (av[:, :, None] * g[:, None, :], np.einsum("mnd,md->mn", sv, g))
        return custom_op(out, "weighted_sum_time", (seq, alpha), bw)
    def bw(g):
        return (av[:, :, None] * g[:, None, :],)
    return custom_op(out, "weighted_sum_time", (seq,), bw)


def time_windows(seq: Tensor, width: int) -> Tensor:
    """All width-``width`` windows of a (m, n, d) sequence, as (m, n-width+1, width*d)."""
    sv = seq.data
    m, n, d = sv.shape
    if width < 1 or width > n:
        raise ConfigError(f"time_windows: width {width} invalid for {n} positions")
    T = n - width + 1
    win = np.lib.stride_tricks.sliding_window_view(sv, width, axis=1)  # m, T, d, width
    out = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(m, T, width * d)
    def bw(g):
        gq = g.reshape(m, T, width, d)
        def scatter(buf):
            for j in range(width):
                buf[:, j:j + T, :] += gq[:, :, j, :]
        return (scatter,)
    return custom_op(out, "time_windows", (seq,), bw)


def masked_max_time(resp: Tensor, counts: np.ndarray) -> Tensor:
    """Per-row max over the first ``counts[i]`` time positions of (m, T, k)."""
    rv = resp.data
    m, T, k = rv.shape
    counts = np.asarray(counts)
    if counts.min() < 1 or counts.max() > T:
        raise ValueError(f"masked_max_time: counts must lie in [1, {T}]")
    valid = np.arange(T)[None, :, None] < counts[:, None, None]
    masked = np.where(valid, rv, -np.inf)
    arg = masked.argmax(axis=1)  # m, k
    rows = np.arange(m)[:, None]
    cols = np.arange(k)[None, :]
    out = rv[rows, arg, cols]
    def bw(g):
        def scatter(buf):
            np.add.at(buf, (rows, arg, cols), g)
        return (scatter,)
    result = custom_op(out, "masked_max_time", (resp,), bw)
    result.meta = counts
    return result


# ---------------------------------------------------------------------------
# model-level operations


def dropout(x: Tensor, rate: float, mode: str = "train", rng=None) -> Tensor:
    """Inverted dropout: train-time mask scaled by 1/keep, eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        g = active_graph()
        if g is None:
            raise ValueError("dropout in train mode needs an rng or an active Graph")
        rng = g.rng
    keep = 1.0 - rate
    scale = (rng.random(x.data.shape) >= rate) / keep
    return custom_op(x.data * scale, "dropout", (x,), lambda g_: (g_ * scale,))


def softmax_xent(logits: Tensor, targets: np.ndarray) -> tuple[Tensor, Tensor]:
    """Mean cross-entropy of integer targets under row-wise softmax.

    Returns ``(loss, probs)``; ``probs`` is detached (rows sum to 1, max
    subtracted for stability), only ``loss`` carries gradients.
    """
    lv = logits.data
    if lv.ndim != 2:
        raise DimensionError(f"softmax_xent: logits must be 2-D, got {lv.shape}")
    targets = np.asarray(targets).reshape(-1)
    m, v = lv.shape
    if targets.shape[0] != m:
        raise DimensionError(f"softmax_xent: {targets.shape[0]} targets for {m} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"softmax_xent: target out of range [0, {v})")
    zmax = lv.max(axis=1, keepdims=True)
    e = np.exp(lv - zmax)
    z = e.sum(axis=1, keepdims=True)
    probs = e / z
    rows = np.arange(m)
    nll = np.log(z[:, 0]) + zmax[:, 0] - lv[rows, targets]
    def bw(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        d *= g / m
        return (d,)
    loss = custom_op(np.asarray(nll.mean()), "softmax_xent", (logits,), bw)
    return loss, Tensor(probs, dtype=probs.dtype)


class LSTMCellParams:
    """Gate parameters of one LSTM cell, fused as (i, f, o, g) blocks."""

    def __init__(self, wx: Tensor, wh: Tensor, b: Tensor):
        self.wx = wx  # (input_dim, 4*hidden)
        self.wh = wh  # (hidden, 4*hidden)
        self.b = b    # (4*hidden,)

    @property
    def hidden_dim(self) -> int:
        return self.wh.data.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}

    @staticmethod
    def create(input_dim: int, hidden_dim: int, init, dtype=DEFAULT_DTYPE,
               forget_bias: float = 1.0) -> "LSTMCellParams":
        b = init((4 * hidden_dim,))
        b[hidden_dim:2 * hidden_dim] = forget_bias
        return LSTMCellParams(
            Tensor(init((input_dim, 4 * hidden_dim)), dtype=dtype),
            Tensor(init((hidden_dim, 4 * hidden_dim)), dtype=dtype),
            Tensor(b, dtype=dtype),
        )


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: LSTMCellParams) -> tuple[Tensor, Tensor]:
    """One step of a standard 4-gate LSTM (no peepholes).

    c = sigmoid(f)*c_prev + sigmoid(i)*tanh(g);  h = sigmoid(o)*tanh(c).
    """
    d = params.hidden_dim
    if x.data.shape[0] != h_prev.data.shape[0] or h_prev.data.shape != c_prev.data.shape:
        raise DimensionError(
            f"lstm_cell: batch shapes disagree: x {x.data.shape}, "
            f"h {h_prev.data.shape}, c {c_prev.data.shape}")
    z = add(affine(x, params.wx, params.b), matmul(h_prev, params.wh))
    i = sigmoid(slice_cols(z, 0, d))
    f = sigmoid(slice_cols(z, d, 2 * d))
    o = sigmoid(slice_cols(z, 2 * d, 3 * d))
    g = tanh(slice_cols(z, 3 * d, 4 * d))
    c = add(mul(f, c_prev), mul(i, g))
    h = mul(o, tanh(c))
    return h, c


def conv1d_max_over_time(seq: Tensor, banks, lengths=None) -> Tensor:
    """Per-bank tanh convolution over time, max-pooled, outputs concatenated.

    ``banks`` is a list of ``(width, weights, bias)`` with weights shaped
    (width*d, k).  ``lengths``, when given, limits pooling of each row to
    windows starting inside its first ``max(lengths[i], max_width)``
    positions, so trailing padding beyond that never matters.
    """
    m, n, d = seq.data.shape
    widths = [w for w, _, _ in banks]
    if max(widths) > n:
        raise ConfigError(f"filter width {max(widths)} exceeds {n} subword positions")
    extent = np.full(m, n) if lengths is None else np.minimum(
        np.maximum(np.asarray(lengths), max(widths)), n)
    outs = []
    for width, weights, bias in banks:
        k = weights.data.shape[1]
        windows = time_windows(seq, width)
        t_count = n - width + 1
        flat = reshape(windows, (m * t_count, width * d))
        resp = tanh(affine(flat, weights, bias))
        pooled = masked_max_time(reshape(resp, (m, t_count, k)), extent - width + 1)
        outs.append(pooled)
    return concat_cols(outs) if len(outs) > 1 else outs[0]
