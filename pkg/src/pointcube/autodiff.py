"""
Dense tensors with reverse-mode differentiation.

A Tensor wraps a numpy array. Every op records its parents and a backward
closure that maps the output gradient to one gradient per parent. A Tape
orders the graph reachable from a scalar root topologically and walks it in
reverse, visiting each node exactly once.

Only first derivatives are supported.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AllKeysMasked, EmptyInput, ShapeMismatch, ZeroVector


class Tensor:
    """
    A numpy array plus the bookkeeping needed to differentiate through it.

    Attributes:
        data: The values (row-major numpy array)
        requires_grad: Whether gradients flow to this tensor
        grad: Accumulated gradient after backward() (leaves only)
    """

    def __init__(self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, _op=''):
        array = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(array.dtype, np.floating):
            array = array.astype(np.float64)
        self.data = array
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        Tape(self).backward(grad)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return tensor_sum(self, axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op!r})"


class Tape:
    """Reverse topological walk over the graph reachable from a root tensor."""

    def __init__(self, root):
        self.root = root
        self.nodes = self._topological_order(root)

    @staticmethod
    def _topological_order(root):
        order = []
        visited = set()
        stack = [(root, False)]
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
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self, grad=None):
        root = self.root
        if not root.requires_grad:
            return
        if grad is None:
            if root.data.size != 1:
                raise ShapeMismatch('backward', root.shape, '(scalar)')
            grad = np.ones_like(root.data)
        grads = {id(root): np.asarray(grad, dtype=root.data.dtype)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + parent_grad
                else:
                    grads[key] = parent_grad


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(data, parents, backward, op):
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires_grad, _parents=parents if requires_grad else (),
                  _backward=backward if requires_grad else None, _op=op)


def add(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _make(a.data + b.data, (a, b), backward, 'add')


def sub(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _make(a.data - b.data, (a, b), backward, 'sub')


def mul(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _make(a.data * b.data, (a, b), backward, 'mul')


def div(a, b):
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))
    return _make(a.data / b.data, (a, b), backward, 'div')


def matmul(a, b):
    """[m x k] @ [k x p] -> [m x p]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch('matmul', a.shape, b.shape)

    def backward(g):
        return g @ b.data.T, a.data.T @ g
    return _make(a.data @ b.data, (a, b), backward, 'matmul')


def transpose(a):
    def backward(g):
        return (g.T,)
    return _make(a.data.T, (a,), backward, 'transpose')


def reshape(a, shape):
    def backward(g):
        return (g.reshape(a.shape),)
    return _make(a.data.reshape(shape), (a,), backward, 'reshape')


def tensor_sum(a, axis=None, keepdims=False):
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, 'sum')


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)
    return _make(out, (a,), backward, 'exp')


def log(a):
    def backward(g):
        return (g / a.data,)
    return _make(np.log(a.data), (a,), backward, 'log')


def relu(a):
    def backward(g):
        return (g * (a.data > 0),)
    return _make(np.maximum(a.data, 0), (a,), backward, 'relu')


def take_rows(a, index):
    """Rows of a at the given indices (duplicates allowed)."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, index, g)
        return (out,)
    return _make(a.data[index], (a,), backward, 'take_rows')


def slice_cols(a, start, stop):
    def backward(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)
    return _make(a.data[:, start:stop], (a,), backward, 'slice_cols')


def concat_cols(tensors):
    tensors = tuple(tensors)
    widths = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(tensors)))
    return _make(np.concatenate([t.data for t in tensors], axis=1), tensors, backward, 'concat_cols')


def concat_rows(tensors):
    tensors = tuple(tensors)
    heights = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[heights[i]:heights[i + 1]] for i in range(len(tensors)))
    return _make(np.concatenate([t.data for t in tensors], axis=0), tensors, backward, 'concat_rows')


def maxpool_rows(x):
    """
    Columnwise max over rows: [n x d] -> ([1 x d], argmax rows).

    The backward pass routes each column's gradient to its argmax row only;
    ties go to the lowest row index.
    """
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInput('maxpool_rows')
    argmax = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])

    def backward(g):
        out = np.zeros_like(x.data)
        out[argmax, cols] = g[0]
        return (out,)
    return _make(x.data[argmax, cols][None, :], (x,), backward, 'maxpool_rows'), argmax


def segment_max(x, segments):
    """
    Columnwise max over each group of rows: [n x d] -> [S x d].

    Args:
        x: Input rows
        segments: S ascending index arrays; an empty group yields a zero row

    Ties go to the lowest row index, which receives the full gradient.
    """
    d = x.shape[1]
    cols = np.arange(d)
    out = np.zeros((len(segments), d), dtype=x.data.dtype)
    winners = np.full((len(segments), d), -1, dtype=np.int64)
    for s, index in enumerate(segments):
        if len(index):
            sub_rows = x.data[index]
            arg = sub_rows.argmax(axis=0)
            winners[s] = np.asarray(index)[arg]
            out[s] = sub_rows[arg, cols]
    filled = winners[:, 0] >= 0

    def backward(g):
        grad = np.zeros_like(x.data)
        rows = winners[filled]
        np.add.at(grad, (rows, np.broadcast_to(cols, rows.shape)), g[filled])
        return (grad,)
    return _make(out, (x,), backward, 'segment_max')


def softmax_lastdim(x):
    """Softmax over the last axis, stabilized by subtracting the row max."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _make(out, (x,), backward, 'softmax')


def logsumexp_lastdim(x):
    """log(sum(exp(x))) over the last axis, keeping the axis."""
    m = x.data.max(axis=-1, keepdims=True)
    e = np.exp(x.data - m)
    total = e.sum(axis=-1, keepdims=True)
    out = m + np.log(total)

    def backward(g):
        return (g * e / total,)
    return _make(out, (x,), backward, 'logsumexp')


def layer_norm(x, gain, bias, eps=1e-5):
    """
    Per-row normalization to zero mean and unit (population) variance, then gain * x + bias.

    Args:
        x: [t x d] with d >= 2
        gain: [d]
        bias: [d]
    """
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeMismatch('layer_norm', x.shape)
    gain = _lift(gain, x)
    bias = _lift(bias, x)
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeMismatch('layer_norm', x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    rstd = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * rstd

    def backward(g):
        dxhat = g * gain.data
        dx = rstd * (dxhat - dxhat.mean(axis=1, keepdims=True)
                     - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)
    return _make(xhat * gain.data + bias.data, (x, gain, bias), backward, 'layer_norm')


def l2_normalize_rows(x):
    """Scale every row to unit norm. Raises ZeroVector naming the first zero row."""
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    zero = np.flatnonzero(norms[:, 0] == 0.0)
    if zero.size:
        raise ZeroVector(int(zero[0]))
    out = x.data / norms

    def backward(g):
        return ((g - out * (g * out).sum(axis=1, keepdims=True)) / norms,)
    return _make(out, (x,), backward, 'l2_normalize')


def cosine_matrix(a, b):
    """[m x d], [p x d] -> [m x p] pairwise cosine similarities."""
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatch('cosine_matrix', a.shape, b.shape)
    return l2_normalize_rows(a) @ transpose(l2_normalize_rows(b))


def cosine_similarity(a, b):
    """Cosine of two nonzero vectors, as a float in [-1, 1]."""
    a = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=np.float64).reshape(-1)
    b = np.asarray(b.data if isinstance(b, Tensor) else b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeMismatch('cosine_similarity', a.shape, b.shape)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0:
        raise ZeroVector(0)
    if nb == 0.0:
        raise ZeroVector(1)
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


@dataclass
class AttentionParams:
    """Query/key/value/output projections of one multi-head attention block, each [d x d]."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor

    def named_tensors(self, prefix):
        return {f"{prefix}.{name}": getattr(self, name) for name in ('w_q', 'w_k', 'w_v', 'w_o')}

    @classmethod
    def init(cls, d, rng, dtype=np.float64):
        scale = 1.0 / np.sqrt(d)
        return cls(*(Tensor(rng.normal(0.0, scale, (d, d)), requires_grad=True, dtype=dtype)
                     for _ in range(4)))

    @classmethod
    def identity(cls, d, dtype=np.float64):
        return cls(*(Tensor(np.eye(d), requires_grad=True, dtype=dtype) for _ in range(4)))


def multihead_attention(q, k, v, params, heads, mask=None):
    """
    Scaled dot-product attention with `heads` heads and an output projection.

    Args:
        q: [tq x d] queries
        k: [tk x d] keys
        v: [tk x d] values
        params: AttentionParams
        heads: Number of heads; d must be divisible by it
        mask: Optional [tk] booleans, True where the key may be attended

    Returns:
        [tq x d]
    """
    d = q.shape[1]
    if k.shape != v.shape or k.shape[1] != d:
        raise ShapeMismatch('multihead_attention', q.shape, k.shape, v.shape)
    if heads < 1 or d % heads:
        raise ShapeMismatch('multihead_attention', f"d={d}", f"heads={heads}")
    bias = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (k.shape[0],):
            raise ShapeMismatch('multihead_attention', mask.shape, k.shape)
        if not mask.any():
            raise AllKeysMasked()
        if not mask.all():
            bias = Tensor(np.where(mask, 0.0, -np.inf)[None, :], dtype=q.dtype)

    queries, keys, values = q @ params.w_q, k @ params.w_k, v @ params.w_v
    head_dim = d // heads
    scale = 1.0 / np.sqrt(head_dim)
    outputs = []
    for h in range(heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        scores = slice_cols(queries, lo, hi) @ transpose(slice_cols(keys, lo, hi)) * scale
        if bias is not None:
            scores = scores + bias
        outputs.append(softmax_lastdim(scores) @ slice_cols(values, lo, hi))
    merged = outputs[0] if heads == 1 else concat_cols(outputs)
    return merged @ params.w_o
