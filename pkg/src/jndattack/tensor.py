"""Dense float64 tensors with reverse-mode gradients.

Just enough machinery for a small convolutional classifier: each forward
pass records a fresh graph, and ``Tensor.backward`` propagates a seed
gradient to every leaf created with ``requires_grad=True`` (weights during
training, the input image during attacks). No higher-order gradients.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError


class Tensor:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is populated by
    ``backward`` for nodes on a path to a gradient-requiring leaf.
    Data arrays are treated as immutable once wrapped.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def backward(self, seed=None):
        """Propagate ``seed`` (d output / d self) to all gradient leaves.

        Grads of the whole graph are reset on every call, so repeated
        backward passes with different seeds (e.g. one per class logit)
        yield independent gradients.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != self.data.shape:
            raise DimensionError(
                f"seed shape {seed.shape} does not match output shape {self.data.shape}"
            )
        order = _topo_order(self)
        for node in order:
            if node.requires_grad:
                node.grad = np.zeros_like(node.data)
        if not self.requires_grad:
            return
        self.grad = seed.copy()
        for node in reversed(order):
            if node._backward_fn is not None and node.requires_grad:
                node._backward_fn()


def _topo_order(root):
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
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _accum(node, grad):
    if node.requires_grad:
        node.grad += grad


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may broadcast as a trailing-shape bias."""
    if a.shape != b.shape and a.shape[len(a.shape) - len(b.shape):] != b.shape:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    out_data = a.data + b.data

    def backward():
        _accum(a, out.grad)
        if b.shape == a.shape:
            _accum(b, out.grad)
        else:
            axes = tuple(range(len(a.shape) - len(b.shape)))
            _accum(b, out.grad.sum(axis=axes))

    out = Tensor(out_data, parents=(a, b), backward_fn=backward)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a Tensor of the same shape or a scalar."""
    if isinstance(b, Tensor):
        if a.shape != b.shape:
            raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
        out_data = a.data * b.data

        def backward():
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)

        out = Tensor(out_data, parents=(a, b), backward_fn=backward)
        return out

    scale = float(b)

    def backward_scalar():
        _accum(a, out.grad * scale)

    out = Tensor(a.data * scale, parents=(a,), backward_fn=backward_scalar)
    return out


def tensor_sum(a: Tensor) -> Tensor:
    """Sum of all entries, returned as a 0-d tensor."""

    def backward():
        _accum(a, np.full_like(a.data, out.grad))

    out = Tensor(a.data.sum(), parents=(a,), backward_fn=backward)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for (n,)@(n,m) or (k,n)@(n,m) operands."""
    if a.data.ndim not in (1, 2) or b.data.ndim != 2:
        raise DimensionError("matmul expects a 1-D or 2-D left operand and a 2-D right operand")
    if a.shape[-1] != b.shape[0]:
        raise DimensionError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward():
        g = out.grad
        if a.data.ndim == 1:
            _accum(a, g @ b.data.T)
            _accum(b, np.outer(a.data, g))
        else:
            _accum(a, g @ b.data.T)
            _accum(b, a.data.T @ g)

    out = Tensor(out_data, parents=(a, b), backward_fn=backward)
    return out


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at exactly 0 is 0."""
    mask = a.data > 0.0

    def backward():
        _accum(a, out.grad * mask)

    out = Tensor(np.maximum(a.data, 0.0), parents=(a,), backward_fn=backward)
    return out


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate an (H, W, C) input with (K, kh, kw, C) kernels.

    Output shape per spatial axis is floor((H + 2*padding - kh)/stride) + 1.
    """
    if x.data.ndim != 3 or kernels.data.ndim != 4:
        raise DimensionError("conv2d expects (H,W,C) input and (K,kh,kw,C) kernels")
    H, W, C = x.shape
    K, kh, kw, kc = kernels.shape
    if kc != C:
        raise DimensionError(f"kernel channels {kc} != input channels {C}")
    hp, wp = H + 2 * padding, W + 2 * padding
    if kh > hp or kw > wp:
        raise DimensionError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(0, 1))[::stride, ::stride]
    # cols: one row per output position, columns ordered (kh, kw, C)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(oh * ow, kh * kw * C)
    kmat = kernels.data.transpose(1, 2, 3, 0).reshape(kh * kw * C, K)
    out_data = (cols @ kmat).reshape(oh, ow, K)

    def backward():
        gmat = out.grad.reshape(oh * ow, K)
        if kernels.requires_grad:
            dk = (cols.T @ gmat).reshape(kh, kw, C, K).transpose(3, 0, 1, 2)
            _accum(kernels, dk)
        if x.requires_grad:
            dcols = (gmat @ kmat.T).reshape(oh, ow, kh, kw, C)
            dxp = np.zeros((hp, wp, C))
            for i in range(kh):
                for j in range(kw):
                    dxp[i:i + stride * oh:stride, j:j + stride * ow:stride] += dcols[:, :, i, j]
            if padding:
                dxp = dxp[padding:-padding, padding:-padding]
            _accum(x, dxp)

    out = Tensor(out_data, parents=(x, kernels), backward_fn=backward)
    return out


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; odd trailing rows/columns are dropped."""
    if x.data.ndim != 3:
        raise DimensionError("maxpool2 expects an (H,W,C) input")
    H, W, C = x.shape
    h2, w2 = H // 2, W // 2
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"input {H}x{W} too small for 2x2 pooling")
    trimmed = x.data[: 2 * h2, : 2 * w2]
    windows = trimmed.reshape(h2, 2, w2, 2, C).transpose(0, 2, 4, 1, 3).reshape(h2, w2, C, 4)
    idx = np.argmax(windows, axis=3)
    out_data = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]

    def backward():
        gw = np.zeros((h2, w2, C, 4))
        np.put_along_axis(gw, idx[..., None], out.grad[..., None], axis=3)
        gx = np.zeros((H, W, C))
        gx[: 2 * h2, : 2 * w2] = (
            gw.reshape(h2, w2, C, 2, 2).transpose(0, 3, 1, 4, 2).reshape(2 * h2, 2 * w2, C)
        )
        _accum(x, gx)

    out = Tensor(out_data, parents=(x,), backward_fn=backward)
    return out


def avgpool2(x: Tensor) -> Tensor:
    """2x2 average pooling with stride 2; odd trailing rows/columns dropped."""
    if x.data.ndim != 3:
        raise DimensionError("avgpool2 expects an (H,W,C) input")
    H, W, C = x.shape
    h2, w2 = H // 2, W // 2
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"input {H}x{W} too small for 2x2 pooling")
    trimmed = x.data[: 2 * h2, : 2 * w2]
    out_data = trimmed.reshape(h2, 2, w2, 2, C).mean(axis=(1, 3))

    def backward():
        gx = np.zeros((H, W, C))
        spread = np.repeat(np.repeat(out.grad, 2, axis=0), 2, axis=1) * 0.25
        gx[: 2 * h2, : 2 * w2] = spread
        _accum(x, gx)

    out = Tensor(out_data, parents=(x,), backward_fn=backward)
    return out


def flatten(x: Tensor) -> Tensor:
    """Row-major flatten to a 1-D tensor."""
    shape = x.shape

    def backward():
        _accum(x, out.grad.reshape(shape))

    out = Tensor(x.data.reshape(-1), parents=(x,), backward_fn=backward)
    return out


def softmax(z: Tensor) -> Tensor:
    """Max-shifted softmax over a 1-D logit vector."""
    if z.data.ndim != 1:
        raise DimensionError("softmax expects a 1-D logit vector")
    shifted = z.data - z.data.max()
    e = np.exp(shifted)
    p = e / e.sum()

    def backward():
        g = out.grad
        _accum(z, p * (g - np.dot(g, p)))

    out = Tensor(p, parents=(z,), backward_fn=backward)
    return out


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Cross-entropy of softmax(logits) against a class index, as a 0-d tensor.

    Computed as logsumexp(z) - z[label]; the gradient is softmax(z) - onehot.
    """
    z = logits.data
    if z.ndim != 1:
        raise DimensionError("cross_entropy expects a 1-D logit vector")
    if not 0 <= label < z.shape[0]:
        raise DimensionError(f"label {label} out of range for {z.shape[0]} classes")
    m = z.max()
    e = np.exp(z - m)
    se = e.sum()
    value = m + np.log(se) - z[label]
    p = e / se

    def backward():
        g = p.copy()
        g[label] -= 1.0
        _accum(logits, out.grad * g)

    out = Tensor(value, parents=(logits,), backward_fn=backward)
    return out
