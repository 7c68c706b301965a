"""Minimal 4-D tensor engine with reverse-mode automatic differentiation.

Every tensor is dense N x C x H x W (scalars are 1x1x1x1). Forward ops
record a per-call graph; `backward` on a scalar fills the `grad` field of
every tensor that requires gradients. The graph lives only as long as the
output tensors - there is no global tape.

Convolution kernels are ordinary tensors laid out (out_ch, in_ch, kh, kw).
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense 4-D array with optional gradient accumulation.

    `grad` starts as None and is allocated on first backward reaching this
    tensor. Repeated backward calls accumulate; call `zero_grad` to reset.
    Tensors produced by forward ops should be treated as immutable.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple = (), backward_fn: Optional[Callable] = None):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are 4-D (N,C,H,W); got shape {arr.shape}")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, dtype={self.dtype}, "
                f"requires_grad={self.requires_grad})")

    # small operator sugar; scalars multiply/shift, tensors need equal shapes
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and arr.dtype.kind != "f":
        arr = arr.astype(np.float64)
    return Tensor(arr, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def ones(shape, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)


def _make(data: np.ndarray, parents: Sequence[Tensor],
          backward_fn: Callable) -> Tensor:
    """Wrap an op result; drops the graph when no parent needs gradients."""
    tracked = tuple(p for p in parents if p.requires_grad or p._parents)
    if tracked:
        return Tensor(data, requires_grad=True, parents=tracked,
                      backward_fn=backward_fn)
    return Tensor(data)


def backward(loss: Tensor):
    """Reverse-traverse the graph of a scalar, accumulating gradients.

    Gradients add into existing `grad` buffers; callers reset leaves between
    optimization steps.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
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
            if id(p) not in seen:
                stack.append((p, False))

    # each traversal accumulates into fresh buffers so that repeated calls
    # add exactly one unit of gradient per call
    prior = [node.grad for node in order]
    for node in order:
        node.grad = None

    loss.accumulate_grad(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    for node, old in zip(order, prior):
        if old is not None:
            if node.grad is None:
                node.grad = old
            else:
                node.grad += old


# ---------------------------------------------------------------------------
# elementwise / reduction ops
# ---------------------------------------------------------------------------

def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")

    def bwd(g):
        a.accumulate_grad(g)
        b.accumulate_grad(g)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")

    def bwd(g):
        a.accumulate_grad(g)
        b.accumulate_grad(-g)

    return _make(a.data - b.data, (a, b), bwd)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with product-rule gradients."""
    _check_same_shape(a, b, "elementwise_mul")

    def bwd(g):
        a.accumulate_grad(g * b.data)
        b.accumulate_grad(g * a.data)

    return _make(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    def bwd(g):
        a.accumulate_grad(g * c)

    return _make(a.data * c, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        a.accumulate_grad(g * mask)

    return _make(np.where(mask, a.data, 0), (a,), bwd)


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """sqrt(a + eps); a positive eps keeps the derivative finite at zero."""
    out = np.sqrt(a.data + eps)

    def bwd(g):
        a.accumulate_grad(g * (0.5 / out))

    return _make(out, (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        a.accumulate_grad(np.full_like(a.data, g.reshape(())))

    return _make(a.data.sum(dtype=a.dtype).reshape(1, 1, 1, 1), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size

    def bwd(g):
        a.accumulate_grad(np.full_like(a.data, g.reshape(()) * inv))

    return _make(a.data.mean(dtype=a.dtype).reshape(1, 1, 1, 1), (a,), bwd)


def add_channel_bias(a: Tensor, bias: Tensor) -> Tensor:
    """Add a (1,C,1,1) bias across batch and spatial axes."""
    if bias.shape != (1, a.shape[1], 1, 1):
        raise ShapeError(f"bias shape {bias.shape} does not fit input {a.shape}")

    def bwd(g):
        a.accumulate_grad(g)
        bias.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))

    return _make(a.data + bias.data, (a, bias), bwd)


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    base = parts[0].shape
    for p in parts:
        if (p.shape[0], p.shape[2], p.shape[3]) != (base[0], base[2], base[3]):
            raise ShapeError(f"concat_channels: {p.shape} does not align with {base}")
    sizes = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for p, c0, c1 in zip(parts, offsets[:-1], offsets[1:]):
            p.accumulate_grad(g[:, c0:c1])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def slice_channels(a: Tensor, c0: int, c1: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(a.data)
        full[:, c0:c1] = g
        a.accumulate_grad(full)

    return _make(a.data[:, c0:c1].copy(), (a,), bwd)


def softmax_channels(logits: Tensor) -> Tensor:
    """Per-pixel softmax over the channel axis, stabilized by max-subtraction."""
    if logits.shape[1] < 2:
        raise ShapeError(f"softmax_channels needs >= 2 channels, got {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        logits.accumulate_grad(p * (g - dot))

    return _make(p, (logits,), bwd)


# ---------------------------------------------------------------------------
# padding helpers
# ---------------------------------------------------------------------------

_PAD_MODES = {"zero": "constant", "replicate": "edge"}


def _pad2d(x: np.ndarray, pads, mode: str) -> np.ndarray:
    (pt, pb), (pl, pr) = pads
    if pt == pb == pl == pr == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode=_PAD_MODES[mode])


def _unpad2d_grad(g: np.ndarray, pads, mode: str) -> np.ndarray:
    """Adjoint of `_pad2d`: crop, folding replicate-pad gradients onto edges."""
    (pt, pb), (pl, pr) = pads
    if pt == pb == pl == pr == 0:
        return g
    if mode == "replicate":
        g = g.copy()
        if pt:
            g[:, :, pt] += g[:, :, :pt].sum(axis=2)
        if pb:
            g[:, :, -pb - 1] += g[:, :, -pb:].sum(axis=2)
        g = g[:, :, pt:g.shape[2] - pb]
        if pl:
            g[:, :, :, pl] += g[:, :, :, :pl].sum(axis=3)
        if pr:
            g[:, :, :, -pr - 1] += g[:, :, :, -pr:].sum(axis=3)
        return g[:, :, :, pl:g.shape[3] - pr]
    return g[:, :, pt:g.shape[2] - pb, pl:g.shape[3] - pr]


def _same_pads(size: int, k: int, stride: int):
    out = -(-size // stride)  # ceil
    total = max((out - 1) * stride + k - size, 0)
    return out, (total // 2, total - total // 2)


# ---------------------------------------------------------------------------
# convolution family
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, kernel: Tensor, stride: int = 1,
           padding: str = "zero") -> Tensor:
    """Cross-correlation with same-padding: output is ceil(H/s) x ceil(W/s).

    `padding` is "zero" for network layers or "replicate" for loss-path
    filters where image borders must not create spurious edges.
    """
    if padding not in _PAD_MODES:
        raise ValueError(f"unknown padding mode {padding!r}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(
            f"conv2d: input {x.shape} has {c} channels but kernel {kernel.shape} expects {ic}")

    oh, ph = _same_pads(h, kh, stride)
    ow, pw = _same_pads(w, kw, stride)
    xp = _pad2d(x.data, (ph, pw), padding)
    # im2col + GEMM; the column matrix is kept for the backward GEMMs
    if kh == kw == 1 and stride == 1:
        cols = np.ascontiguousarray(xp.transpose(0, 2, 3, 1)).reshape(n * oh * ow, c)
    else:
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)) \
            .reshape(n * oh * ow, c * kh * kw)
    kmat = kernel.data.reshape(oc, c * kh * kw)
    out = np.ascontiguousarray(
        (cols @ kmat.T).reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))

    def bwd(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, oc)
        if kernel.requires_grad or kernel._parents:
            kernel.accumulate_grad((gmat.T @ cols).reshape(kernel.shape))
        if x.requires_grad or x._parents:
            dcols = gmat @ kmat
            if kh == kw == 1 and stride == 1:
                gxp = np.ascontiguousarray(
                    dcols.reshape(n, oh, ow, c).transpose(0, 3, 1, 2))
            else:
                dwin = dcols.reshape(n, oh, ow, c, kh, kw)
                gxp = np.zeros_like(xp)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i:i + stride * oh:stride,
                            j:j + stride * ow:stride] += \
                            dwin[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            x.accumulate_grad(_unpad2d_grad(gxp, (ph, pw), padding))

    return _make(out, (x, kernel), bwd)


def transposed_conv2d(x: Tensor, kernel: Tensor, stride: int) -> Tensor:
    """Learnable upsampling by scatter-add; stride 2 doubles H and W,
    stride 1 preserves them (centered crop to the target size)."""
    if stride not in (1, 2):
        raise ValueError(f"transposed_conv2d supports stride 1 or 2, got {stride}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(
            f"transposed_conv2d: input {x.shape} has {c} channels but kernel "
            f"{kernel.shape} expects {ic}")
    if stride == 2 and (kh < 2 or kw < 2):
        raise ValueError("stride-2 transposed conv needs kernel extents >= 2")

    th, tw = (stride * h, stride * w) if stride == 2 else (h, w)
    rh, rw = (h - 1) * stride + kh, (w - 1) * stride + kw
    r0, c0 = (rh - th) // 2, (rw - tw) // 2

    # one GEMM produces every kernel tap's contribution; taps are then
    # scattered onto the stride grid
    xm = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * w, ic)
    km = kernel.data.transpose(1, 0, 2, 3).reshape(ic, oc * kh * kw)
    taps = (xm @ km).reshape(n, h, w, oc, kh, kw)
    raw = np.zeros((n, oc, rh, rw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            raw[:, :, i:i + stride * h:stride, j:j + stride * w:stride] += \
                taps[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    out = raw[:, :, r0:r0 + th, c0:c0 + tw].copy()

    def bwd(g):
        graw = np.zeros((n, oc, rh, rw), dtype=g.dtype)
        graw[:, :, r0:r0 + th, c0:c0 + tw] = g
        gtaps = np.empty((n, h, w, oc, kh, kw), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gtaps[:, :, :, :, i, j] = \
                    graw[:, :, i:i + stride * h:stride, j:j + stride * w:stride] \
                    .transpose(0, 2, 3, 1)
        gmat = gtaps.reshape(n * h * w, oc * kh * kw)
        if x.requires_grad or x._parents:
            x.accumulate_grad(np.ascontiguousarray(
                (gmat @ km.T).reshape(n, h, w, ic).transpose(0, 3, 1, 2)))
        if kernel.requires_grad or kernel._parents:
            kernel.accumulate_grad(
                (xm.T @ gmat).reshape(ic, oc, kh, kw).transpose(1, 0, 2, 3))

    return _make(out, (x, kernel), bwd)


def _interp_matrix(out_size: int, in_size: int, dtype) -> np.ndarray:
    """1-D bilinear weights under the half-pixel-center convention."""
    m = np.zeros((out_size, in_size), dtype=dtype)
    scale_f = in_size / out_size
    for o in range(out_size):
        src = (o + 0.5) * scale_f - 0.5
        src = min(max(src, 0.0), in_size - 1.0)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, in_size - 1)
        w = src - i0
        m[o, i0] += 1.0 - w
        m[o, i1] += w
    return m


def bilinear_resample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resampling with half-pixel centers and edge clamping.

    Resampling to the input size is an exact identity.
    """
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"target size must be >= 1, got {(out_h, out_w)}")
    n, c, h, w = x.shape
    wr = _interp_matrix(out_h, h, x.dtype)
    wc = _interp_matrix(out_w, w, x.dtype)
    tmp = np.einsum("ab,ncbw->ncaw", wr, x.data)
    out = np.einsum("ncaw,bw->ncab", tmp, wc)

    def bwd(g):
        t = np.einsum("ncab,bw->ncaw", g, wc)
        x.accumulate_grad(np.einsum("ab,ncaw->ncbw", wr, t))

    return _make(out, (x,), bwd)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5,
               update_stats: bool = True) -> Tensor:
    """Per-channel normalization; batch statistics while training, running
    statistics in evaluation mode. `update_stats=False` freezes the running
    buffers (used by gradient checks)."""
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise ShapeError(
            f"batch_norm: scale/offset must be (1,{c},1,1), got {gamma.shape}/{beta.shape}")

    if training:
        mu = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)
        if update_stats:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(-1)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(-1)
    else:
        mu = running_mean.reshape(1, c, 1, 1).astype(x.dtype)
        var = running_var.reshape(1, c, 1, 1).astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv_std
    out = gamma.data * xhat + beta.data

    m = x.shape[0] * x.shape[2] * x.shape[3]

    def bwd(g):
        gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3), keepdims=True))
        beta.accumulate_grad(g.sum(axis=(0, 2, 3), keepdims=True))
        if not (x.requires_grad or x._parents):
            return
        gxhat = g * gamma.data
        if training:
            s1 = gxhat.sum(axis=(0, 2, 3), keepdims=True)
            s2 = (gxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            x.accumulate_grad(inv_std * (gxhat - s1 / m - xhat * s2 / m))
        else:
            x.accumulate_grad(gxhat * inv_std)

    return _make(out, (x, gamma, beta), bwd)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor,
               eps: float = 1e-5) -> float:
    """Compare reverse-mode gradients of a scalar function against central
    finite differences.

    Returns max over coordinates of |analytic - numeric| relative to
    max(1, |analytic|, |numeric|). Use 64-bit inputs for tight tolerances.
    """
    x.zero_grad()
    out = f(x)
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x).data.reshape(()))
        flat[i] = orig - eps
        f_minus = float(f(x).data.reshape(()))
        flat[i] = orig
        nflat[i] = (f_plus - f_minus) / (2.0 * eps)

    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
