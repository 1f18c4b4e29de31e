"""Minimal reverse-mode automatic differentiation on numpy arrays.

Define-by-run graphs: every operation returns a fresh Tensor holding the
forward value plus a closure that scatters the incoming gradient to its
parents. Only what the reconstruction network and its training loss need
is implemented. Everything is plain single-threaded numpy, so a fixed
seed reproduces training bit-for-bit.

The differentiable loss builders at the bottom mirror the scoring-time
formulas in `metrics`; a consistency test keeps the two in lockstep while
finite differences provide the independent gradient oracle.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .imagecore import LUMA_WEIGHTS, nearest_indices
from .metrics import MetricConfig, LossWeights, ssim_window_taps


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward: Callable[[], None] | None = None
        self._parents: tuple[Tensor, ...] = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar node."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, like=self), self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sqrt(self):
        return sqrt(self)


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _node(data: np.ndarray, parents: Sequence[Tensor]) -> Tensor:
    out = Tensor(data)
    out._parents = tuple(p for p in parents if isinstance(p, Tensor))
    out.requires_grad = any(p.requires_grad for p in out._parents)
    return out


# -- elementwise ops --------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = _node(a.data + b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = _node(a.data - b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = _node(a.data * b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward
    return out


def div(a, b) -> Tensor:
    a = _as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, like=a)
    out = _node(a.data / b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out._backward = backward
    return out


def power(a: Tensor, exponent: float) -> Tensor:
    out = _node(a.data ** exponent, (a,))

    def backward():
        a._accumulate(out.grad * exponent * a.data ** (exponent - 1))

    out._backward = backward
    return out


def exp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), (a,))

    def backward():
        a._accumulate(out.grad * out.data)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    out = _node(np.log(a.data), (a,))

    def backward():
        a._accumulate(out.grad / a.data)

    out._backward = backward
    return out


def sqrt(a: Tensor) -> Tensor:
    """Square root with the zero-subgradient convention at 0."""
    root = np.sqrt(a.data)
    out = _node(root, (a,))

    def backward():
        denom = 2.0 * root
        g = np.where(denom > 0, out.grad / np.where(denom > 0, denom, 1.0), 0.0)
        a._accumulate(g.astype(a.dtype, copy=False))

    out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _node(s, (a,))

    def backward():
        a._accumulate(out.grad * s * (1.0 - s))

    out._backward = backward
    return out


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data >= 0
    out = _node(np.where(mask, a.data, slope * a.data), (a,))

    def backward():
        a._accumulate(out.grad * np.where(mask, 1.0, slope).astype(a.dtype))

    out._backward = backward
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes inside the interval (inclusive)."""
    inside = (a.data >= lo) & (a.data <= hi)
    out = _node(np.clip(a.data, lo, hi), (a,))

    def backward():
        a._accumulate(out.grad * inside.astype(a.dtype))

    out._backward = backward
    return out


# -- reductions and shape ops ------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = _node(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def backward():
        g = out.grad
        if not keepdims and axis is not None:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            shape = list(a.shape)
            for ax in sorted(ax % a.ndim for ax in axes):
                shape[ax] = 1
            g = g.reshape(shape)
        a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype, copy=False))

    out._backward = backward
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    s = tsum(a, axis=axis, keepdims=keepdims)
    count = a.data.size / s.data.size
    return mul(s, 1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    out = _node(a.data.reshape(shape), (a,))

    def backward():
        a._accumulate(out.grad.reshape(a.shape))

    out._backward = backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if not t.requires_grad:
                continue
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(out.grad[tuple(sl)])

    out._backward = backward
    return out


# -- spatial ops (NCHW) -------------------------------------------------------


def _pad_nchw(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    spec = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    return np.pad(x, spec, mode="constant" if mode == "zeros" else "edge")


def _unpad_adjoint(g: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return g
    if mode == "zeros":
        return g[:, :, pad:-pad, pad:-pad]
    g = g.copy()
    g[:, :, pad, :] += g[:, :, :pad, :].sum(axis=2)
    g[:, :, -pad - 1, :] += g[:, :, -pad:, :].sum(axis=2)
    g = g[:, :, pad:-pad, :]
    g[:, :, :, pad] += g[:, :, :, :pad].sum(axis=3)
    g[:, :, :, -pad - 1] += g[:, :, :, -pad:].sum(axis=3)
    return g[:, :, :, pad:-pad]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1,
           pad: int = 0, pad_mode: str = "zeros") -> Tensor:
    """2-D correlation on NCHW input; im2col + GEMM.

    pad_mode "zeros" is the network convention; "edge" matches the
    clamp-to-edge filters of the metric stack; pad=0 gives valid mode.
    """
    if pad_mode not in ("zeros", "edge"):
        raise ValueError(f"pad_mode must be 'zeros' or 'edge', got {pad_mode!r}")
    xd, wd = x.data, w.data
    n, c, h, wd_in = xd.shape
    cout, cin, kh, kw = wd.shape
    if cin != c:
        raise ValueError(f"conv channel mismatch: input {c}, weight {cin}")
    padded = _pad_nchw(xd, pad, pad_mode)
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd_in + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError("conv output would be empty")
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xd.dtype)
    for ki in range(kh):
        for kj in range(kw):
            cols[:, :, ki, kj] = padded[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride]
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    wmat = wd.reshape(cout, c * kh * kw)
    out_data = (wmat @ cols2).reshape(n, cout, ho, wo)
    if b is not None:
        out_data = out_data + b.data.reshape(1, cout, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    out = _node(out_data, parents)
    # the im2col buffer is only needed for dW; drop it for constant kernels
    cols_saved = cols2 if w.requires_grad else None

    def backward():
        g = out.grad
        g2 = g.reshape(n, cout, ho * wo)
        if w.requires_grad:
            dw = np.matmul(g2, cols_saved.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
            w._accumulate(dw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2).reshape(n, c, kh, kw, ho, wo)
            dpad = np.zeros(padded.shape, dtype=g.dtype)
            for ki in range(kh):
                for kj in range(kw):
                    dpad[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += dcols[:, :, ki, kj]
            x._accumulate(_unpad_adjoint(dpad, pad, pad_mode))

    out._backward = backward
    return out


def avg_pool2d(x: Tensor, m: int) -> Tensor:
    """Mean-pool m x m patches on NCHW; edge patches use actual membership."""
    if m < 1:
        raise ValueError(f"pool size must be >= 1, got {m}")
    if m == 1:
        return mul(x, 1.0)
    xd = x.data
    h, w = xd.shape[2], xd.shape[3]
    starts_h = np.arange(0, h, m)
    starts_w = np.arange(0, w, m)
    counts_h = np.minimum(starts_h + m, h) - starts_h
    counts_w = np.minimum(starts_w + m, w) - starts_w
    sums = np.add.reduceat(np.add.reduceat(xd, starts_h, axis=2), starts_w, axis=3)
    denom = (counts_h[:, None] * counts_w[None, :]).astype(xd.dtype)
    out = _node(sums / denom, (x,))

    def backward():
        g = out.grad / denom
        g = np.repeat(g, counts_h, axis=2)
        g = np.repeat(g, counts_w, axis=3)
        x._accumulate(g)

    out._backward = backward
    return out


def upsample_nearest(x: Tensor, target_h: int, target_w: int) -> Tensor:
    """Nearest-neighbor upsample on NCHW (target dims >= source dims)."""
    h, w = x.data.shape[2], x.data.shape[3]
    if target_h < h or target_w < w:
        raise ValueError("upsample_nearest only enlarges")
    rows = nearest_indices(h, target_h)
    cols = nearest_indices(w, target_w)
    out = _node(x.data[:, :, rows][:, :, :, cols], (x,))
    starts_r = (np.arange(h) * target_h + h - 1) // h
    starts_c = (np.arange(w) * target_w + w - 1) // w

    def backward():
        g = np.add.reduceat(out.grad, starts_r, axis=2)
        g = np.add.reduceat(g, starts_c, axis=3)
        x._accumulate(g)

    out._backward = backward
    return out


def upsample2x(x: Tensor) -> Tensor:
    return upsample_nearest(x, 2 * x.data.shape[2], 2 * x.data.shape[3])


# -- differentiable loss stack ------------------------------------------------
#
# Training-time mirrors of the scalar losses in `metrics`, built from the
# primitives above so gradients flow through Eq-style formulas unchanged.


def gray_nchw(x: Tensor) -> Tensor:
    """Luma conversion on NCHW; identity for single-channel input."""
    if x.data.shape[1] == 1:
        return x
    if x.data.shape[1] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {x.data.shape[1]}")
    w = Tensor(np.asarray(LUMA_WEIGHTS, dtype=x.dtype).reshape(1, 3, 1, 1))
    return (x * w).sum(axis=1, keepdims=True)


def _prewitt_kernels(dtype) -> tuple[Tensor, Tensor]:
    kx = np.array([[-1.0, 0.0, 1.0]] * 3, dtype=dtype) / 3.0
    return Tensor(kx.reshape(1, 1, 3, 3)), Tensor(kx.T.reshape(1, 1, 3, 3).copy())


def prewitt_magnitude(x: Tensor) -> Tensor:
    """sqrt(gx^2 + gy^2) of a single-channel NCHW tensor, clamp-to-edge."""
    kx, ky = _prewitt_kernels(x.dtype)
    gx = conv2d(x, kx, pad=1, pad_mode="edge")
    gy = conv2d(x, ky, pad=1, pad_mode="edge")
    return sqrt(gx * gx + gy * gy)


def gms(a: Tensor, b: Tensor, c: float) -> Tensor:
    ga = prewitt_magnitude(a)
    gb = prewitt_magnitude(b)
    return (2.0 * ga * gb + c) / (ga * ga + gb * gb + c)


def l2_loss_t(i: Tensor, ihat: Tensor) -> Tensor:
    d = i - ihat
    return (d * d).mean()


def msgms_loss_t(i: Tensor, ihat: Tensor, cfg: MetricConfig) -> Tensor:
    """Mean over pixels of 1 - (sum over scales of GMS) / N."""
    a = gray_nchw(i)
    b = gray_nchw(ihat)
    h, w = a.data.shape[2], a.data.shape[3]
    for n in range(cfg.scales):
        m = 2 ** n
        if -(-h // m) < 3 or -(-w // m) < 3:
            raise ValueError(f"input {h}x{w} too small for {cfg.scales} MSGMS scales")
    acc = None
    for n in range(cfg.scales):
        m = 2 ** n
        am = avg_pool2d(a, m) if m > 1 else a
        bm = avg_pool2d(b, m) if m > 1 else b
        level = upsample_nearest(gms(am, bm, cfg.stabilizer), h, w)
        acc = level if acc is None else acc + level
    return (1.0 - acc * (1.0 / cfg.scales)).mean()


def ssim_loss_t(i: Tensor, ihat: Tensor, cfg: MetricConfig) -> Tensor:
    """1 - mean local SSIM over valid windows, clamped to [0, 1]."""
    h, w = i.data.shape[2], i.data.shape[3]
    if h < cfg.ssim_window or w < cfg.ssim_window:
        raise ValueError(f"input {h}x{w} smaller than SSIM window {cfg.ssim_window}")
    n, c = i.data.shape[0], i.data.shape[1]
    a = i.reshape((n * c, 1, h, w))
    b = ihat.reshape((n * c, 1, h, w))
    # the Gaussian window is separable: two 1-D valid convolutions
    taps = ssim_window_taps(cfg.ssim_window).astype(i.dtype)
    win_col = Tensor(taps.reshape(1, 1, cfg.ssim_window, 1))
    win_row = Tensor(taps.reshape(1, 1, 1, cfg.ssim_window))

    def window_mean(x: Tensor) -> Tensor:
        return conv2d(conv2d(x, win_col), win_row)

    c1 = cfg.ssim_k1 ** 2
    c2 = cfg.ssim_k2 ** 2
    mu_a = window_mean(a)
    mu_b = window_mean(b)
    var_a = window_mean(a * a) - mu_a * mu_a
    var_b = window_mean(b * b) - mu_b * mu_b
    cov = window_mean(a * b) - mu_a * mu_b
    ssim = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
    return clamp(1.0 - ssim.mean(), 0.0, 1.0)


def combined_loss_t(i: Tensor, ihat: Tensor, weights: LossWeights, cfg: MetricConfig) -> Tensor:
    """Convex combination of the three reconstruction losses."""
    total = weights.total
    if total == 0:
        raise ValueError("loss weights must not all be zero")
    acc = None
    for weight, term in (
        (weights.l2, lambda: l2_loss_t(i, ihat)),
        (weights.ssim, lambda: ssim_loss_t(i, ihat, cfg)),
        (weights.msgms, lambda: msgms_loss_t(i, ihat, cfg)),
    ):
        if weight > 0:
            part = term() * (weight / total)
            acc = part if acc is None else acc + part
    return acc


def lamp_t(loss: Tensor, eps: float = 1e-6) -> Tensor:
    """-log(1 - L) with L clamped into [0, 1 - eps]."""
    return -log(1.0 - clamp(loss, 0.0, 1.0 - eps))


# -- finite-difference checking -----------------------------------------------


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.zero_grad()


def numeric_gradient(build: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued graph wrt one leaf."""
    flat = t.data.ravel()
    g = np.empty_like(flat)
    for idx in range(flat.size):
        keep = flat[idx]
        flat[idx] = keep + h
        fp = build().item()
        flat[idx] = keep - h
        fm = build().item()
        flat[idx] = keep
        g[idx] = (fp - fm) / (2.0 * h)
    return g.reshape(t.shape)


def gradcheck(build: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5,
              rel_floor: float = 1e-4) -> float:
    """Max relative error of analytic vs numeric gradients over all leaves."""
    zero_grads(leaves)
    build().backward()
    worst = 0.0
    for t in leaves:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(build, t, h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), rel_floor)
        err = float((np.abs(analytic - numeric) / denom).max())
        worst = max(worst, err)
    zero_grads(leaves)
    return worst
