"""Minimal reverse-mode autodiff over numpy arrays.

Only the operators the two sub-networks need are provided, each with a
hand-written backward.  Feature maps are 4-D ``(B, C, H, W)``; the batch axis
carries the side views when a block is applied to every view with shared
weights.

Gradients are accumulated as ``grad = grad + g`` (never in place), so a
backward function may hand the same array to several parents.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .lightfield import _taps, cubic_weights, cubic_weights_deriv, resize_matrix

LEAKY_SLOPE = 0.1


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accum(self, g):
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        Graph(self).backward(grad)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name})"


def _node(data, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class Graph:
    """Nodes reachable from ``root`` in topological order (inputs first)."""

    def __init__(self, root: Tensor):
        self.root = root
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order

    def backward(self, grad=None):
        root = self.root
        if grad is None:
            if root.data.size != 1:
                raise ValueError("backward without grad requires a scalar output")
            grad = np.ones_like(root.data)
        root._accum(np.asarray(grad, dtype=root.dtype))
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def unreached(params: dict[str, Tensor]) -> list[str]:
    """Names of parameters that received no gradient in the last backward."""
    return [k for k, p in params.items() if p.grad is None]


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g)
        if b.requires_grad:
            b._accum(g)

    return _node(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(g * b.data)
        if b.requires_grad:
            b._accum(g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g):
        x._accum(g * c)

    return _node(x.data * c, (x,), backward)


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    pos = x.data > 0
    factor = np.where(pos, 1.0, slope).astype(x.dtype)

    def backward(g):
        x._accum(g * factor)

    return _node(x.data * factor, (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    ref = xs[0].shape
    for x in xs[1:]:
        if x.data.ndim != len(ref) or any(
            x.shape[i] != ref[i] for i in range(len(ref)) if i != axis
        ):
            raise ValueError(f"concat shape mismatch {x.shape} vs {ref}")
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            if x.requires_grad:
                x._accum(part)

    return _node(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def repeat(x: Tensor, n: int) -> Tensor:
    """Tile a batch-1 tensor ``n`` times along the batch axis."""
    if x.shape[0] != 1:
        raise ValueError("repeat expects batch size 1")

    def backward(g):
        x._accum(g.sum(axis=0, keepdims=True))

    return _node(np.repeat(x.data, n, axis=0), (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape

    def backward(g):
        x._accum(g.reshape(old))

    return _node(x.data.reshape(shape), (x,), backward)


def crop(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` region."""
    H, W = x.shape[-2:]

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., :h, :w] = g
        x._accum(full)

    return _node(x.data[..., :h, :w].copy(), (x,), backward)


def pad_reflect(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Reflection-pad the bottom and right edges."""
    if pad_h == 0 and pad_w == 0:
        return x
    H, W = x.shape[-2:]
    rows = np.concatenate([np.arange(H), H - 2 - np.arange(pad_h)])
    cols = np.concatenate([np.arange(W), W - 2 - np.arange(pad_w)])
    if rows.min() < 0 or cols.min() < 0:
        raise ValueError("reflection pad larger than the input")
    out = x.data[..., rows, :][..., cols]

    def backward(g):
        acc = np.zeros(g.shape[:-1] + (W,), dtype=g.dtype)
        np.add.at(acc, (..., cols), g)
        full = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(full, (..., rows, slice(None)), acc)
        x._accum(full)

    return _node(out, (x,), backward)


def total(x: Tensor) -> Tensor:
    def backward(g):
        x._accum(np.broadcast_to(g, x.shape).astype(x.dtype))

    return _node(x.data.sum(), (x,), backward)


def mean(x: Tensor) -> Tensor:
    n = x.data.size

    def backward(g):
        x._accum(np.broadcast_to(g / n, x.shape).astype(x.dtype))

    return _node(x.data.mean(), (x,), backward)


# ---------------------------------------------------------------- convolution


def _im2col(xp: np.ndarray, k: int, stride: int, Ho: int, Wo: int) -> np.ndarray:
    """Columns ``(C * k * k, B * Ho * Wo)`` from a padded ``(B, C, Hp, Wp)`` input."""
    B, C = xp.shape[:2]
    cols = np.empty((C, k, k, B, Ho, Wo), dtype=xp.dtype)
    xt = xp.transpose(1, 0, 2, 3)
    for a in range(k):
        for b in range(k):
            cols[:, a, b] = xt[:, :, a : a + stride * Ho : stride, b : b + stride * Wo : stride]
    return cols.reshape(C * k * k, B * Ho * Wo)


def _conv3_flat(xd: np.ndarray):
    """Zero-padded, channel-major input flattened to ``(C, B * Hp * Wp)``."""
    B, C, H, W = xd.shape
    xp = np.zeros((C, B, H + 2, W + 2), dtype=xd.dtype)
    xp[:, :, 1:-1, 1:-1] = xd.transpose(1, 0, 2, 3)
    return xp.reshape(C, -1)


def _conv3_same(xd: np.ndarray, wd: np.ndarray) -> np.ndarray:
    """Stride-1 3x3 correlation without an im2col buffer.

    On the flattened padded grid each tap is a constant offset, so every tap
    is one matmul against a contiguous slice.  Output values are computed at
    padded-grid positions and the valid ``H x W`` corner is cut out after.
    """
    B, C, H, W = xd.shape
    O = wd.shape[0]
    Hp, Wp = H + 2, W + 2
    flat = _conv3_flat(xd)
    taps = np.ascontiguousarray(wd.transpose(2, 3, 0, 1))  # BLAS needs contiguous (O, C) blocks
    L = flat.shape[1] - 2 * Wp - 2
    acc = np.zeros((O, flat.shape[1]), dtype=xd.dtype)
    tmp = np.empty((O, L), dtype=xd.dtype)
    for a in range(3):
        for b in range(3):
            off = a * Wp + b
            np.matmul(taps[a, b], flat[:, off : off + L], out=tmp)
            acc[:, :L] += tmp
    return acc.reshape(O, B, Hp, Wp)[:, :, :H, :W]


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Cross-correlation, ``(B, C, H, W) x (O, C, k, k)``; 3x3 zero-pads by 1.

    Stride-1 3x3 runs tap by tap on a flattened padded grid; 1x1 and strided
    convs use one matmul over im2col columns.  Nothing besides the inputs is
    cached for backward.
    """
    xd, wd = x.data, weight.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects (B, C, H, W), got {xd.shape}")
    O, C, k, k2 = wd.shape
    if k != k2 or k not in (1, 3):
        raise ValueError(f"unsupported kernel {k}x{k2}")
    if xd.shape[1] != C:
        raise ValueError(f"channel mismatch: input {xd.shape[1]}, weight expects {C}")
    if stride not in (1, 2):
        raise ValueError("stride must be 1 or 2")
    B, _, H, W = xd.shape
    p = k // 2
    Ho = (H + 2 * p - k) // stride + 1
    Wo = (W + 2 * p - k) // stride + 1
    flat3 = k == 3 and stride == 1

    def padded():
        return np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd

    wmat = wd.reshape(O, C * k * k)
    if flat3:
        out = _conv3_same(xd, wd)
    else:
        out = (wmat @ _im2col(padded(), k, stride, Ho, Wo)).reshape(O, B, Ho, Wo)
    if bias is not None:
        out = out + bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward_flat(g):
        Hp, Wp = H + 2, W + 2
        gp = np.zeros((O, B, Hp, Wp), dtype=g.dtype)
        gp[:, :, :H, :W] = g.transpose(1, 0, 2, 3)
        gflat = gp.reshape(O, -1)
        L = gflat.shape[1] - 2 * Wp - 2
        gv = gflat[:, :L]
        if weight.requires_grad:
            flat = _conv3_flat(xd)
            dw = np.empty((3, 3, C, O), dtype=wd.dtype)
            gt = np.ascontiguousarray(gv.T)
            for a in range(3):
                for b in range(3):
                    off = a * Wp + b
                    np.matmul(flat[:, off : off + L], gt, out=dw[a, b])
            del flat
            weight._accum(np.ascontiguousarray(dw.transpose(3, 2, 0, 1)))
        if x.requires_grad:
            dflat = np.zeros((C, gflat.shape[1]), dtype=g.dtype)
            tmp = np.empty((C, L), dtype=g.dtype)
            taps_t = np.ascontiguousarray(wd.transpose(2, 3, 1, 0))
            for a in range(3):
                for b in range(3):
                    off = a * Wp + b
                    np.matmul(taps_t[a, b], gv, out=tmp)
                    dflat[:, off : off + L] += tmp
            dx = dflat.reshape(C, B, Hp, Wp)[:, :, 1:-1, 1:-1]
            x._accum(np.ascontiguousarray(dx.transpose(1, 0, 2, 3)))

    def backward_cols(g):
        gmat = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(O, B * Ho * Wo)
        if weight.requires_grad:
            cols = _im2col(padded(), k, stride, Ho, Wo)
            weight._accum((gmat @ cols.T).reshape(O, C, k, k))
            del cols
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape(C, k, k, B, Ho, Wo)
            dxp = np.zeros((C, B, H + 2 * p, W + 2 * p), dtype=g.dtype)
            for a in range(k):
                for b in range(k):
                    dxp[:, :, a : a + stride * Ho : stride, b : b + stride * Wo : stride] += dcols[:, a, b]
            dx = dxp[:, :, p : p + H, p : p + W] if p else dxp
            x._accum(np.ascontiguousarray(dx.transpose(1, 0, 2, 3)))

    def backward(g):
        if bias is not None and bias.requires_grad:
            bias._accum(g.sum(axis=(0, 2, 3)))
        (backward_flat if flat3 else backward_cols)(g)

    return _node(out, parents, backward)


# ---------------------------------------------------------------- resampling


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """``(B, r*r*C, H, W) -> (B, C, r*H, r*W)``; channel ``c*r*r + a*r + b`` fills offset ``(a, b)``."""
    B, Cr, H, W = x.shape
    if Cr % (r * r):
        raise ValueError(f"channels {Cr} not divisible by {r * r}")
    C = Cr // (r * r)
    out = x.data.reshape(B, C, r, r, H, W).transpose(0, 1, 4, 2, 5, 3).reshape(B, C, H * r, W * r)

    def backward(g):
        x._accum(pixel_unshuffle(g, r))

    return _node(out, (x,), backward)


def pixel_unshuffle(a: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle` on plain arrays."""
    B, C, Hr, Wr = a.shape
    H, W = Hr // r, Wr // r
    return a.reshape(B, C, H, r, W, r).transpose(0, 1, 3, 5, 2, 4).reshape(B, C * r * r, H, W)


def resize_bicubic(x: Tensor, out_h: int, out_w: int, value_scale: float = 1.0) -> Tensor:
    H, W = x.shape[-2:]
    Ry = resize_matrix(H, out_h, x.dtype)
    Rx = resize_matrix(W, out_w, x.dtype)
    if (H, W) == (out_h, out_w):
        out = x.data.copy()
    else:
        out = np.matmul(np.matmul(Ry, x.data), Rx.T)
    if value_scale != 1.0:
        out = out * value_scale

    def backward(g):
        gi = np.matmul(np.matmul(Ry.T, g), Rx)
        x._accum(gi * value_scale if value_scale != 1.0 else gi)

    return _node(out, (x,), backward)


def upsample_bicubic(x: Tensor, alpha: int, disparity: bool = False) -> Tensor:
    """Bicubic upsampling by ``alpha``; disparity mode also scales values by ``alpha``."""
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    H, W = x.shape[-2:]
    return resize_bicubic(x, H * alpha, W * alpha, float(alpha) if disparity else 1.0)


def warp_bicubic(img: Tensor, disp: Tensor, deltas) -> Tensor:
    """Inverse-warp ``img`` to the views at angular offsets ``deltas``.

    ``img`` is ``(1, C, H, W)`` (shared source) or ``(B, C, H, W)``; ``disp``
    is ``(B, 1, H, W)``; ``deltas`` is ``(B, 2)`` holding ``u - u0``.
    ``out[b](r, c) = img(r - D du, c - D dv)`` with edge clamping.
    """
    deltas = np.asarray(deltas, dtype=float).reshape(-1, 2)
    Bi, C, H, W = img.shape
    B = disp.shape[0]
    if disp.shape != (B, 1, H, W) or Bi not in (1, B) or deltas.shape[0] != B:
        raise ValueError(f"warp shape mismatch: img {img.shape}, disp {disp.shape}")
    dt = np.result_type(img.dtype, disp.dtype)
    rr, cc = np.meshgrid(np.arange(H, dtype=dt), np.arange(W, dtype=dt), indexing="ij")
    out = np.empty((B, C, H, W), dtype=dt)
    cache = []
    for b in range(B):
        D = disp.data[b, 0]
        du, dv = deltas[b]
        ri, ty, _ = _taps(rr - D * dt.type(du), H)
        ci, tx, _ = _taps(cc - D * dt.type(dv), W)
        wy, wx = cubic_weights(ty), cubic_weights(tx)
        src = img.data[b if Bi > 1 else 0]
        acc = np.zeros((C, H, W), dtype=dt)
        for a in range(4):
            row = 0.0
            for k in range(4):
                row = row + wx[k] * src[:, ri[a], ci[k]]
            acc += wy[a] * row
        out[b] = acc
        cache.append((ri, ci, ty, tx, wy, wx))

    def backward(g):
        gimg = np.zeros(img.shape, dtype=dt) if img.requires_grad else None
        gdisp = np.zeros(disp.shape, dtype=dt) if disp.requires_grad else None
        for b in range(B):
            ri, ci, ty, tx, wy, wx = cache[b]
            gb = g[b]
            if gimg is not None:
                tgt = gimg[b if Bi > 1 else 0]
                for a in range(4):
                    for k in range(4):
                        flat = (ri[a] * W + ci[k]).ravel()
                        w = (wy[a] * wx[k]).ravel()
                        for c in range(C):
                            tgt[c] += np.bincount(
                                flat, weights=w * gb[c].ravel(), minlength=H * W
                            ).reshape(H, W)
            if gdisp is not None:
                du, dv = deltas[b]
                dwy, dwx = cubic_weights_deriv(ty), cubic_weights_deriv(tx)
                src = img.data[b if Bi > 1 else 0]
                d_row = np.zeros((C, H, W), dtype=dt)
                d_col = np.zeros((C, H, W), dtype=dt)
                for a in range(4):
                    for k in range(4):
                        s = src[:, ri[a], ci[k]]
                        d_row += dwy[a] * wx[k] * s
                        d_col += wy[a] * dwx[k] * s
                gdisp[b, 0] = -np.sum(gb * (du * d_row + dv * d_col), axis=0)
        if gimg is not None:
            img._accum(gimg)
        if gdisp is not None:
            disp._accum(gdisp)

    return _node(out, (img, disp), backward)


# ---------------------------------------------------------------- attention


def softmax_pair(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Pixel-wise two-way softmax with max subtraction."""
    if a.shape != b.shape:
        raise ValueError(f"softmax_pair shape mismatch {a.shape} vs {b.shape}")
    m = np.maximum(a.data, b.data)
    ea = np.exp(a.data - m)
    eb = np.exp(b.data - m)
    s = ea + eb
    pa = ea / s
    pb = eb / s
    cross = pa * pb

    def back_a(g):
        if a.requires_grad:
            a._accum(g * cross)
        if b.requires_grad:
            b._accum(-g * cross)

    def back_b(g):
        if a.requires_grad:
            a._accum(-g * cross)
        if b.requires_grad:
            b._accum(g * cross)

    return _node(pa, (a, b), back_a), _node(pb, (a, b), back_b)


# ---------------------------------------------------------------- losses


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error against a constant target."""
    t = np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"l1 shape mismatch {pred.shape} vs {t.shape}")
    diff = pred.data - t
    n = diff.size

    def backward(g):
        pred._accum(np.sign(diff) * (g / n))

    return _node(np.abs(diff).mean(), (pred,), backward)


def edge_aware_smoothness(disp: Tensor, image, lam: float) -> Tensor:
    """Mean of ``0.5 * (exp(-lam|dI/dx|)|dD/dx| + exp(-lam|dI/dy|)|dD/dy|)``.

    Forward differences; the last column/row contributes zero.  ``image``
    broadcasts against ``disp`` (e.g. one edge image shared by all views).
    """
    D = disp.data
    I = np.broadcast_to(np.asarray(image, dtype=D.dtype), D.shape)
    dDx = D[..., :, 1:] - D[..., :, :-1]
    dDy = D[..., 1:, :] - D[..., :-1, :]
    wx = np.exp(-lam * np.abs(I[..., :, 1:] - I[..., :, :-1]))
    wy = np.exp(-lam * np.abs(I[..., 1:, :] - I[..., :-1, :]))
    n = D.size
    val = 0.5 * (np.sum(wx * np.abs(dDx)) + np.sum(wy * np.abs(dDy))) / n

    def backward(g):
        k = 0.5 * g / n
        gx = k * wx * np.sign(dDx)
        gy = k * wy * np.sign(dDy)
        out = np.zeros(D.shape, dtype=D.dtype)
        out[..., :, 1:] += gx
        out[..., :, :-1] -= gx
        out[..., 1:, :] += gy
        out[..., :-1, :] -= gy
        disp._accum(out)

    return _node(np.asarray(val, dtype=D.dtype), (disp,), backward)


# ---------------------------------------------------------------- checking


def grad_check(
    fn: Callable[[], Tensor],
    inputs: Iterable[Tensor],
    eps: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between backward grads and central differences.

    ``fn`` must rebuild the graph from ``inputs`` on every call and return a
    scalar.  With ``max_coords`` a seeded random subset of coordinates per
    input is probed.
    """
    inputs = list(inputs)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.grad = None
        t.requires_grad = True
    fn().backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            idx = rng.choice(flat.size, size=max_coords, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn().data)
            flat[i] = orig - eps
            fm = float(fn().data)
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            ana = float(ga.reshape(-1)[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
