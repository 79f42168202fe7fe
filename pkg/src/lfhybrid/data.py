"""Synthetic layered scenes with exact disparity, hybrid-input simulation and augmentation."""

from __future__ import annotations

import math
import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .lightfield import HybridInput, LightField, bicubic_resize, rgb_to_ycbcr, sample_bicubic

GEOMETRIC_OPS = ("flip_h", "flip_v", "transpose")
DEFAULT_TEXTURE_SIGMA = 4.0


@dataclass
class Layer:
    """One fronto-parallel plane.  ``texture`` is ``(C, Ht, Wt)`` in texture coordinates."""

    texture: np.ndarray
    disparity: float
    mask: np.ndarray | None = None


@dataclass
class SyntheticScene:
    """Back-to-front layers on a canvas of ``height x width`` central-view pixels.

    Texture pixel ``(r + margin, c + margin)`` sits under central pixel ``(r, c)``.
    """

    layers: list[Layer]
    height: int
    width: int
    margin: int
    seed: int = 0

    @property
    def disparities(self) -> list[float]:
        return [l.disparity for l in self.layers]


def noise_texture(rng, shape, sigma: float, channels: int = 1, detail: float = 0.0) -> np.ndarray:
    """Band-limited noise scaled to [0.05, 0.95].

    ``detail`` mixes in a finer octave (sigma / 3) with that relative weight.
    """
    out = []
    for _ in range(channels):
        t = gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
        t /= t.std()
        if detail > 0:
            fine = gaussian_filter(rng.standard_normal(shape), sigma / 3, mode="wrap")
            t = t + detail * fine / fine.std()
        t = (t - t.min()) / (t.max() - t.min())
        out.append(0.05 + 0.9 * t)
    return np.stack(out)


def disc_mask(shape, margin: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Binary disc given in central-view coordinates."""
    rr, cc = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    return ((rr - margin - cy) ** 2 + (cc - margin - cx) ** 2 <= radius**2).astype(float)


def rect_mask(shape, margin: int, r0: float, c0: float, r1: float, c1: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    rr = rr - margin
    cc = cc - margin
    return ((rr >= r0) & (rr < r1) & (cc >= c0) & (cc < c1)).astype(float)


def required_margin(max_disp: float, M: int, N: int) -> int:
    return int(math.ceil(abs(max_disp) * max(M // 2, N // 2))) + 3


def random_scene(
    seed: int,
    height: int,
    width: int,
    n_layers: int = 1,
    disparity_range: tuple[float, float] = (-4.0, 4.0),
    texture_sigma: float = DEFAULT_TEXTURE_SIGMA,
    texture_detail: float = 0.0,
    channels: int = 1,
    max_offset: int = 2,
    disparities: Sequence[float] | None = None,
) -> SyntheticScene:
    """Background plane plus ``n_layers - 1`` disc occluders, nearer layers in front.

    Layer disparities are drawn from ``disparity_range`` unless given
    explicitly; either way they are sorted so larger disparity sits in front.
    """
    rng = np.random.default_rng(seed)
    if disparities is not None:
        ds = np.sort(np.asarray(disparities, dtype=float))
        n_layers = len(ds)
        lo, hi = float(ds.min()), float(ds.max())
    else:
        lo, hi = disparity_range
        ds = np.sort(rng.uniform(lo, hi, size=n_layers))
    margin = int(math.ceil(max(abs(lo), abs(hi)) * max_offset)) + 3
    shape = (height + 2 * margin, width + 2 * margin)
    layers = [Layer(noise_texture(rng, shape, texture_sigma, channels, texture_detail), float(ds[0]))]
    for d in ds[1:]:
        r = rng.uniform(0.15, 0.3) * min(height, width)
        cy = rng.uniform(r, height - r)
        cx = rng.uniform(r, width - r)
        layers.append(
            Layer(
                noise_texture(rng, shape, texture_sigma, channels, texture_detail),
                float(d),
                disc_mask(shape, margin, cy, cx, r),
            )
        )
    return SyntheticScene(layers, height, width, margin, seed)


def _layer_views(scene: SyntheticScene, layer: Layer, M: int, N: int, H: int, W: int):
    u0, v0 = M // 2, N // 2
    rr, cc = np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float), indexing="ij")
    m = scene.margin
    tex = np.empty((M, N, layer.texture.shape[0], H, W))
    alpha = np.ones((M, N, H, W))
    for u in range(M):
        for v in range(N):
            rows = rr + m - layer.disparity * (u - u0)
            cols = cc + m - layer.disparity * (v - v0)
            for c in range(layer.texture.shape[0]):
                tex[u, v, c] = sample_bicubic(layer.texture[c], rows, cols)
            if layer.mask is not None:
                alpha[u, v] = np.clip(sample_bicubic(layer.mask, rows, cols), 0.0, 1.0)
    return tex, alpha


def render_scene(scene: SyntheticScene, M: int, N: int, H: int | None = None, W: int | None = None):
    """Render an ``M x N`` light field.

    View ``u`` of a layer with disparity ``d`` samples the layer texture at
    ``x - d (u - u0)``, so the parallax relation holds by construction.

    Returns ``(LightField, gt_disparity, occlusion_mask)`` for the central
    view.  The mask flags central pixels whose 4x4 bicubic footprint in some
    view is not purely covered by the pixel's own layer (occlusion,
    disocclusion and blended layer edges).
    """
    if M % 2 == 0 or N % 2 == 0:
        raise ValueError("angular dims must be odd")
    H = scene.height if H is None else H
    W = scene.width if W is None else W
    off = max(M // 2, N // 2)
    for l in scene.layers:
        if abs(l.disparity) * off >= min(H, W) / 4:
            raise ValueError(f"disparity {l.disparity} too large for a {H}x{W} canvas")
        if abs(l.disparity) * off + 2 > scene.margin:
            raise ValueError(f"disparity {l.disparity} exceeds the scene texture margin")
    C = scene.layers[0].texture.shape[0]
    views = np.zeros((M, N, C, H, W))
    remaining = np.ones((M, N, H, W))
    weights = []
    # front-to-back accumulation of per-layer coverage
    for layer in reversed(scene.layers):
        tex, alpha = _layer_views(scene, layer, M, N, H, W)
        wgt = alpha * remaining
        views += tex * wgt[:, :, None]
        remaining = remaining * (1 - alpha)
        weights.append(wgt)
    weights = weights[::-1]  # back-to-front order again

    u0, v0 = M // 2, N // 2
    central_w = np.stack([w[u0, v0] for w in weights])
    owner = np.argmax(central_w, axis=0)
    ds = np.array(scene.disparities)
    gt = ds[owner]

    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    occluded = np.zeros((H, W), dtype=bool)
    if len(scene.layers) > 1:
        for k, wk in enumerate(weights):
            sel = owner == k
            if not sel.any():
                continue
            pure = wk >= 1 - 1e-9
            for u in range(M):
                for v in range(N):
                    pr = rr + ds[k] * (u - u0)
                    pc = cc + ds[k] * (v - v0)
                    br = np.floor(pr).astype(int)
                    bc = np.floor(pc).astype(int)
                    bad = np.zeros((H, W), dtype=bool)
                    for a in range(-1, 3):
                        for b in range(-1, 3):
                            ir = np.clip(br + a, 0, H - 1)
                            ic = np.clip(bc + b, 0, W - 1)
                            bad |= ~pure[u, v][ir, ic]
                    occluded |= sel & bad
    return LightField(views), gt, occluded


def simulate_hybrid(lf_hr: LightField, alpha: int) -> tuple[HybridInput, LightField]:
    """Bicubically downsample the side views by ``alpha``; keep the central view."""
    if lf_hr.H % alpha or lf_hr.W % alpha:
        raise ValueError(f"view size {lf_hr.H}x{lf_hr.W} not divisible by {alpha}")
    h, w = lf_hr.H // alpha, lf_hr.W // alpha
    side = np.stack([bicubic_resize(lf_hr.views[uv], h, w) for uv in lf_hr.side_coords])
    hybrid = HybridInput(lf_hr.central.copy(), side, lf_hr.M, lf_hr.N, alpha)
    return hybrid, lf_hr


def transform_map(a: np.ndarray, op: str) -> np.ndarray:
    """Apply a geometric op to a central-view map (disparity or mask)."""
    if op == "flip_h":
        return a[..., ::-1, :].copy()
    if op == "flip_v":
        return a[..., :, ::-1].copy()
    if op == "transpose":
        return np.swapaxes(a, -1, -2).copy()
    raise ValueError(f"unsupported geometric op {op!r}")


def geometric_augment(lf: LightField, gt_disparity: np.ndarray, op: str):
    """Flip/transpose spatial and angular axes together.

    With ``I_u(x) = I_u'(x + d (u' - u))``, flipping the row axis alone turns
    the relation into ``x - d (u' - u)``; reversing ``u`` as well restores the
    original sign, so the disparity values stay the same and only move with
    the pixels.  Transposing swaps ``(x, y)`` with ``(u, v)`` and keeps the
    pairing of each spatial axis with its angular axis, again leaving values
    unchanged.
    """
    v = lf.views
    if op == "flip_h":
        out = v[::-1, :, :, ::-1, :]
    elif op == "flip_v":
        out = v[:, ::-1, :, :, ::-1]
    elif op == "transpose":
        out = v.transpose(1, 0, 2, 4, 3)
    else:
        raise ValueError(f"unsupported geometric op {op!r}")
    return LightField(np.ascontiguousarray(out)), transform_map(gt_disparity, op)


@dataclass
class AugmentSpec:
    geometric: str | None = None
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    hue: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.geometric is not None and self.geometric not in GEOMETRIC_OPS:
            raise ValueError(f"unsupported geometric op {self.geometric!r}")
        if min(self.brightness, self.contrast, self.saturation, self.hue) < 0:
            raise ValueError("jitter ranges must be non-negative")
        if self.contrast > 1 or self.saturation > 1:
            raise ValueError("contrast/saturation jitter must be <= 1")


def _hue_rotate(img: np.ndarray, turns: float) -> np.ndarray:
    """Rotate RGB about the gray axis by ``turns`` of a full circle."""
    th = 2 * np.pi * turns
    c, s = np.cos(th), np.sin(th)
    k = 1.0 / 3.0
    sq = np.sqrt(k)
    m = np.array(
        [
            [c + (1 - c) * k, k * (1 - c) - sq * s, k * (1 - c) + sq * s],
            [k * (1 - c) + sq * s, c + k * (1 - c), k * (1 - c) - sq * s],
            [k * (1 - c) - sq * s, k * (1 - c) + sq * s, c + k * (1 - c)],
        ]
    )
    return np.tensordot(m, img, axes=(1, 0))


def _luma(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 3:
        return rgb_to_ycbcr(img)[0]
    return img[0]


def jitter_view(img: np.ndarray, b: float, c: float, s: float, h: float) -> np.ndarray:
    """Brightness -> contrast -> saturation -> hue; neutral values are skipped."""
    out = img
    if b != 0:
        out = np.clip(out + b, 0, 1)
    if c != 1:
        m = _luma(out).mean()
        out = np.clip(m + (out - m) * c, 0, 1)
    if img.shape[0] == 3:
        if s != 1:
            g = _luma(out)[None]
            out = np.clip(g + (out - g) * s, 0, 1)
        if h != 0:
            out = np.clip(_hue_rotate(out, h), 0, 1)
    return out


def color_augment(hybrid: HybridInput, spec: AugmentSpec) -> HybridInput:
    """Independent colour jitter per side view; central view untouched."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for img in hybrid.side_views:
        b = rng.uniform(-spec.brightness, spec.brightness) if spec.brightness else 0.0
        c = rng.uniform(1 - spec.contrast, 1 + spec.contrast) if spec.contrast else 1.0
        s = rng.uniform(1 - spec.saturation, 1 + spec.saturation) if spec.saturation else 1.0
        h = rng.uniform(-spec.hue, spec.hue) if spec.hue else 0.0
        out.append(jitter_view(img, b, c, s, h))
    return HybridInput(hybrid.central_hr, np.stack(out), hybrid.M, hybrid.N, hybrid.scale)


@dataclass
class TrainingSample:
    hybrid: HybridInput
    gt: LightField
    origin: tuple[int, int] = (0, 0)  # LR top-left corner
    disparity: np.ndarray | None = None


def sample_patch(
    lf_hr: LightField, hybrid: HybridInput, size: int, rng, disparity: np.ndarray | None = None
) -> TrainingSample:
    """Aligned crop: HR ``size x size`` at ``(a r, a c)``, LR ``size/a`` at ``(r, c)``."""
    a = hybrid.scale
    if size % a:
        raise ValueError(f"patch size {size} not divisible by scale {a}")
    h, w = hybrid.side_views.shape[-2:]
    s = size // a
    if s > h or s > w:
        raise ValueError(f"patch size {size} larger than the {a * h}x{a * w} views")
    r = int(rng.integers(0, h - s + 1))
    c = int(rng.integers(0, w - s + 1))
    R, Cc = a * r, a * c
    gt = LightField(lf_hr.views[..., R : R + size, Cc : Cc + size])
    patch = HybridInput(
        hybrid.central_hr[:, R : R + size, Cc : Cc + size],
        hybrid.side_views[..., r : r + s, c : c + s],
        hybrid.M, hybrid.N, a,
    )
    d = None if disparity is None else disparity[R : R + size, Cc : Cc + size]
    return TrainingSample(patch, gt, (r, c), d)


def prefetch(items: Iterable, depth: int = 2) -> Iterator:
    """Produce ``items`` on a worker thread through a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    done = object()
    errors: list[BaseException] = []
    stop = threading.Event()

    def work():
        try:
            for it in items:
                while not stop.is_set():
                    try:
                        q.put(it, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # re-raised in the consumer
            errors.append(exc)
        finally:
            while not stop.is_set():
                try:
                    q.put(done, timeout=0.1)
                    break
                except queue.Full:
                    continue

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            it = q.get()
            if it is done:
                break
            yield it
    finally:
        stop.set()
    if errors:
        raise errors[0]
