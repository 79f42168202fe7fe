"""Light-field containers, color conversion, bicubic resampling and EPI slicing.

Images are planar float arrays of shape ``(C, H, W)``.  A light field stores
its views as one array of shape ``(M, N, C, H, W)`` indexed by the 0-based
angular coordinate ``(u, v)``; ``u`` pairs with the spatial row axis and ``v``
with the column axis.

Disparity convention: a scene point seen at ``x`` in view ``u`` with
disparity ``d`` is seen at ``x + d * (u' - u)`` in view ``u'``, i.e.
``I_u(x) = I_u'(x + d (u' - u))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LightField",
    "HybridInput",
    "DisparityField",
    "make_light_field",
    "rgb_to_ycbcr",
    "ycbcr_to_rgb",
    "cubic_weights",
    "cubic_weights_deriv",
    "resize_matrix",
    "bicubic_resize",
    "sample_bicubic",
    "extract_epi",
    "structure_residual",
]


def _as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"expected (C, H, W) image, got shape {a.shape}")
    return a


@dataclass
class LightField:
    """M x N grid of equally sized views, stored as ``(M, N, C, H, W)``."""

    views: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.views)
        if v.ndim != 5:
            raise ValueError(f"views must be (M, N, C, H, W), got {v.shape}")
        M, N = v.shape[:2]
        if M < 1 or N < 1:
            raise ValueError("empty angular grid")
        if M % 2 == 0 or N % 2 == 0:
            raise ValueError(f"angular dims must be odd, got {M}x{N}")
        if not np.all(np.isfinite(v)):
            raise ValueError("light field contains non-finite values")
        self.views = v

    @property
    def M(self) -> int:
        return self.views.shape[0]

    @property
    def N(self) -> int:
        return self.views.shape[1]

    @property
    def C(self) -> int:
        return self.views.shape[2]

    @property
    def H(self) -> int:
        return self.views.shape[3]

    @property
    def W(self) -> int:
        return self.views.shape[4]

    @property
    def central_coord(self) -> tuple[int, int]:
        return (self.M // 2, self.N // 2)

    @property
    def angular_coords(self) -> list[tuple[int, int]]:
        return [(u, v) for u in range(self.M) for v in range(self.N)]

    @property
    def side_coords(self) -> list[tuple[int, int]]:
        c = self.central_coord
        return [uv for uv in self.angular_coords if uv != c]

    def view(self, u: int, v: int) -> np.ndarray:
        return self.views[u, v]

    @property
    def central(self) -> np.ndarray:
        return self.views[self.central_coord]

    def channel(self, c: int) -> "LightField":
        return LightField(self.views[:, :, c : c + 1])


@dataclass
class HybridInput:
    """HR central view plus the LR side views in row-major angular order."""

    central_hr: np.ndarray
    side_views: np.ndarray
    M: int
    N: int
    scale: int

    def __post_init__(self):
        self.central_hr = _as_image(self.central_hr)
        sv = np.asarray(self.side_views)
        if sv.ndim == 3:
            sv = sv[:, None]
        self.side_views = sv
        if self.M % 2 == 0 or self.N % 2 == 0:
            raise ValueError(f"angular dims must be odd, got {self.M}x{self.N}")
        if sv.shape[0] != self.M * self.N - 1:
            raise ValueError(
                f"expected {self.M * self.N - 1} side views, got {sv.shape[0]}"
            )
        _, h, w = sv.shape[1:]
        C, Hh, Wh = self.central_hr.shape
        if sv.shape[1] != C:
            raise ValueError("channel mismatch between central and side views")
        if (Hh, Wh) != (h * self.scale, w * self.scale):
            raise ValueError(
                f"central view {Hh}x{Wh} is not {self.scale}x the side views {h}x{w}"
            )

    @property
    def side_coords(self) -> list[tuple[int, int]]:
        c = (self.M // 2, self.N // 2)
        return [(u, v) for u in range(self.M) for v in range(self.N) if (u, v) != c]

    @property
    def central_coord(self) -> tuple[int, int]:
        return (self.M // 2, self.N // 2)

    def offsets(self) -> np.ndarray:
        """Angular offsets ``u - u0`` of the side views, shape ``(MN-1, 2)``."""
        u0 = np.array(self.central_coord)
        return np.array(self.side_coords, dtype=float) - u0

    def channel(self, c: int) -> "HybridInput":
        return HybridInput(
            self.central_hr[c : c + 1], self.side_views[:, c : c + 1],
            self.M, self.N, self.scale,
        )


@dataclass
class DisparityField:
    """Per-side-view HR disparity maps, shape ``(MN-1, H, W)``."""

    maps: np.ndarray
    coords: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        m = np.asarray(self.maps)
        if m.ndim == 4 and m.shape[1] == 1:
            m = m[:, 0]
        if m.ndim != 3:
            raise ValueError(f"disparity maps must be (V, H, W), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("disparity contains non-finite values")
        self.maps = m


def make_light_field(grid) -> LightField:
    """Validate a nested ``M x N`` list of images (or a 5-D array)."""
    if isinstance(grid, np.ndarray) and grid.ndim == 5:
        return LightField(grid)
    rows = list(grid)
    if not rows or not len(rows[0]):
        raise ValueError("empty angular grid")
    ncols = len(rows[0])
    views = []
    shape = None
    for row in rows:
        if len(row) != ncols:
            raise ValueError("ragged angular grid")
        out = []
        for img in row:
            a = _as_image(img).astype(float, copy=False)
            if shape is None:
                shape = a.shape
            elif a.shape != shape:
                raise ValueError(f"view size mismatch: {a.shape} vs {shape}")
            out.append(a)
        views.append(out)
    return LightField(np.array(views))


# Full-range BT.601.
_RGB2YCC = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)


def rgb_to_ycbcr(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected 3-channel (3, H, W) image, got {img.shape}")
    out = np.tensordot(_RGB2YCC, img, axes=(1, 0))
    out[1:] += 0.5
    return out


def ycbcr_to_rgb(image: np.ndarray) -> np.ndarray:
    img = np.asarray(image, dtype=float)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected 3-channel (3, H, W) image, got {img.shape}")
    centered = img.copy()
    centered[1:] -= 0.5
    return np.tensordot(_YCC2RGB, centered, axes=(1, 0))


# Catmull-Rom (a = -0.5) tap weights for taps at offsets -1, 0, 1, 2.
def cubic_weights(t):
    t = np.asarray(t)
    t2 = t * t
    t3 = t2 * t
    return (
        0.5 * (-t3 + 2 * t2 - t),
        0.5 * (3 * t3 - 5 * t2 + 2),
        0.5 * (-3 * t3 + 4 * t2 + t),
        0.5 * (t3 - t2),
    )


def cubic_weights_deriv(t):
    t = np.asarray(t)
    t2 = t * t
    return (
        0.5 * (-3 * t2 + 4 * t - 1),
        0.5 * (9 * t2 - 10 * t),
        0.5 * (-9 * t2 + 8 * t + 1),
        0.5 * (3 * t2 - 2 * t),
    )


def resize_matrix(n_in: int, n_out: int, dtype=float) -> np.ndarray:
    """Matrix ``R`` with ``out = R @ x`` for 1-D bicubic resampling.

    Pixel centers are aligned (``src = (i + 0.5) * n_in / n_out - 0.5``),
    no antialiasing prefilter, taps clamped to the edge.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resize dimensions must be >= 1")
    R = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == n_out:
        np.fill_diagonal(R, 1)
        return R
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src)
    t = src - base
    rows = np.arange(n_out)
    for k, w in enumerate(cubic_weights(t)):
        idx = np.clip(base.astype(int) - 1 + k, 0, n_in - 1)
        np.add.at(R, (rows, idx), w)
    return R


def bicubic_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable Catmull-Rom resize of a ``(C, H, W)`` or ``(H, W)`` image."""
    if out_h < 1 or out_w < 1:
        raise ValueError("zero-size output")
    img = np.asarray(image)
    H, W = img.shape[-2:]
    if (H, W) == (out_h, out_w):
        return img.copy()
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else float
    Ry = resize_matrix(H, out_h, dtype)
    Rx = resize_matrix(W, out_w, dtype)
    return np.matmul(np.matmul(Ry, img), Rx.T)


def _taps(pos: np.ndarray, n: int):
    base = np.floor(pos)
    t = pos - base
    idx = [np.clip(base.astype(np.int64) - 1 + k, 0, n - 1) for k in range(4)]
    inside = (base - 1 >= 0) & (base + 2 <= n - 1)
    return idx, t, inside


def sample_bicubic(img: np.ndarray, rows, cols, return_valid: bool = False):
    """Sample a 2-D image at real-valued ``(rows, cols)`` with edge clamping.

    With ``return_valid`` also returns a mask of sites whose 4x4 footprint
    lies fully inside the image (no clamping involved).
    """
    img = np.asarray(img)
    H, W = img.shape
    rows = np.asarray(rows, dtype=float)
    cols = np.asarray(cols, dtype=float)
    ri, ty, vin = _taps(rows, H)
    ci, tx, hin = _taps(cols, W)
    wy = cubic_weights(ty)
    wx = cubic_weights(tx)
    out = np.zeros(np.broadcast(rows, cols).shape, dtype=np.result_type(img, float))
    for a in range(4):
        acc = 0.0
        for b in range(4):
            acc = acc + wx[b] * img[ri[a], ci[b]]
        out += wy[a] * acc
    if return_valid:
        return out, vin & hin
    return out


def extract_epi(
    lf: LightField,
    orientation: str,
    angular_index: int,
    spatial_line: int,
    channel: int = 0,
) -> np.ndarray:
    """Horizontal EPI (``N x W``) or vertical EPI (``M x H``)."""
    if orientation == "horizontal":
        if not (0 <= angular_index < lf.M and 0 <= spatial_line < lf.H):
            raise IndexError("EPI index out of range")
        return lf.views[angular_index, :, channel, spatial_line, :].copy()
    if orientation == "vertical":
        if not (0 <= angular_index < lf.N and 0 <= spatial_line < lf.W):
            raise IndexError("EPI index out of range")
        return lf.views[:, angular_index, channel, :, spatial_line].copy()
    raise ValueError(f"unknown orientation {orientation!r}")


def structure_residual(
    lf: LightField, gt_disparity: np.ndarray, occlusion_mask=None
) -> float:
    """Max parallax violation ``|I_u0(x) - I_u(x + d (u - u0))|``.

    ``gt_disparity`` and ``occlusion_mask`` (True = excluded) live on the
    central view.  Sites whose bicubic footprint would leave the view are
    excluded as well.  Returns ``inf`` when nothing remains to compare.
    """
    d = np.asarray(gt_disparity, dtype=float)
    if d.shape != (lf.H, lf.W):
        raise ValueError("disparity must match the view size")
    keep = np.ones_like(d, dtype=bool)
    if occlusion_mask is not None:
        keep &= ~np.asarray(occlusion_mask, dtype=bool)
    u0, v0 = lf.central_coord
    rr, cc = np.meshgrid(np.arange(lf.H), np.arange(lf.W), indexing="ij")
    worst = -np.inf
    ref = lf.central
    for u, v in lf.side_coords:
        rows = rr + d * (u - u0)
        cols = cc + d * (v - v0)
        for c in range(lf.C):
            s, valid = sample_bicubic(lf.views[u, v, c], rows, cols, return_valid=True)
            sel = keep & valid
            if sel.any():
                worst = max(worst, float(np.max(np.abs(ref[c][sel] - s[sel]))))
    return float("inf") if worst == -np.inf else worst
