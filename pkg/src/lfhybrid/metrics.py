"""PSNR, SSIM and EPI-based SSIM on single-channel images in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .lightfield import LightField

PSNR_CAP = 100.0
K1, K2 = 0.01, 0.03
WINDOW = 11
SIGMA = 1.5


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * np.log10(1.0 / mse))


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, wr: np.ndarray, wc: np.ndarray) -> np.ndarray:
    """Separable correlation keeping only fully-covered positions."""
    tmp = sliding_window_view(img, len(wr), axis=0) @ wr
    return sliding_window_view(tmp, len(wc), axis=1) @ wc


def ssim_map(a, b, wr: np.ndarray | None = None, wc: np.ndarray | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2:
        raise ValueError("SSIM expects single-channel 2-D images")
    wr = gaussian_window() if wr is None else wr
    wc = gaussian_window() if wc is None else wc
    if a.shape[0] < len(wr) or a.shape[1] < len(wc):
        raise ValueError(f"image {a.shape} smaller than the SSIM window")
    c1 = K1**2
    c2 = K2**2
    mu_a = _filter_valid(a, wr, wc)
    mu_b = _filter_valid(b, wr, wc)
    saa = _filter_valid(a * a, wr, wc) - mu_a**2
    sbb = _filter_valid(b * b, wr, wc) - mu_b**2
    sab = _filter_valid(a * b, wr, wc) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (saa + sbb + c2)
    return num / den


def ssim(a, b) -> float:
    """Gaussian-window SSIM (11x11, sigma 1.5), mean over valid positions."""
    return float(ssim_map(a, b).mean())


def _epi_window(n: int) -> np.ndarray:
    if n >= WINDOW:
        return gaussian_window()
    return np.full(n, 1.0 / n)


def epi_ssim(pred: LightField, gt: LightField, channel: int = 0) -> float:
    """Mean SSIM over every horizontal and vertical EPI.

    Along the angular axis the window is uniform over all views when there
    are fewer than 11 of them.
    """
    if pred.views.shape != gt.views.shape:
        raise ValueError("light field shapes differ")
    p = pred.views[:, :, channel]
    g = gt.views[:, :, channel]
    M, N, H, W = p.shape
    wide = gaussian_window()
    vals = []
    wn = _epi_window(N)
    for u in range(M):
        for r in range(H):
            vals.append(ssim_map(p[u, :, r, :], g[u, :, r, :], wn, wide).mean())
    wm = _epi_window(M)
    for v in range(N):
        for c in range(W):
            vals.append(ssim_map(p[:, v, :, c], g[:, v, :, c], wm, wide).mean())
    return float(np.mean(vals))


@dataclass
class MetricsReport:
    psnr: dict[tuple[int, int], float] = field(default_factory=dict)
    ssim: dict[tuple[int, int], float] = field(default_factory=dict)
    central: tuple[int, int] = (0, 0)
    epi_ssim: float = float("nan")
    seconds: float = float("nan")

    def _avg(self, d, side_only):
        vals = [v for k, v in d.items() if not (side_only and k == self.central)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def psnr_side(self) -> float:
        return self._avg(self.psnr, True)

    @property
    def ssim_side(self) -> float:
        return self._avg(self.ssim, True)

    @property
    def psnr_all(self) -> float:
        return self._avg(self.psnr, False)

    @property
    def ssim_all(self) -> float:
        return self._avg(self.ssim, False)

    def rows(self) -> list[dict]:
        out = [
            {"view": f"{u}_{v}", "psnr": self.psnr[(u, v)], "ssim": self.ssim[(u, v)]}
            for (u, v) in sorted(self.psnr)
        ]
        out.append({"view": "mean_side", "psnr": self.psnr_side, "ssim": self.ssim_side})
        out.append({"view": "mean_all", "psnr": self.psnr_all, "ssim": self.ssim_all})
        out.append({"view": "epi_ssim", "psnr": "", "ssim": self.epi_ssim})
        return out


def evaluate(pred: LightField, gt: LightField, with_epi: bool = True) -> MetricsReport:
    """Per-view PSNR/SSIM on channel 0 (Y) plus EPI-SSIM."""
    if pred.views.shape != gt.views.shape:
        raise ValueError("light field shapes differ")
    rep = MetricsReport(central=gt.central_coord)
    for uv in gt.angular_coords:
        rep.psnr[uv] = psnr(pred.views[uv][0], gt.views[uv][0])
        rep.ssim[uv] = ssim(pred.views[uv][0], gt.views[uv][0])
    if with_epi:
        rep.epi_ssim = epi_ssim(pred, gt)
    return rep
