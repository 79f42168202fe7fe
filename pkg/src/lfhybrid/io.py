"""On-disk formats: light-field directories, ``.f32`` rasters, scene files.

A light-field directory holds ``view_{u}_{v}.png`` (0-based angular indices)
and ``manifest.txt`` with ``M, N, H, W, C, scale``.  ``scale == 1`` is a full
light field; ``scale > 1`` is a hybrid input whose central view is
``scale``-times larger than the ``H x W`` side views.  Single-channel views
are 16-bit PNG, 3-channel views 8-bit RGB.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .data import DEFAULT_TEXTURE_SIGMA, Layer, SyntheticScene, disc_mask, noise_texture, rect_mask
from .lightfield import HybridInput, LightField, bicubic_resize
from .train import parse_kv


class DataError(ValueError):
    pass


def write_png(path, img: np.ndarray) -> None:
    img = np.clip(np.asarray(img, dtype=float), 0, 1)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim == 2:
        Image.fromarray(np.round(img * 65535).astype(np.uint16)).save(path)
    elif img.shape[0] == 3:
        Image.fromarray(np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8), "RGB").save(path)
    else:
        raise DataError(f"cannot write a {img.shape[0]}-channel PNG")


def read_png(path) -> np.ndarray:
    """Return a planar float image in [0, 1]."""
    try:
        im = Image.open(path)
        im.load()
    except (OSError, FileNotFoundError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        a = np.asarray(im, dtype=float)
        return (a / 65535.0)[None]
    if im.mode == "L":
        return (np.asarray(im, dtype=float) / 255.0)[None]
    a = np.asarray(im.convert("RGB"), dtype=float) / 255.0
    return a.transpose(2, 0, 1)


def write_manifest(path, **kv) -> None:
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in kv.items()))


def read_manifest(directory) -> dict[str, int]:
    p = Path(directory) / "manifest.txt"
    if not p.exists():
        raise DataError(f"{directory} has no manifest.txt")
    kv = parse_kv(p.read_text())
    try:
        return {k: int(kv[k]) for k in ("M", "N", "H", "W", "C", "scale")}
    except KeyError as exc:
        raise DataError(f"manifest missing key {exc}") from exc


def write_raster(path, a: np.ndarray) -> None:
    np.ascontiguousarray(a, dtype="<f4").tofile(path)


def read_raster(path, h: int, w: int) -> np.ndarray:
    a = np.fromfile(path, dtype="<f4")
    if a.size != h * w:
        raise DataError(f"{path}: expected {h * w} floats, found {a.size}")
    return a.reshape(h, w).astype(float)


def save_light_field(lf: LightField, directory, disparity: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_manifest(d / "manifest.txt", M=lf.M, N=lf.N, H=lf.H, W=lf.W, C=lf.C, scale=1)
    for u, v in lf.angular_coords:
        write_png(d / f"view_{u}_{v}.png", lf.views[u, v])
    for (u, v), m in (disparity or {}).items():
        write_raster(d / f"disp_{u}_{v}.f32", m)


def save_hybrid(hybrid: HybridInput, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _, C, h, w = hybrid.side_views.shape
    write_manifest(d / "manifest.txt", M=hybrid.M, N=hybrid.N, H=h, W=w, C=C, scale=hybrid.scale)
    write_png(d / "view_{}_{}.png".format(*hybrid.central_coord), hybrid.central_hr)
    for (u, v), img in zip(hybrid.side_coords, hybrid.side_views):
        write_png(d / f"view_{u}_{v}.png", img)


def _read_views(d: Path, man: dict):
    out = {}
    for u in range(man["M"]):
        for v in range(man["N"]):
            img = read_png(d / f"view_{u}_{v}.png")
            if img.shape[0] != man["C"]:
                raise DataError(f"view_{u}_{v}.png has {img.shape[0]} channels, manifest says {man['C']}")
            out[(u, v)] = img
    return out


def load_light_field(directory) -> LightField:
    d = Path(directory)
    man = read_manifest(d)
    if man["scale"] != 1:
        raise DataError(f"{d} is a hybrid input (scale={man['scale']}), not a light field")
    views = _read_views(d, man)
    grid = np.zeros((man["M"], man["N"], man["C"], man["H"], man["W"]))
    for uv, img in views.items():
        if img.shape[1:] != (man["H"], man["W"]):
            raise DataError(f"view {uv} has size {img.shape[1:]}, manifest says {man['H']}x{man['W']}")
        grid[uv] = img
    return LightField(grid)


def load_hybrid(directory) -> HybridInput:
    d = Path(directory)
    man = read_manifest(d)
    if man["scale"] == 1:
        raise DataError(f"{d} is a full light field; expected a hybrid input (scale > 1)")
    views = _read_views(d, man)
    c = (man["M"] // 2, man["N"] // 2)
    side = np.stack([views[uv] for uv in sorted(views) if uv != c])
    try:
        return HybridInput(views[c], side, man["M"], man["N"], man["scale"])
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def load_disparities(directory) -> dict[tuple[int, int], np.ndarray]:
    d = Path(directory)
    man = read_manifest(d)
    h, w = man["H"] * man["scale"], man["W"] * man["scale"]
    if man["scale"] == 1:
        h, w = man["H"], man["W"]
    out = {}
    for p in sorted(d.glob("disp_*_*.f32")):
        _, u, v = p.stem.split("_")
        out[(int(u), int(v))] = read_raster(p, h, w)
    return out


# ---------------------------------------------------------------- scene files


def _texture(spec: str, base: Path, shape, rng, sigma: float, detail: float = 0.0) -> np.ndarray:
    if spec.startswith("noise"):
        parts = spec.split(":")
        s = float(parts[1]) if len(parts) > 1 and parts[1] else sigma
        seed = int(parts[2]) if len(parts) > 2 else int(rng.integers(0, 2**31))
        return noise_texture(np.random.default_rng(seed), shape, s, detail=detail)
    img = read_png(base / spec)
    if img.shape[1:] != shape:
        img = np.stack([bicubic_resize(ch, *shape) for ch in img])
    return np.clip(img, 0, 1)


def _mask(spec: str, base: Path, shape, margin: int) -> np.ndarray | None:
    if not spec:
        return None
    kind, _, args = spec.partition(":")
    if kind == "disc":
        cy, cx, r = (float(x) for x in args.split(":"))
        return disc_mask(shape, margin, cy, cx, r)
    if kind == "rect":
        r0, c0, r1, c1 = (float(x) for x in args.split(":"))
        return rect_mask(shape, margin, r0, c0, r1, c1)
    img = read_png(base / spec)[0]
    if img.shape != shape:
        img = bicubic_resize(img, *shape)
    return np.clip(img, 0, 1)


def load_scene(path, height: int, width: int, max_offset: int) -> SyntheticScene:
    """Parse a scene file.

    Lines are ``key=value``; each ``layer = <texture>, <d>[, <mask>]`` adds one
    layer, back to front.  ``<texture>`` is a PNG path (relative to the file)
    or ``noise[:sigma[:seed]]``; ``<mask>`` is a PNG path, ``disc:cy:cx:r`` or
    ``rect:r0:c0:r1:c1`` in central-view pixels.  Optional keys: ``seed``,
    ``texture_sigma``, ``texture_detail`` (weight of the finer noise octave).
    """
    path = Path(path)
    layers_raw = []
    opts = {}
    for raw in path.read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"malformed scene line: {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if k == "layer":
            layers_raw.append([s.strip() for s in v.split(",")])
        else:
            opts[k] = v
    if not layers_raw:
        raise DataError(f"{path} defines no layers")
    seed = int(opts.get("seed", 0))
    sigma = float(opts.get("texture_sigma", DEFAULT_TEXTURE_SIGMA))
    detail = float(opts.get("texture_detail", 0.0))
    rng = np.random.default_rng(seed)
    ds = [float(parts[1]) for parts in layers_raw]
    margin = int(np.ceil(max(abs(d) for d in ds) * max_offset)) + 3
    shape = (height + 2 * margin, width + 2 * margin)
    layers = []
    for parts in layers_raw:
        if len(parts) < 2:
            raise DataError(f"layer needs at least texture and disparity: {parts}")
        tex = _texture(parts[0], path.parent, shape, rng, sigma, detail)
        mask = _mask(parts[2] if len(parts) > 2 else "", path.parent, shape, margin)
        layers.append(Layer(tex, float(parts[1]), mask))
    return SyntheticScene(layers, height, width, margin, seed)
