"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .data import render_scene, simulate_hybrid
from .fusion import assemble_output
from .io import (
    DataError,
    load_disparities,
    load_hybrid,
    load_light_field,
    load_scene,
    read_manifest,
    save_hybrid,
    save_light_field,
    write_png,
    write_raster,
)
from .lightfield import HybridInput, LightField, bicubic_resize, extract_epi, rgb_to_ycbcr, ycbcr_to_rgb
from .metrics import evaluate
from .model import HybridLFNet
from .reconstruct import reconstruct
from .train import CheckpointError, NumericalError, Scene, fit, load_checkpoint, load_run_config, save_checkpoint

log = logging.getLogger("lfhybrid")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _pair(text: str, sep: str = "x") -> tuple[int, int]:
    try:
        a, b = text.lower().split(sep)
        return int(a), int(b)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected AxB, got {text!r}") from None


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> None:
    M, N = args.views
    H, W = args.size
    if H % args.scale or W % args.scale:
        raise UsageError(f"--size {H}x{W} is not divisible by --scale {args.scale}")
    scene = load_scene(args.scene, H, W, max(M // 2, N // 2))
    try:
        lf, disp, occ = render_scene(scene, M, N)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    save_light_field(lf, out / "gt", {lf.central_coord: disp})
    write_png(out / "gt" / "occlusion.png", occ.astype(float))
    hybrid, _ = simulate_hybrid(lf, args.scale)
    save_hybrid(hybrid, out / "input")
    log.info("wrote %s (gt/ and input/)", out)


def _find_light_fields(root: Path) -> list[Path]:
    found = []
    for man in sorted(root.rglob("manifest.txt")):
        if read_manifest(man.parent)["scale"] == 1:
            found.append(man.parent)
    return found


def _luma_field(lf: LightField) -> LightField:
    if lf.C == 1:
        return lf
    if lf.C != 3:
        raise DataError(f"expected 1 or 3 channels, got {lf.C}")
    y = np.empty(lf.views.shape[:2] + (1,) + lf.views.shape[3:])
    for uv in lf.angular_coords:
        y[uv] = rgb_to_ycbcr(lf.views[uv])[:1]
    return LightField(y)


def cmd_train(args) -> None:
    try:
        tc, mc = load_run_config(args.config)
    except (OSError, ValueError) as exc:
        raise DataError(f"bad config {args.config}: {exc}") from exc
    dirs = _find_light_fields(Path(args.data))
    if not dirs:
        raise DataError(f"no full light fields (manifest scale=1) under {args.data}")
    scenes = []
    for d in dirs:
        lf = _luma_field(load_light_field(d))
        if (lf.M, lf.N) != (mc.views_m, mc.views_n):
            raise DataError(f"{d}: {lf.M}x{lf.N} views, config expects {mc.views_m}x{mc.views_n}")
        disp = load_disparities(d).get(lf.central_coord)
        scenes.append(Scene(lf, disp))
    state = None
    if args.resume:
        ck = load_checkpoint(args.resume)
        if ck.config != mc:
            raise DataError("resume checkpoint was trained with a different model config")
        model = ck.model()
        state = ck.resume_state()
    else:
        model = HybridLFNet(mc, seed=tc.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = args.log or out.with_suffix(".csv")
    try:
        res = fit(model, scenes, tc, state=state, log_path=log_path)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(model.params, res.state, mc, out)
    log.info("trained %d iterations on %d scenes; checkpoint %s, log %s", len(res.log), len(scenes), out, log_path)


def _dump_views(directory: Path, views: np.ndarray, hybrid: HybridInput) -> None:
    save_light_field(assemble_output(views, hybrid), directory)


def cmd_reconstruct(args) -> None:
    hybrid = load_hybrid(args.input)
    ck = load_checkpoint(args.ckpt)
    model = ck.model()
    C = hybrid.central_hr.shape[0]
    if C not in (1, 3):
        raise DataError(f"expected 1 or 3 channels, got {C}")
    if C == 3:
        central = rgb_to_ycbcr(hybrid.central_hr)
        side = np.stack([rgb_to_ycbcr(v) for v in hybrid.side_views])
        luma = HybridInput(central[:1], side[:, :1], hybrid.M, hybrid.N, hybrid.scale)
    else:
        luma = hybrid
    try:
        rec = reconstruct(model, luma)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out)
    views = rec.lf.views
    if C == 3:
        # chroma is upsampled bicubically; the network only sees luma
        H, W = hybrid.central_hr.shape[1:]
        full = np.empty(views.shape[:2] + (3, H, W))
        for i, uv in enumerate(hybrid.side_coords):
            chroma = np.stack([bicubic_resize(ch, H, W) for ch in side[i, 1:]])
            full[uv] = ycbcr_to_rgb(np.concatenate([views[uv], chroma]))
        full[hybrid.central_coord] = hybrid.central_hr
        views = full
    save_light_field(LightField(views), out)
    if args.dump_intermediates:
        inter = out / "intermediates"
        _dump_views(inter / "sr", np.stack([rec.lf_sr.views[uv] for uv in hybrid.side_coords]), luma)
        _dump_views(inter / "warp", np.stack([rec.lf_warp.views[uv] for uv in hybrid.side_coords]), luma)
        inter.mkdir(parents=True, exist_ok=True)
        att = rec.attention
        for i, (u, v) in enumerate(hybrid.side_coords):
            write_png(inter / f"weight_sr_{u}_{v}.png", att.weight_sr[i, 0])
            write_raster(inter / f"disp_{u}_{v}.f32", rec.d_h.maps[i])
    log.info("wrote %s", out)


def cmd_eval(args) -> None:
    pred = load_light_field(args.pred)
    gt = load_light_field(args.gt)
    if pred.views.shape != gt.views.shape:
        raise DataError(f"prediction {pred.views.shape} and ground truth {gt.views.shape} differ")
    rep = evaluate(_luma_field(pred), _luma_field(gt))
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["view", "psnr", "ssim"])
        w.writeheader()
        w.writerows(rep.rows())
    print(f"side views: PSNR {rep.psnr_side:.3f} dB  SSIM {rep.ssim_side:.4f}")
    print(f"all views:  PSNR {rep.psnr_all:.3f} dB  SSIM {rep.ssim_all:.4f}")
    print(f"EPI-SSIM:   {rep.epi_ssim:.4f}")


def cmd_epi(args) -> None:
    lf = load_light_field(args.lf)
    orient = "vertical" if args.vertical else "horizontal"
    try:
        epi = np.stack([extract_epi(lf, orient, args.urow, args.row, c) for c in range(lf.C)])
    except (IndexError, ValueError) as exc:
        raise DataError(str(exc)) from exc
    write_png(args.out, epi)


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lfhybrid", description="Hybrid light-field super-resolution.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a scene file into a light field and its hybrid input")
    s.add_argument("--scene", required=True)
    s.add_argument("--views", required=True, type=_pair, help="MxN, both odd")
    s.add_argument("--size", required=True, type=_pair, help="HxW of the HR views")
    s.add_argument("--scale", required=True, type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="train on every full light field under --data")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="CSV loss log (default: next to the checkpoint)")
    s.add_argument("--resume", help="continue from this checkpoint and its optimizer state")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="super-resolve a hybrid input directory")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-intermediates", action="store_true",
                   help="also write both branch outputs, attention weights and refined disparity")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="per-view PSNR/SSIM and EPI-SSIM on the Y channel")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("epi", help="write one epipolar-plane image")
    s.add_argument("--lf", required=True)
    s.add_argument("--row", required=True, type=int, help="spatial line (image row, or column with --vertical)")
    s.add_argument("--urow", required=True, type=int, help="angular row u (or column v with --vertical)")
    s.add_argument("--vertical", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_epi)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"lfhybrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s"
    )
    try:
        args.func(args)
    except UsageError as exc:
        print(f"lfhybrid: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"lfhybrid: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError) as exc:
        print(f"lfhybrid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
