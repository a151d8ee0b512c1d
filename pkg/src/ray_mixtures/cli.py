from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import DEFAULT_PROFILE, PROFILES, Config, apply_overrides, build_config, config_json
from .data import PROTOCOLS, ManifestFrame, SceneManifest, held_out_views, load_scene, select_views, write_manifest
from .errors import ConfigError, RayMixturesError, VerificationFailure
from .images import U16_MAX, atomic_write_text, ensure_dir, write_rgb_png, write_u16_png
from .metrics import IDENTICAL, MetricReport, evaluate_view, write_eval_csv
from .pipeline import render_image
from .synthetic import CameraRing, SyntheticScene, random_scene, read_descriptor, render_views, write_descriptor
from .trainer import train
from .verify import DEFAULT_SUITES, SUITES, expand_suites, run_suite


logger = logging.getLogger(__name__)

DEFAULT_VIEWS = 3
DEFAULT_SYNTH_VIEWS = 8
MANIFEST_NAME = "transforms.json"


def _write_report(path: Path, rep: dict) -> None:
    atomic_write_text(path, json.dumps(rep, indent=2, sort_keys=True) + "\n")


def default_protocol(profile: str) -> str:
    # forward-facing captures hold out every 8th frame
    return "forward" if profile.startswith("llff") else "synthetic"


def _train_config(args: argparse.Namespace) -> Config:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"train.seed={args.seed}")
    return build_config(args.profile, overrides)


def _inference_config(ckpt_config: Config, overrides: list[str] | None) -> Config:
    cfg = apply_overrides(ckpt_config, overrides)
    if cfg.field != ckpt_config.field:
        raise ConfigError("field.* cannot be overridden when loading a checkpoint")
    return cfg


def collect_synth(*, descriptor: Path | None, out_dir: Path, views: int | None, seed: int) -> dict:
    """Render an analytic scene into a loadable manifest with images, depth and opacity maps."""

    if descriptor is not None:
        scene = read_descriptor(descriptor)
        mode = "descriptor"
    else:
        scene = random_scene(np.random.default_rng(seed), ring=CameraRing(count=views or DEFAULT_SYNTH_VIEWS))
        mode = "random"
    if views is not None and views != scene.cameras.count:
        ring = scene.cameras
        scene = SyntheticScene(
            primitives=scene.primitives,
            near=scene.near,
            far=scene.far,
            background=scene.background,
            cameras=CameraRing(views, ring.radius, ring.elevation, ring.width, ring.height, ring.camera_angle_x),
        )

    rendered = render_views(scene, name=out_dir.name)
    depth_scale = scene.far / U16_MAX
    frames = []
    for i, cam in enumerate(rendered.cameras):
        stem = f"r_{i:03d}"
        write_rgb_png(out_dir / f"{stem}.png", rendered.images[i])
        write_u16_png(out_dir / f"{stem}_depth.png", rendered.depths[i], depth_scale)
        write_u16_png(out_dir / f"{stem}_acc.png", rendered.accs[i], 1.0 / U16_MAX)
        frames.append(
            ManifestFrame(
                file_path=f"./{stem}",
                transform_matrix=np.vstack([cam.pose, [0.0, 0.0, 0.0, 1.0]]).tolist(),
                depth_path=f"./{stem}_depth.png",
                acc_path=f"./{stem}_acc.png",
            )
        )
    write_descriptor(out_dir / "scene.json", scene)
    manifest = SceneManifest(
        frames=frames,
        camera_angle_x=scene.cameras.camera_angle_x,
        near=scene.near,
        far=scene.far,
        background=scene.background,
        depth_scale=depth_scale,
    )
    # manifest last: a partial run never looks like a complete scene
    write_manifest(out_dir / MANIFEST_NAME, manifest)
    return {
        "mode": mode,
        "seed": seed,
        "manifest": str(out_dir / MANIFEST_NAME),
        "frames": len(frames),
        "primitives": len(scene.primitives),
        "depth_scale": depth_scale,
    }


def cmd_synth(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    rep = collect_synth(
        descriptor=Path(args.scene) if args.scene else None,
        out_dir=out_dir,
        views=args.views,
        seed=args.seed if args.seed is not None else 0,
    )
    _write_report(out_dir / "synth.report.json", rep)
    if not args.quiet:
        print(f"synth: wrote {rep['frames']} views to {rep['manifest']}")
    return 0


def collect_train(*, manifest: Path, cfg: Config, out_dir: Path, views: int, protocol: str) -> dict:
    scene = load_scene(manifest, load_oracle=False)
    ids = select_views(len(scene), views, protocol)
    ensure_dir(out_dir)
    atomic_write_text(out_dir / "config.json", config_json(cfg))
    result = train(scene.subset(ids), cfg, out_dir)
    return {
        "scene": str(manifest),
        "protocol": protocol,
        "train_views": ids,
        "steps": result.steps,
        "checkpoint": str(result.checkpoint),
        "loss_log": str(result.loss_log),
        "final": result.final,
    }


def cmd_train(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    cfg = _train_config(args)
    rep = collect_train(
        manifest=Path(args.scene),
        cfg=cfg,
        out_dir=out_dir,
        views=args.views,
        protocol=args.protocol or default_protocol(cfg.profile),
    )
    _write_report(out_dir / "train.report.json", rep)
    if not args.quiet:
        print(f"train: {rep['steps']} steps, final loss {rep['final'].get('total', float('nan')):.5f} ({rep['checkpoint']})")
    return 0


def collect_render(*, ckpt: Path, manifest: Path, out_dir: Path, overrides: list[str] | None, frames: list[int] | None) -> dict:
    loaded = load_checkpoint(ckpt)
    cfg = _inference_config(loaded.config, overrides)
    scene = load_scene(manifest, load_oracle=False)
    ids = frames if frames else list(range(len(scene)))
    ensure_dir(out_dir)
    atomic_write_text(out_dir / "config.json", config_json(cfg))
    depth_scale = scene.far / U16_MAX
    written = []
    for i in ids:
        if not 0 <= i < len(scene):
            raise ConfigError(f"frame {i} is not in the scene ({len(scene)} frames)")
        rgb, depth, _ = render_image(loaded.params, scene.cameras[i], cfg, near=scene.near, far=scene.far, background=scene.background_rgb)
        write_rgb_png(out_dir / f"rgb_{i:03d}.png", rgb)
        write_u16_png(out_dir / f"depth_{i:03d}.png", depth, depth_scale)
        written.append(i)
        logger.info("rendered frame %d", i)
    _write_report(out_dir / "depth.json", {"depth_scale": depth_scale, "units": "scene"})
    return {"checkpoint": str(ckpt), "scene": str(manifest), "frames": written, "step": loaded.state.step}


def cmd_render(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    rep = collect_render(ckpt=Path(args.ckpt), manifest=Path(args.scene), out_dir=out_dir, overrides=args.set, frames=args.frame)
    _write_report(out_dir / "render.report.json", rep)
    if not args.quiet:
        print(f"render: wrote {len(rep['frames'])} views to {out_dir}")
    return 0


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def collect_eval(*, ckpt: Path, manifest: Path, out_dir: Path, views: int, protocol: str | None, overrides: list[str] | None) -> dict:
    loaded = load_checkpoint(ckpt)
    cfg = _inference_config(loaded.config, overrides)
    scene = load_scene(manifest)
    protocol = protocol or default_protocol(cfg.profile)
    test_ids = held_out_views(len(scene), views, protocol)
    rows: list[tuple[int, MetricReport]] = []
    for i in test_ids:
        rgb, depth, _ = render_image(loaded.params, scene.cameras[i], cfg, near=scene.near, far=scene.far, background=scene.background_rgb)
        gt_depth = scene.depths[i] if scene.depths else None
        gt_acc = scene.accs[i] if scene.accs else None
        rep = evaluate_view(rgb, scene.images[i], depth=depth, gt_depth=gt_depth, gt_acc=gt_acc)
        rows.append((i, rep))
        logger.info("view %d: psnr %s ssim %.4f", i, rep.psnr, rep.ssim)
    write_eval_csv(out_dir / "eval.csv", scene.name, rows)
    psnrs = [r.psnr for _, r in rows if r.psnr != IDENTICAL]
    maes = [r.depth_mae for _, r in rows if r.depth_mae is not None]
    return {
        "checkpoint": str(ckpt),
        "scene": str(manifest),
        "protocol": protocol,
        "test_views": test_ids,
        "views": {str(i): r.to_json() for i, r in rows},
        "mean": {
            "psnr": _mean(psnrs),
            "ssim": _mean([r.ssim for _, r in rows]),
            "avg_err": _mean([r.avg_err for _, r in rows]),
            "depth_mae": _mean(maes),
        },
        "note": "avg_err omits LPIPS",
    }


def cmd_eval(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    ensure_dir(out_dir)
    rep = collect_eval(
        ckpt=Path(args.ckpt),
        manifest=Path(args.scene),
        out_dir=out_dir,
        views=args.views,
        protocol=args.protocol,
        overrides=args.set,
    )
    _write_report(out_dir / "eval.report.json", rep)
    if not args.quiet:
        m = rep["mean"]
        print(f"eval: {len(rep['test_views'])} held-out views, psnr {m['psnr']}, ssim {m['ssim']}, depth mae {m['depth_mae']}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    names = expand_suites(args.suite or ["all"])
    seed = args.seed if args.seed is not None else 0
    results = [run_suite(n, seed) for n in names]
    rep = {"seed": seed, "passed": all(r.passed for r in results), "suites": [r.to_json() for r in results]}
    if args.out:
        out_dir = Path(args.out)
        _write_report(out_dir / "verify.report.json", rep)
    if not args.quiet:
        for r in results:
            print(f"verify: {r.name:<12} {'ok' if r.passed else 'FAIL'} ({len(r.checks)} checks, {r.seconds:.1f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationFailure(f"suites failed: {', '.join(failed)}")
    return 0


def _common(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, default=None, help="random seed (train: overrides train.seed)")
    sp.add_argument("--quiet", action="store_true", help="warnings only, no summary line")
    sp.add_argument("--verbose", action="store_true", help="debug logging")


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ray-mixtures")
    sub = p.add_subparsers(dest="cmd", required=True)
    profiles = sorted(PROFILES)

    sy = sub.add_parser("synth", help="Render an analytic scene into images, depth maps and a pose manifest")
    sy.add_argument("--scene", required=False, help="scene descriptor JSON (default: random 2-3 sphere scene from --seed)")
    sy.add_argument("--views", type=int, required=False, help="number of ring cameras (default: descriptor's, or 8)")
    sy.add_argument("--out", required=True, help="output scene directory")
    _common(sy)
    sy.set_defaults(func=cmd_synth)

    tr = sub.add_parser("train", help="Train a field on k views of a scene")
    tr.add_argument("--scene", required=True, help="pose manifest JSON")
    tr.add_argument("--views", type=int, default=DEFAULT_VIEWS, help="training view count k (default: 3)")
    tr.add_argument("--protocol", choices=PROTOCOLS, required=False, help="view selection (default: forward for llff*, else synthetic)")
    tr.add_argument("--profile", choices=profiles, default=DEFAULT_PROFILE)
    tr.add_argument("--out", required=True, help="output run directory")
    tr.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. train.steps=2000 (repeatable)")
    _common(tr)
    tr.set_defaults(func=cmd_train)

    rd = sub.add_parser("render", help="Render color and depth for manifest poses from a checkpoint")
    rd.add_argument("--ckpt", required=True, help="checkpoint file")
    rd.add_argument("--scene", required=True, help="pose manifest JSON")
    rd.add_argument("--frame", type=int, action="append", help="frame index to render (repeatable, default: all)")
    rd.add_argument("--out", required=True, help="output directory")
    rd.add_argument("--set", action="append", metavar="KEY=VALUE", help="inference override, e.g. sampling.n_fine=128")
    _common(rd)
    rd.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="Render held-out views and report PSNR, SSIM and depth error")
    ev.add_argument("--ckpt", required=True, help="checkpoint file")
    ev.add_argument("--scene", required=True, help="pose manifest JSON")
    ev.add_argument("--views", type=int, default=DEFAULT_VIEWS, help="training view count k used for the split (default: 3)")
    ev.add_argument("--protocol", choices=PROTOCOLS, required=False)
    ev.add_argument("--out", required=True, help="output directory")
    ev.add_argument("--set", action="append", metavar="KEY=VALUE", help="inference override")
    _common(ev)
    ev.set_defaults(func=cmd_eval)

    vf = sub.add_parser("verify", help="Run the verification suites")
    vf.add_argument("--suite", action="append", choices=["all", *SUITES], help=f"suite to run (repeatable; all = {', '.join(DEFAULT_SUITES)})")
    vf.add_argument("--out", required=False, help="write verify.report.json here")
    _common(vf)
    vf.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return int(args.func(args))
    except RayMixturesError as e:
        logger.error("%s", e)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
