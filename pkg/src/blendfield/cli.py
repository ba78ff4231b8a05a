"""Command-line surface: train, render, eval, synth, serve."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from .camera import Camera, orbit_pose
from .checkpoint import load_checkpoint, save_checkpoint
from .data import export_dataset, load_dataset, synth_scene
from .errors import BlendFieldError
from .losses import StructuralPatchLoss
from .metrics import l1, mse, psnr, ssim
from .training import TrainConfig, Trainer


def _load_train_config(args) -> TrainConfig:
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text()))
    if args.mode:
        values["mode"] = args.mode
    if args.seed is not None:
        values["seed"] = args.seed
    known = set(TrainConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise BlendFieldError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**values)


def _write_manifest(path: Path, config: TrainConfig, extra: dict):
    lines = [f"{k}={v}" for k, v in sorted(config.manifest().items())]
    lines += [f"{k}={v}" for k, v in sorted(extra.items())]
    path.write_text("\n".join(lines) + "\n")


def cmd_train(args) -> int:
    config = _load_train_config(args)
    dataset = load_dataset(args.dataset)
    if args.resume:
        model, meta = load_checkpoint(args.resume)
        start_step = int(meta.get("step_count", 0))
        trainer = Trainer(dataset, config, model=model, start_step=start_step)
    else:
        trainer = Trainer(dataset, config)
    probe_frame = dataset.frames[dataset.test_indices[0]]

    def probe_fn(model):
        rgb, _ = model.render_image(
            probe_frame.coeffs, probe_frame.camera, background=dataset.background
        )
        return psnr(rgb, probe_frame.image)

    def on_log(metrics, psnr_val):
        print(
            f"step {metrics.step:6d} stage {metrics.stage} "
            f"color {metrics.loss_color:.5f} mask {metrics.loss_mask:.5f} "
            f"patch {metrics.loss_patch:.5f} psnr {psnr_val:.2f}",
            flush=True,
        )

    csv_path = args.csv or (str(args.out) + ".metrics.csv")
    t0 = time.perf_counter()
    trainer.run(
        max_steps=args.max_steps, time_budget=args.time_budget,
        csv_path=csv_path, probe_fn=probe_fn,
        on_log=on_log if not args.quiet else None,
    )
    wall = time.perf_counter() - t0
    manifest = {
        "train_config": config.manifest(),
        "step_count": trainer.step_count,
        "dataset": str(args.dataset),
        "wall_clock_s": round(wall, 3),
    }
    save_checkpoint(args.out, trainer.model, manifest=manifest)
    _write_manifest(
        Path(str(args.out) + ".manifest.txt"), config,
        {"steps": trainer.step_count, "dataset": args.dataset},
    )
    if not args.quiet:
        print(f"saved checkpoint to {args.out} after {trainer.step_count} steps")
    return 0


def _save_image(path: Path, rgb: np.ndarray):
    from .data import save_png

    save_png(path, rgb)


def _parse_floats(text: str) -> np.ndarray:
    return np.asarray([float(v) for v in text.replace(",", " ").split()],
                      dtype=np.float32)


def _camera_from_args(args, model) -> Camera:
    if args.orbit:
        az, el, dist, fov = [float(v) for v in args.orbit.split(",")]
        width = args.width or model.train_width or 256
        height = args.height or model.train_height or 256
        return Camera.from_fov(fov, width, height, orbit_pose(az, el, dist))
    cam = model.default_camera
    if cam is None:
        raise BlendFieldError("checkpoint has no default camera; pass --orbit")
    if args.width or args.height:
        cam = cam.scaled(args.width or cam.width, args.height or cam.height)
    return cam


def cmd_render(args) -> int:
    model, _meta = load_checkpoint(args.checkpoint)
    if args.coeffs_file:
        rows = [
            _parse_floats(line)
            for line in Path(args.coeffs_file).read_text().splitlines()
            if line.strip()
        ]
    else:
        rows = [_parse_floats(args.coeffs) if args.coeffs else
                np.zeros(model.k, dtype=np.float32)]
    for i, w in enumerate(rows):
        if w.shape[0] != model.k:
            raise BlendFieldError(
                f"coefficient row {i} has length {w.shape[0]}, expected {model.k}"
            )
    camera = _camera_from_args(args, model)
    bg = _parse_floats(args.background) if args.background else np.zeros(3)
    out = Path(args.out)
    multi = len(rows) > 1
    if multi:
        out.mkdir(parents=True, exist_ok=True)
    for i, w in enumerate(rows):
        rgb, mask = model.render_image(w, camera, background=bg)
        if multi:
            _save_image(out / f"{i:06d}.png", rgb)
            _save_image(out / f"{i:06d}.mask.png", mask)
        else:
            _save_image(out, rgb)
            _save_image(out.with_suffix(".mask.png"), mask)
    if not args.quiet:
        print(f"rendered {len(rows)} frame(s) to {out}")
    return 0


def cmd_eval(args) -> int:
    model, _meta = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.dataset)
    patch_loss = StructuralPatchLoss()
    rows = []
    for idx in dataset.test_indices:
        fr = dataset.frames[idx]
        rgb, _ = model.render_image(
            fr.coeffs, fr.camera, background=dataset.background
        )
        rows.append({
            "frame": idx,
            "mse": mse(rgb, fr.image),
            "l1": l1(rgb, fr.image),
            "psnr": psnr(rgb, fr.image),
            "ssim": ssim(rgb, fr.image),
            "patch_proxy": patch_loss.forward(rgb, fr.image)[0],
        })
    cols = ["mse", "l1", "psnr", "ssim", "patch_proxy"]
    out_path = Path(args.out or "eval.csv")
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        # patch_proxy is the built-in structural patch dissimilarity, not a
        # perceptual-network score; it is not comparable across codebases.
        writer.writerow(["frame"] + cols)
        for row in rows:
            writer.writerow([row["frame"]] + [repr(row[c]) for c in cols])
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            writer.writerow(
                [stat] + [repr(float(fn([row[c] for row in rows]))) for c in cols]
            )
    summary = {c: float(np.mean([row[c] for row in rows])) for c in cols}
    if not args.quiet:
        print(
            f"eval over {len(rows)} frames: "
            + " ".join(f"{c}={summary[c]:.4f}" for c in cols)
        )
        print(f"wrote {out_path}")
    return 0


def cmd_synth(args) -> int:
    dataset, _scene = synth_scene(
        k=args.k, seed=args.seed if args.seed is not None else 0,
        resolution=args.resolution, n_train=args.train_frames,
        n_test=args.test_frames,
    )
    export_dataset(dataset, args.out)
    if not args.quiet:
        print(
            f"wrote synthetic dataset ({dataset.n_frames} frames, "
            f"k={dataset.k}, {dataset.width}x{dataset.height}) to {args.out}"
        )
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    model, _meta = load_checkpoint(args.checkpoint)
    bg = _parse_floats(args.background) if args.background else np.zeros(3)
    print(f"serving {args.checkpoint} on {args.host}:{args.port}", flush=True)
    serve(model, host=args.host, port=args.port, background=bg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blendfield",
        description="Expression-blendable radiance fields: train, render, "
        "evaluate, generate synthetic data, and serve.",
    )
    parser.add_argument("--quiet", action="store_true", help="suppress chatter")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a dataset directory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--config", help="JSON file of TrainConfig overrides")
    p.add_argument("--mode", choices=["blend", "concat"])
    p.add_argument("--seed", type=int)
    p.add_argument("--time-budget", type=float, help="seconds")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--csv", help="metrics CSV path")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("render", help="render frames from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--coeffs", help="K floats, comma or space separated")
    p.add_argument("--coeffs-file", help="file with K floats per line")
    p.add_argument("--orbit", help="azimuth,elevation,distance,fov_deg")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--background", help="RGB floats, e.g. '0.3,0.3,0.3'")
    p.set_defaults(fn=cmd_render)

    p = sub.add_parser("eval", help="metrics table over a dataset's test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic oracle dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--train-frames", type=int, default=200)
    p.add_argument("--test-frames", type=int, default=40)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("serve", help="HTTP render service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--background", help="RGB floats")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BlendFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
