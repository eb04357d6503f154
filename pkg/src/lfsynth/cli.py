"""Command-line interface.

Subcommands: synth-data, train, infer, refocus, epi, eval, convert.
Every failure exits nonzero with a message on stderr; success exits 0.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__, evaluate, lfio, models, scenes, training
from .lightfield import LightField, central_view, disc_aperture, epi_slice, refocus
from .training import TrainConfig


def _parse_extents(text):
    parts = text.lower().split("x")
    if len(parts) != 4:
        raise ValueError(f"extents must be VxUxYxX, got {text!r}")
    return tuple(int(p) for p in parts)


def cmd_synth_data(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    extents = _parse_extents(args.extents)
    dataset = scenes.generate_dataset(args.n, seed=args.seed, extents=extents, difficulty=args.difficulty)
    manifest_lines = ["# file\tseed\tdifficulty"]
    for i, scene in enumerate(dataset):
        name = f"scene_{i:03d}.lf4"
        lfio.store_lf4(out / name, scene.light_field)
        lfio.store_lf4(out / f"scene_{i:03d}_depth.lf4", scene.ray_depths)
        manifest_lines.append(f"{name}\t{args.seed}\t{args.difficulty}")
    (out / "manifest.txt").write_text("\n".join(manifest_lines) + "\n")
    print(f"wrote {args.n} scenes and manifest.txt to {out}")


def read_manifest(path):
    """(directory, [scene file names]) from a synth-data manifest."""
    path = Path(path)
    names = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        names.append(line.split("\t")[0])
    if not names:
        raise ValueError(f"{path}: manifest lists no scenes")
    return path.parent, names


def _load_training_set(manifest):
    base, names = read_manifest(manifest)
    return [lfio.load_lf4(base / n) for n in names]


def _config_from_args(args):
    overrides = {
        k: getattr(args, k)
        for k in ("steps", "seed", "lr", "batch_size", "lambda_c", "lambda_tv",
                  "crop", "downsample_to", "precision", "arch_scale")
        if getattr(args, k, None) is not None
    }
    if args.config:
        return training.parse_config(args.config, {k: str(v) for k, v in overrides.items()})
    return training.config_from_strings({k: str(v) for k, v in overrides.items()})


def cmd_train(args):
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lfs = _load_training_set(args.data)
    v_n, u_n = lfs[0].angular_extent

    log_lines = []
    if args.model == "main":
        params_d, params_o, state = training.new_run(v_n, u_n, cfg)
        step_fn = lambda batch: training.train_step(batch, params_d, params_o, state, cfg)
    else:
        params_d, state = training.new_baseline_run(args.model, v_n, u_n, cfg)
        params_o = None
        step_fn = lambda batch: training.train_baseline_step(batch, params_d, state, cfg)

    for step in range(cfg.steps):
        losses = step_fn(training.sample_batch(lfs, state.rng, cfg))
        if step % max(1, cfg.steps // 20) == 0 or step == cfg.steps - 1:
            line = f"{step}\t" + "\t".join(f"{k}={v:.5f}" for k, v in sorted(losses.items()))
            log_lines.append(line)
            print(line)
    ckpt = out / "checkpoint.lfts"
    training.checkpoint_save(ckpt, params_d, params_o, state, cfg)
    (out / "train_log.tsv").write_text("\n".join(log_lines) + "\n")
    print(f"saved {ckpt}")


def _load_input_view(args):
    if args.image:
        img = np.asarray(Image.open(args.image).convert("RGB"))
        return lfio.to_unit_range(img)
    lf = lfio.load_lf4(args.lf)
    return np.array(central_view(lf))


def cmd_infer(args):
    params_d, params_o, state, cfg = training.checkpoint_load(args.checkpoint)
    if params_o is None:
        raise ValueError("infer needs a main-model checkpoint (depth + occlusion networks)")
    view = _load_input_view(args)
    if args.precision == "double":
        view = view.astype(np.float64)
    depths, rendered, predicted = evaluate.main_model_outputs(view, params_d, params_o)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clamped = np.clip(predicted, -1.0, 1.0).astype(np.float32)
    lfio.store_lf4(out / "lightfield.lf4", LightField(clamped))
    lfio.store_lf4(out / "depths.lf4", depths.astype(np.float32))
    lf = LightField(clamped)
    lfio.export_view_png(out / "corner_view.png", lf.samples[0, 0])
    y_n, x_n = lf.spatial_extent
    vc, uc = lf.center_index
    lfio.export_view_png(out / "epi_u.png", epi_slice(lf, "u", y_n // 2, vc))
    lfio.export_view_png(out / "epi_v.png", epi_slice(lf, "v", x_n // 2, uc))
    lfio.export_depth_png(out / "depth_central.png", depths[vc, uc])
    print(f"wrote light field, depths, and previews to {out}")


def cmd_refocus(args):
    lf = lfio.load_lf4(args.lf)
    v_n, u_n = lf.angular_extent
    mask = disc_aperture(v_n, u_n, args.aperture) if args.aperture is not None else None
    img = refocus(lf, args.disparity, mask)
    lfio.export_view_png(args.out, img)
    print(f"wrote {args.out}")


def cmd_epi(args):
    lf = lfio.load_lf4(args.lf)
    vc, uc = lf.center_index
    if args.row is not None:
        sl = epi_slice(lf, "u", args.row, vc if args.angular is None else args.angular)
    elif args.col is not None:
        sl = epi_slice(lf, "v", args.col, uc if args.angular is None else args.angular)
    else:
        raise ValueError("epi needs --row (u-axis slice) or --col (v-axis slice)")
    lfio.export_view_png(args.out, sl)
    print(f"wrote {args.out}")


def cmd_eval(args):
    base, names = read_manifest(args.data)
    examples = []
    for name in names:
        truth = lfio.load_lf4(base / name)
        depth_path = base / name.replace(".lf4", "_depth.lf4")
        gt = lfio.load_depth_lf4(depth_path) if depth_path.exists() else None
        examples.append({"truth": np.array(truth.samples), "gt_depths": gt})

    params_d, params_o, _state, cfg = training.checkpoint_load(args.checkpoint)
    if params_o is None:
        raise ValueError("eval needs a main-model checkpoint for the predicted/lambertian rows")
    checkpoint_paths = {"main": args.checkpoint}
    flow_params = direct_params = None
    if args.flow_checkpoint:
        flow_params, fo, _, fcfg = training.checkpoint_load(args.flow_checkpoint)
        if fo is not None or flow_params.kind != "flow":
            raise ValueError(f"{args.flow_checkpoint} is not a flow-baseline checkpoint")
        checkpoint_paths["flow"] = args.flow_checkpoint
    if args.direct_checkpoint:
        direct_params, do, _, dcfg = training.checkpoint_load(args.direct_checkpoint)
        if do is not None or direct_params.kind != "direct":
            raise ValueError(f"{args.direct_checkpoint} is not a direct-regression checkpoint")
        checkpoint_paths["direct"] = args.direct_checkpoint

    methods = evaluate.method_forwards(params_d, params_o, flow_params, direct_params)
    rows = evaluate.evaluate_methods(examples, methods)
    from dataclasses import asdict

    manifest = evaluate.build_manifest(asdict(cfg), checkpoint_paths, args.data, __version__)
    report = evaluate.EvalReport(rows, manifest)
    out = Path(args.out)
    evaluate.write_report(out, report)
    print((out / "report.tsv").read_text())


def cmd_convert(args):
    src, dst = Path(args.src), Path(args.dst)
    if src.is_dir():
        lf = lfio.import_png_grid(src)
        lfio.store_lf4(dst, lf)
        print(f"imported {lf.samples.shape} PNG grid -> {dst}")
    else:
        lf = lfio.load_lf4(src)
        lfio.export_png_grid(dst, lf)
        print(f"exported {lf.samples.shape} -> PNG grid at {dst}")


def build_parser():
    p = argparse.ArgumentParser(prog="lfsynth", description="4D light-field synthesis toolkit")
    p.add_argument("--version", action="version", version=f"lfsynth {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sd = sub.add_parser("synth-data", help="generate synthetic light fields with ground truth")
    sd.add_argument("--out", required=True)
    sd.add_argument("--n", type=int, default=10)
    sd.add_argument("--seed", type=int, default=0)
    sd.add_argument("--extents", default="8x8x64x64", help="VxUxYxX")
    sd.add_argument("--difficulty", choices=("easy", "occlusions", "textureless"), default="occlusions")
    sd.set_defaults(fn=cmd_synth_data)

    tr = sub.add_parser("train", help="train networks on a synth-data manifest")
    tr.add_argument("--data", required=True, help="manifest.txt from synth-data")
    tr.add_argument("--out", required=True)
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--model", choices=("main", "flow", "direct"), default="main")
    tr.add_argument("--steps", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--lambda-c", dest="lambda_c", type=float)
    tr.add_argument("--lambda-tv", dest="lambda_tv", type=float)
    tr.add_argument("--crop", type=int)
    tr.add_argument("--downsample-to", dest="downsample_to", type=int)
    tr.add_argument("--precision", choices=("single", "double"))
    tr.add_argument("--arch-scale", dest="arch_scale", type=float)
    tr.set_defaults(fn=cmd_train)

    inf = sub.add_parser("infer", help="synthesize a light field from an image or LF4 reference view")
    src = inf.add_mutually_exclusive_group(required=True)
    src.add_argument("--image", help="input PNG/JPEG")
    src.add_argument("--lf", help="input LF4 (its reference view is used)")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--out", required=True)
    inf.add_argument("--precision", choices=("single", "double"), default="single")
    inf.set_defaults(fn=cmd_infer)

    rf = sub.add_parser("refocus", help="shift-and-add refocus / synthetic aperture")
    rf.add_argument("--lf", required=True)
    rf.add_argument("--disparity", type=float, required=True)
    rf.add_argument("--aperture", type=float, help="angular radius of the view disc (default: all views)")
    rf.add_argument("--out", required=True)
    rf.set_defaults(fn=cmd_refocus)

    ep = sub.add_parser("epi", help="extract an epipolar-plane slice as PNG")
    ep.add_argument("--lf", required=True)
    ep.add_argument("--row", type=int, help="fixed y for a u-axis slice")
    ep.add_argument("--col", type=int, help="fixed x for a v-axis slice")
    ep.add_argument("--angular", type=int, default=None, help="fixed angular index (default: reference)")
    ep.add_argument("--out", required=True)
    ep.set_defaults(fn=cmd_epi)

    ev = sub.add_parser("eval", help="compare methods on a dataset, write a report")
    ev.add_argument("--data", required=True, help="manifest.txt from synth-data")
    ev.add_argument("--checkpoint", required=True, help="main-model checkpoint")
    ev.add_argument("--flow-checkpoint")
    ev.add_argument("--direct-checkpoint")
    ev.add_argument("--out", required=True)
    ev.set_defaults(fn=cmd_eval)

    cv = sub.add_parser("convert", help="PNG view grid <-> LF4 container")
    cv.add_argument("src", help="directory of view PNGs, or an LF4 file")
    cv.add_argument("dst", help="target LF4 file, or directory for view PNGs")
    cv.set_defaults(fn=cmd_convert)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except Exception as e:  # argparse handles its own exits; everything else lands here
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
