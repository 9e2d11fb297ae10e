"""Command-line interface: ``tangentdepth <command> ...``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .checks import run_all
from .losses import metrics
from .patches import ErpImage, build_tables, extract_patches, merge_to_erp
from .pipeline import MAX_ITERS, Predictor, train
from .scenes import SceneSpec, default_scenes

LAYOUT_FILE = "layout.txt"


def _config(path) -> io.RunConfig:
    return io.read_config(path) if path else io.RunConfig()


def _config_help() -> str:
    lines = ["configuration keys (key = value) and defaults:"]
    defaults = io.RunConfig().to_text().splitlines()
    for line, text in zip(defaults, io.RunConfig.HELP.values()):
        lines.append(f"  {line:<40} {text}")
    return "\n".join(lines)


def _load_erp(path) -> ErpImage:
    return io.read_depth(path) if io.is_depth_file(path) else io.read_image(path)


def cmd_project(args) -> int:
    cfg = _config(args.config)
    erp = _load_erp(args.input)
    layout = cfg.layout()
    tables = build_tables(layout, erp.width, erp.height)
    data = erp.data if erp.mask is None else np.where(erp.valid, erp.data, 0.0)
    patches = extract_patches(data, tables)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    depth_input = io.is_depth_file(args.input)
    for i, p in enumerate(patches):
        if depth_input:
            io.write_depth(out / f"patch_{i:02d}.depth", p[0])
        else:
            io.write_image(out / f"patch_{i:02d}.png", p)
    io.write_layout_manifest(out / LAYOUT_FILE, layout, erp.width, erp.height)
    print(f"wrote {len(patches)} patches to {out}", file=sys.stderr)
    return 0


def _read_patch_dir(folder: Path) -> np.ndarray:
    files = sorted(folder.glob("patch_*.depth")) or sorted(folder.glob("patch_*.png"))
    if not files:
        raise FileNotFoundError(f"no patch_*.depth or patch_*.png files in {folder}")
    arrays = []
    for f in files:
        arrays.append(io.read_depth_array(f)[None] if f.suffix == ".depth" else io.image_array(f))
    return np.stack(arrays)


def cmd_merge(args) -> int:
    folder = Path(args.patches)
    manifest = folder / LAYOUT_FILE
    if manifest.exists():
        layout, width, height = io.read_layout_manifest(manifest)
    else:
        cfg = _config(args.config)
        layout = cfg.layout()
        height = cfg.erp_height
        width = 2 * height
    patches = _read_patch_dir(folder)
    if len(patches) != len(layout) or patches.shape[-1] != layout.patch_res:
        raise ValueError(f"found {len(patches)} patches of {patches.shape[-1]}px, layout expects "
                         f"{len(layout)} of {layout.patch_res}px")
    if args.confidence == "uniform":
        conf = np.ones_like(patches[:, :1])
    else:
        conf = _read_patch_dir(Path(args.confidence))[:, :1]
        if conf.shape != patches[:, :1].shape:
            raise ValueError(f"confidence stack {conf.shape} does not match patches {patches.shape}")
    tables = build_tables(layout, width, height)
    patches = np.nan_to_num(patches.astype(np.float64))
    channels = [merge_to_erp(patches[:, c : c + 1], conf, tables) for c in range(patches.shape[1])]
    out = Path(args.out)
    if out.suffix.lower() == ".png":
        io.write_image(out, np.concatenate([m.data for m in channels]))
    elif len(channels) != 1:
        raise ValueError("multi-channel patches can only be merged into a .png output")
    else:
        io.write_depth(out, channels[0])
    return 0


def cmd_infer(args) -> int:
    cfg = _config(args.config)
    rgb = io.read_image(args.input)
    if rgb.data.shape[0] != 3:
        raise ValueError(f"{args.input}: expected an RGB image")
    params = io.read_params(args.params, requires_grad=False)
    model_cfg = cfg.model_config()
    predictor = Predictor(params, model_cfg, cfg.layout())
    io.write_depth(args.out, predictor(rgb, args.iters or cfg.iters))
    return 0


def _scenes(arg: str) -> list[SceneSpec]:
    if arg.isdigit():
        return default_scenes(int(arg))
    scenes = []
    for n, line in enumerate(Path(arg).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].split()
        if not line:
            continue
        try:
            ext = tuple(float(v) for v in line[:3])
            texture = line[3] if len(line) > 3 else "checker"
            seed = int(line[4]) if len(line) > 4 else n
        except (ValueError, IndexError):
            raise ValueError(f"{arg}:{n}: expected 'hx hy hz [texture] [seed]'") from None
        scenes.append(SceneSpec(ext, texture, seed))
    return scenes


def cmd_train(args) -> int:
    cfg = _config(args.config)
    for key in ("steps", "seed", "lr"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    scenes = _scenes(args.scenes if args.scenes is not None else str(cfg.scenes))
    trace_fh = open(args.trace, "w") if args.trace else sys.stdout
    try:
        def emit(report):
            trace_fh.write(report.line() + "\n")
            trace_fh.flush()

        params, _ = train(scenes, cfg.layout(), cfg.model_config(), cfg.train_config(), emit)
    finally:
        if args.trace:
            trace_fh.close()
    io.write_params(args.out, params)
    return 0


def cmd_eval(args) -> int:
    pred = io.read_depth_array(args.pred).astype(np.float64)
    gt = io.read_depth_array(args.gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction is {pred.shape[::-1]}, ground truth is {gt.shape[::-1]}")
    mask = np.isfinite(pred) & np.isfinite(gt)
    if args.mask:
        extra = io.read_depth_array(args.mask) if io.is_depth_file(args.mask) else io.image_array(args.mask)[0]
        mask &= np.isfinite(extra) & (extra > 0)
    for line in metrics(pred, gt, mask).lines():
        print(line)
    return 0


def cmd_selftest(args) -> int:
    results = run_all(report=print)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return 1
    return 0


def _iters(text: str) -> int:
    k = int(text)
    if not 1 <= k <= MAX_ITERS:
        raise argparse.ArgumentTypeError(f"must be in 1..{MAX_ITERS}")
    return k


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tangentdepth",
        description="360-degree depth from tangent patches.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("project", help="split an ERP image (PNG or depth file) into tangent patches")
    p.add_argument("--input", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("merge", help="merge a patch directory back into an ERP image")
    p.add_argument("--patches", required=True)
    p.add_argument("--confidence", default="uniform", help="directory of confidence patches, or 'uniform'")
    p.add_argument("--config", help="layout when the patch directory has no layout manifest")
    p.add_argument("--out", required=True, help="depth file, or .png for image patches")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("infer", help="predict depth for an RGB ERP image")
    p.add_argument("--input", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--iters", type=_iters, help="refinement passes, 1..4 (default: config iters)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="train on synthetic box rooms; loss trace goes to stdout")
    p.add_argument("--scenes", help="number of seeded rooms, or a manifest of 'hx hy hz [texture] [seed]' lines")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--config")
    p.add_argument("--trace", help="write the loss trace here instead of stdout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="print depth metrics as key=value lines")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask", help="depth file or image; nonzero finite pixels are valid")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the invariant and oracle checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"tangentdepth {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
