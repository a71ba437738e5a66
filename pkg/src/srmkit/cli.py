"""Command line entry point: ``srmkit <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import io, plotting
from .components import composite, render_components
from .diffuse import estimate_diffuse
from .metrics import evaluate, srm_error
from .optimizer import NumericalError, OptimizerConfig, observed_texel_mask, optimize, prepare_frames
from .synth import SyntheticSceneSpec, render_synthetic, write_dataset

log = logging.getLogger("srmkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_csv(path: Path, rows: list[dict]) -> Path:
    with open(path, "w", newline="") as fh:
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return path


def _load(args, albedo=None) -> io.Dataset:
    return io.load_dataset(args.scene, frames_dir=args.frames, stride=args.stride, albedo=albedo)


def _read_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomli.load(fh)


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _read_toml(args.spec) if args.spec else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = SyntheticSceneSpec.from_dict(cfg)
    ds = render_synthetic(spec)
    out = Path(args.out)
    write_dataset(ds, out, frame_format=args.format)
    plotting.plot_srms([s.data for s in ds.gt_srms], out / "gt_srms.png")
    print(f"wrote {len(ds.frames)} frames to {out}")
    return EXIT_OK


def cmd_estimate_diffuse(args) -> int:
    data = _load(args)
    frames = data.train_frames
    if not frames:
        raise UsageError("no training frames")
    albedo, obs = estimate_diffuse(data.mesh, frames, iterations=args.iterations, epsilon=args.epsilon)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_ply(out / "albedo.ply", data.mesh.replace(albedo=albedo))
    io.write_confidence(out / "confidence.bin", obs.counts)
    rows = [{"vertex": v, "r": a[0], "g": a[1], "b": a[2], "observations": int(c)}
            for v, (a, c) in enumerate(zip(albedo, obs.counts))]
    _write_csv(out / "albedo.csv", rows)
    plotting.plot_observation_counts(obs.counts, out / "observations.png")
    print(f"estimated albedo for {data.mesh.n_vertices} vertices "
          f"({int(obs.low_confidence.sum())} low-confidence) -> {out}")
    return EXIT_OK


def _optimizer_config(args) -> OptimizerConfig:
    cfg = _read_toml(args.config) if args.config else {}
    overrides = {"m": args.m, "epochs": args.epochs, "lr_srm": args.lr_srm, "lr_logits": args.lr_logits,
                 "lambda_s": args.lambda_s, "lambda_w": args.lambda_w, "batch_size": args.batch_size,
                 "seed": args.seed, "srm_width": args.srm_width, "srm_height": args.srm_height}
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    if "srm_width" in cfg and "srm_height" not in cfg:
        cfg["srm_height"] = cfg["srm_width"] // 2
    return OptimizerConfig(**cfg)


def cmd_estimate_srm(args) -> int:
    config = _optimizer_config(args)
    data = _load(args, albedo=args.albedo)
    frames = data.train_frames
    if len(frames) < 2:
        raise UsageError(f"need at least 2 training frames, found {len(frames)}")
    if not np.any(data.mesh.albedo):
        log.warning("mesh carries no diffuse albedo; pass --albedo from estimate-diffuse")
    mesh = data.mesh.replace(logits=np.zeros((data.mesh.n_vertices, config.m)))
    fd = prepare_frames(mesh, frames, config.srm_width, config.srm_height)
    result = optimize(mesh, frames, config, frame_data=fd)
    mask = observed_texel_mask(fd, config.srm_width, config.srm_height)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, srm in enumerate(result.state.srms):
        io.write_pfm(out / f"srm_{i}.pfm", srm)
    io.write_logits(out / "logits.bin", result.logits)
    io.write_pfm(out / "mask.pfm", mask.astype(np.float32))
    io.write_ply(out / "albedo.ply", mesh)
    _write_csv(out / "loss.csv", [{k: h[k] for k in ("epoch", "data", "sparsity", "smoothness")}
                                  for h in result.history])
    with open(out / "run.toml", "wb") as fh:
        tomli_w.dump({"m": config.m, "srm_width": config.srm_width, "srm_height": config.srm_height,
                      "albedo": "albedo.ply", "seed": config.seed}, fh)
    plotting.plot_loss_curve(result.history, out / "loss.png")
    truth = sorted(Path(args.scene).parent.glob("gt_srm_*.pfm"))
    gt = [io.read_pfm(p) for p in truth] if truth else None
    if gt is not None and all(g.shape == result.state.srms[0].shape for g in gt) and len(gt) == config.m:
        errs = [srm_error(r, g, mask) for r, g in zip(result.state.srms, gt)]
        log.info("SRM error against ground truth on observed texels: %s", ", ".join(f"{e:.4f}" for e in errs))
    plotting.plot_srms(list(result.state.srms), out / "srms.png", truth=gt, mask=mask)
    last = result.history[-1]
    print(f"epoch {last['epoch']}: data {last['data']:.6f} sparsity {last['sparsity']:.3g} "
          f"smoothness {last['smoothness']:.3g}; observed texels {mask.mean():.1%} -> {out}")
    return EXIT_OK


def _load_run(run: Path, mesh, albedo=None):
    run = Path(run)
    srm_paths = sorted(run.glob("srm_*.pfm"), key=lambda p: int(p.stem.split("_")[1]))
    if not srm_paths:
        raise io.MissingFileError(f"no srm_*.pfm files in {run}")
    srms = [io.read_panorama(p) for p in srm_paths]
    logits = io.read_logits(run / "logits.bin", mesh.n_vertices)
    if logits.shape[1] != len(srms):
        raise io.DatasetError(f"{run}: logits have M={logits.shape[1]} but {len(srms)} SRMs exist")
    albedo_path = Path(albedo) if albedo else run / "albedo.ply"
    if albedo_path.exists():
        src = io.read_mesh(albedo_path)
        if src.n_vertices != mesh.n_vertices:
            raise io.DatasetError(f"{albedo_path}: vertex count does not match the mesh")
        mesh = mesh.replace(albedo=src.albedo)
    return mesh.replace(logits=logits), srms


def _split_frames(data: io.Dataset, split: str):
    frames = data.split(split)
    if not frames:
        raise UsageError(f"dataset has no {split} frames; nothing to evaluate")
    return frames


def cmd_render(args) -> int:
    data = _load(args)
    mesh, srms = _load_run(args.run, data.mesh, args.albedo)
    frames = _split_frames(data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        img = composite(render_components(mesh, srms, f.camera), args.mode, args.r0)
        io.write_pfm(out / f"{f.frame_id}.pfm", img)
        io.write_png(out / f"{f.frame_id}.png", img)
    print(f"rendered {len(frames)} {args.split} frames -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data = _load(args)
    mesh, srms = _load_run(args.run, data.mesh, args.albedo)
    frames = _split_frames(data, "test")
    rendered, masks = [], []
    for f in frames:
        comp = render_components(mesh, srms, f.camera)
        rendered.append(composite(comp, args.mode, args.r0))
        masks.append(comp.coverage)
    train_cams = [f.camera for f in data.train_frames]
    report = evaluate(rendered, [f.image for f in frames], masks, [f.camera for f in frames],
                      train_cams if train_cams else None, mesh.centroid, [f.frame_id for f in frames])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", report.rows())
    if train_cams:
        plotting.plot_error_vs_angle([r.angle_deg for r in report.frames], [r.l1 for r in report.frames],
                                     out / "error_vs_angle.png")
    print(f"{len(frames)} test frames: L1 {report.mean_l1:.5f}  L2 {report.mean_l2:.5f}  "
          f"PSNR {report.mean_psnr:.2f} dB -> {out}")
    return EXIT_OK


def cmd_components(args) -> int:
    data = _load(args)
    mesh, srms = _load_run(args.run, data.mesh, args.albedo)
    frames = _split_frames(data, args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f in frames:
        images = render_components(mesh, srms, f.camera).images()
        for name, img in images.items():
            io.write_pfm(out / f"{f.frame_id}_{name}.pfm", img.astype(np.float32))
        plotting.plot_components(images, out / f"{f.frame_id}_components.png")
    print(f"dumped components for {len(frames)} frames -> {out}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommand copies must not overwrite values given before the subcommand
        def d(value):
            return argparse.SUPPRESS if suppress else value
        g = _Parser(add_help=False)
        g.add_argument("--threads", type=int, default=d(None), help="worker threads for ray tracing")
        g.add_argument("--seed", type=int, default=d(None))
        g.add_argument("-v", "--verbose", action="count", default=d(0))
        g.add_argument("--stride", type=int, default=d(1), help="keep every n-th trajectory frame")
        return g

    common = global_flags(True)
    parser = _Parser(prog="srmkit", description="Specular reflectance map estimation toolkit.",
                     parents=[global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def dataset_args(p):
        p.add_argument("--scene", required=True, help="scene.toml of the dataset")
        p.add_argument("--frames", default=None, help="override the frames directory")

    p = sub.add_parser("synth", parents=[common], help="render a synthetic dataset")
    p.add_argument("--spec", default=None, help="TOML scene spec (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("png", "pfm"), default="png")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate-diffuse", parents=[common], help="robust per-vertex diffuse albedo")
    dataset_args(p)
    p.add_argument("--iterations", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_diffuse)

    p = sub.add_parser("estimate-srm", parents=[common], help="optimize basis SRMs and material logits")
    dataset_args(p)
    p.add_argument("--albedo", default=None, help="PLY with diffuse albedo in vertex colors")
    p.add_argument("--config", default=None, help="TOML with optimizer settings")
    p.add_argument("--m", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr-srm", type=float, default=None)
    p.add_argument("--lr-logits", type=float, default=None)
    p.add_argument("--lambda-s", type=float, default=None)
    p.add_argument("--lambda-w", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--srm-width", type=int, default=None)
    p.add_argument("--srm-height", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate_srm)

    for name, func, helptext in (("render", cmd_render, "render predicted views from a run"),
                                 ("eval", cmd_eval, "metrics of a run on the test split"),
                                 ("components", cmd_components, "dump per-frame component images")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        dataset_args(p)
        p.add_argument("--run", required=True, help="output directory of estimate-srm")
        p.add_argument("--albedo", default=None)
        p.add_argument("--mode", choices=("plain", "fresnel"), default="plain")
        p.add_argument("--r0", type=float, default=0.04)
        if name != "eval":
            p.add_argument("--split", choices=("train", "test", "all"), default="test")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    if args.stride < 1:
        parser.error("--stride must be positive")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"srmkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"srmkit: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.DatasetError, FileNotFoundError, tomli.TOMLDecodeError, ValueError) as exc:
        print(f"srmkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
