"""Command-line driver for the inversion pipeline.

Every subcommand reads one JSON config (``--config``), honours ``--seed``
and writes its artifacts under ``--out``. Exit codes: 0 on success, 2 on
invalid arguments, 3 when a required checkpoint or dataset is missing.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import Config
from .errors import DependencyError, InvalidArgument, NoBackgroundError

log = logging.getLogger("triplane_inversion")

EXIT_OK, EXIT_INVALID, EXIT_DEPENDENCY = 0, 2, 3


def _load_config(args) -> Config:
    if args.config and not Path(args.config).is_file():
        raise InvalidArgument(f"config file {args.config} not found")
    cfg = Config.load(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _generator(path):
    from .generator_training import load_generator

    return load_generator(path)


def _dataset(path):
    from .data import MultiViewDataset

    if not Path(path).is_dir():
        raise DependencyError(f"dataset directory {path} not found")
    return MultiViewDataset(path)


def _prior(path):
    from .training import load_prior

    if path is None:
        raise DependencyError("background regularization needs --prior (or disable it)")
    return load_prior(path)


def cmd_make_data(args, cfg):
    from .data import SceneSpec, make_dataset

    n = args.scenes if args.scenes is not None else cfg.data.n_scenes
    make_dataset(_out(args), SceneSpec.from_config(cfg.data), n, cfg.seed, cfg.camera, cfg.render.resolution)


def cmd_train_gen(args, cfg):
    from .generator_training import train_toy_generator

    result = train_toy_generator(_dataset(args.data), cfg, _out(args), iters=args.iters)
    print(json.dumps({"psnr": result.psnr, "converged": result.converged}))


def cmd_fit_depth_prior(args, cfg):
    from .canonical import estimate_depth_prior
    from .training import save_prior

    dc = cfg.depth_prior
    prior = estimate_depth_prior(_generator(args.generator), dc.samples, dc.tau, cfg.seed, cfg, dc.batch)
    save_prior(_out(args) / "depth_prior.tpck", prior)
    print(json.dumps({"d_avg": prior.d_avg, "sample_count": prior.sample_count, "tau": prior.tau}))


def cmd_train_encoder(args, cfg):
    from .training import train_stage1

    if args.no_disc:
        cfg.stage1.use_disc = False
    if args.no_bg:
        cfg.stage1.use_bg = False
    prior = _prior(args.prior) if cfg.stage1.use_bg else None
    dataset = _dataset(args.data) if args.data else None
    train_stage1(cfg, _generator(args.generator), prior, dataset, _out(args), iters=args.iters)


def cmd_train_afa(args, cfg):
    from .training import load_encoder, train_stage2

    gen = _generator(args.generator)
    encoder = load_encoder(args.encoder, cfg, gen)
    prior = _prior(args.prior) if cfg.stage2.use_bg else None
    dataset = _dataset(args.data) if args.data else None
    train_stage2(cfg, gen, encoder, prior, dataset, _out(args), iters=args.iters)


def cmd_invert(args, cfg):
    from .data import read_camera, read_png
    from .occlusion import write_mask
    from .pipeline import invert
    from .training import load_afa, load_encoder

    gen = _generator(args.generator)
    encoder = load_encoder(args.encoder, cfg, gen)
    afa = load_afa(args.afa, cfg, gen) if args.afa else None
    for p in (args.image, args.camera):
        if not Path(p).is_file():
            raise DependencyError(f"input file {p} not found")
    bundle = invert(read_png(args.image), read_camera(args.camera), gen, encoder, afa, cfg)
    out = _out(args)
    bundle.save(out / "bundle.tpck")
    write_mask(out / "trimask.tpm", bundle.mask)


def cmd_render(args, cfg):
    from .pipeline import InversionBundle, render_views

    paths = render_views(InversionBundle.load(args.bundle), _generator(args.generator), args.yaws, _out(args), cfg)
    for p in paths:
        print(p)


def cmd_fit_direction(args, cfg):
    from .editing import discover_direction, save_direction

    if args.attribute:
        cfg.edit.attribute = args.attribute
    direction, _ = discover_direction(_generator(args.generator), cfg, cfg.seed)
    save_direction(_out(args) / f"direction_{cfg.edit.attribute}.tpck", direction)
    print(json.dumps({"attribute": direction.attribute, **direction.stats}))


def cmd_edit(args, cfg):
    from .camera import orbit_pose, write_depth
    from .data import encode_png
    from .editing import edited_render, load_direction
    from .pipeline import InversionBundle

    gen = _generator(args.generator)
    bundle = InversionBundle.load(args.bundle)
    direction = load_direction(args.direction)
    out = _out(args)
    with torch.no_grad():
        for yaw in args.yaws:
            pose = orbit_pose(float(yaw), cfg.data.pitch, cfg.camera.distance)
            view = edited_render(gen, bundle.wplus, bundle.fstar, direction, args.strength, pose,
                                 bundle.intrinsics, bundle.mask, rows=cfg.edit.rows)
            stem = f"edit_{args.strength:+g}_yaw_{float(yaw):+g}"
            (out / f"{stem}.png").write_bytes(encode_png(view.image[0].numpy()))
            write_depth(out / f"{stem}.tpd", view.depth[0])


def cmd_eval(args, cfg):
    from .evaluation import evaluate_dataset
    from .metrics import write_metrics_csv
    from .training import load_afa, load_encoder

    gen = _generator(args.generator)
    encoder = load_encoder(args.encoder, cfg, gen)
    afa = load_afa(args.afa, cfg, gen) if args.afa else None
    with torch.no_grad():
        rows = evaluate_dataset(_dataset(args.data), gen, encoder, afa, cfg, max_scenes=args.scenes)
    write_metrics_csv(_out(args) / "metrics.csv", rows)
    means = {k: float(np.mean([r[k] for r in rows])) for k in ("mse", "psnr", "ssim", "geo_err")}
    print(json.dumps(means))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", required=True, help="output directory")

    parser = argparse.ArgumentParser(prog="triplane-inversion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("make-data", cmd_make_data, "render the synthetic multi-view dataset")
    p.add_argument("--scenes", type=int)
    p = add("train-gen", cmd_train_gen, "fit the toy tri-plane generator")
    p.add_argument("--data", required=True)
    p.add_argument("--iters", type=int)
    p = add("fit-depth-prior", cmd_fit_depth_prior, "estimate the background depth prior")
    p.add_argument("--generator", required=True)
    p = add("train-encoder", cmd_train_encoder, "stage 1: train the encoder")
    p.add_argument("--generator", required=True)
    p.add_argument("--prior")
    p.add_argument("--data")
    p.add_argument("--iters", type=int)
    p.add_argument("--no-disc", action="store_true", help="drop the canonical latent discriminator")
    p.add_argument("--no-bg", action="store_true", help="drop the background depth loss")
    p = add("train-afa", cmd_train_afa, "stage 2: train the feature alignment module")
    for flag in ("--generator", "--encoder"):
        p.add_argument(flag, required=True)
    p.add_argument("--prior")
    p.add_argument("--data")
    p.add_argument("--iters", type=int)
    p = add("invert", cmd_invert, "invert one image into a bundle")
    for flag in ("--image", "--camera", "--generator", "--encoder"):
        p.add_argument(flag, required=True)
    p.add_argument("--afa", help="alignment checkpoint; omit for the w+-only path")
    p = add("render", cmd_render, "render a bundle at several yaws")
    p.add_argument("--bundle", required=True)
    p.add_argument("--generator", required=True)
    p.add_argument("--yaws", type=float, nargs="+", default=[-60.0, -30.0, 0.0, 30.0, 60.0])
    p = add("fit-direction", cmd_fit_direction, "fit a latent edit direction")
    p.add_argument("--generator", required=True)
    p.add_argument("--attribute", choices=["radius", "hue"])
    p = add("edit", cmd_edit, "render an edited bundle")
    for flag in ("--bundle", "--generator", "--direction"):
        p.add_argument(flag, required=True)
    p.add_argument("--strength", type=float, required=True)
    p.add_argument("--yaws", type=float, nargs="+", default=[0.0])
    p = add("eval", cmd_eval, "score inversions on a dataset")
    for flag in ("--data", "--generator", "--encoder"):
        p.add_argument(flag, required=True)
    p.add_argument("--afa")
    p.add_argument("--scenes", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    torch.set_num_threads(1)
    try:
        cfg = _load_config(args)
        args.func(args, cfg)
    except (InvalidArgument, NoBackgroundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEPENDENCY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
