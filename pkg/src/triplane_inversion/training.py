"""Encoder (stage 1) and alignment-module (stage 2) training loops."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .afa import AFAModule
from .camera import canonical_pose, orbit_pose
from .canonical import sample_canonical_w
from .config import Config
from .data import MultiViewDataset, intrinsics_from_config
from .encoder import GeometryEncoder, StageSchedule
from .errors import DependencyError, InvalidArgument
from .losses import (
    DepthPrior,
    FeatureCritic,
    LatentDiscriminator,
    background_loss,
    background_mask,
    disc_loss,
    enc_adv_loss,
    encoder_objective,
    feature_regularizer,
    reconstruction_loss,
    wplus_regularizer,
)
from .occlusion import build_tri_mask, mix_triplane, visible_points

log = logging.getLogger(__name__)

STAGE1_COLUMNS = ["iter", "rec_l2", "perc", "id", "adv_e", "adv_d", "bg", "wreg"]
STAGE2_COLUMNS = ["iter", "rec_l2", "perc", "id", "bg", "dfreg"]


def freeze(module: torch.nn.Module) -> torch.nn.Module:
    module.eval()
    module.requires_grad_(False)
    return module


def build_encoder(cfg: Config, generator) -> GeometryEncoder:
    encoder = GeometryEncoder(cfg.encoder, cfg.render.resolution, generator.num_ws, generator.cfg.w_dim)
    encoder.w_avg.copy_(generator.w_avg)
    with torch.no_grad():
        ws = sample_canonical_w(generator, cfg.gen_train.w_avg_samples, cfg.seed, cfg)
    encoder.w_scale.copy_(ws.std(0))
    return encoder


def build_afa(cfg: Config, generator) -> AFAModule:
    tap = generator.tap_layer
    channels = generator.layers[tap].bias.shape[0]
    return AFAModule(cfg.afa, channels, generator.layer_res[tap], cfg.render.resolution)


class BatchSource:
    """Training pairs (image, pose) from a dataset or from the frozen generator.

    ``dataset`` draws random (scene, view) images; ``generator`` maps fresh
    Gaussian codes with the canonical label and renders them at the
    configured yaws.
    """

    def __init__(self, kind: str, cfg: Config, generator, dataset: MultiViewDataset | None, seed: int):
        if kind not in ("dataset", "generator", "mixed"):
            raise InvalidArgument(f"unknown training source {kind!r}")
        if kind != "generator" and dataset is None:
            raise DependencyError("a dataset is required for dataset-sourced training")
        if dataset is not None and dataset.resolution != cfg.render.resolution:
            raise InvalidArgument(
                f"dataset resolution {dataset.resolution} differs from render resolution {cfg.render.resolution}"
            )
        self.kind, self.cfg, self.generator, self.dataset = kind, cfg, generator, dataset
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.step = 0
        self.intr = intrinsics_from_config(cfg.camera)

    @torch.no_grad()
    def _from_generator(self, batch):
        cfg = self.cfg
        self.step += 1
        w = sample_canonical_w(self.generator, batch, self.seed * 1_000_003 + self.step, cfg)
        wp = w[:, None].expand(-1, self.generator.num_ws, -1)
        yaws = self.rng.choice(cfg.data.yaws, size=batch)
        poses = [orbit_pose(float(y), cfg.data.pitch, cfg.camera.distance) for y in yaws]
        return self.generator(wp, poses, self.intr).image, poses

    def _from_dataset(self, batch):
        ds = self.dataset
        scenes = self.rng.integers(ds.n_scenes, size=batch)
        views = self.rng.integers(ds.n_views, size=batch)
        return ds.images[scenes, views], [ds.poses[s][v] for s, v in zip(scenes, views)]

    def __call__(self, batch):
        kind = self.kind
        if kind == "mixed":
            kind = "generator" if self.rng.random() < 0.5 else "dataset"
        return self._from_generator(batch) if kind == "generator" else self._from_dataset(batch)


@dataclass
class Stage1Result:
    encoder: GeometryEncoder
    discriminator: LatentDiscriminator
    history: list = field(default_factory=list)


def _render(generator, planes, poses, wp, intr):
    return generator.render(planes, poses, intr, wp=wp)


def train_stage1(
    cfg: Config,
    generator,
    prior: DepthPrior | None,
    dataset: MultiViewDataset | None = None,
    out_dir=None,
    iters: int | None = None,
) -> Stage1Result:
    """Alternate discriminator and encoder updates; the generator stays frozen."""
    sc, weights = cfg.stage1, cfg.loss
    iters = sc.iters if iters is None else iters
    if generator is None:
        raise DependencyError("stage 1 needs a trained generator")
    if sc.use_bg and prior is None:
        raise DependencyError("background regularization needs a depth prior")
    torch.manual_seed(cfg.seed)
    generator = freeze(generator)
    encoder = build_encoder(cfg, generator)
    disc = LatentDiscriminator(generator.cfg.w_dim)
    critic = FeatureCritic()
    opt_e = torch.optim.Adam(encoder.parameters(), lr=sc.lr_encoder)
    opt_d = torch.optim.Adam(disc.parameters(), lr=sc.lr_disc)
    schedule = StageSchedule(tuple(sc.stage_starts))
    source = BatchSource(sc.source, cfg, generator, dataset, cfg.seed)
    intr = intrinsics_from_config(cfg.camera)
    front = canonical_pose(cfg.camera.distance)
    history = []
    for it in range(iters):
        images, poses = source(sc.batch)
        stage = schedule.active_stage(it)
        wp = encoder(images, max(stage, 0))
        row = dict.fromkeys(STAGE1_COLUMNS, 0.0)
        row["iter"] = it

        if sc.use_disc:
            real = sample_canonical_w(generator, wp.shape[0] * wp.shape[1], cfg.seed * 7919 + it, cfg)
            loss_d = disc_loss(real, wp.detach(), disc, weights.r1_gamma, weights.r1_squared)
            opt_d.zero_grad(set_to_none=True)
            loss_d.backward()
            opt_d.step()
            row["adv_d"] = loss_d.item()

        _, planes = generator.synthesis(wp)
        rec = _render(generator, planes, poses, wp, intr)
        rec_total, parts = reconstruction_loss(rec.image, images, weights, critic)
        terms = {"rec": rec_total, "wreg": wplus_regularizer(wp)}
        if sc.use_disc:
            terms["adv_e"] = enc_adv_loss(wp, disc)
        if sc.use_bg:
            out = _render(generator, planes, front, wp, intr)
            terms["bg"] = background_loss(out.depth, background_mask(out.opacity, prior.tau, weights.bg_margin), prior)
        loss = encoder_objective(terms, weights, sc.use_disc, sc.use_bg)
        opt_e.zero_grad(set_to_none=True)
        loss.backward()
        opt_e.step()

        for key in ("rec_l2", "perc", "id"):
            row[key] = parts[key].item()
        for key in ("adv_e", "bg", "wreg"):
            if key in terms:
                row[key] = terms[key].item()
        if it % sc.log_every == 0 or it == iters - 1:
            history.append(row)
            log.info("stage1 iter %d %s", it, row)
        if out_dir is not None and sc.ckpt_every and (it + 1) % sc.ckpt_every == 0 and it + 1 < iters:
            save_encoder(Path(out_dir) / f"encoder_{it + 1:06d}.tpck", encoder, disc, cfg)

    encoder.eval()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_encoder(Path(out_dir) / "encoder.tpck", encoder, disc, cfg)
        write_log(Path(out_dir) / "stage1_log.csv", history, STAGE1_COLUMNS)
    return Stage1Result(encoder, disc, history)


@dataclass
class Stage2Result:
    afa: AFAModule
    history: list = field(default_factory=list)


def input_view_masks(out, poses, intr, tau: float, resolution: int, dilation: int) -> np.ndarray:
    """Tri-masks (B, 3, R, R) from each input-view w+ render."""
    masks = []
    for depth, opacity, pose in zip(out.depth, out.opacity, poses):
        pts = visible_points(depth, pose, intr, opacity, tau)
        masks.append(build_tri_mask(pts, resolution, dilation))
    return np.stack(masks)


def afa_planes(generator, afa, images, wp, poses, intr, tau, dilation):
    """w+ render, refined features, tri-masks and the mixed tri-plane for a batch."""
    with torch.no_grad():
        fs, tp_w = generator.synthesis(wp)
        base = generator.render(tp_w, poses, intr, wp=wp)
    refined = afa(images, base.image, fs.tapped)
    tp_f = generator.resume(refined.fstar, wp)
    masks = input_view_masks(base, poses, intr, tau, generator.plane_res, dilation)
    return mix_triplane(tp_f, tp_w, masks), refined, base, masks


def train_stage2(
    cfg: Config,
    generator,
    encoder,
    prior: DepthPrior | None,
    dataset: MultiViewDataset | None = None,
    out_dir=None,
    iters: int | None = None,
) -> Stage2Result:
    """Train the alignment module on the mixed render with encoder and generator frozen."""
    sc, weights = cfg.stage2, cfg.loss
    iters = sc.iters if iters is None else iters
    if generator is None or encoder is None:
        raise DependencyError("stage 2 needs a generator and a stage-1 encoder")
    if sc.use_bg and prior is None:
        raise DependencyError("background regularization needs a depth prior")
    torch.manual_seed(cfg.seed)
    generator, encoder = freeze(generator), freeze(encoder)
    afa = build_afa(cfg, generator)
    critic = FeatureCritic()
    opt = torch.optim.Adam(afa.parameters(), lr=sc.lr)
    source = BatchSource(sc.source or cfg.stage1.source, cfg, generator, dataset, cfg.seed + 1)
    intr = intrinsics_from_config(cfg.camera)
    front = canonical_pose(cfg.camera.distance)
    tau = prior.tau if prior is not None else cfg.depth_prior.tau
    history = []
    for it in range(iters):
        images, poses = source(sc.batch)
        with torch.no_grad():
            wp = encoder(images)
        mixed, refined, _, _ = afa_planes(generator, afa, images, wp, poses, intr, tau, sc.mask_dilation)
        out = generator.render(mixed, poses, intr, wp=wp)
        rec_total, parts = reconstruction_loss(out.image, images, weights, critic)
        dfreg = feature_regularizer(refined.delta)
        loss = rec_total + weights.lambda_dfreg * dfreg
        bg = torch.zeros(())
        if sc.use_bg:
            fr = generator.render(mixed, front, intr, wp=wp)
            bg = background_loss(fr.depth, background_mask(fr.opacity, prior.tau, weights.bg_margin), prior)
            loss = loss + weights.lambda_bg * bg
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if it % sc.log_every == 0 or it == iters - 1:
            row = {"iter": it, **{k: parts[k].item() for k in ("rec_l2", "perc", "id")},
                   "bg": bg.item(), "dfreg": dfreg.item()}
            history.append(row)
            log.info("stage2 iter %d %s", it, row)
        if out_dir is not None and sc.ckpt_every and (it + 1) % sc.ckpt_every == 0 and it + 1 < iters:
            save_afa(Path(out_dir) / f"afa_{it + 1:06d}.tpck", afa, cfg)

    afa.eval()
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_afa(Path(out_dir) / "afa.tpck", afa, cfg)
        write_log(Path(out_dir) / "stage2_log.csv", history, STAGE2_COLUMNS)
    return Stage2Result(afa, history)


def save_encoder(path, encoder, disc, cfg: Config) -> None:
    entries = checkpoint.module_entries("encoder", encoder)
    if disc is not None:
        entries.update(checkpoint.module_entries("discriminator", disc))
    entries["meta/config"] = checkpoint.text_entry(cfg.to_json())
    checkpoint.save(path, entries)


def load_encoder(path, cfg: Config, generator) -> GeometryEncoder:
    entries = checkpoint.load(path)
    encoder = build_encoder(cfg, generator)
    checkpoint.load_module(encoder, entries, "encoder")
    return encoder.eval()


def save_afa(path, afa, cfg: Config) -> None:
    entries = checkpoint.module_entries("afa", afa)
    entries["meta/config"] = checkpoint.text_entry(cfg.to_json())
    checkpoint.save(path, entries)


def load_afa(path, cfg: Config, generator) -> AFAModule:
    entries = checkpoint.load(path)
    afa = build_afa(cfg, generator)
    checkpoint.load_module(afa, entries, "afa")
    return afa.eval()


def save_prior(path, prior: DepthPrior) -> None:
    checkpoint.save(path, {"prior/d_avg": np.array([prior.d_avg], dtype=np.float64),
                           "prior/meta": checkpoint.json_entry({"sample_count": prior.sample_count,
                                                                 "tau": prior.tau})})


def load_prior(path) -> DepthPrior:
    entries = checkpoint.load(path)
    if "prior/d_avg" not in entries:
        raise DependencyError(f"{path} holds no depth prior")
    meta = checkpoint.entry_json(entries["prior/meta"])
    return DepthPrior(float(entries["prior/d_avg"][0]), meta["sample_count"], meta["tau"])


def write_log(path, rows, columns) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)
