"""Fitting the toy tri-plane generator to a synthetic multi-view dataset.

The generator is fit as a variational auto-decoder: every scene owns a
Gaussian posterior over z, codes are mapped with the canonical camera label,
and reconstruction of random pixel subsets from all views trains the shared
networks. The KL term keeps the posteriors close to N(0, I), so that fresh
Gaussian samples decode to plausible scenes afterwards.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .camera import canonical_pose, pose_label
from .config import Config
from .data import MultiViewDataset, intrinsics_from_config
from .generator import TriPlaneGenerator
from .rendering import camera_rays, render_field, sample_triplane

log = logging.getLogger(__name__)


def canonical_label(cfg: Config, batch: int = 1, dtype=torch.float32) -> torch.Tensor:
    label = pose_label(canonical_pose(cfg.camera.distance), intrinsics_from_config(cfg.camera))
    return torch.as_tensor(label, dtype=dtype).expand(batch, -1)


def build_generator(cfg: Config) -> TriPlaneGenerator:
    return TriPlaneGenerator(cfg.generator, cfg.render)


@torch.no_grad()
def compute_w_avg(generator: TriPlaneGenerator, cfg: Config, n: int, seed: int) -> torch.Tensor:
    """Mean of ``n`` canonical-pose mapped codes, accumulated in float64."""
    gen = torch.Generator().manual_seed(seed)
    total = torch.zeros(generator.cfg.w_dim, dtype=torch.float64)
    for start in range(0, n, 1000):
        count = min(1000, n - start)
        z = torch.randn(count, generator.cfg.z_dim, generator=gen)
        total += generator.map_latent(z, canonical_label(cfg, count)).double().sum(0)
    return (total / n).float()


@dataclass
class GeneratorTrainResult:
    generator: TriPlaneGenerator
    psnr: float
    converged: bool
    history: list = field(default_factory=list)


def _psnr(mse: float) -> float:
    return 99.0 if mse <= 0 else min(99.0, -10.0 * math.log10(mse))


@torch.no_grad()
def evaluate_fit(generator, latents, dataset: MultiViewDataset, cfg: Config, views=None, max_scenes=16):
    """Mean PSNR of the posterior-mean reconstructions over the given views."""
    intr = dataset.intrinsics
    res = dataset.resolution
    views = range(dataset.n_views) if views is None else views
    scenes = range(min(max_scenes, dataset.n_scenes))
    mses = []
    for s in scenes:
        w = generator.map_latent(latents[s : s + 1], canonical_label(cfg))
        wp = w[:, None].expand(-1, generator.num_ws, -1)
        _, planes = generator.synthesis(wp)
        for v in views:
            out = generator.render(planes, dataset.poses[s][v], intr, wp=wp, res=res)
            mses.append(float((out.image[0] - dataset.images[s, v]).square().mean()))
    return _psnr(float(np.mean(mses)))


def train_toy_generator(
    dataset: MultiViewDataset,
    cfg: Config,
    out_dir=None,
    iters: int | None = None,
    holdout_views: tuple = (),
) -> GeneratorTrainResult:
    """Fit the generator and record w_avg; writes ``generator.tpck`` to ``out_dir``."""
    tc = cfg.gen_train
    iters = tc.iters if iters is None else iters
    torch.manual_seed(cfg.seed)
    generator = build_generator(cfg)
    gen_rng = torch.Generator().manual_seed(cfg.seed + 1)
    mu = torch.nn.Parameter(0.1 * torch.randn(dataset.n_scenes, cfg.generator.z_dim, generator=gen_rng))
    logvar = torch.nn.Parameter(torch.full((dataset.n_scenes, cfg.generator.z_dim), -4.0))
    opt = torch.optim.Adam(generator.parameters(), lr=tc.lr)
    opt_lat = torch.optim.Adam([mu, logvar], lr=tc.latent_lr)
    train_views = [v for v in range(dataset.n_views) if v not in holdout_views]
    rc = cfg.render
    intr = dataset.intrinsics
    res = (dataset.resolution, dataset.resolution)
    n_pix = res[0] * res[1]
    n_rays = min(tc.rays, n_pix)
    rays = {}
    history = []
    for it in range(iters):
        scenes = torch.randint(dataset.n_scenes, (tc.batch,), generator=gen_rng)
        views = [train_views[i] for i in torch.randint(len(train_views), (tc.batch,), generator=gen_rng)]
        pix = torch.stack([torch.randperm(n_pix, generator=gen_rng)[:n_rays] for _ in range(tc.batch)])
        origins, dirs, fwd = [], [], []
        for s, v in zip(scenes.tolist(), views):
            if v not in rays:
                rays[v] = camera_rays([dataset.poses[0][v]], intr, res, torch.float32)
        for b, (s, v) in enumerate(zip(scenes.tolist(), views)):
            o, d, f = rays[v]
            origins.append(o[0, pix[b]])
            dirs.append(d[0, pix[b]])
            fwd.append(f[0])
        origins, dirs, fwd = torch.stack(origins), torch.stack(dirs), torch.stack(fwd)

        std = torch.exp(0.5 * logvar[scenes])
        z = mu[scenes] + std * torch.randn(tc.batch, cfg.generator.z_dim, generator=gen_rng)
        w = generator.map_latent(z, canonical_label(cfg, tc.batch))
        wp = w[:, None].expand(-1, generator.num_ws, -1)
        _, planes = generator.synthesis(wp)

        def radiance(pts):
            return generator.decoder(sample_triplane(planes, pts))

        out = render_field(
            radiance, origins, dirs, fwd, rc.t_near, rc.t_far, rc.samples, jitter=True,
            background=generator.background_color(wp),
        )
        gt_img = torch.stack([dataset.images[s, v].reshape(-1, 3)[pix[b]] for b, (s, v) in enumerate(zip(scenes.tolist(), views))])
        gt_depth = torch.stack([dataset.depths[s, v].reshape(-1)[pix[b]] for b, (s, v) in enumerate(zip(scenes.tolist(), views))])
        gt_opac = (gt_depth > 0).float()
        rgb_loss = (out.rgb - gt_img).square().mean()
        opac_loss = (out.opacity - gt_opac).square().mean()
        depth_loss = ((out.depth - gt_depth).square() * gt_opac).sum() / gt_opac.sum().clamp_min(1)
        kl = 0.5 * (mu[scenes].square() + logvar[scenes].exp() - 1.0 - logvar[scenes]).sum(-1).mean()
        loss = rgb_loss + tc.opacity_weight * opac_loss + tc.depth_weight * depth_loss + tc.kl_weight * kl
        opt.zero_grad(set_to_none=True)
        opt_lat.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        opt_lat.step()
        if it % tc.log_every == 0 or it == iters - 1:
            row = dict(iter=it, rgb=rgb_loss.item(), opacity=opac_loss.item(), depth=depth_loss.item(), kl=kl.item())
            history.append(row)
            log.info("gen iter %d %s", it, row)

    generator.eval()
    psnr = evaluate_fit(generator, mu.detach(), dataset, cfg)
    generator.w_avg.copy_(compute_w_avg(generator, cfg, tc.w_avg_samples, cfg.seed))
    result = GeneratorTrainResult(generator, psnr, psnr >= tc.psnr_target, history)
    if not result.converged:
        log.warning("generator reached %.2f dB, below the %.2f dB target", psnr, tc.psnr_target)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        save_generator(Path(out_dir) / "generator.tpck", generator, cfg)
        _write_log(Path(out_dir) / "generator_log.csv", history)
    return result


def save_generator(path, generator: TriPlaneGenerator, cfg: Config) -> None:
    entries = checkpoint.module_entries("generator", generator)
    entries["meta/config"] = checkpoint.text_entry(cfg.to_json())
    checkpoint.save(path, entries)


def load_generator(path, cfg: Config | None = None) -> TriPlaneGenerator:
    entries = checkpoint.load(path)
    if cfg is None:
        cfg = Config.from_dict(checkpoint.entry_json(entries["meta/config"]))
    generator = build_generator(cfg)
    checkpoint.load_module(generator, entries, "generator")
    return generator.eval()


def _write_log(path, rows) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
