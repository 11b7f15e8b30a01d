"""Paired evaluation of w+-only and mixed inversions."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .camera import orbit_pose
from .canonical import sample_canonical_w
from .config import Config
from .data import MultiViewDataset, intrinsics_from_config
from .metrics import eval_metrics, geo_err, surface_depth
from .training import afa_planes


@dataclass
class EvalSet:
    """Generator-sampled targets: input-view images plus renders at each eval yaw."""

    wp: torch.Tensor
    input_yaw: float
    images: torch.Tensor  # (N, H, W, 3) input views
    yaws: tuple
    view_images: torch.Tensor  # (N, Y, H, W, 3)
    view_depths: torch.Tensor  # (N, Y, H, W)


@torch.no_grad()
def generator_eval_set(generator, cfg: Config, n: int, seed: int, yaws=(-60.0, 60.0),
                       input_yaw: float = 0.0, batch: int = 16) -> EvalSet:
    intr = intrinsics_from_config(cfg.camera)
    tau = cfg.depth_prior.tau
    w = sample_canonical_w(generator, n, seed, cfg)
    wp = w[:, None].expand(-1, generator.num_ws, -1).contiguous()
    imgs, vimgs, vdepths = [], [], []
    for start in range(0, n, batch):
        chunk = wp[start : start + batch]
        _, planes = generator.synthesis(chunk)
        pose = orbit_pose(input_yaw, cfg.data.pitch, cfg.camera.distance)
        imgs.append(generator.render(planes, pose, intr, wp=chunk).image)
        outs = [generator.render(planes, orbit_pose(y, cfg.data.pitch, cfg.camera.distance), intr, wp=chunk)
                for y in yaws]
        vimgs.append(torch.stack([o.image for o in outs], 1))
        vdepths.append(torch.stack([torch.as_tensor(surface_depth(o.depth, o.opacity, tau)) for o in outs], 1))
    return EvalSet(wp, input_yaw, torch.cat(imgs), tuple(yaws), torch.cat(vimgs), torch.cat(vdepths))


@torch.no_grad()
def evaluate_inversions(generator, encoder, afa, evalset: EvalSet, cfg: Config, batch: int = 16) -> dict:
    """Per-image input-view MSE and novel-view geo_err for the w+-only and mixed paths.

    Returns arrays keyed ``mse_wplus``, ``mse_mix``, ``geo_wplus`` and
    ``geo_mix``; geo arrays are (N, Y). Mixed entries are absent without AFA.
    """
    intr = intrinsics_from_config(cfg.camera)
    pose = orbit_pose(evalset.input_yaw, cfg.data.pitch, cfg.camera.distance)
    tau, dilation = cfg.depth_prior.tau, cfg.stage2.mask_dilation
    out = {"mse_wplus": [], "geo_wplus": []}
    if afa is not None:
        out.update(mse_mix=[], geo_mix=[])
    n = evalset.images.shape[0]
    for start in range(0, n, batch):
        images = evalset.images[start : start + batch]
        poses = [pose] * images.shape[0]
        wp = encoder(images)
        _, tp_w = generator.synthesis(wp)
        paths = {"wplus": tp_w}
        if afa is not None:
            paths["mix"] = afa_planes(generator, afa, images, wp, poses, intr, tau, dilation)[0]
        for name, planes in paths.items():
            rec = generator.render(planes, poses, intr, wp=wp)
            out[f"mse_{name}"].append((rec.image - images).square().mean(dim=(1, 2, 3)))
            geo = []
            for k, yaw in enumerate(evalset.yaws):
                view = generator.render(planes, orbit_pose(yaw, cfg.data.pitch, cfg.camera.distance), intr, wp=wp)
                gt = evalset.view_depths[start : start + batch, k]
                pred = surface_depth(view.depth, view.opacity, tau)
                geo.append([geo_err(p, g) for p, g in zip(pred, gt)])
            out[f"geo_{name}"].append(torch.as_tensor(np.array(geo).T))
    return {k: torch.cat(v).numpy() for k, v in out.items()}


@torch.no_grad()
def evaluate_dataset(dataset: MultiViewDataset, generator, encoder, afa, cfg: Config, input_view: int | None = None,
                     max_scenes: int | None = None) -> list:
    """Invert one view per scene and score every view; one row per (scene, yaw)."""
    intr = dataset.intrinsics
    yaws = dataset.factors[0]["yaws"]
    input_view = yaws.index(0.0) if input_view is None and 0.0 in yaws else (input_view or 0)
    tau, dilation = cfg.depth_prior.tau, cfg.stage2.mask_dilation
    rows = []
    n = dataset.n_scenes if max_scenes is None else min(max_scenes, dataset.n_scenes)
    for s in range(n):
        image = dataset.images[s, input_view][None]
        pose = dataset.poses[s][input_view]
        wp = encoder(image)
        if afa is not None:
            planes = afa_planes(generator, afa, image, wp, [pose], intr, tau, dilation)[0]
        else:
            planes = generator.synthesis(wp)[1]
        for k, yaw in enumerate(yaws):
            view = generator.render(planes, dataset.poses[s][k], intr, wp=wp)
            pred_depth = surface_depth(view.depth[0], view.opacity[0], tau)
            report = eval_metrics(view.image[0], dataset.images[s, k], pred_depth, dataset.depths[s, k])
            rows.append({"scene": s, "yaw": yaw, **report.as_dict()})
    return rows
