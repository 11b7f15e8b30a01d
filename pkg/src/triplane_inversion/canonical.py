"""Canonical-pose latent sampling and the background depth prior."""
from __future__ import annotations

import torch

from .camera import canonical_pose
from .config import Config
from .data import intrinsics_from_config
from .errors import InvalidArgument, NoBackgroundError
from .generator_training import canonical_label
from .losses import DepthPrior


def sample_canonical_w(generator, n: int, seed: int, cfg: Config | None = None) -> torch.Tensor:
    """``n`` codes map(z_i, canonical label) with z_i ~ N(0, I) drawn from ``seed``."""
    if n < 1:
        raise InvalidArgument(f"need at least one sample, got {n}")
    cfg = cfg or Config()
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(n, generator.cfg.z_dim, generator=gen)
    return generator.map_latent(z, canonical_label(cfg, n))


@torch.no_grad()
def estimate_depth_prior(generator, n: int, tau: float, seed: int, cfg: Config | None = None,
                         batch: int = 16) -> DepthPrior:
    """Mean front-view depth over pixels with opacity < tau, accumulated in float64."""
    if n < 1:
        raise InvalidArgument(f"need at least one sample, got {n}")
    cfg = cfg or Config()
    pose = canonical_pose(cfg.camera.distance)
    intr = intrinsics_from_config(cfg.camera)
    ws = sample_canonical_w(generator, n, seed, cfg)
    total = torch.zeros((), dtype=torch.float64)
    count = 0
    for start in range(0, n, batch):
        w = ws[start : start + batch]
        wp = w[:, None].expand(-1, generator.num_ws, -1)
        out = generator(wp, pose, intr)
        mask = out.opacity < tau
        total += out.depth.double()[mask].sum()
        count += int(mask.sum())
    if count == 0:
        raise NoBackgroundError(f"no pixel has opacity below {tau}; the background mask is empty")
    return DepthPrior(float(total / count), count, tau)
