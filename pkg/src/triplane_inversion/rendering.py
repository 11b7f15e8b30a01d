"""Tri-plane sampling and differentiable volume rendering."""
from __future__ import annotations

from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .camera import CameraPose, Intrinsics, generate_rays
from .errors import InvalidArgument

# Coordinate pairs (grid x, grid y) read by the xy, xz and yz planes.
PLANE_AXES = ((0, 1), (0, 2), (1, 2))


class RenderOutput(NamedTuple):
    image: torch.Tensor  # (B, H, W, 3)
    depth: torch.Tensor  # (B, H, W), camera z-depth
    opacity: torch.Tensor  # (B, H, W)


class Composite(NamedTuple):
    rgb: torch.Tensor
    depth: torch.Tensor
    opacity: torch.Tensor
    weights: torch.Tensor


def sample_triplane(planes: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
    """Bilinearly sample each plane and sum the three features.

    Args:
        planes: (3, C, R, R) or (B, 3, C, R, R) feature grids. Grid nodes sit
            exactly on [-1, 1] (``align_corners=True``); a plane's columns
            follow its first axis and its rows its second.
        points: (N, 3) or (B, N, 3) world points. Coordinates outside the cube
            are clamped to the border.

    Returns:
        (N, C) or (B, N, C) features.
    """
    unbatched = planes.dim() == 4
    if unbatched:
        planes, points = planes[None], points[None]
    if planes.dim() != 5 or planes.shape[1] != 3:
        raise InvalidArgument(f"expected tri-plane of shape (B, 3, C, R, R), got {tuple(planes.shape)}")
    batch, _, channels, res, _ = planes.shape
    grids = torch.stack([points[..., list(axes)] for axes in PLANE_AXES], dim=1)
    grids = grids.reshape(batch * 3, 1, -1, 2).to(planes.dtype)
    feats = F.grid_sample(
        planes.reshape(batch * 3, channels, res, res),
        grids,
        mode="bilinear",
        padding_mode="border",
        align_corners=True,
    )
    feats = feats.reshape(batch, 3, channels, -1).sum(dim=1).transpose(1, 2)
    return feats[0] if unbatched else feats


def composite(sigma, rgb, t, delta, eps: float = 1e-10) -> Composite:
    """Alpha-composite samples along rays.

    ``sigma``, ``t`` and ``delta`` are (..., S); ``rgb`` is (..., S, 3).
    ``t`` is the depth reported for each sample and ``delta`` the segment
    length entering the opacity.
    """
    alpha = 1.0 - torch.exp(-sigma * delta)
    trans = torch.cumprod(1.0 - alpha, dim=-1)
    trans = torch.cat([torch.ones_like(trans[..., :1]), trans[..., :-1]], dim=-1)
    weights = alpha * trans
    acc = weights.sum(dim=-1)
    color = (weights[..., None] * rgb).sum(dim=-2)
    depth = (weights * t).sum(dim=-1) / acc.clamp_min(eps)
    return Composite(color, depth, acc, weights)


def sample_depths(
    n_rays: int,
    t_near: float,
    t_far: float,
    n_samples: int,
    jitter: bool = False,
    dtype=torch.float32,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Stratified depths: bin centers, or uniform draws per bin when jittering."""
    if not t_near < t_far:
        raise InvalidArgument(f"t_near must be below t_far, got {t_near} >= {t_far}")
    if n_samples < 2:
        raise InvalidArgument("need at least two samples per ray")
    edges = torch.linspace(t_near, t_far, n_samples + 1, dtype=dtype)
    width = edges[1] - edges[0]
    if jitter:
        offs = torch.rand(n_rays, n_samples, dtype=dtype, generator=generator)
    else:
        offs = torch.full((n_rays, n_samples), 0.5, dtype=dtype)
    return edges[:-1] + offs * width


def render_field(
    field: Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]],
    origins: torch.Tensor,
    directions: torch.Tensor,
    forward: torch.Tensor,
    t_near: float,
    t_far: float,
    n_samples: int,
    jitter: bool = False,
    background: torch.Tensor | None = None,
) -> Composite:
    """March a batch of rays through a radiance field.

    Args:
        field: maps (B, M, 3) points to ``(rgb (B, M, 3), sigma (B, M))``.
        origins, directions: (B, N, 3), unit directions.
        forward: (B, 3) camera forward axes; samples are spaced uniformly in
            camera z-depth between ``t_near`` and ``t_far``.
        background: optional (B, 3) color behind the volume. The background
            acts as a surface at ``t_far``: it receives the residual
            transmittance in both color and depth, so depth stays within
            [t_near, t_far]. Opacity still counts the volume only.
    """
    batch, n_rays, _ = origins.shape
    cos = (directions * forward[:, None, :]).sum(-1)  # (B, N)
    z = sample_depths(batch * n_rays, t_near, t_far, n_samples, jitter, origins.dtype)
    z = z.reshape(batch, n_rays, n_samples)
    ray_t = z / cos[..., None]
    pts = origins[:, :, None, :] + directions[:, :, None, :] * ray_t[..., None]
    rgb, sigma = field(pts.reshape(batch, -1, 3))
    rgb = rgb.reshape(batch, n_rays, n_samples, 3)
    sigma = sigma.reshape(batch, n_rays, n_samples)
    # Euclidean segment lengths; the last segment spans to the far bound.
    z_ends = torch.cat([z[..., 1:], torch.full_like(z[..., :1], t_far)], dim=-1)
    delta = (z_ends - z) / cos[..., None]
    out = composite(sigma, rgb, z, delta)
    if background is not None:
        rest = 1.0 - out.opacity
        color = out.rgb + rest[..., None] * background[:, None, :]
        depth = (out.weights * z).sum(dim=-1) + rest * t_far
        out = out._replace(rgb=color, depth=depth)
    return out


def camera_rays(poses: Sequence[CameraPose], intr: Intrinsics, res: tuple[int, int], dtype):
    """Stacked (origins, directions, forward) for a list of poses."""
    rays = [generate_rays(p, intr, res, dtype=dtype) for p in poses]
    origins = torch.stack([r.origins.reshape(-1, 3) for r in rays])
    directions = torch.stack([r.directions.reshape(-1, 3) for r in rays])
    forward = torch.as_tensor(np.stack([p.forward for p in poses]), dtype=dtype)
    return origins, directions, forward


def render(
    planes: torch.Tensor,
    decoder,
    poses: Sequence[CameraPose] | CameraPose,
    intr: Intrinsics,
    res: tuple[int, int],
    t_near: float,
    t_far: float,
    n_samples: int,
    jitter: bool = False,
    background: torch.Tensor | None = None,
) -> RenderOutput:
    """Render full images of a batch of tri-planes, one pose per tri-plane.

    ``decoder`` maps (B, M, C) summed plane features to ``(rgb, sigma)``.
    """
    if planes.dim() == 4:
        planes = planes[None]
    if isinstance(poses, CameraPose):
        poses = [poses] * planes.shape[0]
    if len(poses) != planes.shape[0]:
        raise InvalidArgument("need one pose per tri-plane")
    height, width = res
    origins, directions, forward = camera_rays(poses, intr, res, planes.dtype)

    def field(pts):
        return decoder(sample_triplane(planes, pts))

    out = render_field(
        field, origins, directions, forward, t_near, t_far, n_samples, jitter, background
    )
    batch = planes.shape[0]
    return RenderOutput(
        out.rgb.reshape(batch, height, width, 3),
        out.depth.reshape(batch, height, width),
        out.opacity.reshape(batch, height, width),
    )
