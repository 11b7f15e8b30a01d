"""Single-image inversion, bundle persistence and novel-view rendering."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import checkpoint
from .camera import CameraPose, Intrinsics, orbit_pose, parse_pose_label, write_depth
from .config import Config
from .data import encode_png
from .errors import DependencyError, InvalidArgument
from .training import afa_planes, input_view_masks


@dataclass
class InversionBundle:
    wplus: torch.Tensor  # (1, L, d_w)
    fstar: torch.Tensor  # (1, C_f, R_f, R_f)
    mask: np.ndarray  # (3, R, R) uint8
    planes: torch.Tensor  # (1, 3, C, R, R) mixed tri-plane
    label: np.ndarray  # (25,)
    use_afa: bool = True

    @property
    def pose(self) -> CameraPose:
        return parse_pose_label(self.label)[0]

    @property
    def intrinsics(self) -> Intrinsics:
        return parse_pose_label(self.label)[1]

    def to_entries(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict(
            [
                ("bundle/wplus", self.wplus.detach().numpy()),
                ("bundle/fstar", self.fstar.detach().numpy()),
                ("bundle/mask", np.asarray(self.mask, dtype=np.uint8)),
                ("bundle/planes", self.planes.detach().numpy()),
                ("bundle/label", np.asarray(self.label, dtype=np.float64)),
                ("bundle/meta", checkpoint.json_entry({"use_afa": self.use_afa})),
            ]
        )

    @classmethod
    def from_entries(cls, entries) -> "InversionBundle":
        if "bundle/wplus" not in entries:
            raise DependencyError("checkpoint holds no inversion bundle")
        meta = checkpoint.entry_json(entries["bundle/meta"])
        return cls(
            torch.as_tensor(entries["bundle/wplus"]),
            torch.as_tensor(entries["bundle/fstar"]),
            entries["bundle/mask"],
            torch.as_tensor(entries["bundle/planes"]),
            entries["bundle/label"],
            meta["use_afa"],
        )

    def save(self, path) -> None:
        checkpoint.save(path, self.to_entries())

    @classmethod
    def load(cls, path) -> "InversionBundle":
        return cls.from_entries(checkpoint.load(path))


@torch.no_grad()
def invert(image, label, generator, encoder, afa=None, cfg: Config | None = None) -> InversionBundle:
    """Encode one image, optionally refine features with AFA, and mix by input-view visibility.

    Without ``afa`` the bundle is the w+-only result: F* = F and the planes
    are the w+ tri-plane.
    """
    if generator is None or encoder is None:
        raise DependencyError("inversion needs generator and encoder checkpoints")
    cfg = cfg or Config()
    image = torch.as_tensor(image, dtype=torch.float32)
    if image.dim() != 3:
        raise InvalidArgument(f"expected one (H, W, 3) image, got {tuple(image.shape)}")
    pose, intr = parse_pose_label(label)
    images = image[None]
    wp = encoder(images)
    tau, dilation = cfg.depth_prior.tau, cfg.stage2.mask_dilation
    if afa is not None:
        planes, refined, _, masks = afa_planes(generator, afa, images, wp, [pose], intr, tau, dilation)
        fstar = refined.fstar
    else:
        fs, planes = generator.synthesis(wp)
        base = generator.render(planes, [pose], intr, wp=wp)
        masks = input_view_masks(base, [pose], intr, tau, generator.plane_res, dilation)
        fstar = fs.tapped
    return InversionBundle(wp, fstar, masks[0], planes, np.asarray(label, dtype=np.float64), afa is not None)


@torch.no_grad()
def render_bundle(bundle: InversionBundle, generator, pose: CameraPose | None = None, res=None):
    pose = bundle.pose if pose is None else pose
    return generator.render(bundle.planes, pose, bundle.intrinsics, wp=bundle.wplus, res=res)


def render_views(bundle: InversionBundle, generator, yaws, out_dir, cfg: Config | None = None) -> list:
    """Write ``yaw_<deg>.png`` and ``yaw_<deg>.tpd`` per yaw (e.g. ``yaw_-30``); returns the image paths."""
    cfg = cfg or Config()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for yaw in yaws:
        pose = orbit_pose(float(yaw), cfg.data.pitch, cfg.camera.distance)
        out = render_bundle(bundle, generator, pose)
        stem = f"yaw_{float(yaw):+g}"
        png = out_dir / f"{stem}.png"
        png.write_bytes(encode_png(out.image[0].numpy()))
        write_depth(out_dir / f"{stem}.tpd", out.depth[0])
        paths.append(png)
    return paths
