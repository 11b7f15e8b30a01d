"""Pinhole cameras, ray generation and depth back-projection.

Conventions: world space is the cube [-1, 1]^3 the tri-plane spans. Camera
frames follow OpenCV (x right, y down, z forward) and poses are
camera-to-world. Intrinsics are expressed in normalized pixel units, so a
pixel (i, j) of an H x W image sits at u = (j + 0.5) / W, v = (i + 0.5) / H.
Depth maps hold camera-space z-depth, which is what D(u, v) K^-1 [u, v, 1]
back-projects.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch

from .errors import InvalidArgument

__all__ = [
    "Intrinsics",
    "CameraPose",
    "RayBundle",
    "look_at",
    "canonical_pose",
    "orbit_pose",
    "pose_label",
    "parse_pose_label",
    "generate_rays",
    "backproject",
    "project",
    "write_depth",
    "read_depth",
    "encode_depth",
    "decode_depth",
]

DEPTH_MAGIC = b"TPD1"


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float = 0.5
    cy: float = 0.5

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgument(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise InvalidArgument(f"principal point must lie in [0, 1], got {self.cx}, {self.cy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise InvalidArgument("rotation must be 3x3 and translation a 3-vector")
        if not np.allclose(rot.T @ rot, np.eye(3), atol=1e-6, rtol=0):
            raise InvalidArgument("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InvalidArgument("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2]

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )


class RayBundle(NamedTuple):
    origins: torch.Tensor
    directions: torch.Tensor


def look_at(eye, target=(0.0, 0.0, 0.0), up=(0.0, 1.0, 0.0)) -> CameraPose:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-12:
        raise InvalidArgument("up vector is parallel to the viewing direction")
    right /= norm
    down = np.cross(forward, right)
    return CameraPose(np.stack([right, down, forward], axis=1), eye)


def canonical_pose(distance: float) -> CameraPose:
    """Front-facing camera on the -z axis looking at the origin."""
    if not distance > 0:
        raise InvalidArgument(f"camera distance must be positive, got {distance}")
    rotation = np.array([[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    return CameraPose(rotation, np.array([0.0, 0.0, -float(distance)]))


def orbit_pose(yaw_deg: float, pitch_deg: float = 0.0, distance: float = 2.7) -> CameraPose:
    """Camera orbiting the origin; yaw 0 and pitch 0 give the canonical pose.

    Positive yaw swings the camera towards +x, positive pitch towards +y.
    """
    if yaw_deg == 0 and pitch_deg == 0:
        return canonical_pose(distance)
    yaw, pitch = np.deg2rad(yaw_deg), np.deg2rad(pitch_deg)
    eye = distance * np.array(
        [np.sin(yaw) * np.cos(pitch), np.sin(pitch), -np.cos(yaw) * np.cos(pitch)]
    )
    return look_at(eye)


def pose_label(pose: CameraPose, intr: Intrinsics) -> np.ndarray:
    """Flattened 4x4 camera-to-world followed by the flattened 3x3 intrinsics."""
    return np.concatenate([pose.matrix().ravel(), intr.matrix.ravel()])


def parse_pose_label(label) -> tuple[CameraPose, Intrinsics]:
    label = np.asarray(label, dtype=np.float64).ravel()
    if label.shape != (25,):
        raise InvalidArgument(f"camera label must have 25 entries, got {label.size}")
    m = label[:16].reshape(4, 4)
    k = label[16:].reshape(3, 3)
    pose = CameraPose(m[:3, :3].copy(), m[:3, 3].copy())
    return pose, Intrinsics(fx=k[0, 0], fy=k[1, 1], cx=k[0, 2], cy=k[1, 2])


def _camera_directions(intr: Intrinsics, height: int, width: int) -> np.ndarray:
    """Un-normalized camera-space directions K^-1 [u, v, 1] at pixel centers."""
    u = (np.arange(width) + 0.5) / width
    v = (np.arange(height) + 0.5) / height
    uu, vv = np.meshgrid(u, v, indexing="xy")
    return np.stack(
        [(uu - intr.cx) / intr.fx, (vv - intr.cy) / intr.fy, np.ones_like(uu)], axis=-1
    )


def generate_rays(
    pose: CameraPose, intr: Intrinsics, res: tuple[int, int], dtype=torch.float32
) -> RayBundle:
    height, width = res
    if height < 1 or width < 1:
        raise InvalidArgument(f"resolution must be positive, got {res}")
    if not (np.isfinite(intr.fx) and np.isfinite(intr.fy)):
        raise InvalidArgument("degenerate intrinsics")
    dirs = _camera_directions(intr, height, width) @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    return RayBundle(
        torch.as_tensor(np.ascontiguousarray(origins), dtype=dtype),
        torch.as_tensor(dirs, dtype=dtype),
    )


def backproject(
    depth,
    pose: CameraPose,
    intr: Intrinsics,
    opacity=None,
    threshold: float = 0.5,
    res: tuple[int, int] | None = None,
) -> np.ndarray:
    """World points x = R (D(u, v) K^-1 [u, v, 1]) + t for every retained pixel.

    Pixels with zero depth are skipped, and so are pixels whose opacity is
    below ``threshold`` when an opacity map is given.
    """
    depth = _as_numpy(depth)
    if depth.ndim != 2:
        raise InvalidArgument(f"depth map must be H x W, got shape {depth.shape}")
    if res is not None and tuple(res) != depth.shape:
        raise InvalidArgument(f"depth shape {depth.shape} does not match grid {tuple(res)}")
    if not np.all(np.isfinite(depth)) or np.any(depth < 0):
        raise InvalidArgument("depth must be finite and nonnegative")
    keep = depth > 0
    if opacity is not None:
        opacity = _as_numpy(opacity)
        if opacity.shape != depth.shape:
            raise InvalidArgument(
                f"opacity shape {opacity.shape} does not match depth shape {depth.shape}"
            )
        keep &= opacity >= threshold
    cam = _camera_directions(intr, *depth.shape)[keep] * depth[keep][:, None]
    return cam @ pose.rotation.T + pose.translation


def project(points, pose: CameraPose, intr: Intrinsics, res: tuple[int, int]):
    """Inverse of ``backproject``: returns (row, col, depth) in pixel units.

    Row/col are continuous, so a pixel center maps to (i + 0.5, j + 0.5).
    """
    height, width = res
    cam = (np.asarray(points, dtype=np.float64) - pose.translation) @ pose.rotation
    z = cam[:, 2]
    u = cam[:, 0] / z * intr.fx + intr.cx
    v = cam[:, 1] / z * intr.fy + intr.cy
    return v * height, u * width, z


def _as_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def encode_depth(depth) -> bytes:
    values = np.ascontiguousarray(_as_numpy(depth), dtype="<f4")
    if values.ndim != 2:
        raise InvalidArgument("depth map must be two-dimensional")
    height, width = values.shape
    return DEPTH_MAGIC + struct.pack("<II", height, width) + values.tobytes()


def decode_depth(blob: bytes) -> np.ndarray:
    if blob[:4] != DEPTH_MAGIC:
        raise InvalidArgument("not a TPD1 depth file")
    height, width = struct.unpack_from("<II", blob, 4)
    payload = blob[12:]
    if len(payload) != 4 * height * width:
        raise InvalidArgument("truncated depth payload")
    return np.frombuffer(payload, dtype="<f4").reshape(height, width).astype(np.float32)


def write_depth(path, depth) -> None:
    Path(path).write_bytes(encode_depth(depth))


def read_depth(path) -> np.ndarray:
    return decode_depth(Path(path).read_bytes())
