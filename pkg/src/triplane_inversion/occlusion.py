"""Input-view visibility and the occlusion-aware mix of two tri-planes."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage

from .camera import CameraPose, Intrinsics, backproject
from .errors import InvalidArgument
from .rendering import PLANE_AXES

MASK_MAGIC = b"TPM1"


def visible_points(depth, pose: CameraPose, intr: Intrinsics, opacity, tau: float = 0.5) -> np.ndarray:
    """World points of the input-view surface: pixels with opacity >= tau, back-projected."""
    if opacity is None:
        raise InvalidArgument("an opacity map is required to select visible pixels")
    return backproject(depth, pose, intr, opacity=opacity, threshold=tau)


def cell_index(coords, resolution: int) -> np.ndarray:
    """Nearest grid node for coordinates in [-1, 1] (clamped) on an R-node axis."""
    c = np.clip(np.asarray(coords, dtype=np.float64), -1.0, 1.0)
    return np.rint((c + 1.0) * 0.5 * (resolution - 1)).astype(np.int64)


def build_tri_mask(points, resolution: int, dilation: int = 1) -> np.ndarray:
    """Rasterize points onto the xy, xz and yz planes; returns a (3, R, R) uint8 mask.

    Plane rows index the second axis of the pair and columns the first, the
    layout ``sample_triplane`` reads.
    """
    if resolution < 2:
        raise InvalidArgument(f"tri-mask resolution must be at least 2, got {resolution}")
    if dilation < 0:
        raise InvalidArgument("dilation must be nonnegative")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros((3, resolution, resolution), dtype=bool)
    if len(points):
        idx = cell_index(points, resolution)
        for p, (a, b) in enumerate(PLANE_AXES):
            mask[p, idx[:, b], idx[:, a]] = True
    if dilation:
        square = np.ones((2 * dilation + 1, 2 * dilation + 1), dtype=bool)
        mask = np.stack([ndimage.binary_dilation(m, structure=square) for m in mask])
    return mask.astype(np.uint8)


def mix_triplane(tp_fstar: torch.Tensor, tp_wplus: torch.Tensor, mask) -> torch.Tensor:
    """Masked cells from ``tp_fstar``, all others from ``tp_wplus``.

    Tri-planes are (..., 3, C, R, R); the mask is (3, R, R) or batched
    (B, 3, R, R) and shared across channels.
    """
    if tp_fstar.shape != tp_wplus.shape:
        raise InvalidArgument(
            f"tri-plane shapes differ: {tuple(tp_fstar.shape)} vs {tuple(tp_wplus.shape)}"
        )
    mask = torch.as_tensor(np.asarray(mask) if not isinstance(mask, torch.Tensor) else mask)
    res = tp_fstar.shape[-2:]
    if mask.shape[-3:] != (3, *res):
        raise InvalidArgument(f"mask shape {tuple(mask.shape)} does not match tri-plane {tuple(res)}")
    keep = mask.to(torch.bool).unsqueeze(-3)
    return torch.where(keep, tp_fstar, tp_wplus)


def encode_mask(mask) -> bytes:
    mask = np.asarray(mask)
    if mask.ndim != 3 or mask.shape[0] != 3 or mask.shape[1] != mask.shape[2]:
        raise InvalidArgument(f"tri-mask must be (3, R, R), got {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise InvalidArgument("tri-mask entries must be 0 or 1")
    return MASK_MAGIC + struct.pack("<I", mask.shape[1]) + mask.astype(np.uint8).tobytes()


def decode_mask(blob: bytes) -> np.ndarray:
    if blob[:4] != MASK_MAGIC:
        raise InvalidArgument("not a TPM1 tri-mask file")
    (res,) = struct.unpack_from("<I", blob, 4)
    payload = blob[8:]
    if len(payload) != 3 * res * res:
        raise InvalidArgument("truncated tri-mask payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(3, res, res).copy()


def write_mask(path, mask) -> None:
    Path(path).write_bytes(encode_mask(mask))


def read_mask(path) -> np.ndarray:
    return decode_mask(Path(path).read_bytes())
