"""
Occlusion-aware tri-plane mix
=============================

Refined features F* are only trustworthy where the input view actually saw
the surface. The input-view depth is back-projected to world points, the
points are rasterized onto the three planes (the tri-mask), and the mixed
tri-plane takes F* cells inside the mask and w+ cells elsewhere.

Here the depth comes from an exact sphere scene, so the mask can be checked
against geometry: from the front camera only the near hemisphere is seen,
which covers the whole xy disc but only half of the xz and yz discs.
"""
import numpy as np
import torch

from _tiny import out_dir
from triplane_inversion.camera import Intrinsics, orbit_pose
from triplane_inversion.data import AnalyticScene, encode_png
from triplane_inversion.occlusion import build_tri_mask, mix_triplane, visible_points, read_mask, write_mask

R = 32
scene = AnalyticScene(spheres=[(np.zeros(3), 0.6, (0.8, 0.4, 0.3))])
intr = Intrinsics(2.0, 2.0)

# --- Visibility from two cameras ---
for yaw in (0.0, 60.0):
    pose = orbit_pose(yaw)
    image, depth, opacity = scene.render(pose, intr, (96, 96))
    pts = visible_points(depth, pose, intr, opacity)
    mask = build_tri_mask(pts, R, dilation=0)
    print(f"yaw {yaw:+.0f}: {len(pts)} surface points, cells per plane (xy, xz, yz) = {mask.reshape(3, -1).sum(1)}")

# The front camera looks along +z, so in the xz plane only z < 0 cells appear.
pose = orbit_pose(0.0)
_, depth, opacity = scene.render(pose, intr, (96, 96))
mask = build_tri_mask(visible_points(depth, pose, intr, opacity), R, dilation=1)
rows = np.nonzero(mask[1].any(axis=1))[0]
print("xz plane z-rows touched:", rows.min(), "to", rows.max(), "of", R - 1)

# --- Mix identities ---
torch.manual_seed(0)
tp_f = torch.randn(1, 3, 4, R, R)
tp_w = torch.randn(1, 3, 4, R, R)
mixed = mix_triplane(tp_f, tp_w, mask)
ones, zeros = np.ones_like(mask), np.zeros_like(mask)
print("mask=1 gives F*:", torch.equal(mix_triplane(tp_f, tp_w, ones), tp_f))
print("mask=0 gives w+:", torch.equal(mix_triplane(tp_f, tp_w, zeros), tp_w))
print("idempotent:", torch.equal(mix_triplane(mixed, tp_w, mask), mixed))
keep = torch.as_tensor(mask, dtype=torch.bool)[None, :, None].expand_as(tp_w)
print("unseen cells bit-equal to w+:", torch.equal(mixed[~keep], tp_w[~keep]))

# --- Masks round-trip through the TPM1 container ---
out = out_dir("05_occlusion_mix")
write_mask(out / "trimask.tpm", mask)
print("round trip exact:", np.array_equal(read_mask(out / "trimask.tpm"), mask))
planes = np.concatenate(list(mask.astype(np.float64)), axis=1)
(out / "trimask.png").write_bytes(encode_png(np.repeat(planes[..., None], 3, -1)))
print("wrote", out)
