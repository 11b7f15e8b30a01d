"""
The tri-plane generator and its tapped features
===============================================

A style-modulated convolution stack turns a w+ code (one row per layer)
into three axis-aligned feature planes. Inversion hooks into one
intermediate layer: its output F can be replaced by refined features F*
and the remaining layers resumed from there. Resuming from the untouched F
reproduces the tri-plane exactly.
"""
import torch

from _tiny import out_dir, tiny_config
from triplane_inversion.camera import orbit_pose
from triplane_inversion.canonical import sample_canonical_w
from triplane_inversion.data import encode_png, intrinsics_from_config
from triplane_inversion.generator import TriPlaneGenerator

out = out_dir("02_generator")
cfg = tiny_config()
torch.manual_seed(0)
gen = TriPlaneGenerator(cfg.generator, cfg.render).eval()
print("w+ rows:", gen.num_ws, "plane resolution:", gen.plane_res, "tap layer:", gen.tap_layer)

# --- Canonical codes ---
# Every code is mapped with the canonical (front) camera label.
w = sample_canonical_w(gen, 2, seed=0, cfg=cfg)
wp = w[:, None].expand(-1, gen.num_ws, -1)

with torch.no_grad():
    feats, planes = gen.synthesis(wp)
    print("tapped F:", tuple(feats.tapped.shape), "tri-plane:", tuple(planes.shape))

    # --- Resume from F ---
    resumed = gen.resume(feats.tapped, wp)
    print("resume(F) == synthesis planes:", torch.equal(resumed, planes))

    # A perturbed F changes the planes downstream of the tap only.
    bumped = gen.resume(feats.tapped + 0.1, wp)
    print("max plane change from a +0.1 feature bump:", (bumped - planes).abs().max().item())

    intr = intrinsics_from_config(cfg.camera)
    for yaw in (-30.0, 0.0, 30.0):
        view = gen.render(planes[:1], orbit_pose(yaw), intr, wp=wp[:1])
        (out / f"untrained_yaw{yaw:+.0f}.png").write_bytes(encode_png(view.image[0].numpy()))
print("wrote renders to", out)
