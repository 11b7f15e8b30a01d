"""
Canonical latent space and the geometry-aware encoder
=====================================================

Fit a toy generator on a few synthetic scenes, estimate the background depth
prior d_avg from canonical samples, then run a short stage-1 encoder
training. The encoder predicts w+ as w_avg plus per-row offsets. A latent
discriminator pulls each row toward canonical codes, and a background term
pulls the front-view background depth toward d_avg.
"""
import logging

from _tiny import out_dir, tiny_config
from triplane_inversion.canonical import estimate_depth_prior
from triplane_inversion.data import MultiViewDataset, SceneSpec, make_dataset
from triplane_inversion.generator_training import train_toy_generator
from triplane_inversion.training import train_stage1

logging.basicConfig(level=logging.WARNING)
out = out_dir("03_encoder")
cfg = tiny_config(resolution=16, samples=12)
cfg.data.yaws = [-30.0, 0.0, 30.0]
cfg.gen_train.rays = 128
cfg.gen_train.w_avg_samples = 256

# --- Data and generator ---
make_dataset(out / "data", SceneSpec(yaws=tuple(cfg.data.yaws)), 8, seed=0, camera=cfg.camera, resolution=16)
data = MultiViewDataset(out / "data")
fit = train_toy_generator(data, cfg, out / "gen", iters=150)
print(f"generator PSNR after 150 iterations: {fit.psnr:.2f} dB")

# --- Background depth prior ---
prior = estimate_depth_prior(fit.generator, 32, cfg.depth_prior.tau, seed=0, cfg=cfg)
print(f"d_avg = {prior.d_avg:.3f} over {prior.sample_count} background pixels")

# --- Stage 1 ---
cfg.stage1.batch = 2
cfg.stage1.log_every = 5
cfg.stage1.stage_starts = [0, 5, 10]
result = train_stage1(cfg, fit.generator, prior, data, out / "stage1", iters=20)
for row in result.history:
    print({k: round(v, 4) for k, v in row.items()})
print("checkpoint:", out / "stage1" / "encoder.tpck")
