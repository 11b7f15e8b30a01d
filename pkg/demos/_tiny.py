"""Shared tiny configuration so every demo runs in seconds on a CPU."""
import sys
import tempfile
from pathlib import Path

import torch

from triplane_inversion.config import Config, GeneratorConfig

torch.set_num_threads(1)


def tiny_config(resolution=32, samples=16) -> Config:
    cfg = Config()
    cfg.render.resolution = resolution
    cfg.render.samples = samples
    cfg.generator = GeneratorConfig(
        z_dim=32, w_dim=32, mapping_layers=2, resolutions=[4, 8, 16, 32],
        channels=[32, 32, 16, 16], plane_channels=8, decoder_hidden=32,
    )
    cfg.encoder.channels = [16, 16, 32, 32]
    cfg.afa.attn_dim = 16
    cfg.afa.cnn_channels = 8
    return cfg


def out_dir(name) -> Path:
    """First CLI argument, else a fresh temporary directory."""
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="demo_"))
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path
