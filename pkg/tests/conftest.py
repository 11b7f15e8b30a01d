import numpy as np
import pytest
import torch

from triplane_inversion.config import Config, GeneratorConfig
from triplane_inversion.generator import TriPlaneGenerator

torch.set_num_threads(1)


def small_config(resolution=32, samples=16) -> Config:
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


@pytest.fixture
def cfg():
    return small_config()


@pytest.fixture
def small_generator(cfg):
    torch.manual_seed(0)
    return TriPlaneGenerator(cfg.generator, cfg.render).eval()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
