"""Miniature pose-conditioned tri-plane generator.

A mapping network turns (z, camera label) into w; a style-based synthesis
network grows a constant through demodulated convolutions, one w row per
layer, and reshapes its last output into three axis-aligned feature planes.
A small MLP decodes summed plane features into color and density.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .camera import CameraPose, Intrinsics
from .config import GeneratorConfig, RenderConfig
from .errors import InvalidArgument
from .rendering import RenderOutput, render


class FeatureStack(NamedTuple):
    tapped: torch.Tensor  # (B, C_f, R_f, R_f)
    activations: list


def _normalize_2nd_moment(x, eps=1e-8):
    return x * (x.square().mean(dim=-1, keepdim=True) + eps).rsqrt()


class MappingNetwork(nn.Module):
    def __init__(self, z_dim, c_dim, w_dim, num_layers=4):
        super().__init__()
        self.z_dim, self.c_dim, self.w_dim = z_dim, c_dim, w_dim
        self.embed = nn.Linear(c_dim, w_dim)
        dims = [z_dim + w_dim] + [w_dim] * num_layers
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, z, c):
        if z.shape[-1] != self.z_dim or c.shape[-1] != self.c_dim:
            raise InvalidArgument(
                f"expected z of length {self.z_dim} and label of length {self.c_dim}, "
                f"got {z.shape[-1]} and {c.shape[-1]}"
            )
        x = torch.cat([_normalize_2nd_moment(z), _normalize_2nd_moment(self.embed(c))], dim=-1)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2)
        return x


class ModulatedConv2d(nn.Module):
    """Convolution whose input channels are scaled per sample by a style."""

    def __init__(self, in_channels, out_channels, w_dim, kernel_size=3, demodulate=True, activate=True):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.affine = nn.Linear(w_dim, in_channels)
        nn.init.normal_(self.affine.weight, 0.0, 1.0 / math.sqrt(w_dim))
        nn.init.ones_(self.affine.bias)
        self.demodulate = demodulate
        self.activate = activate
        self.padding = kernel_size // 2
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size * kernel_size)

    def forward(self, x, w):
        batch, in_ch, height, width = x.shape
        styles = self.affine(w)
        weight = self.weight[None] * styles[:, None, :, None, None] * self.scale
        if self.demodulate:
            weight = weight * (weight.square().sum(dim=[2, 3, 4], keepdim=True) + 1e-8).rsqrt()
        out_ch = weight.shape[1]
        x = F.conv2d(
            x.reshape(1, batch * in_ch, height, width),
            weight.reshape(batch * out_ch, in_ch, *weight.shape[3:]),
            padding=self.padding,
            groups=batch,
        )
        x = x.reshape(batch, out_ch, height, width) + self.bias[None, :, None, None]
        if self.activate:
            x = F.leaky_relu(x, 0.2) * math.sqrt(2.0)
        return x


class Decoder(nn.Module):
    """Maps summed tri-plane features to (rgb in [0, 1], density >= 0)."""

    def __init__(self, in_channels, hidden=64, density_scale=10.0):
        super().__init__()
        self.fc1 = nn.Linear(in_channels, hidden)
        self.fc2 = nn.Linear(hidden, 4)
        self.density_scale = density_scale

    def forward(self, feats):
        x = self.fc2(F.softplus(self.fc1(feats)))
        rgb = torch.sigmoid(x[..., 1:])
        sigma = self.density_scale * F.softplus(x[..., 0])
        return rgb, sigma


class TriPlaneGenerator(nn.Module):
    def __init__(self, cfg: GeneratorConfig | None = None, render_cfg: RenderConfig | None = None):
        super().__init__()
        self.cfg = cfg = cfg or GeneratorConfig()
        self.render_cfg = render_cfg or RenderConfig()
        if len(cfg.resolutions) != len(cfg.channels):
            raise InvalidArgument("generator resolutions and channels must have equal length")
        self.mapping = MappingNetwork(cfg.z_dim, 25, cfg.w_dim, cfg.mapping_layers)
        self.const = nn.Parameter(
            torch.randn(cfg.channels[0], cfg.resolutions[0], cfg.resolutions[0])
        )
        layers, self.layer_res = [], []
        in_ch = cfg.channels[0]
        for res, ch in zip(cfg.resolutions, cfg.channels):
            for _ in range(2):
                layers.append(ModulatedConv2d(in_ch, ch, cfg.w_dim))
                self.layer_res.append(res)
                in_ch = ch
        self.layers = nn.ModuleList(layers)
        self.to_planes = ModulatedConv2d(
            in_ch, 3 * cfg.plane_channels, cfg.w_dim, kernel_size=1, demodulate=False, activate=False
        )
        self.background = nn.Linear(cfg.w_dim, 3)
        self.decoder = Decoder(cfg.plane_channels, cfg.decoder_hidden, cfg.density_scale)
        self.register_buffer("w_avg", torch.zeros(cfg.w_dim))
        self.tap_layer = cfg.tap_layer if cfg.tap_layer >= 0 else self._default_tap()
        if not 0 <= self.tap_layer < self.num_ws:
            raise InvalidArgument(f"tap layer {self.tap_layer} outside 0..{self.num_ws - 1}")

    def _default_tap(self):
        half = self.cfg.resolutions[-1] // 2
        idx = [i for i, r in enumerate(self.layer_res) if r == half]
        return idx[-1] if idx else len(self.layers) - 2

    @property
    def num_ws(self) -> int:
        return len(self.layers)

    @property
    def plane_res(self) -> int:
        return self.cfg.resolutions[-1]

    def map_latent(self, z, c):
        return self.mapping(z, c)

    def _check_wp(self, wp):
        if wp.dim() != 3 or wp.shape[1] != self.num_ws or wp.shape[2] != self.cfg.w_dim:
            raise InvalidArgument(
                f"expected w+ of shape (B, {self.num_ws}, {self.cfg.w_dim}), got {tuple(wp.shape)}"
            )

    def _run_layers(self, x, wp, start, stop=None):
        acts = []
        for idx in range(start, self.num_ws if stop is None else stop):
            if idx > 0 and self.layer_res[idx] != self.layer_res[idx - 1]:
                x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = self.layers[idx](x, wp[:, idx])
            acts.append(x)
        return x, acts

    def _planes(self, x, wp):
        planes = self.to_planes(x, wp[:, -1])
        batch, _, res, _ = planes.shape
        return planes.reshape(batch, 3, self.cfg.plane_channels, res, res)

    def synthesis(self, wp) -> tuple[FeatureStack, torch.Tensor]:
        """Run every layer; return the tapped feature map and the tri-plane."""
        self._check_wp(wp)
        x = self.const[None].expand(wp.shape[0], -1, -1, -1)
        x, head = self._run_layers(x, wp, 0, self.tap_layer + 1)
        tapped = x
        x, tail = self._run_layers(x, wp, self.tap_layer + 1)
        return FeatureStack(tapped, head + tail), self._planes(x, wp)

    def resume(self, fstar, wp) -> torch.Tensor:
        """Continue synthesis from a (possibly modified) tapped feature map."""
        self._check_wp(wp)
        expected = (self.layers[self.tap_layer].bias.shape[0], self.layer_res[self.tap_layer])
        if fstar.dim() != 4 or fstar.shape[1] != expected[0] or fstar.shape[2:] != (expected[1],) * 2:
            raise InvalidArgument(
                f"feature map must be (B, {expected[0]}, {expected[1]}, {expected[1]}), "
                f"got {tuple(fstar.shape)}"
            )
        x, _ = self._run_layers(fstar, wp, self.tap_layer + 1)
        return self._planes(x, wp)

    def synthesize_w(self, w):
        """Single-w synthesis: every layer receives the same code."""
        return self.synthesis(w[:, None, :].expand(-1, self.num_ws, -1))

    def background_color(self, wp):
        return torch.sigmoid(self.background(wp[:, -1]))

    def render(
        self,
        planes,
        poses: list[CameraPose] | CameraPose,
        intr: Intrinsics,
        wp=None,
        res: int | None = None,
        samples: int | None = None,
        jitter: bool = False,
    ) -> RenderOutput:
        rc = self.render_cfg
        res = res or rc.resolution
        bg = self.background_color(wp) if wp is not None else None
        return render(
            planes,
            self.decoder,
            poses,
            intr,
            (res, res),
            rc.t_near,
            rc.t_far,
            samples or rc.samples,
            jitter=jitter,
            background=bg,
        )

    def forward(self, wp, poses, intr, **kwargs):
        _, planes = self.synthesis(wp)
        return self.render(planes, poses, intr, wp=wp, **kwargs)


def generator_forward(generator: TriPlaneGenerator, wp):
    return generator.synthesis(wp)


def resume_forward(generator: TriPlaneGenerator, fstar, wp):
    return generator.resume(fstar, wp)
