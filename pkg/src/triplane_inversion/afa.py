"""Adaptive feature alignment: residual features, cross-attention, FiLM.

The residual between the input image and its w+ reconstruction is encoded
by a small CNN, aligned to the generator feature map F by cross-attention
(queries from F, keys and values from the residual features), and turned
into per-element scale and shift maps that modulate F.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import torch
import torch.nn as nn

from .config import AFAConfig
from .errors import InvalidArgument


class FilmParams(NamedTuple):
    gamma: torch.Tensor
    beta: torch.Tensor


class AFAOutput(NamedTuple):
    fstar: torch.Tensor
    delta: torch.Tensor
    film: FilmParams
    attention: torch.Tensor


def attention(q, k, v):
    """Scaled dot-product attention; returns the output and the weights.

    q is (..., Nq, d), k is (..., Nk, d), v is (..., Nk, dv).
    """
    weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1]), dim=-1)
    return weights @ v, weights


def film_modulate(features, gamma, beta):
    """F* = gamma * F + beta, elementwise."""
    if not (features.shape == gamma.shape == beta.shape):
        raise InvalidArgument(
            f"FiLM shapes differ: F {tuple(features.shape)}, gamma {tuple(gamma.shape)}, "
            f"beta {tuple(beta.shape)}"
        )
    return gamma * features + beta


class ResidualEncoder(nn.Module):
    """Downsamples a residual image to the tapped feature resolution."""

    def __init__(self, out_channels, image_res, feature_res, hidden=32):
        super().__init__()
        if image_res % feature_res or (image_res // feature_res) & (image_res // feature_res - 1):
            raise InvalidArgument(
                f"image resolution {image_res} must be a power-of-two multiple of {feature_res}"
            )
        self.image_res, self.feature_res = image_res, feature_res
        n_down = int(math.log2(image_res // feature_res))
        layers = [nn.Conv2d(3, hidden, 3, padding=1), nn.LeakyReLU(0.2)]
        for _ in range(n_down):
            layers += [nn.Conv2d(hidden, hidden, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(hidden, out_channels, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, residual):
        if residual.dim() != 4 or residual.shape[1:] != (self.image_res, self.image_res, 3):
            raise InvalidArgument(
                f"expected residuals of shape (B, {self.image_res}, {self.image_res}, 3), "
                f"got {tuple(residual.shape)}"
            )
        return self.net(residual.permute(0, 3, 1, 2))


class FeatureAlign(nn.Module):
    """Cross-attention from F (queries) to residual features (keys, values)."""

    def __init__(self, channels, feature_res, dim=64, heads=1, positional=True):
        super().__init__()
        if dim % heads:
            raise InvalidArgument(f"attention dim {dim} not divisible by {heads} heads")
        self.channels, self.feature_res, self.dim, self.heads = channels, feature_res, dim, heads
        self.w_q = nn.Linear(channels, dim, bias=False)
        self.w_k = nn.Linear(channels, dim, bias=False)
        self.w_v = nn.Linear(channels, dim, bias=False)
        n_tok = feature_res * feature_res
        if positional:
            self.pos_q = nn.Parameter(0.02 * torch.randn(n_tok, channels))
            self.pos_k = nn.Parameter(0.02 * torch.randn(n_tok, channels))
        else:
            self.register_parameter("pos_q", None)
            self.register_parameter("pos_k", None)

    def forward(self, features, residual_features):
        if features.shape != residual_features.shape:
            raise InvalidArgument(
                f"F {tuple(features.shape)} and residual features "
                f"{tuple(residual_features.shape)} differ"
            )
        b, c, h, w = features.shape
        tok_f = features.flatten(2).transpose(1, 2)
        tok_r = residual_features.flatten(2).transpose(1, 2)
        q_in, k_in = tok_f, tok_r
        if self.pos_q is not None:
            q_in, k_in = tok_f + self.pos_q, tok_r + self.pos_k
        # Values carry no positional term, so uniform residual features stay uniform.
        q, k, v = self.w_q(q_in), self.w_k(k_in), self.w_v(tok_r)
        split = lambda t: t.reshape(b, -1, self.heads, self.dim // self.heads).transpose(1, 2)
        out, weights = attention(split(q), split(k), split(v))
        out = out.transpose(1, 2).reshape(b, h * w, self.dim)
        return out.transpose(1, 2).reshape(b, self.dim, h, w), weights


class AFAModule(nn.Module):
    def __init__(self, cfg: AFAConfig, channels: int, feature_res: int, image_res: int):
        super().__init__()
        self.residual = ResidualEncoder(channels, image_res, feature_res, cfg.cnn_channels)
        self.align = FeatureAlign(channels, feature_res, cfg.attn_dim, cfg.heads, cfg.positional)
        self.conv_gamma = nn.Conv2d(cfg.attn_dim, channels, 3, padding=1)
        self.conv_beta = nn.Conv2d(cfg.attn_dim, channels, 3, padding=1)
        self.reset_film()

    def reset_film(self):
        """Identity initialization: gamma = 1 and beta = 0 for any input."""
        with torch.no_grad():
            self.conv_gamma.weight.zero_()
            self.conv_gamma.bias.fill_(1.0)
            self.conv_beta.weight.zero_()
            self.conv_beta.bias.zero_()

    def film(self, aligned) -> FilmParams:
        return FilmParams(self.conv_gamma(aligned), self.conv_beta(aligned))

    def forward(self, image, recon, features) -> AFAOutput:
        residual_features = self.residual(image - recon)
        aligned, weights = self.align(features, residual_features)
        params = self.film(aligned)
        fstar = film_modulate(features, params.gamma, params.beta)
        return AFAOutput(fstar, fstar - features, params, weights)


def afa_forward(afa: AFAModule, image, recon, features):
    return afa(image, recon, features)
