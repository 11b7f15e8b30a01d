"""Geometry-aware inversion encoder.

A four-level convolutional pyramid (optionally with windowed self-attention
per stage) feeds one cross-attention head per style group. The coarsest
"query" level yields the base code w0 and the group queries; the coarse, mid
and fine levels supply keys and values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import EncoderConfig
from .errors import InvalidArgument

STAGES = ("coarse", "mid", "fine")


class PyramidFeatures(NamedTuple):
    query: torch.Tensor
    coarse: torch.Tensor
    mid: torch.Tensor
    fine: torch.Tensor


@dataclass(frozen=True)
class StageSchedule:
    """Iterations at which the coarse, mid and fine groups become active."""

    starts: tuple = (0, 0, 0)

    def __post_init__(self):
        if len(self.starts) != len(STAGES):
            raise InvalidArgument(f"need one start per stage {STAGES}, got {self.starts}")
        if any(b < a for a, b in zip(self.starts[:-1], self.starts[1:])):
            raise InvalidArgument(f"stage thresholds must be nondecreasing, got {self.starts}")

    def active_stage(self, iteration: int) -> int:
        """Index into ``STAGES`` of the latest stage switched on, or -1 for none."""
        return sum(1 for s in self.starts if iteration >= s) - 1


def stage_index(stage) -> int:
    if isinstance(stage, str):
        try:
            return STAGES.index(stage)
        except ValueError:
            raise InvalidArgument(f"unknown stage {stage!r}; expected one of {STAGES}") from None
    return int(stage)


def check_groups(groups: Sequence[Sequence[int]], num_ws: int) -> None:
    rows = sorted(r for g in groups for r in g)
    if rows != list(range(1, num_ws)):
        raise InvalidArgument(
            f"row groups {groups} must partition rows 1..{num_ws - 1} exactly"
        )


def assemble_wplus(w0, deltas, w_avg, groups, active_stage="fine") -> torch.Tensor:
    """w+ rows = w_avg + w0 + group delta, for groups up to the active stage.

    Args:
        w0: (B, d_w) base code.
        deltas: one (B, len(group), d_w) tensor per group.
        w_avg: (d_w,) average code.
        groups: row indices per group; together they must cover 1..L-1.
        active_stage: stage name or index; later groups contribute nothing.
    """
    num_ws = 1 + sum(len(g) for g in groups)
    check_groups(groups, num_ws)
    if len(deltas) != len(groups):
        raise InvalidArgument("need one delta block per row group")
    active = stage_index(active_stage)
    base = (w_avg + w0)[:, None, :].expand(-1, num_ws, -1)
    offsets = torch.zeros_like(base)
    for g, (rows, delta) in enumerate(zip(groups, deltas)):
        if delta.shape[1] != len(rows):
            raise InvalidArgument(f"group {g} expects {len(rows)} rows, got {delta.shape[1]}")
        if g <= active:
            offsets = offsets.index_add(1, torch.as_tensor(rows), delta)
    return base + offsets


class WindowAttention(nn.Module):
    """Single-head self-attention inside non-overlapping square windows."""

    def __init__(self, channels, window):
        super().__init__()
        self.window = window
        self.norm = nn.LayerNorm(channels)
        self.qkv = nn.Linear(channels, 3 * channels)
        self.proj = nn.Linear(channels, channels)

    def forward(self, x):
        b, c, h, w = x.shape
        win = min(self.window, h, w)
        tokens = x.reshape(b, c, h // win, win, w // win, win).permute(0, 2, 4, 3, 5, 1)
        tokens = tokens.reshape(-1, win * win, c)
        q, k, v = self.qkv(self.norm(tokens)).chunk(3, dim=-1)
        out = self.proj(F.scaled_dot_product_attention(q, k, v))
        out = out.reshape(b, h // win, w // win, win, win, c).permute(0, 5, 1, 3, 2, 4)
        return x + out.reshape(b, c, h, w)


class DownBlock(nn.Module):
    def __init__(self, in_ch, out_ch, window=None):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.attn = WindowAttention(out_ch, window) if window else None

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), 0.2)
        x = F.leaky_relu(self.conv2(x), 0.2) + x
        return self.attn(x) if self.attn is not None else x


class PyramidBackbone(nn.Module):
    """Four stride-2 stages; returns levels at 1/2, 1/4, 1/8 and 1/16 scale."""

    def __init__(self, channels, resolution, window_attention=False, window=4):
        super().__init__()
        if len(channels) != 4:
            raise InvalidArgument("the pyramid backbone needs exactly four stage widths")
        self.resolution = resolution
        win = window if window_attention else None
        self.stem = nn.Conv2d(3, channels[0], 3, padding=1)
        dims = [channels[0]] + list(channels)
        self.stages = nn.ModuleList(DownBlock(a, b, win) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, image) -> PyramidFeatures:
        if image.dim() != 4 or image.shape[1:] != (self.resolution, self.resolution, 3):
            raise InvalidArgument(
                f"expected images of shape (B, {self.resolution}, {self.resolution}, 3), "
                f"got {tuple(image.shape)}"
            )
        x = F.leaky_relu(self.stem(image.permute(0, 3, 1, 2) * 2.0 - 1.0), 0.2)
        levels = []
        for stage in self.stages:
            x = stage(x)
            levels.append(x)
        fine, mid, coarse, query = levels
        return PyramidFeatures(query, coarse, mid, fine)


class CrossAttentionHead(nn.Module):
    """Learned per-row queries, conditioned on the query level, attend to one level."""

    def __init__(self, n_rows, query_channels, level_channels, level_res, w_dim):
        super().__init__()
        self.tokens = nn.Parameter(torch.randn(n_rows, w_dim) / math.sqrt(w_dim))
        self.query_proj = nn.Linear(query_channels, w_dim)
        self.key = nn.Linear(level_channels, w_dim)
        self.value = nn.Linear(level_channels, w_dim)
        self.pos = nn.Parameter(torch.zeros(level_res * level_res, w_dim))
        self.out = nn.Linear(w_dim, w_dim)
        self.w_dim = w_dim

    def forward(self, query_feats, level):
        q = self.tokens[None] + self.query_proj(query_feats.mean(dim=(2, 3)))[:, None, :]
        kv = level.flatten(2).transpose(1, 2)
        k = self.key(kv) + self.pos
        v = self.value(kv)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(self.w_dim), dim=-1)
        return self.out(attn @ v)


class GeometryEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig, resolution: int, num_ws: int, w_dim: int):
        super().__init__()
        check_groups(cfg.groups, num_ws)
        if len(cfg.groups) != len(STAGES):
            raise InvalidArgument("need exactly three row groups (coarse, mid, fine)")
        self.groups = [list(g) for g in cfg.groups]
        self.num_ws, self.w_dim = num_ws, w_dim
        self.backbone = PyramidBackbone(cfg.channels, resolution, cfg.window_attention, cfg.window)
        ch = cfg.channels
        res = [resolution // 2 ** k for k in (3, 2, 1)]  # coarse, mid, fine
        self.w0_head = nn.Linear(ch[3], w_dim)
        self.heads = nn.ModuleList(
            CrossAttentionHead(len(g), ch[3], ch[2 - i], res[i], w_dim)
            for i, g in enumerate(self.groups)
        )
        self.register_buffer("w_avg", torch.zeros(w_dim))
        # Per-dimension spread of canonical codes; head outputs are in these units.
        self.register_buffer("w_scale", torch.ones(w_dim))

    def deltas(self, image):
        feats = self.backbone(image)
        w0 = self.w0_head(feats.query.mean(dim=(2, 3)))
        levels = (feats.coarse, feats.mid, feats.fine)
        return w0, [head(feats.query, lvl) for head, lvl in zip(self.heads, levels)]

    def forward(self, image, active_stage="fine"):
        w0, deltas = self.deltas(image)
        deltas = [d * self.w_scale for d in deltas]
        return assemble_wplus(w0 * self.w_scale, deltas, self.w_avg, self.groups, active_stage)


def encode(encoder: GeometryEncoder, image, active_stage="fine"):
    return encoder(image, active_stage)


def delta_wplus(wp) -> torch.Tensor:
    """Offsets of rows 1..L-1 from row 0, the quantity the w+ regularizer penalizes."""
    return wp[:, 1:] - wp[:, :1]
