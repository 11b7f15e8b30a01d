"""Loss terms for encoder and alignment training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import LossConfig
from .errors import InvalidArgument

LossWeights = LossConfig


class LatentDiscriminator(nn.Module):
    """MLP scoring a single latent row; higher logits mean canonical."""

    def __init__(self, w_dim: int, hidden: int = 256, layers: int = 3):
        super().__init__()
        dims = [w_dim] + [hidden] * (layers - 1)
        self.body = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.head = nn.Linear(dims[-1], 1)

    def forward(self, w):
        x = w
        for layer in self.body:
            x = F.leaky_relu(layer(x), 0.2)
        return self.head(x).squeeze(-1)


def _rows(w):
    return w.reshape(-1, w.shape[-1])


def disc_adv_loss(real_logits, fake_logits):
    """-E[log sigmoid(real)] - E[log(1 - sigmoid(fake))]."""
    return F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()


def r1_penalty(disc, real, gamma: float, squared: bool = True, create_graph: bool = True):
    """(gamma / 2) E[||grad_w D(w)||^2] over real codes (unsquared norm if ``squared`` is off)."""
    real = real.detach().requires_grad_(True)
    logits = disc(real)
    (grad,) = torch.autograd.grad(logits.sum(), real, create_graph=create_graph)
    norm_sq = grad.square().sum(-1)
    penalty = norm_sq if squared else norm_sq.sqrt()
    return 0.5 * gamma * penalty.mean(), logits


def disc_loss(real, fake, disc, r1_gamma: float = 10.0, r1_squared: bool = True):
    """Discriminator objective: non-saturating loss on canonical vs encoded rows plus R1.

    ``fake`` may be a (B, L, d_w) w+ batch; every row is scored on its own.
    """
    real, fake = _rows(real), _rows(fake.detach())
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise InvalidArgument("discriminator batches must be nonempty")
    r1, real_logits = r1_penalty(disc, real, r1_gamma, r1_squared)
    return disc_adv_loss(real_logits, disc(fake)) + r1


def enc_adv_loss(fake, disc):
    """Encoder loss -E[log sigmoid(D(w_i))]; discriminator weights receive no gradient."""
    fake = _rows(fake)
    if fake.shape[0] == 0:
        raise InvalidArgument("encoder adversarial batch must be nonempty")
    frozen = {name: p.detach() for name, p in disc.named_parameters()}
    logits = torch.func.functional_call(disc, frozen, (fake,))
    return F.softplus(-logits).mean()


@dataclass(frozen=True)
class DepthPrior:
    d_avg: float
    sample_count: int
    tau: float

    def __post_init__(self):
        if self.sample_count < 1:
            raise InvalidArgument("depth prior needs at least one sample")
        if not 0.0 < self.tau < 1.0:
            raise InvalidArgument(f"opacity threshold must lie in (0, 1), got {self.tau}")


def background_mask(opacity, tau: float, margin: int = 0):
    """1 where opacity < tau and no foreground pixel lies within ``margin`` pixels.

    The margin keeps the soft rim around a silhouette out of the mask, the way
    a segmentation mask assigns boundary pixels to the object.
    """
    fg = (opacity >= tau).to(opacity.dtype)
    if margin > 0:
        flat = fg.reshape(-1, 1, *fg.shape[-2:])
        flat = F.max_pool2d(flat, 2 * margin + 1, stride=1, padding=margin)
        fg = flat.reshape(fg.shape)
    return 1.0 - fg


def background_loss(depth, mask, prior: DepthPrior | float):
    """Root-mean-square of (depth - d_avg) over masked pixels, averaged over the batch.

    Images without masked pixels contribute 0.
    """
    if depth.shape != mask.shape:
        raise InvalidArgument(f"depth {tuple(depth.shape)} and mask {tuple(mask.shape)} differ")
    d_avg = prior.d_avg if isinstance(prior, DepthPrior) else float(prior)
    if depth.dim() == 2:
        depth, mask = depth[None], mask[None]
    mask = mask.detach().to(depth.dtype)
    count = mask.flatten(1).sum(-1)
    sq = ((depth - d_avg).square() * mask).flatten(1).sum(-1)
    # Masked-out zeros keep sqrt off the non-differentiable point at 0.
    ok = (count > 0) & (sq > 0)
    mean_sq = torch.where(ok, sq / count.clamp_min(1), torch.ones_like(sq))
    return torch.where(ok, mean_sq.sqrt(), torch.zeros_like(sq)).mean()


class FeatureCritic(nn.Module):
    """Fixed random-weight convolutional features standing in for LPIPS and ArcFace.

    ``features`` returns one map per layer for the perceptual term and
    ``embed`` a pooled vector for the identity term. Weights are drawn from
    a pinned seed and never trained.
    """

    def __init__(self, channels=(16, 32, 64, 64), seed: int = 1234):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        dims = [3] + list(channels)
        self.convs = nn.ModuleList()
        for a, b in zip(dims[:-1], dims[1:]):
            conv = nn.Conv2d(a, b, 3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen) * np.sqrt(2.0 / (9 * a)))
                conv.bias.zero_()
            self.convs.append(conv)
        self.requires_grad_(False)

    def features(self, image):
        x = image.permute(0, 3, 1, 2) * 2.0 - 1.0
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats

    def perceptual(self, a, b):
        total = 0.0
        fa, fb = self.features(a), self.features(b)
        for x, y in zip(fa, fb):
            x = x / (x.square().sum(1, keepdim=True) + 1e-10).sqrt()
            y = y / (y.square().sum(1, keepdim=True) + 1e-10).sqrt()
            total = total + (x - y).square().sum(1).mean(dim=(1, 2))
        return (total / len(fa)).mean()

    def embed(self, image):
        return self.features(image)[-1].mean(dim=(2, 3))

    def identity(self, a, b):
        return (1.0 - F.cosine_similarity(self.embed(a), self.embed(b), dim=-1)).mean()


def reconstruction_loss(rec, target, weights: LossConfig, critic: FeatureCritic):
    """lambda1 * MSE + lambda2 * perceptual + lambda3 * (1 - cosine of embeddings).

    Returns the weighted total and the unweighted components.
    """
    if rec.shape != target.shape:
        raise InvalidArgument(f"reconstruction {tuple(rec.shape)} and target {tuple(target.shape)} differ")
    if rec.dim() == 3:
        rec, target = rec[None], target[None]
    parts = {
        "rec_l2": (rec - target).square().mean(),
        "perc": critic.perceptual(rec, target),
        "id": critic.identity(rec, target),
    }
    total = (
        weights.lambda_l2 * parts["rec_l2"]
        + weights.lambda_lpips * parts["perc"]
        + weights.lambda_id * parts["id"]
    )
    return total, parts


def wplus_regularizer(wp):
    """Per-sample L2 norm of (w_1 - w_0, ..., w_{L-1} - w_0), batch-averaged."""
    delta = (wp[:, 1:] - wp[:, :1]).flatten(1)
    sq = delta.square().sum(-1)
    return torch.where(sq > 0, sq.clamp_min(1e-30).sqrt(), torch.zeros_like(sq)).mean()


def feature_regularizer(delta_f):
    """Per-sample squared L2 norm of F* - F, batch-averaged."""
    return delta_f.flatten(1).square().sum(-1).mean()


def encoder_objective(parts: dict, weights: LossConfig, use_disc: bool = True, use_bg: bool = True):
    """lambda4 * adv_e + lambda5 * bg + rec + lambda6 * wreg from a dict of loss terms."""
    total = parts["rec"] + weights.lambda_wreg * parts["wreg"]
    if use_disc:
        total = total + weights.lambda_adv * parts["adv_e"]
    if use_bg:
        total = total + weights.lambda_bg * parts["bg"]
    return total
