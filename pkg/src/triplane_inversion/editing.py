"""Linear latent directions and their application in w+ and feature space."""
from __future__ import annotations

import colorsys
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import torch

from . import checkpoint
from .camera import CameraPose, Intrinsics, canonical_pose
from .canonical import sample_canonical_w
from .config import EditConfig
from .data import intrinsics_from_config
from .errors import DependencyError, InvalidArgument
from .occlusion import mix_triplane


@dataclass
class EditDirection:
    direction: np.ndarray
    attribute: str
    stats: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64).reshape(-1)
        norm = np.linalg.norm(d)
        if not np.isfinite(norm) or norm == 0:
            raise InvalidArgument("edit direction must be a finite nonzero vector")
        self.direction = d / norm


def fit_direction(latents, labels, cfg: EditConfig | None = None, seed: int = 0, attribute: str = "") -> EditDirection:
    """Linear max-margin separator by minibatch subgradient descent on hinge + L2.

    Latents are centered and divided by one global scale before fitting, so
    the returned unit normal does not depend on their overall magnitude.
    """
    cfg = cfg or EditConfig()
    x = np.asarray(latents, dtype=np.float64)
    y = np.asarray(labels).reshape(-1)
    if x.ndim != 2 or len(x) != len(y):
        raise InvalidArgument(f"need an (n, d) latent matrix and n labels, got {x.shape} and {y.shape}")
    if len(x) < 20:
        raise InvalidArgument(f"need at least 20 samples, got {len(x)}")
    classes = np.unique(y)
    if len(classes) != 2:
        raise InvalidArgument(f"labels must contain exactly two classes, got {classes.tolist()}")
    # Larger label value is the positive class.
    sign = np.where(y == classes[1], 1.0, -1.0)
    mean = x.mean(0)
    scale = np.sqrt(np.mean((x - mean) ** 2))
    xs = (x - mean) / (scale if scale > 0 else 1.0)

    rng = np.random.default_rng(seed)
    n, d = xs.shape
    w, b = np.zeros(d), 0.0
    batch = min(cfg.svm_batch, n)
    step = 0
    for _ in range(cfg.svm_epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            step += 1
            lr = cfg.svm_lr / np.sqrt(step)
            margin = sign[idx] * (xs[idx] @ w + b)
            active = margin < 1.0
            grad_w = cfg.svm_lambda * w - (sign[idx, None] * xs[idx] * active[:, None]).sum(0) / len(idx)
            grad_b = -(sign[idx] * active).sum() / len(idx)
            w -= lr * grad_w
            b -= lr * grad_b
    if not np.any(w):
        raise InvalidArgument("direction fit collapsed to zero")
    margins = sign * (xs @ w + b) / np.linalg.norm(w)
    stats = {
        "accuracy": float(np.mean(margins > 0)),
        "mean_margin": float(np.mean(margins)),
        "min_margin": float(np.min(margins)),
        "n": int(n),
    }
    return EditDirection(w, attribute, stats)


def attribute_scores(images, opacity, attribute: str, tau: float = 0.5) -> np.ndarray:
    """Measured attribute per rendered image: silhouette area fraction or mean hue."""
    opacity = np.asarray(opacity)
    if attribute == "radius":
        return (opacity >= tau).reshape(len(opacity), -1).mean(-1)
    if attribute == "hue":
        images = np.asarray(images)
        out = []
        for img, op in zip(images, opacity):
            fg = img[op >= tau]
            rgb = fg.mean(0) if len(fg) else np.zeros(3)
            out.append(colorsys.rgb_to_hsv(*rgb)[0])
        return np.asarray(out)
    raise InvalidArgument(f"unknown attribute {attribute!r}; expected 'radius' or 'hue'")


def quantile_labels(scores, quantile: float):
    """Indices and 0/1 labels of the bottom and top ``quantile`` fractions."""
    if not 0.0 < quantile <= 0.5:
        raise InvalidArgument(f"quantile must lie in (0, 0.5], got {quantile}")
    scores = np.asarray(scores)
    k = max(1, int(round(quantile * len(scores))))
    order = np.argsort(scores, kind="stable")
    idx = np.concatenate([order[:k], order[-k:]])
    labels = np.concatenate([np.zeros(k, dtype=np.int64), np.ones(k, dtype=np.int64)])
    return idx, labels


def apply_edit(wp, direction: EditDirection, strength: float, rows=None):
    """Shift w+ rows (all by default) by ``strength`` along the direction."""
    d = torch.as_tensor(direction.direction, dtype=wp.dtype)
    if d.shape[0] != wp.shape[-1]:
        raise InvalidArgument(f"direction has {d.shape[0]} dims, w+ rows have {wp.shape[-1]}")
    if not rows:
        return wp + strength * d
    sel = torch.zeros(wp.shape[-2], dtype=wp.dtype)
    sel[list(rows)] = 1.0
    return wp + strength * sel[:, None] * d


def edit_features(fstar, wp, wp_hat, generator):
    """F_hat* = F* + F(wp_hat) - F(wp) on the tapped layer."""
    f_w = generator.synthesis(wp)[0].tapped
    f_hat = generator.synthesis(wp_hat)[0].tapped
    if fstar.shape != f_w.shape:
        raise InvalidArgument(f"F* {tuple(fstar.shape)} does not match tapped features {tuple(f_w.shape)}")
    # Elementwise choice keeps both identities exact in floating point:
    # unchanged features return F*, and F* = F(wp) returns F(wp_hat).
    return torch.where(f_hat == f_w, fstar, (fstar - f_w) + f_hat)


def edited_planes(generator, wp, fstar, direction: EditDirection, strength: float, mask, rows=None):
    wp_hat = apply_edit(wp, direction, strength, rows)
    f_hat = edit_features(fstar, wp, wp_hat, generator)
    tp_wplus = generator.synthesis(wp_hat)[1]
    tp_fstar = generator.resume(f_hat, wp_hat)
    return mix_triplane(tp_fstar, tp_wplus, mask), wp_hat


def edited_render(generator, wp, fstar, direction: EditDirection, strength: float, pose: CameraPose,
                  intr: Intrinsics, mask, res=None, rows=None):
    planes, wp_hat = edited_planes(generator, wp, fstar, direction, strength, mask, rows)
    return generator.render(planes, pose, intr, wp=wp_hat, res=res)


def save_direction(path, direction: EditDirection) -> None:
    entries = OrderedDict()
    entries["direction/vector"] = direction.direction.astype(np.float64)
    entries["direction/meta"] = checkpoint.json_entry({"attribute": direction.attribute, "stats": direction.stats})
    checkpoint.save(path, entries)


def load_direction(path) -> EditDirection:
    entries = checkpoint.load(path)
    if "direction/vector" not in entries:
        raise DependencyError(f"{path} holds no edit direction")
    meta = checkpoint.entry_json(entries["direction/meta"])
    return EditDirection(entries["direction/vector"], meta["attribute"], meta["stats"])


@torch.no_grad()
def discover_direction(generator, cfg, seed: int = 0, res: int = 32, batch: int = 32) -> tuple[EditDirection, np.ndarray]:
    """Sample canonical codes, score their front renders, and fit a direction.

    Returns the direction and the measured attribute scores of all samples.
    """
    ec = cfg.edit
    ws = sample_canonical_w(generator, ec.samples, seed, cfg)
    pose, intr = canonical_pose(cfg.camera.distance), intrinsics_from_config(cfg.camera)
    scores = []
    for start in range(0, len(ws), batch):
        w = ws[start : start + batch]
        wp = w[:, None].expand(-1, generator.num_ws, -1)
        out = generator(wp, pose, intr, res=res)
        scores.append(attribute_scores(out.image.numpy(), out.opacity.numpy(), ec.attribute, cfg.depth_prior.tau))
    scores = np.concatenate(scores)
    idx, labels = quantile_labels(scores, ec.quantile)
    return fit_direction(ws[idx].numpy(), labels, ec, seed, ec.attribute), scores
