"""Synthetic multi-view scenes rendered by exact ray-surface intersection.

Each scene is an opaque Lambertian sphere in front of a flat backdrop
shade. The backdrop carries no geometry: background pixels have opacity 0
and depth 0, so the opacity threshold separates foreground from background
the same way it does for generator renders.
"""
from __future__ import annotations

import colorsys
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .camera import (
    CameraPose,
    Intrinsics,
    generate_rays,
    orbit_pose,
    parse_pose_label,
    pose_label,
    read_depth,
    write_depth,
)
from .config import CameraConfig, DataConfig
from .errors import DependencyError, InvalidArgument


@dataclass
class SceneSpec:
    radius: tuple = (0.25, 0.5)
    jitter: float = 0.15
    hue: tuple = (0.0, 1.0)
    background: tuple = (0.0, 0.3)
    yaws: tuple = (-60.0, -30.0, 0.0, 30.0, 60.0)
    pitch: float = 0.0
    yaw_limit: float = 60.0
    light: tuple = (-0.4, 0.6, -1.0)
    ambient: float = 0.3

    def __post_init__(self):
        if not 0 < self.radius[0] <= self.radius[1]:
            raise InvalidArgument(f"sphere radius range must be positive, got {self.radius}")
        if any(abs(y) > self.yaw_limit for y in self.yaws):
            raise InvalidArgument(f"yaws {self.yaws} exceed the +-{self.yaw_limit} degree range")

    @classmethod
    def from_config(cls, cfg: DataConfig) -> "SceneSpec":
        return cls(
            radius=tuple(cfg.radius),
            jitter=cfg.jitter,
            hue=tuple(cfg.hue),
            background=tuple(cfg.background),
            yaws=tuple(cfg.yaws),
            pitch=cfg.pitch,
            light=tuple(cfg.light),
            ambient=cfg.ambient,
        )


@dataclass
class SceneFactors:
    radius: float
    center: list
    hue: float
    background: float

    @property
    def albedo(self) -> np.ndarray:
        return np.array(colorsys.hsv_to_rgb(self.hue % 1.0, 0.75, 0.9))


def sample_factors(rng: np.random.Generator, spec: SceneSpec) -> SceneFactors:
    return SceneFactors(
        radius=float(rng.uniform(*spec.radius)),
        center=[float(v) for v in rng.uniform(-spec.jitter, spec.jitter, size=3)],
        hue=float(rng.uniform(*spec.hue)),
        background=float(rng.uniform(*spec.background)),
    )


@dataclass
class AnalyticScene:
    """Spheres (center, radius, albedo) and planes (normal, offset, albedo).

    Planes are the sets {x : n . x = offset}; their solid side is n . x > offset.
    ``light`` points from the scene towards the light source.
    """

    spheres: list = field(default_factory=list)
    planes: list = field(default_factory=list)
    background: tuple = (0.0, 0.0, 0.0)
    light: tuple = (-0.4, 0.6, -1.0)
    ambient: float = 0.3

    @classmethod
    def from_factors(cls, factors: SceneFactors, spec: SceneSpec | None = None):
        spec = spec or SceneSpec()
        return cls(
            spheres=[(np.asarray(factors.center), factors.radius, factors.albedo)],
            background=(factors.background,) * 3,
            light=spec.light,
            ambient=spec.ambient,
        )

    def sdf(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        dist = np.full(points.shape[:-1], np.inf)
        for center, radius, _ in self.spheres:
            dist = np.minimum(dist, np.linalg.norm(points - center, axis=-1) - radius)
        for normal, offset, _ in self.planes:
            n = np.asarray(normal, dtype=np.float64)
            dist = np.minimum(dist, offset - points @ (n / np.linalg.norm(n)))
        return dist

    def intersect(self, origins, directions):
        """First hit distance along each ray (inf on a miss), normals, albedo."""
        origins = np.asarray(origins, dtype=np.float64)
        directions = np.asarray(directions, dtype=np.float64)
        shape = origins.shape[:-1]
        t_hit = np.full(shape, np.inf)
        normals = np.zeros(shape + (3,))
        albedo = np.zeros(shape + (3,))
        for center, radius, color in self.spheres:
            oc = origins - center
            b = np.sum(oc * directions, axis=-1)
            c = np.sum(oc * oc, axis=-1) - radius**2
            disc = b * b - c
            root = np.sqrt(np.maximum(disc, 0.0))
            t = np.where(-b - root > 0, -b - root, -b + root)
            t = np.where((disc >= 0) & (t > 0), t, np.inf)
            closer = t < t_hit
            t_hit = np.where(closer, t, t_hit)
            pts = origins + directions * np.where(np.isfinite(t), t, 0.0)[..., None]
            normals = np.where(closer[..., None], (pts - center) / radius, normals)
            albedo = np.where(closer[..., None], color, albedo)
        for normal, offset, color in self.planes:
            n = np.asarray(normal, dtype=np.float64)
            n = n / np.linalg.norm(n)
            denom = directions @ n
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (offset - origins @ n) / denom
            t = np.where((np.abs(denom) > 1e-12) & (t > 0), t, np.inf)
            closer = t < t_hit
            t_hit = np.where(closer, t, t_hit)
            normals = np.where(closer[..., None], -n, normals)
            albedo = np.where(closer[..., None], color, albedo)
        return t_hit, normals, albedo

    def render(self, pose: CameraPose, intr: Intrinsics, res: tuple[int, int]):
        """Exact image, z-depth and binary opacity, all (H, W[, 3]) float64."""
        rays = generate_rays(pose, intr, res, dtype=torch.float64)
        origins, dirs = rays.origins.numpy(), rays.directions.numpy()
        t_hit, normals, albedo = self.intersect(origins, dirs)
        hit = np.isfinite(t_hit)
        light = np.asarray(self.light, dtype=np.float64)
        light /= np.linalg.norm(light)
        shade = self.ambient + (1.0 - self.ambient) * np.clip(normals @ light, 0.0, None)
        image = np.where(hit[..., None], albedo * shade[..., None], np.asarray(self.background))
        depth = np.where(hit, t_hit * (dirs @ pose.forward), 0.0)
        return np.clip(image, 0.0, 1.0), depth, hit.astype(np.float64)

    def density_field(self, sharpness: float = 200.0, sigma_max: float = 500.0):
        """Volumetric stand-in for the scene, usable with ``render_field``."""

        def field(points: torch.Tensor):
            sd = torch.as_tensor(self.sdf(points.detach().cpu().numpy()), dtype=points.dtype)
            sigma = sigma_max * torch.sigmoid(-sharpness * sd)
            return torch.ones(points.shape[:-1] + (3,), dtype=points.dtype), sigma

        return field


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def encode_png(image) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0


def intrinsics_from_config(cfg: CameraConfig) -> Intrinsics:
    return Intrinsics(cfg.fx, cfg.fy, cfg.cx, cfg.cy)


def make_dataset(
    root,
    spec: SceneSpec,
    n: int,
    seed: int,
    camera: CameraConfig | None = None,
    resolution: int = 64,
) -> Path:
    """Write ``n`` scenes, one sub-directory each, with every configured view."""
    if n < 1:
        raise InvalidArgument("need at least one scene")
    camera = camera or CameraConfig()
    intr = intrinsics_from_config(camera)
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc
    rng = np.random.default_rng(seed)
    res = (resolution, resolution)
    for i in range(n):
        factors = sample_factors(rng, spec)
        scene = AnalyticScene.from_factors(factors, spec)
        scene_dir = root / f"scene_{i}"
        scene_dir.mkdir(exist_ok=True)
        record = asdict(factors) | {"yaws": list(spec.yaws), "pitch": spec.pitch}
        (scene_dir / "factors.json").write_text(json.dumps(record, indent=2, sort_keys=True))
        for k, yaw in enumerate(spec.yaws):
            pose = orbit_pose(yaw, spec.pitch, camera.distance)
            image, depth, _ = scene.render(pose, intr, res)
            (scene_dir / f"view_{k}.png").write_bytes(encode_png(image))
            write_depth(scene_dir / f"view_{k}.tpd", depth)
            label = pose_label(pose, intr).astype("<f4")
            (scene_dir / f"view_{k}.cam").write_bytes(label.tobytes())
    return root


def read_camera(path) -> np.ndarray:
    return np.frombuffer(Path(path).read_bytes(), dtype="<f4").astype(np.float64)


class MultiViewDataset:
    """All views of a dataset directory, held in memory as float tensors.

    Attributes are stacked over (scene, view): ``images`` (S, K, H, W, 3),
    ``depths`` and ``opacity`` (S, K, H, W), ``labels`` (S, K, 25).
    """

    def __init__(self, root, scenes: list[int] | None = None):
        root = Path(root)
        dirs = sorted(
            (p for p in root.glob("scene_*") if p.is_dir()),
            key=lambda p: int(p.name.split("_")[1]),
        )
        if not dirs:
            raise DependencyError(f"no scenes found under {root}")
        if scenes is not None:
            dirs = [dirs[i] for i in scenes]
        images, depths, labels, self.factors = [], [], [], []
        for d in dirs:
            n_views = len(list(d.glob("view_*.png")))
            images.append([read_png(d / f"view_{k}.png") for k in range(n_views)])
            depths.append([read_depth(d / f"view_{k}.tpd") for k in range(n_views)])
            labels.append([read_camera(d / f"view_{k}.cam") for k in range(n_views)])
            self.factors.append(json.loads((d / "factors.json").read_text()))
        self.images = torch.as_tensor(np.array(images))
        self.depths = torch.as_tensor(np.array(depths))
        self.opacity = (self.depths > 0).float()
        self.labels = torch.as_tensor(np.array(labels), dtype=torch.float32)
        self.poses = [[parse_pose_label(l)[0] for l in scene] for scene in np.array(labels)]
        self.intrinsics = parse_pose_label(labels[0][0])[1]

    @property
    def n_scenes(self) -> int:
        return self.images.shape[0]

    @property
    def n_views(self) -> int:
        return self.images.shape[1]

    @property
    def resolution(self) -> int:
        return self.images.shape[2]

    def __len__(self) -> int:
        return self.n_scenes * self.n_views

    def item(self, index: int):
        scene, view = divmod(index, self.n_views)
        return (
            self.images[scene, view],
            self.labels[scene, view],
            self.poses[scene][view],
            self.depths[scene, view],
        )
