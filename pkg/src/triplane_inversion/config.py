"""JSON configuration. Every numeric default of the pipeline lives here."""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidArgument


@dataclass
class CameraConfig:
    distance: float = 2.7
    fx: float = 2.0
    fy: float = 2.0
    cx: float = 0.5
    cy: float = 0.5


@dataclass
class RenderConfig:
    resolution: int = 64
    samples: int = 48
    t_near: float = 1.7
    t_far: float = 3.7


@dataclass
class GeneratorConfig:
    z_dim: int = 128
    w_dim: int = 128
    mapping_layers: int = 4
    # Two style-modulated convolutions per resolution, so L = 2 * len(resolutions).
    resolutions: list = field(default_factory=lambda: [4, 8, 16, 32])
    channels: list = field(default_factory=lambda: [128, 128, 64, 32])
    plane_channels: int = 16
    # -1 selects the last layer at half the tri-plane resolution.
    tap_layer: int = -1
    decoder_hidden: int = 64
    density_scale: float = 10.0


@dataclass
class DataConfig:
    n_scenes: int = 256
    yaws: list = field(default_factory=lambda: [-60.0, -30.0, 0.0, 30.0, 60.0])
    pitch: float = 0.0
    radius: list = field(default_factory=lambda: [0.25, 0.5])
    jitter: float = 0.15
    hue: list = field(default_factory=lambda: [0.0, 1.0])
    background: list = field(default_factory=lambda: [0.0, 0.3])
    light: list = field(default_factory=lambda: [-0.4, 0.6, -1.0])
    ambient: float = 0.3


@dataclass
class GeneratorTrainConfig:
    iters: int = 6000
    batch: int = 8
    rays: int = 512
    lr: float = 3e-3
    latent_lr: float = 1e-2
    kl_weight: float = 1e-4
    depth_weight: float = 0.1
    opacity_weight: float = 0.5
    psnr_target: float = 26.0
    log_every: int = 100
    w_avg_samples: int = 10000


@dataclass
class LossConfig:
    lambda_l2: float = 1.0
    lambda_lpips: float = 0.8
    lambda_id: float = 0.25
    lambda_adv: float = 0.05
    lambda_bg: float = 5.0
    bg_margin: int = 2
    lambda_wreg: float = 0.001
    lambda_dfreg: float = 0.0001
    r1_gamma: float = 10.0
    r1_squared: bool = True


@dataclass
class DepthPriorConfig:
    samples: int = 1024
    tau: float = 0.5
    batch: int = 16


@dataclass
class EncoderConfig:
    channels: list = field(default_factory=lambda: [32, 64, 96, 128])
    window_attention: bool = False
    window: int = 4
    # Style-row groups after w0: coarse, mid and fine.
    groups: list = field(default_factory=lambda: [[1, 2], [3, 4], [5, 6, 7]])


@dataclass
class Stage1Config:
    iters: int = 4000
    batch: int = 4
    lr_encoder: float = 1e-4
    lr_disc: float = 2e-5
    # Iteration at which the coarse, mid and fine groups switch on.
    stage_starts: list = field(default_factory=lambda: [0, 1000, 2000])
    use_disc: bool = True
    use_bg: bool = True
    source: str = "dataset"
    log_every: int = 50
    ckpt_every: int = 1000


@dataclass
class AFAConfig:
    attn_dim: int = 64
    heads: int = 1
    positional: bool = True
    cnn_channels: int = 32


@dataclass
class Stage2Config:
    iters: int = 3000
    batch: int = 4
    lr: float = 2.5e-5
    use_bg: bool = True
    # Training images for stage 2; None reuses the stage-1 source.
    source: str | None = None
    mask_dilation: int = 1
    log_every: int = 50
    ckpt_every: int = 1000


@dataclass
class EditConfig:
    attribute: str = "radius"
    samples: int = 2000
    quantile: float = 0.2
    svm_lambda: float = 1e-3
    svm_epochs: int = 500
    svm_lr: float = 0.1
    svm_batch: int = 64
    rows: list = field(default_factory=list)


@dataclass
class Config:
    seed: int = 0
    camera: CameraConfig = field(default_factory=CameraConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    data: DataConfig = field(default_factory=DataConfig)
    gen_train: GeneratorTrainConfig = field(default_factory=GeneratorTrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    depth_prior: DepthPriorConfig = field(default_factory=DepthPriorConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    stage1: Stage1Config = field(default_factory=Stage1Config)
    afa: AFAConfig = field(default_factory=AFAConfig)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    edit: EditConfig = field(default_factory=EditConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        return _build(cls, data, "")

    @classmethod
    def load(cls, path) -> "Config":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise InvalidArgument(f"config section {prefix or '<root>'} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in section {prefix[:-1]}" if prefix else ""
        raise InvalidArgument(f"unknown config key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{prefix}{name}.")
        elif hint is bool:
            if not isinstance(value, bool):
                raise InvalidArgument(f"config key {prefix}{name} must be a boolean")
            kwargs[name] = value
        elif hint in (int, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidArgument(f"config key {prefix}{name} must be numeric")
            if hint is int and float(value) != int(value):
                raise InvalidArgument(f"config key {prefix}{name} must be an integer")
            kwargs[name] = hint(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)
