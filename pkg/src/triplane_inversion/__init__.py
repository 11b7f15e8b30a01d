"""Encoder-based inversion, feature alignment and editing for a miniature tri-plane generator."""
from .afa import AFAModule, attention, film_modulate
from .camera import (
    CameraPose,
    Intrinsics,
    RayBundle,
    backproject,
    canonical_pose,
    generate_rays,
    orbit_pose,
    parse_pose_label,
    pose_label,
)
from .canonical import estimate_depth_prior, sample_canonical_w
from .config import Config
from .editing import EditDirection, apply_edit, edit_features, edited_render, fit_direction
from .encoder import GeometryEncoder, StageSchedule, assemble_wplus
from .errors import DependencyError, InvalidArgument, NoBackgroundError
from .generator import TriPlaneGenerator, generator_forward, resume_forward
from .losses import (
    DepthPrior,
    FeatureCritic,
    LatentDiscriminator,
    background_loss,
    disc_loss,
    enc_adv_loss,
    reconstruction_loss,
)
from .metrics import MetricsReport, eval_metrics
from .occlusion import build_tri_mask, mix_triplane, visible_points
from .pipeline import InversionBundle, invert, render_views
from .rendering import RenderOutput, render, sample_triplane

__version__ = "0.1.0"

__all__ = [
    "AFAModule",
    "attention",
    "film_modulate",
    "CameraPose",
    "Intrinsics",
    "RayBundle",
    "backproject",
    "canonical_pose",
    "generate_rays",
    "orbit_pose",
    "parse_pose_label",
    "pose_label",
    "estimate_depth_prior",
    "sample_canonical_w",
    "Config",
    "EditDirection",
    "apply_edit",
    "edit_features",
    "edited_render",
    "fit_direction",
    "GeometryEncoder",
    "StageSchedule",
    "assemble_wplus",
    "DependencyError",
    "InvalidArgument",
    "NoBackgroundError",
    "TriPlaneGenerator",
    "generator_forward",
    "resume_forward",
    "DepthPrior",
    "FeatureCritic",
    "LatentDiscriminator",
    "background_loss",
    "disc_loss",
    "enc_adv_loss",
    "reconstruction_loss",
    "MetricsReport",
    "eval_metrics",
    "build_tri_mask",
    "mix_triplane",
    "visible_points",
    "InversionBundle",
    "invert",
    "render_views",
    "RenderOutput",
    "render",
    "sample_triplane",
]
