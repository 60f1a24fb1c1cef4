from .scene import Gaussian, GaussianScene, load_scene, save_scene
from .project import (
    DILATION,
    NEAR_PLANE,
    project,
    project_all,
    quat_to_rot,
    rot_jacobian,
    world_covariances,
)
from .render import (
    ALPHA_CLAMP,
    ALPHA_FLOOR,
    TILE,
    TRANSMITTANCE_EPS,
    SplatOutput,
    render,
)
from .backward import render_backward
from .plan import FeaturePlan, build_feature_plan

__all__ = [
    "ALPHA_CLAMP",
    "ALPHA_FLOOR",
    "DILATION",
    "NEAR_PLANE",
    "TILE",
    "TRANSMITTANCE_EPS",
    "FeaturePlan",
    "Gaussian",
    "GaussianScene",
    "SplatOutput",
    "build_feature_plan",
    "load_scene",
    "project",
    "project_all",
    "quat_to_rot",
    "render",
    "render_backward",
    "rot_jacobian",
    "save_scene",
    "world_covariances",
]
