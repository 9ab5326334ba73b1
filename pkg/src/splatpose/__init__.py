"""Camera pose estimation over 3D Gaussian scenes.

Splatting renderer, ellipsoid ray casting, ray scoring (geometric ground
truth or a trainable attention scorer), a closed-form coarse pose solver and
render-match-PnP refinement.
"""

from .camera import Camera, look_at
from .coarse_solver import CoarseConfig, CoarsePose, coarse_estimate
from .harness import EvalManifest, angular_error, evaluate, translation_error
from .rasterizer import render
from .rays import RayBundle, cast_rays
from .refine import RefineConfig, refine_pose
from .scene import GaussianPrimitive, Scene, load_ply, save_ply, synth_scene
from .scoring import GammaConfig, ScoreVector, gt_scores

__version__ = "0.1.0"

__all__ = [
    "Camera", "CoarseConfig", "CoarsePose", "EvalManifest", "GammaConfig", "GaussianPrimitive",
    "RayBundle", "RefineConfig", "Scene", "ScoreVector", "angular_error", "cast_rays", "coarse_estimate",
    "evaluate", "gt_scores", "load_ply", "look_at", "refine_pose", "render", "save_ply", "synth_scene",
    "translation_error",
]
