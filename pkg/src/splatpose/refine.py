"""Render-match-PnP refinement of a coarse pose.

A view is rendered at the coarse pose, matched against the query image, the
rendered-side keypoints are lifted to 3D with the rendered depth, and PnP
over the resulting 2D-3D correspondences gives the refined pose.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, backproject_pixels
from .errors import InsufficientMatchesError, SplatPoseError
from .matching import MIN_MATCHES, Matches, MatcherConfig, match_keypoints
from .pnp import (
    RansacConfig,
    RefinedPose,
    camera_frame_to_pose,
    levenberg_marquardt,
    pose_to_camera_frame,
    reprojection_errors,
    solve_pnp_ransac,
)
from .rasterizer import render

log = logging.getLogger(__name__)

MIN_ALPHA = 0.5


@dataclass(frozen=True, eq=False)
class Lifted:
    """2D-3D correspondences: query pixels and the world points they see."""

    query_px: np.ndarray
    world_points: np.ndarray

    def __len__(self):
        return len(self.query_px)


@dataclass(frozen=True)
class RefineConfig:
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    ransac: RansacConfig = field(default_factory=RansacConfig)


def lift_matches(matches: Matches, depth_map, render_cam: Camera, alpha_map=None) -> Lifted:
    """Back-project the rendered-side keypoints using the rendered depth.

    Depth and alpha are read at the nearest pixel; matches on background
    (depth <= 0 or alpha < 0.5) are dropped.
    """
    H, W = depth_map.shape
    rp = np.asarray(matches.rendered_px, dtype=np.float64)
    cols = np.clip(np.rint(rp[:, 0]).astype(np.int64), 0, W - 1)
    rows = np.clip(np.rint(rp[:, 1]).astype(np.int64), 0, H - 1)
    depth = depth_map[rows, cols]
    keep = depth > 0
    if alpha_map is not None:
        keep &= alpha_map[rows, cols] >= MIN_ALPHA
    if not keep.any():
        raise InsufficientMatchesError(0)
    world = backproject_pixels(rp[keep], depth[keep], render_cam)
    return Lifted(query_px=np.asarray(matches.query_px)[keep], world_points=world)


def _unrefined(rotation, position, reason):
    log.info("refinement skipped: %s", reason)
    return RefinedPose(
        rotation=np.asarray(rotation), position=np.asarray(position), inlier_count=0,
        inlier_ratio=0.0, mean_reprojection_error=float("nan"), refined=False,
    )


def refine_pose(scene, coarse, query_img, intrinsics: Camera, cfg: RefineConfig = RefineConfig(),
                matches: Matches | None = None) -> RefinedPose:
    """Single render-match-lift-PnP pass starting from ``coarse``.

    ``coarse`` is anything with ``rotation`` and ``position``; ``intrinsics``
    supplies the query camera's intrinsics. Pre-computed ``matches`` (e.g. from
    an external matcher) bypass the built-in matcher. Any stage failure
    returns the coarse pose with ``refined=False``.
    """
    render_cam = intrinsics.with_pose(coarse.rotation, coarse.position)
    out = render(scene, render_cam)
    try:
        if matches is None:
            matches = match_keypoints(query_img, out.color, cfg.matcher)
        lifted = lift_matches(matches, out.depth, render_cam, out.alpha)
        if len(lifted) < MIN_MATCHES:
            raise InsufficientMatchesError(len(lifted))
        result = solve_pnp_ransac(lifted.query_px, lifted.world_points, render_cam.K, cfg.ransac)
    except SplatPoseError as exc:
        return _unrefined(coarse.rotation, coarse.position, exc)

    # Also polish from the coarse pose on the same inliers and keep whichever
    # reprojects better, so refinement never loses to its starting point.
    K = render_cam.K
    mask = result.inliers
    X, uv = lifted.world_points[mask], lifted.query_px[mask]
    R0, t0 = camera_frame_to_pose(coarse.rotation, coarse.position)
    R1, t1 = levenberg_marquardt(R0, t0, X, uv, K, cfg.ransac.lm_iterations, cfg.ransac.gradient_tol)
    alt = reprojection_errors(R1, t1, X, uv, K).mean()
    if alt < result.mean_reprojection_error:
        rotation, position = pose_to_camera_frame(R1, t1)
        result = RefinedPose(
            rotation=rotation, position=position, inlier_count=result.inlier_count,
            inlier_ratio=result.inlier_ratio, mean_reprojection_error=float(alt), inliers=mask,
        )
    return result
