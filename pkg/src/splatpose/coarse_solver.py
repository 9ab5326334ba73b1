"""Closed-form coarse pose from scored rays.

Position is the weighted least-squares point closest to the selected rays;
orientation is the negated weighted mean of the selected ray directions.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .camera import look_at_rotation
from .errors import AmbiguousOrientationError, DegenerateConfigurationError
from .rays import RayBundle, cast_rays
from .scoring import GammaConfig, gt_scores

MAX_CONDITION = 1e10


@dataclass(frozen=True, eq=False)
class SelectedRays:
    origins: np.ndarray
    directions: np.ndarray
    ellipsoid_ids: np.ndarray
    ray_indices: np.ndarray  # indices into the source bundle
    weights: np.ndarray  # renormalized to sum 1

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class CoarsePose:
    position: np.ndarray
    orientation: np.ndarray
    rotation: np.ndarray
    condition_number: float

    def to_dict(self):
        return {
            "position": self.position.tolist(),
            "rotation": self.rotation.reshape(-1).tolist(),
            "condition_number": float(self.condition_number),
        }


@dataclass(frozen=True)
class CoarseConfig:
    k: int = 100
    subdivision_level: int = 1
    k_sigma: float = 1.0
    gamma_pos: float | None = None  # default 0.1 * scene extent
    gamma_ori: float = 0.3
    world_up: tuple = (0.0, 1.0, 0.0)
    literal_position: bool = False


def select_topk(bundle: RayBundle, scores, k: int) -> SelectedRays:
    """Best ray per ellipsoid, then the ``k`` best ellipsoids.

    Ties break towards the lower ray index inside an ellipsoid and towards the
    lower ellipsoid id across ellipsoids.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(scores) != len(bundle):
        raise ValueError("one score per ray is required")
    if len(bundle) < k:
        raise ValueError(f"k={k} exceeds the number of rays ({len(bundle)})")
    idx = np.arange(len(scores))
    ids = bundle.ellipsoid_ids
    order = np.lexsort((idx, -scores, ids))
    sorted_ids = ids[order]
    first = np.r_[True, sorted_ids[1:] != sorted_ids[:-1]]
    reps = order[first]  # one ray per ellipsoid
    if len(reps) < k:
        warnings.warn(f"only {len(reps)} ellipsoids available for k={k}; using all", stacklevel=2)
    reps = reps[np.lexsort((ids[reps], -scores[reps]))][:k]
    w = scores[reps]
    total = w.sum()
    if not total > 0:
        raise ValueError("selected scores must have a positive sum")
    return SelectedRays(
        origins=bundle.origins[reps],
        directions=bundle.directions[reps],
        ellipsoid_ids=ids[reps],
        ray_indices=reps,
        weights=w / total,
    )


def position_objective(P, origins, directions, weights=None):
    """Weighted sum of squared normal distances from ``P`` to the ray lines."""
    diff = np.asarray(P) - origins
    along = np.sum(diff * directions, axis=1)
    per_ray = np.sum(diff * diff, axis=1) - along**2
    if weights is None:
        return float(per_ray.sum())
    return float(np.dot(weights, per_ray))


def estimate_position(sel: SelectedRays, literal=False):
    """Returns (position, condition number of the normal matrix).

    ``literal=True`` returns the plain weighted sum sum_i w_i (I - d d^T) o_i
    instead of solving the normal equations; it only coincides with the
    least-squares point in special configurations and exists for comparison.
    """
    if len(sel) < 2:
        raise ValueError("at least two rays are needed to solve for position")
    d = sel.directions
    w = sel.weights
    # projectors onto the plane normal to each ray
    proj = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    A = np.einsum("n,nij->ij", w, proj)
    b = np.einsum("n,nij,nj->i", w, proj, sel.origins)
    cond = float(np.linalg.cond(A))
    if literal:
        return b, cond
    if not cond <= MAX_CONDITION:
        raise DegenerateConfigurationError(f"rays are near-parallel (cond={cond:.3g})")
    return np.linalg.solve(A, b), cond


def estimate_orientation(sel: SelectedRays):
    v = sel.weights @ sel.directions
    n = np.linalg.norm(v)
    if n <= 1e-9:
        raise AmbiguousOrientationError("weighted ray directions cancel out")
    return -v / n


def build_pose(position, orientation, world_up=(0.0, 1.0, 0.0), condition_number=np.nan) -> CoarsePose:
    q = np.asarray(orientation, dtype=np.float64)
    q = q / np.linalg.norm(q)
    return CoarsePose(
        position=np.asarray(position, dtype=np.float64),
        orientation=q,
        rotation=look_at_rotation(q, world_up),
        condition_number=float(condition_number),
    )


def solve_from_scores(bundle, s_p, s_o, k=100, world_up=(0.0, 1.0, 0.0), literal=False) -> CoarsePose:
    """Position from the ``s_p`` top-k rays, orientation from the ``s_o`` top-k rays."""
    sel_p = select_topk(bundle, s_p, k)
    sel_o = select_topk(bundle, s_o, k)
    P, cond = estimate_position(sel_p, literal=literal)
    Q = estimate_orientation(sel_o)
    return build_pose(P, Q, world_up, cond)


def coarse_estimate(scene, config=CoarseConfig(), *, scorer=None, features=None,
                    oracle_camera=None, bundle=None) -> CoarsePose:
    """Cast rays, score them, and solve for the coarse pose.

    Scores come from a trained ``scorer`` applied to ``features`` or, when
    ``oracle_camera`` is given, from the geometric ground truth for that camera.
    """
    if bundle is None:
        bundle = cast_rays(scene, config.subdivision_level, config.k_sigma)
    if oracle_camera is not None:
        gamma = GammaConfig.for_scene(scene, config.gamma_pos, config.gamma_ori)
        scores = gt_scores(bundle, oracle_camera, gamma)
    elif scorer is not None:
        if features is None:
            raise ValueError("a trained scorer needs a feature map")
        from .attention import predict_scores

        scores = predict_scores(scorer, bundle, features)
    else:
        raise ValueError("either scorer+features or oracle_camera is required")
    return solve_from_scores(bundle, scores.s_p, scores.s_o, config.k,
                             config.world_up, config.literal_position)
