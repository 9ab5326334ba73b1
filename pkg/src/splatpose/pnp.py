"""Perspective-n-Point: 6-point DLT hypotheses in RANSAC, polished with Levenberg-Marquardt.

All internal math uses the computer-vision camera frame (x right, y down,
z forward): x_cv = R @ X + t. Conversion to the package's camera
convention happens in :func:`pose_to_camera_frame`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import GL_TO_CV
from .errors import PnPFailedError

MIN_POINTS = 6


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 2.0  # reprojection error in pixels
    confidence: float = 0.999
    max_iterations: int = 2000
    seed: int = 0
    lm_iterations: int = 50
    gradient_tol: float = 1e-10


@dataclass(frozen=True, eq=False)
class RefinedPose:
    rotation: np.ndarray  # world-from-camera, package convention
    position: np.ndarray
    inlier_count: int
    inlier_ratio: float
    mean_reprojection_error: float
    inliers: np.ndarray | None = None  # boolean mask over the input correspondences
    refined: bool = True

    def to_dict(self):
        return {
            "rotation": self.rotation.reshape(-1).tolist(),
            "position": self.position.tolist(),
            "inlier_count": int(self.inlier_count),
            "inlier_ratio": float(self.inlier_ratio),
            "mean_reprojection_error": float(self.mean_reprojection_error),
            "refined": bool(self.refined),
        }


def pose_to_camera_frame(R_cv, t_cv):
    """(R_cv, t_cv) -> (world-from-camera rotation, camera position)."""
    return R_cv.T @ GL_TO_CV, -R_cv.T @ t_cv


def camera_frame_to_pose(rotation, position):
    R_cv = GL_TO_CV @ np.asarray(rotation).T
    return R_cv, -R_cv @ np.asarray(position)


def reprojection_errors(R, t, X, uv, K):
    pc = X @ R.T + t
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K[0, 0] * pc[:, 0] / z + K[0, 2]
        v = K[1, 1] * pc[:, 1] / z + K[1, 2]
    err = np.hypot(u - uv[:, 0], v - uv[:, 1])
    return np.where(z > 0, err, np.inf)


def dlt(X, uv, K):
    """Linear pose from >= 6 correspondences. Returns (R, t) or None when degenerate."""
    n = len(X)
    xn = np.column_stack([uv, np.ones(n)]) @ np.linalg.inv(K).T
    centroid = X.mean(axis=0)
    scale = np.sqrt(np.mean(np.sum((X - centroid) ** 2, axis=1)))
    if not scale > 0:
        return None
    Xs = (X - centroid) / scale
    Xh = np.column_stack([Xs, np.ones(n)])
    A = np.zeros((2 * n, 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, 0:1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:2] * Xh
    _, sv, Vt = np.linalg.svd(A)
    if n == MIN_POINTS and sv[-2] < 1e-12 * sv[0]:
        return None
    P = Vt[-1].reshape(3, 4)
    if np.linalg.det(P[:, :3]) < 0:
        P = -P
    U, S, Wt = np.linalg.svd(P[:, :3])
    if not S[0] > 0:
        return None
    R = U @ Wt
    if np.linalg.det(R) < 0:
        return None
    s = S.mean()
    t_s = P[:, 3] / s
    # undo the 3D normalization: R Xs + t_s = (R X - R c) / scale + t_s
    t = scale * t_s - R @ centroid
    return R, t


def _residuals_and_jacobian(R, t, X, uv, K):
    pc = X @ R.T + t
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    fx, fy = K[0, 0], K[1, 1]
    r = np.empty(2 * len(X))
    r[0::2] = fx * x / z + K[0, 2] - uv[:, 0]
    r[1::2] = fy * y / z + K[1, 2] - uv[:, 1]
    dproj = np.zeros((len(X), 2, 3))
    dproj[:, 0, 0] = fx / z
    dproj[:, 0, 2] = -fx * x / z**2
    dproj[:, 1, 1] = fy / z
    dproj[:, 1, 2] = -fy * y / z**2
    # left perturbation R <- exp([w]x) R: d(pc)/dw = -[R X]x
    rx = X @ R.T
    skew = np.zeros((len(X), 3, 3))
    skew[:, 0, 1], skew[:, 0, 2] = rx[:, 2], -rx[:, 1]
    skew[:, 1, 0], skew[:, 1, 2] = -rx[:, 2], rx[:, 0]
    skew[:, 2, 0], skew[:, 2, 1] = rx[:, 1], -rx[:, 0]
    J = np.concatenate([dproj @ skew, dproj], axis=2).reshape(2 * len(X), 6)
    return r, J


def levenberg_marquardt(R, t, X, uv, K, max_iterations=50, gradient_tol=1e-10):
    """Minimize the squared reprojection error over (R, t)."""
    r, J = _residuals_and_jacobian(R, t, X, uv, K)
    cost = r @ r
    lam = 1e-3 * np.max(np.diag(J.T @ J))
    for _ in range(max_iterations):
        g = J.T @ r
        if np.max(np.abs(g)) < gradient_tol:
            break
        H = J.T @ J
        improved = False
        while lam < 1e16:
            try:
                step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            R_new = Rotation.from_rotvec(step[:3]).as_matrix() @ R
            t_new = t + step[3:]
            r_new, J_new = _residuals_and_jacobian(R_new, t_new, X, uv, K)
            cost_new = r_new @ r_new
            if np.isfinite(cost_new) and cost_new <= cost:
                R, t, r, J = R_new, t_new, r_new, J_new
                converged = cost - cost_new <= 1e-15 * max(cost, 1e-300)
                cost = cost_new
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved or converged:
            break
    # re-orthonormalize accumulated rotation updates
    U, _, Vt = np.linalg.svd(R)
    return U @ Vt, t


def _ransac_iterations(inlier_ratio, confidence, sample_size=MIN_POINTS):
    w = inlier_ratio**sample_size
    if w >= 1.0:
        return 1
    if w <= 0.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(1.0 - w)


def solve_pnp_ransac(image_points, world_points, K, cfg: RansacConfig = RansacConfig()) -> RefinedPose:
    """Robust camera pose from 2D pixel / 3D world correspondences.

    ``K`` is a 3x3 intrinsics matrix (or any object with a ``K`` attribute).
    """
    K = np.asarray(getattr(K, "K", K), dtype=np.float64)
    uv = np.asarray(image_points, dtype=np.float64).reshape(-1, 2)
    X = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    n = len(X)
    if n < MIN_POINTS:
        raise PnPFailedError(0)

    rng = np.random.default_rng(cfg.seed)
    best = None  # (count, total_error, R, t, mask)
    needed = cfg.max_iterations
    it = 0
    while it < min(needed, cfg.max_iterations):
        it += 1
        sample = rng.choice(n, size=MIN_POINTS, replace=False)
        model = dlt(X[sample], uv[sample], K)
        if model is None:
            continue
        R, t = model
        err = reprojection_errors(R, t, X, uv, K)
        mask = err < cfg.threshold
        count = int(mask.sum())
        total = float(err[mask].sum())
        if best is None or count > best[0] or (count == best[0] and total < best[1]):
            best = (count, total, R, t, mask)
            needed = _ransac_iterations(count / n, cfg.confidence)

    if best is None or best[0] < MIN_POINTS:
        raise PnPFailedError(0 if best is None else best[0])

    _, _, R, t, mask = best
    refit = dlt(X[mask], uv[mask], K)
    if refit is not None:
        R2, t2 = refit
        if np.mean(reprojection_errors(R2, t2, X[mask], uv[mask], K)) < np.mean(
            reprojection_errors(R, t, X[mask], uv[mask], K)
        ):
            R, t = R2, t2
    for _ in range(2):
        R, t = levenberg_marquardt(R, t, X[mask], uv[mask], K, cfg.lm_iterations, cfg.gradient_tol)
        new_mask = reprojection_errors(R, t, X, uv, K) < cfg.threshold
        if new_mask.sum() < MIN_POINTS or np.array_equal(new_mask, mask):
            break
        mask = new_mask

    err = reprojection_errors(R, t, X, uv, K)
    rotation, position = pose_to_camera_frame(R, t)
    return RefinedPose(
        rotation=rotation,
        position=position,
        inlier_count=int(mask.sum()),
        inlier_ratio=float(mask.mean()),
        mean_reprojection_error=float(err[mask].mean()),
        inliers=mask,
    )
