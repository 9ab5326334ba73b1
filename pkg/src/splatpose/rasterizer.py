"""EWA splatting renderer producing color, expected depth and alpha images.

Every non-culled Gaussian is evaluated exactly on all pixels inside its 3-sigma
screen-space bounding box; Gaussians are composited front to back in order of
camera-frame depth, so the per-pixel order is the global depth order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import Camera, backproject_pixel  # noqa: F401  (re-export)
from .scene import GaussianPrimitive, Scene, covariances

LOWPASS = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
NEAR_FRACTION = 0.01


@dataclass(frozen=True)
class Projected2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float


@dataclass(frozen=True)
class RenderOutput:
    color: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W)
    alpha: np.ndarray  # (H, W)


def _project_batch(means, covs, cam: Camera):
    """Means (N, 3), covariances (N, 3, 3) -> mean2d (N, 2), cov2d (N, 2, 2), depth (N,)."""
    R_cv, t_cv = cam.world_to_cv()
    pc = means @ R_cv.T + t_cv
    z = pc[:, 2]
    safe_z = np.where(np.abs(z) > 1e-12, z, 1e-12)
    mean2d = np.stack([cam.fx * pc[:, 0] / safe_z + cam.cx, cam.fy * pc[:, 1] / safe_z + cam.cy], axis=1)
    n = len(means)
    J = np.zeros((n, 2, 3))
    J[:, 0, 0] = cam.fx / safe_z
    J[:, 0, 2] = -cam.fx * pc[:, 0] / safe_z**2
    J[:, 1, 1] = cam.fy / safe_z
    J[:, 1, 2] = -cam.fy * pc[:, 1] / safe_z**2
    T = J @ R_cv
    cov2d = T @ covs @ np.swapaxes(T, 1, 2)
    cov2d = 0.5 * (cov2d + np.swapaxes(cov2d, 1, 2))
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    return mean2d, cov2d, z


def project_gaussian(p: GaussianPrimitive, cam: Camera, extent: float = 1.0):
    """Screen-space footprint of one primitive, or ``None`` when culled.

    A primitive is culled when its camera-frame depth is at most
    ``0.01 * extent`` (``extent`` is the scene's bounding-box extent).
    """
    cov = covariances(np.asarray(p.rotation)[None], np.asarray(p.scale)[None])
    mean2d, cov2d, z = _project_batch(np.asarray(p.mean, dtype=np.float64)[None], cov, cam)
    if z[0] <= NEAR_FRACTION * extent:
        return None
    return Projected2D(mean2d=mean2d[0], cov2d=cov2d[0], depth=float(z[0]))


def render(scene: Scene, cam: Camera) -> RenderOutput:
    H, W = cam.height, cam.width
    color = np.zeros((H, W, 3))
    depth = np.zeros((H, W))
    weight = np.zeros((H, W))
    trans = np.ones((H, W))

    mean2d, cov2d, z = _project_batch(scene.means, scene.covariances(), cam)
    visible = np.flatnonzero(z > NEAR_FRACTION * scene.bbox_extent)
    order = visible[np.argsort(z[visible], kind="stable")]

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    # conic = inverse 2x2 covariance (a, b, c) for [[a, b], [b, c]]
    ca = cov2d[:, 1, 1] / det
    cb = -cov2d[:, 0, 1] / det
    cc = cov2d[:, 0, 0] / det
    mid = 0.5 * (cov2d[:, 0, 0] + cov2d[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid**2 - det, 0.0))
    radius = np.ceil(3.0 * np.sqrt(lam_max))

    for i in order:
        mx, my = mean2d[i]
        r = radius[i]
        x0, x1 = max(int(np.floor(mx - r)), 0), min(int(np.ceil(mx + r)), W - 1)
        y0, y1 = max(int(np.floor(my - r)), 0), min(int(np.ceil(my + r)), H - 1)
        if x0 > x1 or y0 > y1:
            continue
        dx = np.arange(x0, x1 + 1) - mx
        dy = (np.arange(y0, y1 + 1) - my)[:, None]
        power = -0.5 * (ca[i] * dx * dx + cc[i] * dy * dy) - cb[i] * dx * dy
        alpha = np.minimum(ALPHA_MAX, scene.opacities[i] * np.exp(power))
        alpha = np.where(alpha >= ALPHA_MIN, alpha, 0.0)
        if not alpha.any():
            continue
        T = trans[y0:y1 + 1, x0:x1 + 1]
        w = alpha * T
        color[y0:y1 + 1, x0:x1 + 1] += w[..., None] * scene.colors[i]
        Wsum = weight[y0:y1 + 1, x0:x1 + 1]
        Wsum += w
        # running weighted mean; exact when a single primitive covers the pixel
        D = depth[y0:y1 + 1, x0:x1 + 1]
        hit = w > 0
        D[hit] += (w[hit] / Wsum[hit]) * (z[i] - D[hit])
        T *= 1.0 - alpha

    return RenderOutput(color=color, depth=depth, alpha=np.clip(weight, 0.0, 1.0))


# -- image / depth file output ------------------------------------------------


def save_png(color, path):
    from PIL import Image

    img = np.clip(np.round(np.asarray(color) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(img).save(path)


def load_image(path):
    """Load an image as float RGB in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_depth(depth, path):
    depth = np.asarray(depth, dtype="<f4")
    H, W = depth.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<II", H, W))
        f.write(depth.tobytes(order="C"))


def load_depth(path):
    with open(path, "rb") as f:
        H, W = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(4 * H * W), dtype="<f4")
    if data.size != H * W:
        raise ValueError("truncated depth file")
    return data.reshape(H, W).astype(np.float64)
