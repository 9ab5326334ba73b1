"""Slow, straight-line reference implementations used as test oracles."""

import math

import numpy as np
from scipy.spatial.transform import Rotation

FLIP = np.diag([1.0, -1.0, -1.0])


def covariance_oracle(quat_wxyz, scale):
    w, x, y, z = quat_wxyz
    R = Rotation.from_quat([x, y, z, w]).as_matrix()
    return R @ np.diag(np.square(scale)) @ R.T


def project_oracle(mean, cov, cam):
    """Pixel mean, 2x2 covariance (with the 0.3 px^2 low-pass) and depth of one Gaussian."""
    Rcv = FLIP @ cam.rotation.T
    x, y, z = Rcv @ (np.asarray(mean) - cam.position)
    J = np.array([[cam.fx / z, 0.0, -cam.fx * x / z**2], [0.0, cam.fy / z, -cam.fy * y / z**2]])
    cov2 = J @ Rcv @ cov @ Rcv.T @ J.T + 0.3 * np.eye(2)
    return np.array([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy]), cov2, z


def render_pixel_oracle(scene, cam, u, v):
    """Composite one pixel by explicit loops.

    Returns (color, alpha, depth, alphas) where alphas are the per-primitive
    opacities that contributed, front to back.
    """
    items = []
    for i in range(len(scene)):
        cov = covariance_oracle(scene.rotations[i], scene.scales[i])
        m, c2, z = project_oracle(scene.means[i], cov, cam)
        if z <= 0.01 * scene.bbox_extent:
            continue
        items.append((z, i, m, c2))
    items.sort(key=lambda t: (t[0], t[1]))
    color = np.zeros(3)
    T = 1.0
    num = den = 0.0
    alphas = []
    for z, i, m, c2 in items:
        lam = np.linalg.eigvalsh(c2).max()
        r = math.ceil(3.0 * math.sqrt(lam))
        if not (math.floor(m[0] - r) <= u <= math.ceil(m[0] + r) and math.floor(m[1] - r) <= v <= math.ceil(m[1] + r)):
            continue
        delta = np.array([u, v]) - m
        a = min(0.99, scene.opacities[i] * math.exp(-0.5 * delta @ np.linalg.solve(c2, delta)))
        if a < 1.0 / 255.0:
            continue
        color += scene.colors[i] * a * T
        num += z * a * T
        den += a * T
        T *= 1.0 - a
        alphas.append(a)
    return color, 1.0 - T, (num / den if den > 0 else 0.0), alphas


def gradient_fixture(seed=0, n_rays=5, n_pixels=4, channels=8, hidden=6, bands=1):
    """Tiny scorer, bundle, feature matrix and target for finite-difference checks."""
    from splatpose.attention import AttentionScorer
    from splatpose.rays import RayBundle
    from splatpose.scoring import ScoreVector

    rng = np.random.default_rng(seed)
    scorer = AttentionScorer.init(channels, fourier_bands=bands, hidden_dim=hidden, seed=seed)
    # larger weights than the initializer so every head sees non-trivial softmaxes
    for k in scorer.params:
        scorer.params[k] = rng.normal(scale=0.7, size=scorer.params[k].shape)
    d = rng.normal(size=(n_rays, 3))
    bundle = RayBundle(rng.normal(scale=0.3, size=(n_rays, 3)), d / np.linalg.norm(d, axis=1, keepdims=True),
                       np.arange(n_rays), np.arange(n_rays + 1))
    F = rng.normal(size=(n_pixels, channels))
    t = rng.dirichlet(np.ones(n_rays), size=2) * n_pixels
    return scorer, bundle, F, ScoreVector(t[0], t[1], float(n_pixels))


def finite_difference_grads(scorer, loss_fn, eps=1e-4):
    """Central differences of ``loss_fn(scorer)`` for every parameter entry."""
    out = {}
    for name, w in scorer.params.items():
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + eps
            up = loss_fn(scorer)
            w[idx] = old - eps
            down = loss_fn(scorer)
            w[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out[name] = g
    return out


def relative_error(a, b, floor=1e-6):
    """Norm-wise relative difference of two gradient tensors.

    ``floor`` keeps tensors whose exact gradient is zero (a bias that the
    softmax is invariant to) from dividing round-off by round-off.
    """
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), floor))


def pnp_fixture(seed, n=20, noise_px=0.0, outlier_fraction=0.0, outlier_px=50.0):
    """Known camera and n correspondences spread over the image at depths 2..4.

    Returns (camera, uv, world_points, outlier_mask). Outliers are moved by
    exactly ``outlier_px`` in a random image direction.
    """
    from splatpose.camera import backproject_pixels, look_at

    rng = np.random.default_rng(seed)
    d = rng.normal(size=3)
    cam = look_at(3.0 * d / np.linalg.norm(d), rng.normal(size=3) * 0.2,
                  dict(fx=500.0, fy=500.0, cx=319.5, cy=239.5, width=640, height=480))
    uv = rng.uniform([10, 10], [630, 470], size=(n, 2))
    X = backproject_pixels(uv, rng.uniform(2.0, 4.0, n), cam)
    obs = uv + rng.normal(scale=noise_px, size=uv.shape) if noise_px else uv.copy()
    outliers = np.zeros(n, dtype=bool)
    outliers[rng.choice(n, int(round(outlier_fraction * n)), replace=False)] = True
    ang = rng.uniform(0, 2 * np.pi, outliers.sum())
    obs[outliers] += outlier_px * np.c_[np.cos(ang), np.sin(ang)]
    return cam, obs, X, outliers


def rotation_angle_deg(R1, R2):
    c = (np.trace(R1.T @ R2) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def textured_image(seed, shape=(120, 160), sigma=2.0):
    """Smoothed random texture in [0, 1], rich in corners."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.uniform(size=shape), sigma)
    img -= img.min()
    return img / img.max()
