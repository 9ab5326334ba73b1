"""Built-in corner matcher and correspondence-file I/O.

Corners are Shi-Tomasi maxima with sub-pixel parabolic refinement; each
corner is described by its zero-mean, unit-norm 11x11 grayscale patch so the
squared Euclidean descriptor distance equals 2 - 2 * NCC. Matches are mutual
nearest neighbours that also pass a distance ratio test.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InsufficientMatchesError

MIN_MATCHES = 6


@dataclass(frozen=True)
class MatcherConfig:
    patch_size: int = 11
    ratio: float = 0.9
    max_corners: int = 1000
    quality: float = 0.01  # response threshold relative to the strongest corner
    nms_radius: int = 3
    window_sigma: float = 1.5
    min_patch_std: float = 1e-3
    subpixel_iterations: int = 10  # Lucas-Kanade steps aligning query to rendered patch; 0 disables


@dataclass(frozen=True, eq=False)
class Matches:
    """2D-2D correspondences stored as arrays."""

    query_px: np.ndarray  # (n, 2)
    rendered_px: np.ndarray  # (n, 2)
    score: np.ndarray  # (n,), in [0, 1]

    def __len__(self):
        return len(self.score)


def to_gray(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        return img[..., :3] @ np.array([0.299, 0.587, 0.114])
    return img


def detect_corners(gray, cfg: MatcherConfig = MatcherConfig()):
    """Sub-pixel Shi-Tomasi corners, strongest first. Returns (n, 2) (u, v)."""
    gx = ndimage.sobel(gray, axis=1)
    gy = ndimage.sobel(gray, axis=0)
    s = cfg.window_sigma
    sxx = ndimage.gaussian_filter(gx * gx, s)
    syy = ndimage.gaussian_filter(gy * gy, s)
    sxy = ndimage.gaussian_filter(gx * gy, s)
    tr = 0.5 * (sxx + syy)
    resp = tr - np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy**2, 0.0))
    peak = resp.max()
    if not peak > 0:
        return np.zeros((0, 2))
    local_max = resp == ndimage.maximum_filter(resp, size=2 * cfg.nms_radius + 1)
    border = cfg.patch_size // 2 + 1
    keep = local_max & (resp > cfg.quality * peak)
    keep[:border] = keep[-border:] = False
    keep[:, :border] = keep[:, -border:] = False
    ys, xs = np.nonzero(keep)
    order = np.argsort(-resp[ys, xs], kind="stable")[: cfg.max_corners]
    ys, xs = ys[order], xs[order]

    def vertex(m, c, p):
        den = m - 2.0 * c + p
        with np.errstate(divide="ignore", invalid="ignore"):
            off = np.where(np.abs(den) > 1e-12, 0.5 * (m - p) / den, 0.0)
        return np.clip(off, -0.5, 0.5)

    c = resp[ys, xs]
    du = vertex(resp[ys, xs - 1], c, resp[ys, xs + 1])
    dv = vertex(resp[ys - 1, xs], c, resp[ys + 1, xs])
    return np.stack([xs + du, ys + dv], axis=1)


def describe(gray, corners, cfg: MatcherConfig = MatcherConfig()):
    """Zero-mean unit-norm patches; returns (descriptors, valid mask)."""
    h = cfg.patch_size // 2
    offs = np.arange(-h, h + 1)
    ci = np.rint(corners).astype(np.int64)
    rows = ci[:, 1, None, None] + offs[None, :, None]
    cols = ci[:, 0, None, None] + offs[None, None, :]
    rows = np.clip(rows, 0, gray.shape[0] - 1)
    cols = np.clip(cols, 0, gray.shape[1] - 1)
    patches = gray[rows, cols].reshape(len(corners), len(offs) ** 2)
    patches = patches - patches.mean(axis=1, keepdims=True)
    norm = np.linalg.norm(patches, axis=1)
    valid = norm / np.sqrt(patches.shape[1]) > cfg.min_patch_std
    desc = np.zeros_like(patches)
    desc[valid] = patches[valid] / norm[valid, None]
    return desc, valid


def match_keypoints(query_img, rendered_img, cfg: MatcherConfig = MatcherConfig()) -> Matches:
    q = to_gray(query_img)
    r = to_gray(rendered_img)
    if q.shape != r.shape:
        raise ValueError(f"image sizes differ: {q.shape} vs {r.shape}")
    cq, cr = detect_corners(q, cfg), detect_corners(r, cfg)
    dq, vq = describe(q, cq, cfg)
    dr, vr = describe(r, cr, cfg)
    cq, dq = cq[vq], dq[vq]
    cr, dr = cr[vr], dr[vr]
    if len(cq) < 2 or len(cr) < 2:
        raise InsufficientMatchesError(0)

    ncc = dq @ dr.T
    dist = np.sqrt(np.maximum(2.0 - 2.0 * ncc, 0.0))
    fwd = np.argmin(dist, axis=1)
    bwd = np.argmin(dist, axis=0)
    mutual = bwd[fwd] == np.arange(len(cq))
    two = np.partition(dist, 1, axis=1)[:, :2]
    ratio_ok = two[:, 0] < cfg.ratio * two[:, 1]
    sel = np.flatnonzero(mutual & ratio_ok)
    if len(sel) < MIN_MATCHES:
        raise InsufficientMatchesError(len(sel))
    score = np.clip(ncc[sel, fwd[sel]], 0.0, 1.0)
    q_px, r_px = cq[sel], cr[fwd[sel]]
    if cfg.subpixel_iterations > 0:
        q_px = align_subpixel(q, r, q_px, r_px, cfg)
    return Matches(query_px=q_px, rendered_px=r_px, score=score)


def align_subpixel(query_gray, rendered_gray, q_px, r_px, cfg: MatcherConfig = MatcherConfig()):
    """Shift each query keypoint so its patch best matches the rendered patch.

    Translational Lucas-Kanade on Gaussian-weighted, zero-mean patches; the
    rendered keypoint stays fixed. Shifts larger than one patch radius are
    rejected and the detector position is kept.
    """
    h = cfg.patch_size // 2
    g = np.arange(-h, h + 1, dtype=np.float64)
    gy, gx = np.meshgrid(g, g, indexing="ij")
    gx, gy = gx.ravel(), gy.ravel()
    w = np.exp(-(gx**2 + gy**2) / (2.0 * (h / 2.0) ** 2))
    gqy, gqx = np.gradient(query_gray)

    def sample(img, centers):
        rows = centers[:, 1, None] + gy[None]
        cols = centers[:, 0, None] + gx[None]
        return ndimage.map_coordinates(img, [rows.ravel(), cols.ravel()], order=1,
                                       mode="nearest").reshape(len(centers), -1)

    tmpl = sample(rendered_gray, r_px)
    tmpl -= (tmpl * w).sum(axis=1, keepdims=True) / w.sum()
    pos = np.array(q_px, dtype=np.float64)
    for _ in range(cfg.subpixel_iterations):
        patch = sample(query_gray, pos)
        patch -= (patch * w).sum(axis=1, keepdims=True) / w.sum()
        ix, iy = sample(gqx, pos), sample(gqy, pos)
        ix -= (ix * w).sum(axis=1, keepdims=True) / w.sum()
        iy -= (iy * w).sum(axis=1, keepdims=True) / w.sum()
        err = patch - tmpl
        a, b, c = (w * ix * ix).sum(1), (w * ix * iy).sum(1), (w * iy * iy).sum(1)
        ex, ey = (w * ix * err).sum(1), (w * iy * err).sum(1)
        det = a * c - b * b
        ok = det > 1e-12
        step = np.zeros_like(pos)
        step[ok, 0] = -(c[ok] * ex[ok] - b[ok] * ey[ok]) / det[ok]
        step[ok, 1] = -(a[ok] * ey[ok] - b[ok] * ex[ok]) / det[ok]
        pos += np.clip(step, -1.0, 1.0)
        if np.max(np.abs(step)) < 1e-4:
            break
    moved = np.linalg.norm(pos - q_px, axis=1)
    bad = ~np.isfinite(moved) | (moved > h)
    pos[bad] = q_px[bad]
    return pos


def read_matches_csv(path) -> Matches:
    """Correspondences exported by an external matcher (columns qu,qv,ru,rv,score)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if len(rows) < MIN_MATCHES:
        raise InsufficientMatchesError(len(rows))
    arr = np.array([[float(r[k]) for k in ("qu", "qv", "ru", "rv", "score")] for r in rows])
    return Matches(query_px=arr[:, :2], rendered_px=arr[:, 2:4], score=arr[:, 4])


def write_matches_csv(matches: Matches, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["qu", "qv", "ru", "rv", "score"])
        for q, r, s in zip(matches.query_px, matches.rendered_px, matches.score):
            w.writerow([repr(float(q[0])), repr(float(q[1])), repr(float(r[0])), repr(float(r[1])),
                        repr(float(s))])
