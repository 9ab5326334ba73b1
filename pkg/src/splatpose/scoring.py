"""Geometric ground-truth ray scores and the score regression losses."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .rays import RayBundle

KIND_POSITION = 0
KIND_ORIENTATION = 1


@dataclass(frozen=True)
class GammaConfig:
    """Falloff scales: ``gamma_pos`` in world units, ``gamma_ori`` in radians."""

    gamma_pos: float
    gamma_ori: float = 0.3

    def __post_init__(self):
        if not (self.gamma_pos > 0 and self.gamma_ori > 0):
            raise ValueError("gamma values must be positive")

    @classmethod
    def for_scene(cls, scene, gamma_pos=None, gamma_ori=None):
        return cls(
            gamma_pos=0.1 * scene.bbox_extent if gamma_pos is None else gamma_pos,
            gamma_ori=0.3 if gamma_ori is None else gamma_ori,
        )


@dataclass(frozen=True, eq=False)
class ScoreVector:
    s_p: np.ndarray
    s_o: np.ndarray
    m_pixels: float

    def __len__(self):
        return len(self.s_p)


def ray_point_distance(origins, directions, point):
    """Clamped projection parameter L and distance d from ``point`` to each ray.

    Works on a single ray ((3,) arrays) or a batch ((N, 3) arrays).
    """
    o = np.asarray(origins, dtype=np.float64)
    r = np.asarray(directions, dtype=np.float64)
    diff = np.asarray(point, dtype=np.float64) - o
    L = np.maximum(np.sum(diff * r, axis=-1), 0.0)
    closest = o + L[..., None] * r
    d = np.linalg.norm(closest - point, axis=-1)
    return L, d


def ray_orientation_angle(directions, Q):
    """Angle between each ray direction and the reversed viewing direction -Q."""
    Q = np.asarray(Q, dtype=np.float64)
    qn = np.linalg.norm(Q)
    if qn == 0:
        raise ValueError("orientation vector has zero length")
    r = np.asarray(directions, dtype=np.float64)
    cos = -np.sum(r * Q, axis=-1) / (qn * np.linalg.norm(r, axis=-1))
    return np.arccos(np.clip(cos, -1.0, 1.0))


def falloff(x):
    """1 - tanh(x) for x >= 0, written to keep precision for large x."""
    with np.errstate(over="ignore"):
        return 2.0 / (1.0 + np.exp(2.0 * np.asarray(x, dtype=np.float64)))


def gt_scores(bundle: RayBundle, cam, cfg: GammaConfig, m_pixels=None) -> ScoreVector:
    """Ground-truth position/orientation scores for ``cam``, each summing to M.

    ``m_pixels`` defaults to the camera's pixel count; pass the feature-grid
    size when supervising the attention scorer.
    """
    if len(bundle) == 0:
        raise ValueError("empty ray bundle")
    M = float(cam.num_pixels if m_pixels is None else m_pixels)
    _, d = ray_point_distance(bundle.origins, bundle.directions, cam.position)
    theta = ray_orientation_angle(bundle.directions, cam.orientation)
    return ScoreVector(
        s_p=_normalized_falloff(d / cfg.gamma_pos, M),
        s_o=_normalized_falloff(theta / cfg.gamma_ori, M),
        m_pixels=M,
    )


def _normalized_falloff(x, total):
    # log(1 - tanh(x)) = log 2 - 2x - log1p(exp(-2x)); shifting by the max keeps
    # far-away rays from underflowing the whole vector to zero.
    log_a = np.log(2.0) - 2.0 * x - np.log1p(np.exp(-2.0 * x))
    a = np.exp(log_a - log_a.max())
    return a * (total / math.fsum(a))


def score_loss(pred: ScoreVector, gt: ScoreVector, squared=False):
    """(L_p, L_o, L): mean absolute (or squared) per-ray score deviation."""
    if len(pred.s_p) != len(gt.s_p) or len(pred.s_o) != len(gt.s_o):
        raise ValueError(f"score length mismatch: {len(pred.s_p)} vs {len(gt.s_p)}")
    dp = np.asarray(pred.s_p) - gt.s_p
    do = np.asarray(pred.s_o) - gt.s_o
    if squared:
        lp, lo = np.mean(dp * dp), np.mean(do * do)
    else:
        lp, lo = np.mean(np.abs(dp)), np.mean(np.abs(do))
    return float(lp), float(lo), float(lp + lo)


def write_scores(scores: ScoreVector, path):
    """Two blocks, position then orientation, each ``u32 N, u8 kind`` + f32 data."""
    with open(path, "wb") as f:
        for kind, vec in ((KIND_POSITION, scores.s_p), (KIND_ORIENTATION, scores.s_o)):
            vec = np.asarray(vec, dtype="<f4")
            f.write(struct.pack("<IB", len(vec), kind))
            f.write(vec.tobytes())


def read_scores(path):
    """Returns ``{kind: array}`` for every block in a score dump."""
    out = {}
    with open(path, "rb") as f:
        while True:
            head = f.read(5)
            if not head:
                break
            n, kind = struct.unpack("<IB", head)
            out[kind] = np.frombuffer(f.read(4 * n), dtype="<f4").astype(np.float64)
    return out
