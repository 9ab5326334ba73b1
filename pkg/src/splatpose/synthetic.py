"""Synthetic fixtures: held-out views, planted rays and planted feature maps.

These exist so every stage of the pipeline can be checked against known
ground truth without trained scenes or a pretrained image backbone.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .attention import FeatureMap, embedding_dim, fourier_embed
from .camera import Camera, look_at
from .rays import RayBundle, ellipsoid_points


def default_intrinsics(width=320, height=240, focal=300.0):
    return dict(fx=focal, fy=focal, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                width=width, height=height)


def sample_views(scene, n_views, seed, distance=2.2, roll_deg=5.0, target_jitter=0.05,
                 intrinsics=None):
    """Cameras on a sphere of radius ``distance * extent`` around the scene, looking inwards.

    Each view aims at a jittered scene center and gets a random roll in
    [-roll_deg, roll_deg] about its viewing axis.
    """
    intrinsics = intrinsics or default_intrinsics()
    rng = np.random.default_rng(seed)
    ext, center = scene.bbox_extent, scene.center
    cams = []
    for _ in range(n_views):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        target = center + rng.normal(size=3) * target_jitter * ext
        cam = look_at(center + distance * ext * d, target, intrinsics)
        roll = np.radians(rng.uniform(-roll_deg, roll_deg))
        R = cam.rotation @ Rotation.from_rotvec([0.0, 0.0, roll]).as_matrix()
        cams.append(cam.with_pose(R, cam.position))
    return cams


def plant_rays(scene, bundle: RayBundle, cam: Camera, k_sigma=1.0) -> RayBundle:
    """Add two exact rays to every ellipsoid group of ``bundle``.

    The first leaves the k-sigma surface radially towards the camera center
    (so it passes exactly through it); the second leaves radially along the
    reversed viewing direction. Groups stay contiguous and ordered.
    """
    gids = bundle.group_ids()
    to_cam = cam.position - scene.means[gids]
    inv = np.einsum("nji,nj->ni", scene.rotation_matrices()[gids], to_cam) / scene.scales[gids]
    o_pos, d_pos = ellipsoid_points(scene, gids, inv / np.linalg.norm(inv, axis=1, keepdims=True), k_sigma)
    back = np.broadcast_to(-cam.orientation, to_cam.shape)
    inv = np.einsum("nji,nj->ni", scene.rotation_matrices()[gids], back) / scene.scales[gids]
    o_ori, d_ori = ellipsoid_points(scene, gids, inv / np.linalg.norm(inv, axis=1, keepdims=True), k_sigma)

    origins, dirs, ids = [], [], []
    for g, eid in enumerate(gids):
        s, e = bundle.offsets[g], bundle.offsets[g + 1]
        origins += [bundle.origins[s:e], o_pos[g:g + 1], o_ori[g:g + 1]]
        dirs += [bundle.directions[s:e], d_pos[g:g + 1], d_ori[g:g + 1]]
        ids.append(np.full(e - s + 2, eid))
    sizes = np.diff(bundle.offsets) + 2
    return RayBundle(np.concatenate(origins), np.concatenate(dirs), np.concatenate(ids),
                     np.concatenate([[0], np.cumsum(sizes)]))


def feature_grid_pixels(cam: Camera, grid_w, grid_h):
    """Image-plane centers (M, 2) of a grid_h x grid_w feature grid, row-major."""
    us = (np.arange(grid_w) + 0.5) * cam.width / grid_w - 0.5
    vs = (np.arange(grid_h) + 0.5) * cam.height / grid_h - 0.5
    uu, vv = np.meshgrid(us, vs)
    return np.stack([uu.ravel(), vv.ravel()], axis=1)


def planted_feature_dim(bands):
    """Channels of a planted feature map: the ray embedding plus one constant channel."""
    return embedding_dim(bands) + 1


def synthetic_feature_map(cam: Camera, scorer, grid_w=16, grid_h=12, noise=0.01, seed=0) -> FeatureMap:
    """Planted features carrying each grid pixel's viewing-ray geometry.

    Row m is the Fourier embedding (same input normalization and bands as the
    scorer's ray input) of the camera center and the unit world direction of
    pixel m, followed by a constant channel, plus Gaussian noise. The
    constant channel stands in for the non-zero mean of real backbone
    features; without it the keys cannot carry per-ray offsets.
    """
    px = feature_grid_pixels(cam, grid_w, grid_h)
    dirs = cam.pixel_directions(px)
    origin = (cam.position - scorer.input_center) / scorer.input_scale
    geo = np.concatenate([np.broadcast_to(origin, dirs.shape), dirs], axis=1)
    emb = fourier_embed(geo, scorer.fourier_bands)
    emb = np.concatenate([emb, np.ones((len(emb), 1))], axis=1)
    if emb.shape[1] != scorer.feature_dim:
        raise ValueError(f"planted features have {emb.shape[1]} channels, scorer expects {scorer.feature_dim}")
    rng = np.random.default_rng(seed)
    return FeatureMap(emb + noise * rng.normal(size=emb.shape), width=grid_w, height=grid_h)
