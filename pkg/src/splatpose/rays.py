"""Candidate rays cast outward from every Gaussian ellipsoid.

Each primitive gets one ray per vertex of a unit icosphere. The vertex v is
mapped onto the k-sigma ellipsoid surface as x = mu + k * R S v and the ray
points radially away from the mean.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import EmptySceneError
from .scene import Scene


@lru_cache(maxsize=8)
def icosphere(level: int):
    """Vertices (V, 3) and faces (F, 3) of a unit icosphere.

    Level 0 is the icosahedron (12 vertices); each level splits every face in
    four, giving 12, 42, 162, 642 vertices for levels 0..3.
    """
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(level):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    V = np.array(verts)
    V.setflags(write=False)
    return V, np.array(faces, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class RayBundle:
    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3), unit
    ellipsoid_ids: np.ndarray  # (N,)
    offsets: np.ndarray  # (G + 1,), group g spans offsets[g]:offsets[g + 1]

    def __len__(self):
        return len(self.origins)

    @property
    def num_groups(self):
        return len(self.offsets) - 1

    def group_ids(self):
        """Ellipsoid id of each group, in bundle order."""
        return self.ellipsoid_ids[self.offsets[:-1]]

    def take_groups(self, groups):
        """Sub-bundle holding the given groups (in the given order)."""
        groups = np.asarray(groups, dtype=np.int64)
        sizes = self.offsets[groups + 1] - self.offsets[groups]
        idx = np.concatenate([np.arange(self.offsets[g], self.offsets[g + 1]) for g in groups]) \
            if len(groups) else np.zeros(0, dtype=np.int64)
        return RayBundle(
            origins=self.origins[idx],
            directions=self.directions[idx],
            ellipsoid_ids=self.ellipsoid_ids[idx],
            offsets=np.concatenate([[0], np.cumsum(sizes)]),
        )

    def take(self, idx):
        """Sub-bundle of individual rays; groups are rebuilt from runs of equal ids."""
        idx = np.asarray(idx, dtype=np.int64)
        ids = self.ellipsoid_ids[idx]
        starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]]) if len(ids) else np.zeros(0, np.int64)
        return RayBundle(self.origins[idx], self.directions[idx], ids, np.r_[starts, len(ids)])

    def with_origins(self, origins):
        return RayBundle(np.asarray(origins, dtype=np.float64), self.directions,
                         self.ellipsoid_ids, self.offsets)


def ellipsoid_points(scene: Scene, ids, unit_dirs, k_sigma):
    """Map unit vectors ``unit_dirs`` (N, 3) of ellipsoids ``ids`` onto their k-sigma surfaces.

    Returns (points, radial unit directions).
    """
    R = scene.rotation_matrices()[ids]
    RS = R * scene.scales[ids][:, None, :]
    offs = k_sigma * np.einsum("nij,nj->ni", RS, unit_dirs)
    dirs = offs / np.linalg.norm(offs, axis=1, keepdims=True)
    return scene.means[ids] + offs, dirs


def cast_rays(scene: Scene, subdivision_level: int = 1, k_sigma: float = 1.0) -> RayBundle:
    if scene is None or len(scene) == 0:
        raise EmptySceneError("cannot cast rays from an empty scene")
    if subdivision_level not in (0, 1, 2, 3):
        raise ValueError("subdivision_level must be in {0, 1, 2, 3}")
    if not k_sigma > 0:
        raise ValueError("k_sigma must be positive")
    V, _ = icosphere(subdivision_level)
    n, nv = len(scene), len(V)
    RS = scene.rotation_matrices() * scene.scales[:, None, :]  # (n, 3, 3)
    offs = k_sigma * np.einsum("nij,vj->nvi", RS, V)  # (n, nv, 3)
    origins = scene.means[:, None, :] + offs
    dirs = offs / np.linalg.norm(offs, axis=2, keepdims=True)
    return RayBundle(
        origins=origins.reshape(-1, 3),
        directions=dirs.reshape(-1, 3),
        ellipsoid_ids=np.repeat(np.arange(n), nv),
        offsets=np.arange(n + 1) * nv,
    )


def subsample_ellipsoids(bundle: RayBundle, max_ellipsoids: int, seed: int) -> RayBundle:
    """Uniform choice of ``max_ellipsoids`` ellipsoid groups without replacement.

    Chosen groups keep their original relative order.
    """
    if max_ellipsoids < 1:
        raise ValueError("max_ellipsoids must be >= 1")
    g = bundle.num_groups
    if max_ellipsoids >= g:
        return bundle
    rng = np.random.default_rng(seed)
    groups = np.sort(rng.choice(g, size=max_ellipsoids, replace=False))
    return bundle.take_groups(groups)


def write_rays_csv(bundle: RayBundle, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ellipsoid_id", "ox", "oy", "oz", "dx", "dy", "dz"])
        for i in range(len(bundle)):
            w.writerow([int(bundle.ellipsoid_ids[i]), *map(repr, bundle.origins[i].tolist()),
                        *map(repr, bundle.directions[i].tolist())])


def read_rays_csv(path) -> RayBundle:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(np.int64)
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    return RayBundle(data[:, 1:4], data[:, 4:7], ids, np.r_[starts, len(ids)])
