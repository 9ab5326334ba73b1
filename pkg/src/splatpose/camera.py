"""Pinhole camera model and camera JSON I/O.

Convention: right-handed camera frame looking along -z with +y up (OpenGL
style). ``rotation`` maps camera-frame vectors to world, ``position`` is the
optical center in world coordinates, and the viewing direction is
``-rotation[:, 2]``. Pixel coordinates place the center of pixel (row i,
column j) at (u, v) = (j, i), with v growing downwards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDepthError

# camera (GL) frame -> computer-vision frame (x right, y down, z forward)
GL_TO_CV = np.diag([1.0, -1.0, -1.0])


@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        P = np.asarray(self.position, dtype=np.float64).reshape(3)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", P)

    @property
    def orientation(self):
        """Unit viewing direction Q in world coordinates."""
        return -self.rotation[:, 2]

    @property
    def num_pixels(self):
        return self.width * self.height

    @property
    def K(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def view_matrix(self):
        """4x4 world-to-camera transform in the GL camera frame."""
        W = np.eye(4)
        W[:3, :3] = self.rotation.T
        W[:3, 3] = -self.rotation.T @ self.position
        return W

    def world_to_cv(self):
        """(R_cv, t_cv) with x_cv = R_cv @ X + t_cv in the z-forward, y-down frame."""
        R_cv = GL_TO_CV @ self.rotation.T
        return R_cv, -R_cv @ self.position

    def with_pose(self, rotation, position):
        return replace(self, rotation=np.asarray(rotation), position=np.asarray(position))

    def to_cv_points(self, points):
        R_cv, t_cv = self.world_to_cv()
        return np.asarray(points, dtype=np.float64) @ R_cv.T + t_cv

    def project(self, points):
        """Project (N, 3) world points; returns (uv (N, 2), depth (N,))."""
        pc = self.to_cv_points(np.atleast_2d(points))
        z = pc[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * pc[:, 0] / z + self.cx
            v = self.fy * pc[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z

    def pixel_directions(self, uv):
        """Unit world-space viewing directions through pixel coordinates (N, 2)."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        d_cv = np.stack(
            [(uv[:, 0] - self.cx) / self.fx, (uv[:, 1] - self.cy) / self.fy, np.ones(len(uv))],
            axis=1,
        )
        R_cv, _ = self.world_to_cv()
        d = d_cv @ R_cv  # R_cv^T @ d
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    # -- serialization -------------------------------------------------------

    def to_dict(self):
        return {
            "fx": float(self.fx), "fy": float(self.fy),
            "cx": float(self.cx), "cy": float(self.cy),
            "width": int(self.width), "height": int(self.height),
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "position": [float(x) for x in self.position],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]), cy=float(d["cy"]),
            width=int(d["width"]), height=int(d["height"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
            position=np.asarray(d["position"], dtype=np.float64),
        )


def backproject_pixel(u, v, depth, cam: Camera):
    """World point seen at pixel (u, v) with camera-frame depth ``depth``."""
    if not depth > 0:
        raise InvalidDepthError(f"depth must be positive, got {depth}")
    x_cv = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    R_cv, t_cv = cam.world_to_cv()
    return R_cv.T @ (x_cv - t_cv)


def backproject_pixels(uv, depth, cam: Camera):
    """Vectorized :func:`backproject_pixel` for (N, 2) pixels and (N,) depths."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth > 0)):
        raise InvalidDepthError("all depths must be positive")
    x_cv = np.stack(
        [(uv[:, 0] - cam.cx) / cam.fx * depth, (uv[:, 1] - cam.cy) / cam.fy * depth, depth], axis=1
    )
    R_cv, t_cv = cam.world_to_cv()
    return (x_cv - t_cv) @ R_cv


def look_at_rotation(forward, up=(0.0, 1.0, 0.0)):
    """World-from-camera rotation whose viewing axis is ``forward``.

    Columns are (right, true_up, -forward). When ``forward`` is parallel to
    ``up`` the next canonical axis is used as up instead.
    """
    f = np.asarray(forward, dtype=np.float64)
    f = f / np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(f, up)
    if np.linalg.norm(right) < 1e-6:
        for axis in np.eye(3)[[2, 0, 1]]:
            right = np.cross(f, axis)
            if np.linalg.norm(right) >= 1e-6:
                break
    right /= np.linalg.norm(right)
    true_up = np.cross(right, f)
    return np.stack([right, true_up, -f], axis=1)


def look_at(position, target, intrinsics, up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at ``position`` looking at ``target``.

    ``intrinsics`` is a dict with fx, fy, cx, cy, width, height (or a Camera
    whose intrinsics are reused).
    """
    if isinstance(intrinsics, Camera):
        intrinsics = {k: getattr(intrinsics, k) for k in ("fx", "fy", "cx", "cy", "width", "height")}
    position = np.asarray(position, dtype=np.float64)
    R = look_at_rotation(np.asarray(target, dtype=np.float64) - position, up)
    return Camera(rotation=R, position=position, **intrinsics)


def load_camera(path) -> Camera:
    with open(path) as f:
        return Camera.from_dict(json.load(f))


def save_camera(cam: Camera, path) -> None:
    with open(path, "w") as f:
        json.dump(cam.to_dict(), f, indent=2)
