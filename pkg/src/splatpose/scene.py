"""Gaussian scene container, covariance math and 3DGS PLY I/O.

Scenes are stored structure-of-arrays: every per-primitive attribute is one
numpy array whose first axis indexes primitives. Values are kept in linear
space in memory (scales in world units, opacity in [0, 1], RGB color); the
log/logit/SH encodings only exist on disk.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import EmptySceneError, PlyFormatError

SH_C0 = 0.28209479177387814

# PLY scalar type names -> numpy little-endian dtype codes
_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2",
    "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4",
    "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4",
    "double": "<f8", "float64": "<f8",
}

REQUIRED_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)


def quat_to_matrix(q):
    """Rotation matrices from (w, x, y, z) quaternions. Accepts (4,) or (N, 4)."""
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    # scipy wants scalar-last
    mats = Rotation.from_quat(q[:, [1, 2, 3, 0]]).as_matrix()
    return mats[0] if single else mats


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p, eps=1e-7):
    p = np.clip(p, eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian."""

    mean: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    scale: np.ndarray
    opacity: float
    color_dc: np.ndarray

    def rotation_matrix(self):
        return quat_to_matrix(self.rotation)


def covariance(p: GaussianPrimitive) -> np.ndarray:
    """Sigma = R S S^T R^T for a single primitive."""
    return covariances(np.asarray(p.rotation)[None], np.asarray(p.scale)[None])[0]


def covariances(rotations, scales):
    """Batched covariance for (N, 4) quaternions and (N, 3) scales."""
    R = quat_to_matrix(np.atleast_2d(rotations))
    M = R * np.asarray(scales, dtype=np.float64)[:, None, :]  # R @ diag(s)
    cov = M @ np.swapaxes(M, 1, 2)
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


@dataclass(frozen=True, eq=False)
class Scene:
    """Immutable collection of Gaussian primitives."""

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    bbox_extent: float = field(default=0.0)

    def __post_init__(self):
        n = len(self.means)
        if n == 0:
            raise EmptySceneError("scene has no primitives")
        arrays = {
            "means": (np.asarray(self.means, np.float64).reshape(n, 3)),
            "rotations": np.asarray(self.rotations, np.float64).reshape(n, 4),
            "scales": np.asarray(self.scales, np.float64).reshape(n, 3),
            "opacities": np.asarray(self.opacities, np.float64).reshape(n),
            "colors": np.asarray(self.colors, np.float64).reshape(n, 3),
        }
        arrays["rotations"] = arrays["rotations"] / np.linalg.norm(
            arrays["rotations"], axis=1, keepdims=True
        )
        if np.any(arrays["scales"] <= 0):
            raise ValueError("scales must be strictly positive")
        if np.any((arrays["opacities"] < 0) | (arrays["opacities"] > 1)):
            raise ValueError("opacities must lie in [0, 1]")
        for name, arr in arrays.items():
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.bbox_extent:
            extent = float(np.max(np.ptp(arrays["means"], axis=0)))
            if extent <= 0.0:
                extent = float(arrays["scales"].max())
            object.__setattr__(self, "bbox_extent", extent)

    def __len__(self):
        return len(self.means)

    def __getitem__(self, i) -> GaussianPrimitive:
        return GaussianPrimitive(
            mean=self.means[i],
            rotation=self.rotations[i],
            scale=self.scales[i],
            opacity=float(self.opacities[i]),
            color_dc=self.colors[i],
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def center(self):
        return 0.5 * (self.means.min(axis=0) + self.means.max(axis=0))

    def rotation_matrices(self):
        return quat_to_matrix(self.rotations)

    def covariances(self):
        return covariances(self.rotations, self.scales)

    @classmethod
    def from_primitives(cls, primitives):
        primitives = list(primitives)
        if not primitives:
            raise EmptySceneError("scene has no primitives")
        return cls(
            means=np.array([p.mean for p in primitives]),
            rotations=np.array([p.rotation for p in primitives]),
            scales=np.array([p.scale for p in primitives]),
            opacities=np.array([p.opacity for p in primitives]),
            colors=np.array([p.color_dc for p in primitives]),
        )

    def subset(self, indices):
        indices = np.asarray(indices)
        return Scene(
            means=self.means[indices],
            rotations=self.rotations[indices],
            scales=self.scales[indices],
            opacities=self.opacities[indices],
            colors=self.colors[indices],
        )


def synth_scene(seed: int, n: int, extent: float = 1.0) -> Scene:
    """Random scene: means uniform in a centered cube of side ``extent``.

    Scales are log-uniform in [0.005, 0.05] * extent, opacities uniform in
    [0.3, 1.0), rotations uniform on SO(3), colors uniform RGB.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    means = rng.uniform(-0.5 * extent, 0.5 * extent, size=(n, 3))
    log_lo, log_hi = np.log(0.005 * extent), np.log(0.05 * extent)
    scales = np.exp(rng.uniform(log_lo, log_hi, size=(n, 3)))
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opacities = rng.uniform(0.3, 1.0, size=n)
    colors = rng.uniform(0.0, 1.0, size=(n, 3))
    return Scene(means, quats, scales, opacities, colors)


# --------------------------------------------------------------------------
# PLY I/O
# --------------------------------------------------------------------------


def _read_header(f):
    first = f.readline().strip()
    if first != b"ply":
        raise PlyFormatError("not a PLY file")
    fmt = None
    elements = []  # [name, count, [(prop, dtype)]]
    while True:
        line = f.readline()
        if not line:
            raise PlyFormatError("unexpected end of header")
        tokens = line.decode("ascii", errors="replace").split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "end_header":
            break
        if tokens[0] == "format":
            fmt = tokens[1]
        elif tokens[0] == "element":
            elements.append([tokens[1], int(tokens[2]), []])
        elif tokens[0] == "property":
            if not elements:
                raise PlyFormatError("property before element")
            if tokens[1] == "list":
                raise PlyFormatError("list properties are not supported")
            if tokens[1] not in _PLY_TYPES:
                raise PlyFormatError(f"unknown property type {tokens[1]}")
            elements[-1][2].append((tokens[2], _PLY_TYPES[tokens[1]]))
    if fmt != "binary_little_endian":
        raise PlyFormatError(f"unsupported format {fmt}, expected binary_little_endian")
    return elements


def load_ply(path) -> Scene:
    """Load a scene written by a standard 3DGS trainer (or by :func:`save_ply`)."""
    with open(path, "rb") as f:
        elements = _read_header(f)
        vertex = None
        for name, count, props in elements:
            dtype = np.dtype(props)
            if name == "vertex":
                vertex = np.fromfile(f, dtype=dtype, count=count)
                if len(vertex) != count:
                    raise PlyFormatError("truncated vertex data")
                break
            f.seek(dtype.itemsize * count, 1)
    if vertex is None:
        raise PlyFormatError("missing vertex element")
    names = vertex.dtype.names
    for prop in REQUIRED_PROPERTIES:
        if prop not in names:
            raise PlyFormatError(f"missing property {prop}")
    if len(vertex) == 0:
        raise EmptySceneError("PLY file has zero vertices")

    def cols(*keys):
        return np.stack([vertex[k].astype(np.float64) for k in keys], axis=1)

    means = cols("x", "y", "z")
    f_dc = cols("f_dc_0", "f_dc_1", "f_dc_2")
    colors = np.clip(0.5 + SH_C0 * f_dc, 0.0, 1.0)
    opacities = sigmoid(vertex["opacity"].astype(np.float64))
    scales = np.exp(cols("scale_0", "scale_1", "scale_2"))
    quats = cols("rot_0", "rot_1", "rot_2", "rot_3")
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return Scene(means, quats, scales, opacities, colors)


def save_ply(scene: Scene, path) -> None:
    if scene is None or len(scene) == 0:
        raise EmptySceneError("cannot save an empty scene")
    props = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
             "opacity", "scale_0", "scale_1", "scale_2",
             "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.zeros(len(scene), dtype=[(p, "<f4") for p in props])
    for i, k in enumerate("xyz"):
        data[k] = scene.means[:, i]
    f_dc = (scene.colors - 0.5) / SH_C0
    log_scales = np.log(scene.scales)
    for i in range(3):
        data[f"f_dc_{i}"] = f_dc[:, i]
        data[f"scale_{i}"] = log_scales[:, i]
    for i in range(4):
        data[f"rot_{i}"] = scene.rotations[:, i]
    data["opacity"] = logit(scene.opacities)
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(scene)}"]
    header += [f"property float {p}" for p in props]
    header.append("end_header")
    with open(Path(path), "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        data.tofile(f)
