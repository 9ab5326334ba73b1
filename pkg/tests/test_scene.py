import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from splatpose.errors import EmptySceneError, PlyFormatError
from splatpose.scene import (
    SH_C0,
    GaussianPrimitive,
    Scene,
    covariance,
    load_ply,
    save_ply,
    synth_scene,
)

PLY_PROPS = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
             "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]


def write_ply_by_hand(path, rows, props=PLY_PROPS, extra=()):
    """Independent little-endian writer used as the file-format oracle."""
    names = list(props) + list(extra)
    header = "ply\nformat binary_little_endian 1.0\ncomment written by test\n"
    header += f"element vertex {len(rows)}\n"
    header += "".join(f"property float {n}\n" for n in names)
    header += "end_header\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for row in rows:
            f.write(struct.pack("<" + "f" * len(names), *row))


def primitive(quat=(1.0, 0.0, 0.0, 0.0), scale=(1.0, 1.0, 1.0)):
    return GaussianPrimitive(np.zeros(3), np.array(quat, dtype=float), np.array(scale, dtype=float), 1.0,
                             np.full(3, 0.5))


unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda q: np.linalg.norm(q) > 0.1).map(lambda q: np.array(q) / np.linalg.norm(q))
scales = st.lists(st.floats(0.01, 3.0), min_size=3, max_size=3).map(np.array)


class TestCovariance:
    def test_identity(self):
        np.testing.assert_allclose(covariance(primitive()), np.eye(3), atol=1e-15)

    def test_axis_aligned_scaling(self):
        np.testing.assert_allclose(covariance(primitive(scale=(2, 1, 1))), np.diag([4.0, 1.0, 1.0]), atol=1e-15)

    @given(unit_quats, scales)
    def test_eigenvalues_are_squared_scales(self, q, s):
        ev = np.linalg.eigvalsh(covariance(primitive(q, s)))
        np.testing.assert_allclose(np.sort(ev), np.sort(s**2), rtol=1e-9, atol=1e-12)

    @given(unit_quats, scales)
    def test_spd_and_determinant(self, q, s):
        cov = covariance(primitive(q, s))
        np.testing.assert_allclose(cov, cov.T, atol=0)
        np.linalg.cholesky(cov)
        np.testing.assert_allclose(np.linalg.det(cov), np.prod(s) ** 2, rtol=1e-9)

    def test_matches_explicit_product(self):
        q = np.array([0.9, 0.1, -0.3, 0.2])
        q /= np.linalg.norm(q)
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        S = np.diag([0.5, 1.5, 2.0])
        np.testing.assert_allclose(covariance(primitive(q, np.diag(S))), R @ S @ S.T @ R.T, atol=1e-12)


class TestScene:
    def test_quaternions_normalized(self):
        s = Scene(np.zeros((2, 3)), [[2.0, 0, 0, 0], [1.0, 1.0, 1.0, 1.0]], np.ones((2, 3)), [0.5, 0.5],
                  np.zeros((2, 3)))
        np.testing.assert_allclose(np.linalg.norm(s.rotations, axis=1), 1.0, atol=1e-9)

    def test_empty_rejected(self):
        with pytest.raises(EmptySceneError):
            Scene(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, 3)))

    def test_non_positive_scale_rejected(self):
        with pytest.raises(ValueError):
            Scene(np.zeros((1, 3)), [[1.0, 0, 0, 0]], [[1.0, 0.0, 1.0]], [0.5], [[0, 0, 0]])

    def test_bbox_extent_is_largest_axis(self):
        means = np.array([[0, 0, 0], [1.0, 3.0, -0.5]])
        s = Scene(means, np.tile([1.0, 0, 0, 0], (2, 1)), np.ones((2, 3)), [1, 1], np.zeros((2, 3)))
        assert s.bbox_extent == pytest.approx(3.0)

    def test_arrays_read_only(self, scene):
        with pytest.raises(ValueError):
            scene.means[0, 0] = 1.0

    def test_primitive_view(self, scene):
        p = scene[5]
        np.testing.assert_array_equal(p.mean, scene.means[5])
        assert len(list(scene)) == len(scene)


class TestSynthScene:
    def test_deterministic(self):
        a, b = synth_scene(7, 50), synth_scene(7, 50)
        for name in ("means", "rotations", "scales", "opacities", "colors"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))

    def test_single_primitive_extent_falls_back_to_scale(self):
        s = synth_scene(0, 1)
        assert s.bbox_extent == pytest.approx(s.scales.max())
        assert s.bbox_extent > 0

    def test_counts_and_ranges(self):
        s = synth_scene(1, 500, extent=2.0)
        assert len(s) == 500
        assert np.all(np.abs(s.means) <= 1.0)
        assert np.all((s.scales >= 0.005 * 2.0) & (s.scales <= 0.05 * 2.0))
        assert np.all((s.opacities >= 0.3) & (s.opacities <= 1.0))

    def test_n_zero_rejected(self):
        with pytest.raises(ValueError):
            synth_scene(0, 0)


class TestPly:
    def test_single_vertex_sigmoid_zero(self, tmp_path):
        path = tmp_path / "one.ply"
        write_ply_by_hand(path, [[0.1, 0.2, 0.3, 1.0, 0.0, -1.0, 0.0, 0.0, np.log(2.0), 0.0, 1, 0, 0, 0]])
        s = load_ply(path)
        assert len(s) == 1
        assert s.opacities[0] == pytest.approx(0.5)
        np.testing.assert_allclose(s.scales[0], [1.0, 2.0, 1.0], rtol=1e-6)
        np.testing.assert_allclose(s.colors[0], [0.5 + SH_C0, 0.5, 0.5 - SH_C0], atol=1e-7)

    def test_sh_constant(self):
        # degree-0 real spherical harmonic: 1 / (2 sqrt(pi))
        assert SH_C0 == pytest.approx(0.5 / np.sqrt(np.pi), abs=1e-15)

    def test_missing_property(self, tmp_path):
        path = tmp_path / "bad.ply"
        props = [p for p in PLY_PROPS if p != "rot_3"]
        write_ply_by_hand(path, [[0.0] * len(props)], props=props)
        with pytest.raises(PlyFormatError, match="missing property rot_3"):
            load_ply(path)

    def test_zero_vertices(self, tmp_path):
        path = tmp_path / "empty.ply"
        write_ply_by_hand(path, [])
        with pytest.raises(EmptySceneError):
            load_ply(path)

    def test_ascii_rejected(self, tmp_path):
        path = tmp_path / "ascii.ply"
        path.write_text("ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
        with pytest.raises(PlyFormatError):
            load_ply(path)

    def test_extra_properties_ignored_and_quaternion_normalized(self, tmp_path):
        path = tmp_path / "extra.ply"
        row = [0, 0, 0, 0, 0, 0, 2.0, 0, 0, 0, 2.0, 0, 0, 0, 0.7, -0.3]
        write_ply_by_hand(path, [row], extra=("f_rest_0", "f_rest_1"))
        s = load_ply(path)
        np.testing.assert_allclose(s.rotations[0], [1, 0, 0, 0], atol=1e-12)

    def test_round_trip(self, tmp_path):
        s = synth_scene(11, 64)
        path = tmp_path / "s.ply"
        save_ply(s, path)
        t = load_ply(path)
        for name in ("means", "scales", "opacities", "colors"):
            np.testing.assert_allclose(getattr(t, name), getattr(s, name), atol=1e-6, rtol=1e-6)
        # q and -q are the same rotation; compare matrices to be sign agnostic
        np.testing.assert_allclose(t.rotation_matrices(), s.rotation_matrices(), atol=1e-6)

    def test_vertex_count_in_header(self, tmp_path):
        path = tmp_path / "big.ply"
        save_ply(synth_scene(0, 1000), path)
        with open(path, "rb") as f:
            head = f.read(400).split(b"end_header")[0]
        assert b"element vertex 1000" in head

    def test_save_none_rejected(self, tmp_path):
        with pytest.raises(EmptySceneError):
            save_ply(None, tmp_path / "x.ply")
