import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conftest import INTRINSICS
from splatpose.camera import (
    Camera,
    backproject_pixel,
    backproject_pixels,
    load_camera,
    look_at,
    look_at_rotation,
    save_camera,
)
from splatpose.errors import InvalidDepthError

coords = st.floats(-3.0, 3.0)
points = st.tuples(coords, coords, coords).map(np.array)


def random_camera(seed):
    rng = np.random.default_rng(seed)
    R = Rotation.random(random_state=seed).as_matrix()
    return Camera(rotation=R, position=rng.normal(size=3), **INTRINSICS)


class TestCameraModel:
    def test_orientation_is_minus_third_column(self, camera):
        np.testing.assert_array_equal(camera.orientation, -camera.rotation[:, 2])

    def test_look_at_points_at_target(self):
        cam = look_at([1.0, 2.0, 3.0], [0.0, 0.0, 0.0], INTRINSICS)
        np.testing.assert_allclose(cam.orientation, -np.array([1.0, 2.0, 3.0]) / np.sqrt(14.0), atol=1e-15)
        uv, z = cam.project([[0.0, 0.0, 0.0]])
        np.testing.assert_allclose(uv[0], [cam.cx, cam.cy], atol=1e-9)
        assert z[0] == pytest.approx(np.sqrt(14.0))

    def test_look_at_down_negative_z_is_identity(self):
        np.testing.assert_allclose(look_at_rotation([0, 0, -1]), np.eye(3), atol=1e-15)

    def test_look_at_parallel_to_up_falls_back(self):
        R = look_at_rotation([0, 1, 0])
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(-R[:, 2], [0, 1, 0], atol=1e-12)

    def test_image_up_is_world_up(self):
        # +y in the world should move points upwards in the image (smaller v)
        cam = look_at([0, 0, 5], [0, 0, 0], INTRINSICS)
        uv, _ = cam.project([[0, 0.5, 0], [0.5, 0, 0]])
        assert uv[0, 1] < cam.cy
        assert uv[1, 0] > cam.cx

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            Camera(rotation=np.diag([1.0, 1.0, -1.0]), position=np.zeros(3), **INTRINSICS)

    def test_rejects_non_positive_focal(self):
        with pytest.raises(ValueError):
            Camera(fx=0.0, fy=1.0, cx=0, cy=0, width=2, height=2, rotation=np.eye(3), position=np.zeros(3))

    def test_view_matrix_inverts_pose(self, camera):
        W = camera.view_matrix()
        Xw = np.array([0.1, -0.2, 0.3, 1.0])
        Xc = W @ Xw
        np.testing.assert_allclose(camera.rotation @ Xc[:3] + camera.position, Xw[:3], atol=1e-12)

    def test_pixel_directions_hit_projection(self, camera):
        X = np.array([0.2, -0.1, 0.05])
        uv, z = camera.project(X)
        d = camera.pixel_directions(uv)[0]
        np.testing.assert_allclose(d, (X - camera.position) / np.linalg.norm(X - camera.position), atol=1e-12)


class TestBackprojection:
    def test_principal_point(self, camera):
        X = backproject_pixel(camera.cx, camera.cy, 1.7, camera)
        np.testing.assert_allclose(X, camera.position + 1.7 * camera.orientation, atol=1e-12)

    @pytest.mark.parametrize("depth", [0.0, -1.0])
    def test_non_positive_depth(self, camera, depth):
        with pytest.raises(InvalidDepthError):
            backproject_pixel(10.0, 10.0, depth, camera)
        with pytest.raises(InvalidDepthError):
            backproject_pixels([[1.0, 2.0]], [depth], camera)

    @given(points, st.integers(0, 10_000))
    def test_world_round_trip(self, X, seed):
        cam = random_camera(seed)
        uv, z = cam.project(X)
        if z[0] <= 1e-3:
            return
        np.testing.assert_allclose(backproject_pixel(uv[0, 0], uv[0, 1], z[0], cam), X, atol=1e-6)

    @given(st.floats(0, 319), st.floats(0, 239), st.floats(0.1, 50.0), st.integers(0, 10_000))
    def test_pixel_round_trip(self, u, v, depth, seed):
        cam = random_camera(seed)
        uv, z = cam.project(backproject_pixel(u, v, depth, cam))
        np.testing.assert_allclose(uv[0], [u, v], atol=1e-9)
        assert z[0] == pytest.approx(depth, rel=1e-12)

    def test_vectorized_matches_scalar(self, camera, rng):
        uv = rng.uniform(0, 200, size=(20, 2))
        depth = rng.uniform(0.5, 5, size=20)
        expected = np.array([backproject_pixel(u, v, d, camera) for (u, v), d in zip(uv, depth)])
        np.testing.assert_allclose(backproject_pixels(uv, depth, camera), expected, atol=1e-12)


class TestCameraIO:
    def test_json_round_trip(self, tmp_path, camera):
        save_camera(camera, tmp_path / "c.json")
        back = load_camera(tmp_path / "c.json")
        np.testing.assert_array_equal(back.rotation, camera.rotation)
        np.testing.assert_array_equal(back.position, camera.position)
        assert (back.fx, back.cy, back.width) == (camera.fx, camera.cy, camera.width)

    def test_rotation_row_major(self, camera):
        d = camera.to_dict()
        assert d["rotation"][:3] == list(camera.rotation[0])
