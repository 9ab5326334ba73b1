import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from oracles import textured_image
from splatpose.errors import InsufficientMatchesError
from splatpose.matching import (
    Matches,
    MatcherConfig,
    align_subpixel,
    describe,
    detect_corners,
    match_keypoints,
    read_matches_csv,
    to_gray,
    write_matches_csv,
)


def shifted_pair(seed, du, dv=0, shape=(120, 160)):
    """(query, rendered) where query(u, v) = rendered(u - du, v - dv)."""
    big = textured_image(seed, (shape[0] + 20, shape[1] + 20))
    rendered = big[10:10 + shape[0], 10:10 + shape[1]]
    query = ndimage.shift(big, (dv, du), order=3, mode="nearest")[10:10 + shape[0], 10:10 + shape[1]]
    return query, rendered


class TestCorners:
    def test_checkerboard_corner_subpixel(self):
        img = np.zeros((40, 40))
        img[:20, :20] = img[20:, 20:] = 1.0
        c = detect_corners(ndimage.gaussian_filter(img, 1.0))
        assert len(c) >= 1
        np.testing.assert_allclose(c[0], [19.5, 19.5], atol=0.3)

    def test_blank_image_has_none(self):
        assert detect_corners(np.full((30, 30), 0.4)).shape == (0, 2)

    def test_border_excluded(self):
        c = detect_corners(textured_image(0))
        assert np.all((c >= 5) & (c <= np.array([160, 120]) - 6))

    def test_descriptor_normalization(self):
        img = textured_image(1)
        d, valid = describe(img, detect_corners(img))
        np.testing.assert_allclose(np.linalg.norm(d[valid], axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(d[valid].sum(axis=1), 0.0, atol=1e-12)
        assert d.shape[1] == 121

    def test_gray_conversion(self):
        np.testing.assert_allclose(to_gray(np.ones((2, 2, 3))), np.ones((2, 2)))


class TestMatchKeypoints:
    def test_identical_images(self):
        img = textured_image(2)
        m = match_keypoints(img, img)
        assert len(m) >= 20
        np.testing.assert_allclose(m.query_px, m.rendered_px, atol=1e-9)
        np.testing.assert_allclose(m.score, 1.0, atol=1e-12)

    def test_planted_five_pixel_shift(self):
        q, r = shifted_pair(3, 5.0)
        m = match_keypoints(q, r)
        off = np.median(m.query_px - m.rendered_px, axis=0)
        np.testing.assert_allclose(off, [5.0, 0.0], atol=0.5)

    @settings(max_examples=10)
    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
    def test_subpixel_shift_recovered(self, du, dv, seed):
        q, r = shifted_pair(seed, du, dv)
        m = match_keypoints(q, r)
        off = np.median(m.query_px - m.rendered_px, axis=0)
        np.testing.assert_allclose(off, [du, dv], atol=0.05)

    def test_blank_images(self):
        blank = np.full((60, 80, 3), 0.5)
        with pytest.raises(InsufficientMatchesError):
            match_keypoints(blank, blank)

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            match_keypoints(np.zeros((10, 10)), np.zeros((10, 12)))

    def test_ratio_test_rejects_repeated_pattern(self):
        tile = textured_image(4, (20, 20))
        img = np.tile(tile, (6, 8))
        cfg = MatcherConfig(subpixel_iterations=0)
        try:
            m = match_keypoints(img, img, cfg)
        except InsufficientMatchesError:
            return
        # any surviving match must be to itself, never to a repeated copy
        np.testing.assert_allclose(m.query_px, m.rendered_px, atol=1e-9)


class TestAlignSubpixel:
    def test_moves_towards_truth(self):
        q, r = shifted_pair(5, 0.4, -0.3)
        pts = detect_corners(r)[:20]
        start = pts.copy()
        out = align_subpixel(q, r, start, pts)
        np.testing.assert_allclose(np.median(out - pts, axis=0), [0.4, -0.3], atol=0.05)

    def test_disabled_keeps_detector_positions(self):
        q, r = shifted_pair(5, 0.4)
        m = match_keypoints(q, r, MatcherConfig(subpixel_iterations=0))
        corners = detect_corners(q)
        d = np.linalg.norm(m.query_px[:, None] - corners[None], axis=2).min(axis=1)
        np.testing.assert_array_equal(d, 0.0)


class TestMatchesCsv:
    def test_round_trip(self, tmp_path, rng):
        m = Matches(rng.uniform(0, 100, (8, 2)), rng.uniform(0, 100, (8, 2)), rng.uniform(size=8))
        write_matches_csv(m, tmp_path / "m.csv")
        assert (tmp_path / "m.csv").read_text().splitlines()[0] == "qu,qv,ru,rv,score"
        back = read_matches_csv(tmp_path / "m.csv")
        np.testing.assert_array_equal(back.query_px, m.query_px)
        np.testing.assert_array_equal(back.rendered_px, m.rendered_px)
        np.testing.assert_array_equal(back.score, m.score)

    def test_too_few_rows(self, tmp_path):
        (tmp_path / "m.csv").write_text("qu,qv,ru,rv,score\n1,2,3,4,0.5\n")
        with pytest.raises(InsufficientMatchesError):
            read_matches_csv(tmp_path / "m.csv")
