"""Angle-of-progression geometry against closed-form tangent constructions.

Scenes are built large (256 px) so the rasterized disk boundary stays within
a fraction of a degree of the continuous tangent: the angular sensitivity of
a tangent to a disk of radius R at distance d is 1/sqrt(d^2 - R^2) per pixel
of boundary error, so sqrt(d^2 - R^2) >= 100 keeps quantization near 0.3 deg.
"""

import math

import numpy as np
import pytest

from braunet.metrics import GeometryError, SegMask, angle_of_progression, delta_aop

SIZE = 256
TOL_DEG = 0.5


def _wrap(a):
    return (a + math.pi) % (2 * math.pi) - math.pi


def disk_scene(theta_deg: float, d: float, radius: float):
    """Horizontal PS bar ending at E=(100, 100); FH disk center at angle
    ``theta_deg`` (measured from the +col direction toward +row) and distance
    ``d`` from E. Returns (mask, expected angle in degrees)."""
    mask = np.zeros((SIZE, SIZE), dtype=np.uint8)
    mask[100, 40:101] = 1
    end = np.array([100.0, 100.0])
    theta = math.radians(theta_deg)
    center = end + d * np.array([math.sin(theta), math.cos(theta)])
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    disk = (yy - center[0]) ** 2 + (xx - center[1]) ** 2 <= radius ** 2
    mask[disk & (mask == 0)] = 2

    # closed form: angle at E between the ray toward the far bar end and the
    # wider of the two disk tangent rays
    theta_axis = math.atan2(-1.0, 0.0)  # (drow, dcol) of E -> far end, atan2(col, row)
    theta_center = math.atan2(center[1] - end[1], center[0] - end[0])
    alpha = math.asin(radius / d)
    expected = max(
        abs(_wrap(theta_center - alpha - theta_axis)),
        abs(_wrap(theta_center + alpha - theta_axis)),
    )
    return mask, math.degrees(expected)


# theta stays inside cos(theta) > -30/d so the bar end at (100, 100) remains
# the endpoint nearer the disk centroid, as the closed form assumes
SCENES = [
    (30.0, 120.0, 40.0),
    (45.0, 120.0, 40.0),
    (60.0, 130.0, 35.0),
    (90.0, 130.0, 30.0),
    (95.0, 140.0, 30.0),
    (-45.0, 150.0, 35.0),
    (0.0, 150.0, 30.0),    # disk centered on the axis extension: symmetric tangents
    (-30.0, 130.0, 40.0),
    (20.0, 140.0, 35.0),
    (75.0, 125.0, 38.0),
]


class TestAngleExtraction:
    @pytest.mark.parametrize("theta,d,radius", SCENES)
    def test_matches_closed_form(self, theta, d, radius):
        mask, expected = disk_scene(theta, d, radius)
        geo = angle_of_progression(SegMask(mask))
        assert geo.aop == pytest.approx(expected, abs=TOL_DEG)
        assert 0.0 < geo.aop < 180.0

    @pytest.mark.parametrize("theta,d,radius", SCENES)
    def test_rotation_by_90_is_invariant(self, theta, d, radius):
        mask, _ = disk_scene(theta, d, radius)
        base = angle_of_progression(SegMask(mask)).aop
        rotated = angle_of_progression(SegMask(np.rot90(mask).copy())).aop
        assert rotated == pytest.approx(base, abs=TOL_DEG)

    def test_symmetric_scene_gives_half_aperture_supplement(self):
        mask, expected = disk_scene(0.0, 150.0, 30.0)
        alpha = math.degrees(math.asin(30.0 / 150.0))
        assert expected == pytest.approx(180.0 - alpha, abs=1e-9)
        geo = angle_of_progression(SegMask(mask))
        assert geo.aop == pytest.approx(180.0 - alpha, abs=TOL_DEG)

    def test_axis_endpoint_selection_prefers_fh_side(self):
        mask, _ = disk_scene(45.0, 120.0, 40.0)
        geo = angle_of_progression(SegMask(mask))
        near, far = np.array(geo.ps_axis[0]), np.array(geo.ps_axis[1])
        fh_centroid = np.argwhere(mask == 2).mean(axis=0)
        assert np.linalg.norm(near - fh_centroid) < np.linalg.norm(far - fh_centroid)

    def test_tangent_point_is_an_fh_pixel(self):
        mask, _ = disk_scene(60.0, 130.0, 35.0)
        geo = angle_of_progression(SegMask(mask))
        r, c = int(geo.fh_tangent[0]), int(geo.fh_tangent[1])
        assert mask[r, c] == 2


class TestGeometryErrors:
    def test_empty_regions(self):
        with pytest.raises(GeometryError):
            angle_of_progression(SegMask(np.zeros((8, 8), dtype=np.uint8)))
        only_ps = np.zeros((8, 8), dtype=np.uint8)
        only_ps[2, 1:6] = 1
        with pytest.raises(GeometryError):
            angle_of_progression(SegMask(only_ps))

    def test_single_pixel_axis(self):
        labels = np.zeros((8, 8), dtype=np.uint8)
        labels[2, 2] = 1
        labels[5, 5] = 2
        with pytest.raises(GeometryError):
            angle_of_progression(SegMask(labels))


class TestDeltaAop:
    def test_identical_masks(self):
        mask, _ = disk_scene(45.0, 120.0, 40.0)
        assert delta_aop(SegMask(mask), SegMask(mask)) == 0.0

    def test_analytic_ten_degree_pair(self):
        mask_a, expected_a = disk_scene(40.0, 150.0, 30.0)
        mask_b, expected_b = disk_scene(50.0, 150.0, 30.0)
        assert abs(expected_a - expected_b) == pytest.approx(10.0, abs=1e-9)
        delta = delta_aop(SegMask(mask_a), SegMask(mask_b))
        assert delta == pytest.approx(10.0, abs=TOL_DEG)

    def test_symmetric_in_arguments(self):
        mask_a, _ = disk_scene(30.0, 120.0, 40.0)
        mask_b, _ = disk_scene(75.0, 125.0, 38.0)
        a, b = SegMask(mask_a), SegMask(mask_b)
        assert delta_aop(a, b) == delta_aop(b, a)
