import numpy as np
import pytest

from ccd_collision import closest_approach, overlaps, sat_margin
from ccd_sim import BodyState, check_collision


def _corners(x, y, h, hl, hw):
    c, s = np.cos(h), np.sin(h)
    local = np.array([[hl, hw], [hl, -hw], [-hl, -hw], [-hl, hw]])
    return np.c_[x + local[:, 0] * c - local[:, 1] * s, y + local[:, 0] * s + local[:, 1] * c]


def _sample_points(x, y, h, hl, hw, n=100):
    """n x n grid of points covering rectangle (x, y, h, hl, hw), boundary included."""
    u, v = np.meshgrid(np.linspace(-hl, hl, n), np.linspace(-hw, hw, n))
    u, v = u.ravel(), v.ravel()
    c, s = np.cos(h), np.sin(h)
    return np.c_[x + u * c - v * s, y + u * s + v * c]


def _inside(points, x, y, h, hl, hw, tol=0.0):
    c, s = np.cos(h), np.sin(h)
    dx, dy = points[:, 0] - x, points[:, 1] - y
    u, v = dx * c + dy * s, -dx * s + dy * c
    return (np.abs(u) <= hl + tol) & (np.abs(v) <= hw + tol)


def _oracle(a, b):
    hit = _inside(_sample_points(*a), *b).any() or _inside(_sample_points(*b), *a).any()
    return bool(hit)


def _near_tangent(a, b, spacing):
    # a shrunk rectangle disagreeing with a grown one means the verdict depends on sub-sample detail
    grow = lambda r, d: (r[0], r[1], r[2], r[3] + d, r[4] + d)
    shrink = lambda r, d: (r[0], r[1], r[2], max(r[3] - d, 1e-3), max(r[4] - d, 1e-3))
    return bool(overlaps(*grow(a, spacing), *grow(b, spacing))) != bool(overlaps(*shrink(a, spacing), *shrink(b, spacing)))


class TestOverlaps:

    def test_identical_pose(self):
        assert overlaps(0, 0, 0.3, 2, 1, 0, 0, 0.3, 2, 1)

    def test_far_apart(self):
        assert not overlaps(0, 0, 0, 2, 1, 100, 0, 0, 2, 1)

    def test_bumper_to_bumper(self):
        assert overlaps(0, 0, 0, 2.25, 0.9, 4.4, 0, 0, 2.25, 0.9)
        assert not overlaps(0, 0, 0, 2.25, 0.9, 4.6, 0, 0, 2.25, 0.9)

    def test_rotated_rectangle_lateral(self):
        a = (0.0, 0.0, 0.0, 2.0, 1.0)
        b = (0.0, 3.0, np.pi / 4, 2.0, 1.0)
        assert bool(overlaps(*a, *b)) == _oracle(a, b)

    def test_diagonal_corner_case_passes_box_stage(self):
        # boxes overlap on both world axes but a separating edge normal exists
        a = (0.0, 0.0, np.pi / 4, 2.0, 0.5)
        b = (2.0, -2.0, np.pi / 4, 2.0, 0.5)
        assert not overlaps(*a, *b)
        assert sat_margin(*a, *b) > 0

    def test_broadcasts(self):
        xs = np.array([0.0, 3.0, 50.0])
        hit = overlaps(0, 0, 0, 2, 1, xs, 0, 0, 2, 1)
        assert hit.shape == (3,)
        assert hit.tolist() == [True, True, False]

    def test_matches_sampling_oracle(self):
        rng = np.random.default_rng(11)
        spacing = 2 * 3.0 / 99
        compared = 0
        while compared < 500:
            a = (0.0, 0.0, rng.uniform(-np.pi, np.pi), rng.uniform(0.5, 3.0), rng.uniform(0.3, 1.5))
            b = (*rng.uniform(-6, 6, size=2), rng.uniform(-np.pi, np.pi), rng.uniform(0.5, 3.0), rng.uniform(0.3, 1.5))
            if _near_tangent(a, b, spacing):
                continue
            assert bool(overlaps(*a, *b)) == _oracle(a, b), (a, b)
            compared += 1


class TestCheckCollision:

    @pytest.mark.parametrize("dx, dy, dh", [(0.0, 0.0, 0.0), (3.0, 1.0, 0.4), (4.0, 2.5, 1.2), (20.0, 0.0, 0.0)])
    def test_symmetric(self, dx, dy, dh):
        a = BodyState(0.0, 0.0, 0.1, 10.0, 2.25, 0.9)
        b = BodyState(dx, dy, 0.1 + dh, 12.0, 2.0, 1.0)
        assert check_collision(a, b) == check_collision(b, a)


class TestClosestApproach:

    def test_head_on_passes_through_origin(self):
        assert closest_approach(10.0, 0.0, -1.0, 0.0, 20.0) == pytest.approx(0.0)

    def test_horizon_limits_approach(self):
        assert closest_approach(10.0, 0.0, -1.0, 0.0, 4.0) == pytest.approx(6.0)

    def test_receding_keeps_current_distance(self):
        assert closest_approach(3.0, 4.0, 1.0, 0.0, 10.0) == pytest.approx(5.0)
