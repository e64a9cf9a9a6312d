import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from hypcog.errors import DegenerateGradientError, InvalidInputError, OutOfManifoldError
from hypcog.poincare import (BallConfig, distance_grad, exp_map_origin, log_map_origin,
                             pairwise_distances, poincare_distance, project_to_ball)


def random_ball_points(rng, n, dim, c, max_frac=0.95):
    """Uniform directions with radii spread over most of the ball."""
    u = rng.standard_normal((n, dim))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = rng.uniform(0, max_frac, size=(n, 1)) / math.sqrt(c)
    return u * r


class TestConfig:
    @pytest.mark.parametrize("kw", [{"curvature_c": 0.0}, {"curvature_c": -1.0}, {"dim": 0},
                                    {"boundary_eps": 0.0}, {"boundary_eps": 1.0}])
    def test_rejects_bad_fields(self, kw):
        with pytest.raises(InvalidInputError):
            BallConfig(**kw)

    def test_max_norm(self):
        assert BallConfig(4.0, 2).max_norm == pytest.approx(0.499995, abs=1e-15)


class TestExpLog:
    def test_origin(self):
        cfg = BallConfig()
        np.testing.assert_array_equal(exp_map_origin(cfg, [0.0, 0.0]), [0.0, 0.0])
        np.testing.assert_array_equal(log_map_origin(cfg, [0.0, 0.0]), [0.0, 0.0])

    def test_unit_tangent(self):
        z = exp_map_origin(BallConfig(), [1.0, 0.0])
        np.testing.assert_allclose(z, [math.tanh(1.0), 0.0], rtol=0, atol=1e-15)

    def test_log_of_tanh1(self):
        x = log_map_origin(BallConfig(), [0.761594, 0.0])
        np.testing.assert_allclose(x, [1.0, 0.0], atol=1e-6)

    def test_log_curvature_four(self):
        x = log_map_origin(BallConfig(4.0, 2), [0.2, 0.0])
        np.testing.assert_allclose(x, [0.5 * math.atanh(0.4), 0.0], rtol=1e-15)
        assert x[0] == pytest.approx(0.2118245, abs=1e-7)

    def test_tiny_vectors_map_to_origin(self):
        cfg = BallConfig()
        np.testing.assert_array_equal(exp_map_origin(cfg, [1e-13, 0.0]), [0.0, 0.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidInputError):
            exp_map_origin(BallConfig(), [np.nan, 0.0])

    def test_wrong_dim_rejected(self):
        with pytest.raises(InvalidInputError):
            exp_map_origin(BallConfig(dim=3), [1.0, 0.0])

    def test_log_outside_ball(self):
        with pytest.raises(OutOfManifoldError):
            log_map_origin(BallConfig(), [1.0, 0.0])

    def test_inverse_needs_unclipped_radius(self):
        # with a tighter clip the whole |x| <= 5 range inverts for c = 2
        x = np.array([5.0, 0.0])
        loose, tight = BallConfig(2.0, 2), BallConfig(2.0, 2, boundary_eps=1e-8)
        assert np.linalg.norm(log_map_origin(loose, exp_map_origin(loose, x)) - x) > 1e-3
        assert np.linalg.norm(log_map_origin(tight, exp_map_origin(tight, x)) - x) < 1e-9

    def test_exp_clipped(self):
        cfg = BallConfig(2.0, 3)
        z = exp_map_origin(cfg, [100.0, -50.0, 3.0])
        assert np.linalg.norm(z) <= cfg.max_norm + 1e-16

    @pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
    def test_inverse_pair_batch(self, rng, c):
        cfg = BallConfig(c, 4)
        x = rng.standard_normal((2000, 4))
        x *= (rng.uniform(0, 5, 2000) / np.linalg.norm(x, axis=1))[:, None]
        # tanh saturates past the clip radius, so keep sqrt(c)|x| where it is still invertible
        keep = math.sqrt(c) * np.linalg.norm(x, axis=1) < 6.0
        back = log_map_origin(cfg, exp_map_origin(cfg, x[keep]))
        assert np.max(np.linalg.norm(back - x[keep], axis=1)) < 1e-9

    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3), st.sampled_from([0.5, 1.0, 2.0]))
    def test_inverse_pair_property(self, v, c):
        cfg = BallConfig(c, 3)
        x = np.array(v)
        assume(math.sqrt(c) * np.linalg.norm(x) < 6.0)
        np.testing.assert_allclose(log_map_origin(cfg, exp_map_origin(cfg, x)), x, atol=1e-9)


class TestProject:
    def test_identity_inside(self):
        np.testing.assert_array_equal(project_to_ball(BallConfig(), [0.1, 0.0]), [0.1, 0.0])

    def test_rescale(self):
        np.testing.assert_allclose(project_to_ball(BallConfig(), [2.0, 0.0]), [0.99999, 0.0], rtol=1e-15)

    def test_curvature_four(self):
        z = project_to_ball(BallConfig(4.0, 2), [1.0, 0.0])
        assert np.linalg.norm(z) == pytest.approx(0.499995, rel=1e-14)


class TestDistance:
    def test_identical(self):
        assert poincare_distance(BallConfig(), [0.3, 0.4], [0.3, 0.4]) == 0.0

    def test_ln3(self):
        d = poincare_distance(BallConfig(), [0.0, 0.0], [0.5, 0.0])
        assert abs(d - math.log(3.0)) < 1e-12
        assert abs(d - math.acosh(5.0 / 3.0)) < 1e-12

    def test_outside_rejected(self):
        with pytest.raises(OutOfManifoldError):
            poincare_distance(BallConfig(), [0.0, 0.0], [0.6, 0.8])

    @pytest.mark.parametrize("c", [0.5, 1.0, 3.0])
    def test_radial_closed_form(self, rng, c):
        cfg = BallConfig(c, 3)
        z = random_ball_points(rng, 500, 3, c, 0.999)
        d = poincare_distance(cfg, np.zeros_like(z), z)
        ref = 2.0 / math.sqrt(c) * np.arctanh(math.sqrt(c) * np.linalg.norm(z, axis=1))
        np.testing.assert_allclose(d, ref, rtol=0, atol=1e-9)

    def test_matches_arccosh_formula(self, rng):
        c = 1.7
        cfg = BallConfig(c, 2)
        a, b = random_ball_points(rng, 300, 2, c), random_ball_points(rng, 300, 2, c)
        num = 2 * c * np.sum((a - b) ** 2, axis=1)
        den = (1 - c * np.sum(a * a, 1)) * (1 - c * np.sum(b * b, 1))
        ref = np.arccosh(1 + num / den) / math.sqrt(c)
        np.testing.assert_allclose(poincare_distance(cfg, a, b), ref, rtol=1e-10, atol=1e-7)

    def test_blows_up_near_boundary(self):
        cfg = BallConfig()
        near = poincare_distance(cfg, [0.0, 0.0], [1 - 1e-8, 0.0])
        mid = poincare_distance(cfg, [0.0, 0.0], [0.99, 0.0])
        assert near - mid > 5

    def test_monotone_in_norm(self):
        cfg = BallConfig()
        r = np.linspace(0, 0.999, 200)
        pts = np.stack([r, np.zeros_like(r)], axis=1)
        d = poincare_distance(cfg, np.zeros_like(pts), pts)
        assert np.all(np.diff(d) > 0)

    def test_metric_axioms(self, rng):
        c = 1.0
        cfg = BallConfig(c, 3)
        a, b, e = (random_ball_points(rng, 3000, 3, c) for _ in range(3))
        dab, dba = poincare_distance(cfg, a, b), poincare_distance(cfg, b, a)
        assert np.all(dab >= 0)
        np.testing.assert_array_equal(dab, dba)
        np.testing.assert_array_equal(poincare_distance(cfg, a, a), 0.0)
        assert np.all(poincare_distance(cfg, a, e) <= dab + poincare_distance(cfg, b, e) + 1e-9)

    def test_pairwise_matches_scalar(self, rng):
        cfg = BallConfig(0.8, 3)
        p = random_ball_points(rng, 40, 3, 0.8)
        m = pairwise_distances(cfg, p)
        i, j = np.triu_indices(40, 1)
        np.testing.assert_allclose(m[i, j], poincare_distance(cfg, p[i], p[j]), rtol=1e-12, atol=1e-14)
        np.testing.assert_array_equal(m, m.T)
        np.testing.assert_array_equal(np.diag(m), 0.0)


def _fd_grad(cfg, z1, z2, h):
    g1, g2 = np.zeros_like(z1), np.zeros_like(z2)
    for i in range(len(z1)):
        e = np.zeros_like(z1)
        e[i] = h
        g1[i] = (poincare_distance(cfg, z1 + e, z2) - poincare_distance(cfg, z1 - e, z2)) / (2 * h)
        g2[i] = (poincare_distance(cfg, z1, z2 + e) - poincare_distance(cfg, z1, z2 - e)) / (2 * h)
    return g1, g2


class TestGradient:
    def test_radial_magnitude(self):
        r = 0.6
        _, g2 = distance_grad(BallConfig(), [0.0, 0.0], [r, 0.0])
        np.testing.assert_allclose(g2, [2.0 / (1 - r * r), 0.0], rtol=1e-13, atol=1e-15)

    def test_reflection_symmetry(self):
        cfg = BallConfig()
        a, b = np.array([0.1, -0.3]), np.array([0.4, 0.2])
        g1, _ = distance_grad(cfg, a, b)
        _, g2 = distance_grad(cfg, -b, -a)
        np.testing.assert_allclose(g1, -g2, rtol=1e-13)

    def test_coincident_raises(self):
        with pytest.raises(DegenerateGradientError):
            distance_grad(BallConfig(), [0.2, 0.1], [0.2, 0.1])

    @pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
    def test_finite_differences(self, rng, c):
        cfg = BallConfig(c, 3)
        worst = 0.0
        checked = 0
        while checked < 1000:
            z1, z2 = random_ball_points(rng, 2, 3, c, 0.9)
            if np.linalg.norm(z1 - z2) <= 1e-3:
                continue
            g1, g2 = distance_grad(cfg, z1, z2)
            f1, f2 = _fd_grad(cfg, z1, z2, 1e-6)
            a, f = np.concatenate([g1, g2]), np.concatenate([f1, f2])
            worst = max(worst, np.linalg.norm(a - f) / np.linalg.norm(f))
            checked += 1
        assert worst < 1e-5
