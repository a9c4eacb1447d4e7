import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtflow.errors import DegeneratePlane, OutsideTubularNeighborhood, PointOffManifold
from vtflow.targets import FlatPlanePatch, Sphere, TorusOfRevolution, make_target

TORUS = TorusOfRevolution(2.0, 1.0)


def brute_force_torus_closest(target, p, n=721):
    """Nearest parametrized point by dense search plus local refinement."""
    th = np.linspace(-np.pi, np.pi, n)
    T, F = np.meshgrid(th, th, indexing="ij")
    pts = target.embed(np.stack([T, F], axis=-1))
    k = np.unravel_index(np.argmin(np.sum((pts - p) ** 2, axis=-1)), T.shape)
    best = np.array([T[k], F[k]])
    step = th[1] - th[0]
    for _ in range(40):
        local = best + np.stack(np.meshgrid(np.linspace(-step, step, 21),
                                            np.linspace(-step, step, 21), indexing="ij"), -1)
        cand = target.embed(local)
        j = np.unravel_index(np.argmin(np.sum((cand - p) ** 2, axis=-1)), local.shape[:2])
        best = local[j]
        step /= 5
    return target.embed(best)


def fd_tangent_basis(target, params, eps=1e-6):
    cols = []
    for k in range(2):
        d = np.zeros(2)
        d[k] = eps
        cols.append((target.embed(params + d) - target.embed(params - d)) / (2 * eps))
    return np.array(cols).T


class TestClosestPoint:
    def test_sphere_radial(self):
        s = Sphere()
        np.testing.assert_allclose(s.closest_point([2.0, 0, 0]), [1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(s.closest_point([0.0, 3, 4]), [0, 0.6, 0.8], atol=1e-15)

    def test_torus_outer_equator(self):
        np.testing.assert_allclose(TORUS.closest_point([3.5, 0, 0]), [3, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("p", [[3.5, 0, 0], [1.2, 1.9, 0.4], [-0.8, 2.1, -0.7], [2.4, -1.0, 0.2]])
    def test_torus_matches_brute_force(self, p):
        p = np.array(p)
        got = TORUS.closest_point(p)
        ref = brute_force_torus_closest(TORUS, p)
        # a distance minimum is flat, so the search pins the point to ~sqrt(eps)
        assert np.linalg.norm(got - ref) < 1e-6
        assert np.linalg.norm(p - got) <= np.linalg.norm(p - ref) + 1e-14

    def test_idempotent_on_many_points(self):
        rng = np.random.default_rng(0)
        for target in (Sphere(), TORUS):
            base = target.sample_points(10_000, rng)
            n = target.normal_part(base, rng.standard_normal(base.shape), check=False)
            n /= np.linalg.norm(n, axis=-1, keepdims=True)
            p = base + rng.uniform(-0.5, 0.5, (10_000, 1)) * n
            once = target.closest_point(p)
            assert np.max(np.abs(target.closest_point(once) - once)) <= 1e-12

    def test_singular_sets_rejected(self):
        with pytest.raises(OutsideTubularNeighborhood):
            Sphere().closest_point([0.0, 0.0, 0.0])
        with pytest.raises(OutsideTubularNeighborhood):
            TORUS.closest_point([0.0, 0.0, 0.5])
        with pytest.raises(OutsideTubularNeighborhood):
            TORUS.closest_point([2.0, 0.0, 0.0])

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            TorusOfRevolution(1.0, 2.0)
        with pytest.raises(ValueError):
            Sphere(-1.0)
        with pytest.raises(ValueError):
            Sphere().closest_point([1.0, 0.0])


class TestTangentProject:
    def test_sphere_pole(self):
        np.testing.assert_allclose(Sphere().tangent_project([0, 0, 1.0], [1, 2, 3.0]), [1, 2, 0])

    def test_zero_vector(self):
        for target in (Sphere(), TORUS, FlatPlanePatch()):
            p = target.sample_points(3, np.random.default_rng(1))
            assert np.all(target.tangent_project(p, np.zeros(3)) == 0)

    def test_torus_outer_equator_against_parametrization(self):
        got = TORUS.tangent_project([3.0, 0, 0], [1.0, 0, 1.0])
        np.testing.assert_allclose(got, [0, 0, 1], atol=1e-15)
        # the FD tangent basis spans the same plane
        B = fd_tangent_basis(TORUS, np.array([0.0, 0.0]))
        Q, _ = np.linalg.qr(B)
        np.testing.assert_allclose(Q @ (Q.T @ np.array([1.0, 0, 1])), got, atol=1e-9)

    def test_projector_matches_fd_basis_at_random_points(self):
        rng = np.random.default_rng(2)
        for params in rng.uniform(-np.pi, np.pi, (20, 2)):
            p = TORUS.embed(params)
            Q, _ = np.linalg.qr(fd_tangent_basis(TORUS, params))
            v = rng.standard_normal(3)
            np.testing.assert_allclose(TORUS.tangent_project(p, v), Q @ (Q.T @ v), atol=1e-8)

    def test_idempotent_and_rank(self):
        rng = np.random.default_rng(3)
        for target in (Sphere(1.5), TORUS, FlatPlanePatch()):
            p = target.sample_points(50, rng)
            v = rng.standard_normal(p.shape)
            once = target.tangent_project(p, v)
            twice = target.tangent_project(p, once)
            assert np.max(np.abs(twice - once)) <= 1e-12 * np.max(np.abs(once))
            P = target.tangent_project(p[:1, None, :], np.eye(3))[0]
            assert np.linalg.matrix_rank(P, tol=1e-10) == target.dim

    def test_off_manifold_rejected(self):
        with pytest.raises(PointOffManifold):
            Sphere().tangent_project([0, 0, 1.1], [1.0, 0, 0])


class TestSecondFundamentalForm:
    def test_unit_sphere_pole(self):
        got = Sphere().second_fundamental_form([0, 0, 1.0], [1.0, 0, 0], [1.0, 0, 0])
        np.testing.assert_allclose(got, [0, 0, -1], atol=1e-8)

    def test_sphere_closed_form(self):
        s = Sphere()
        rng = np.random.default_rng(4)
        p = s.sample_points(100, rng)
        X = s.tangent_project(p, rng.standard_normal(p.shape))
        got = s.second_fundamental_form(p, X, X)
        want = -np.sum(X * X, axis=-1)[:, None] * p
        np.testing.assert_allclose(got, want, atol=1e-8)

    def test_radius_two(self):
        got = Sphere(2.0).second_fundamental_form([0, 0, 2.0], [1.0, 0, 0], [1.0, 0, 0])
        np.testing.assert_allclose(got, [0, 0, -0.5], atol=1e-8)

    def test_zero_direction(self):
        for target in (Sphere(), TORUS):
            p = target.sample_points(5, np.random.default_rng(5))
            Y = target.tangent_project(p, np.ones(3))
            assert np.all(target.second_fundamental_form(p, np.zeros(3), Y) == 0)

    def test_normal_and_symmetric(self):
        rng = np.random.default_rng(6)
        for target in (Sphere(), Sphere(0.7), TORUS):
            p = target.sample_points(200, rng)
            X = target.tangent_project(p, rng.standard_normal(p.shape))
            Y = target.tangent_project(p, rng.standard_normal(p.shape))
            w = target.tangent_project(p, rng.standard_normal(p.shape))
            xy = target.second_fundamental_form(p, X, Y)
            yx = target.second_fundamental_form(p, Y, X)
            assert np.max(np.abs(np.sum(xy * w, axis=-1))) <= 1e-8
            assert np.max(np.abs(xy - yx)) <= 1e-8 * (1 + np.max(np.abs(xy)))

    def test_bilinear(self):
        rng = np.random.default_rng(7)
        p = TORUS.sample_points(50, rng)
        X1, X2, Y = (TORUS.tangent_project(p, rng.standard_normal(p.shape)) for _ in range(3))
        sff = TORUS.second_fundamental_form
        lhs = sff(p, 2.0 * X1 - 0.5 * X2, Y)
        rhs = 2.0 * sff(p, X1, Y) - 0.5 * sff(p, X2, Y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-8


class TestSectionalCurvature:
    def test_unit_sphere(self):
        s = Sphere()
        rng = np.random.default_rng(8)
        p = s.sample_points(100, rng)
        X = s.random_unit_tangent(p, rng)
        Y = np.cross(p, X)
        np.testing.assert_allclose(s.sectional_curvature(p, X, Y), 1.0, atol=1e-6)

    def test_radius_two(self):
        assert Sphere(2.0).sectional_curvature([0, 0, 2.0], [1.0, 0, 0], [0, 1.0, 0]) == \
            pytest.approx(0.25, abs=1e-6)

    def test_torus_against_closed_form(self):
        k = TORUS.sectional_curvature([3.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0])
        assert k == pytest.approx(1 / 3, abs=1e-6)
        rng = np.random.default_rng(9)
        th = rng.uniform(-np.pi, np.pi, 50)
        params = np.stack([th, rng.uniform(-np.pi, np.pi, 50)], -1)
        p = TORUS.embed(params)
        B = np.array([fd_tangent_basis(TORUS, q) for q in params])
        got = TORUS.sectional_curvature(p, B[..., 0], B[..., 1])
        np.testing.assert_allclose(got, TORUS.gaussian_curvature(th), atol=1e-6)

    def test_flat(self):
        assert FlatPlanePatch().sectional_curvature([0.3, 0.1, 0], [1.0, 0, 0], [0, 1.0, 0]) == 0

    def test_degenerate(self):
        with pytest.raises(DegeneratePlane):
            Sphere().sectional_curvature([0, 0, 1.0], [1.0, 0, 0], [2.0, 0, 0])

    @settings(max_examples=40, deadline=None)
    @given(a=st.floats(-3, 3), b=st.floats(0.2, 3), c=st.floats(-3, 3),
           th=st.floats(-3.1, 3.1), ph=st.floats(-3.1, 3.1))
    def test_basis_invariance(self, a, b, c, th, ph):
        p = TORUS.embed(np.array([th, ph]))
        B = fd_tangent_basis(TORUS, np.array([th, ph]))
        X, Y = B[:, 0], B[:, 1]
        # (X', Y') = (X + c Y, a X + b Y') spans the same plane when b != a c
        X2 = X + c * Y
        Y2 = a * X + b * Y
        if abs(b - a * c) < 0.1:
            return
        assert TORUS.sectional_curvature(p, X2, Y2) == pytest.approx(
            TORUS.sectional_curvature(p, X, Y), abs=1e-6)


def test_make_target_and_winding():
    assert make_target({"kind": "sphere", "radius": 2.0}).radius == 2.0
    assert make_target({"kind": "torus", "R": 3.0, "r": 1.0}).R == 3.0
    assert isinstance(make_target({"kind": "flat"}), FlatPlanePatch)
    with pytest.raises(ValueError):
        make_target({"kind": "klein"})
    s = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    meridian = TORUS.embed(np.stack([s, np.zeros_like(s)], -1))
    assert TORUS.loop_winding(meridian) == (1, 0)
    longitude = TORUS.embed(np.stack([np.zeros_like(s), -s], -1))
    assert TORUS.loop_winding(longitude) == (0, -1)
