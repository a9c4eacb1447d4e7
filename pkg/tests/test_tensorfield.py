import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vtflow.config import RunConfig
from vtflow.errors import ConfigError, PointOffManifold
from vtflow.targets import FlatPlanePatch, Sphere, TorusOfRevolution
from vtflow.tensorfield import (AffinePhi, AmbientBilinear, ConditionParams, MetricMultiple,
                                SampledPhi, TForce, ZeroPhi, check_condition_ff,
                                check_condition_l1, check_curvature_bound, check_phi_gate,
                                load_phi_table, make_phi, nabla_t, phi_eval, phi_sup_norm,
                                save_phi_table, t_pointwise, tangent_basis)

SPHERE = Sphere()
TORUS = TorusOfRevolution(2.0, 1.0)
LINEAR = AffinePhi.isotropic(0.1)


def linear_coeffs(p):
    return 0.1 * p[2] * np.eye(3)


@pytest.fixture(scope="module")
def sampled_sphere():
    return SampledPhi.from_function(linear_coeffs, SPHERE)


def closed_form_T(p, Y, Z):
    """0.1 <Y,Z> P(e3) on the unit sphere."""
    e3 = np.array([0.0, 0, 1])
    return 0.1 * np.sum(Y * Z, -1)[..., None] * (e3 - p[..., 2:3] * p)


def closed_form_nabla_T(p, X, Y, Z):
    """Tangential derivative of the closed-form T along X on the unit sphere."""
    return -0.1 * p[..., 2:3] * np.sum(Y * Z, -1)[..., None] * X


class TestPhiEval:
    def test_examples(self):
        p, e1 = np.array([0, 0, 1.0]), np.array([1.0, 0, 0])
        assert phi_eval(ZeroPhi(), p, e1, e1, SPHERE) == 0
        assert phi_eval(MetricMultiple(0.4), p, e1, e1, SPHERE) == pytest.approx(0.4)
        B = 0.3 * np.outer(e1, e1)
        assert phi_eval(AmbientBilinear(B), p, e1, e1, SPHERE) == pytest.approx(0.3)

    def test_off_manifold(self):
        with pytest.raises(PointOffManifold):
            phi_eval(MetricMultiple(0.1), [0, 0, 1.5], [1.0, 0, 0], [1.0, 0, 0], SPHERE)

    @settings(max_examples=50, deadline=None)
    @given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 2 ** 16))
    def test_bilinear(self, a, b, seed):
        rng = np.random.default_rng(seed)
        p = SPHERE.sample_points(1, rng)[0]
        Y1, Y2, Z = (SPHERE.tangent_project(p, rng.standard_normal(3)) for _ in range(3))
        for phi in (MetricMultiple(0.3), LINEAR, AmbientBilinear(rng.standard_normal((3, 3)) * 0.1)):
            lhs = phi_eval(phi, p, a * Y1 + b * Y2, Z)
            rhs = a * phi_eval(phi, p, Y1, Z) + b * phi_eval(phi, p, Y2, Z)
            assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(a) + abs(b)) * 10)


class TestSupNorm:
    def test_examples(self):
        assert phi_sup_norm(ZeroPhi(), SPHERE) == 0
        assert phi_sup_norm(MetricMultiple(0.4), SPHERE) == pytest.approx(0.4, abs=1e-6)
        assert phi_sup_norm(MetricMultiple(0.6), SPHERE) == pytest.approx(0.6, abs=1e-6)
        assert check_phi_gate(MetricMultiple(0.4), SPHERE).satisfied
        assert not check_phi_gate(MetricMultiple(0.6), SPHERE).satisfied

    def test_against_brute_force_pairs(self):
        rng = np.random.default_rng(0)
        B = 0.2 * rng.standard_normal((3, 3))
        phi = AmbientBilinear(B)
        pts = SPHERE.sample_points(10_000, np.random.default_rng(0))
        Y = SPHERE.random_unit_tangent(pts, rng)
        Z = SPHERE.random_unit_tangent(pts, rng)
        brute = np.max(np.abs(phi.bilinear(pts, Y, Z)))
        # the SVD value is the exact sup per point, so it dominates random pairs
        assert phi_sup_norm(phi, SPHERE) >= brute - 1e-12
        assert phi_sup_norm(phi, SPHERE) <= 1.2 * brute

    def test_tangent_basis_orthonormal(self):
        pts = TORUS.sample_points(20, np.random.default_rng(1))
        E = tangent_basis(TORUS, pts)
        np.testing.assert_allclose(np.einsum("nia,nib->nab", E, E), np.broadcast_to(np.eye(2), (20, 2, 2)),
                                   atol=1e-12)
        np.testing.assert_allclose(TORUS.tangent_project(pts[:, :, None].swapaxes(1, 2), E.swapaxes(1, 2)),
                                   E.swapaxes(1, 2), atol=1e-12)


class TestTPointwise:
    def test_constant_coefficients_vanish(self):
        rng = np.random.default_rng(2)
        p = SPHERE.sample_points(10, rng)
        Y = SPHERE.random_unit_tangent(p, rng)
        for phi in (ZeroPhi(), MetricMultiple(0.2), AmbientBilinear(np.eye(3) * 0.1)):
            assert np.all(t_pointwise(phi, SPHERE, p, Y, Y) == 0)

    @pytest.mark.parametrize("phi_name", ["affine", "sampled"])
    def test_linear_examples(self, phi_name, sampled_sphere):
        phi = LINEAR if phi_name == "affine" else sampled_sphere
        got = t_pointwise(phi, SPHERE, [0, 0, 1.0], [1.0, 0, 0], [1.0, 0, 0])
        np.testing.assert_allclose(got, 0, atol=1e-8)
        got = t_pointwise(phi, SPHERE, [1.0, 0, 0], [0, 1.0, 0], [0, 1.0, 0])
        np.testing.assert_allclose(got, [0, 0, 0.1], atol=1e-6)

    @pytest.mark.parametrize("phi_name", ["affine", "sampled"])
    def test_matches_closed_form(self, phi_name, sampled_sphere):
        phi = LINEAR if phi_name == "affine" else sampled_sphere
        rng = np.random.default_rng(3)
        p = SPHERE.sample_points(500, rng)
        Y, Z = SPHERE.random_unit_tangent(p, rng), SPHERE.random_unit_tangent(p, rng)
        np.testing.assert_allclose(t_pointwise(phi, SPHERE, p, Y, Z), closed_form_T(p, Y, Z), atol=1e-6)

    @pytest.mark.parametrize("phi_name", ["affine", "sampled", "metric"])
    def test_duality_with_fd_of_phi(self, phi_name, sampled_sphere):
        phi = {"affine": LINEAR, "sampled": sampled_sphere, "metric": MetricMultiple(0.3)}[phi_name]
        rng = np.random.default_rng(4)
        p = SPHERE.sample_points(200, rng)
        X, Y, Z = (SPHERE.random_unit_tangent(p, rng) for _ in range(3))
        eps = 1e-5
        # constant ambient extension of X, Y, Z; coefficients read at the projected point
        fd = (phi.bilinear(p + eps * X, Y, Z) - phi.bilinear(p - eps * X, Y, Z)) / (2 * eps)
        T = t_pointwise(phi, SPHERE, p, Y, Z)
        assert np.max(np.abs(np.sum(T * X, -1) - fd)) <= 1e-6

    def test_off_manifold(self):
        with pytest.raises(PointOffManifold):
            t_pointwise(LINEAR, SPHERE, [0, 0, 0.5], [1.0, 0, 0], [1.0, 0, 0])


class TestNablaT:
    def test_constant_vanishes(self):
        p = np.array([0.0, 0, 1])
        for phi in (ZeroPhi(), MetricMultiple(0.2)):
            assert np.all(nabla_t(phi, SPHERE, p, [1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]) == 0)

    @pytest.mark.parametrize("phi_name", ["affine", "sampled"])
    def test_example_point(self, phi_name, sampled_sphere):
        phi = LINEAR if phi_name == "affine" else sampled_sphere
        p, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
        got = nabla_t(phi, SPHERE, p, e2, e2, e2)
        # independent oracle: same central difference at half the step
        half = nabla_t(phi, SPHERE, p, e2, e2, e2, step=5e-5)
        np.testing.assert_allclose(got, half, atol=1e-6)
        np.testing.assert_allclose(got, closed_form_nabla_T(p, e2, e2, e2), atol=1e-6)

    def test_against_closed_form_and_half_step(self):
        rng = np.random.default_rng(5)
        p = SPHERE.sample_points(500, rng)
        X, Y, Z = (SPHERE.random_unit_tangent(p, rng) for _ in range(3))
        got = nabla_t(LINEAR, SPHERE, p, X, Y, Z)
        want = closed_form_nabla_T(p, X, Y, Z)
        scale = np.max(np.abs(want))
        assert np.max(np.abs(got - want)) <= 1e-3 * scale
        half = nabla_t(LINEAR, SPHERE, p, X, Y, Z, step=5e-5)
        assert np.max(np.abs(got - half)) <= 1e-3 * scale


class TestConditions:
    def test_ff_sphere_fails_with_margin_one(self):
        r = check_condition_ff(ZeroPhi(), SPHERE, ConditionParams(2.0, 0.0, 10_000))
        assert not r.satisfied
        assert r.worst_margin == pytest.approx(1.0, abs=0.05)
        X = np.array(r.witness["X"])
        assert set(r.witness) == {"point", "X", "Y", "Z"}
        assert np.linalg.norm(X) == pytest.approx(1.0)

    def test_ff_flat_holds_with_zero_margin(self):
        r = check_condition_ff(ZeroPhi(), FlatPlanePatch(), ConditionParams(2.0, 0.0, 10_000))
        assert r.satisfied and r.worst_margin == 0.0

    def test_ff_torus_outer_equator(self):
        r = check_condition_ff(ZeroPhi(), TORUS, ConditionParams(2.0, 0.0, 10_000))
        assert not r.satisfied
        assert r.worst_margin == pytest.approx(1 / 3, abs=0.02)
        theta = TORUS.parameters(np.array(r.witness["point"]))[0]
        assert abs(theta) < 0.6

    @pytest.mark.parametrize("phi", [ZeroPhi(), MetricMultiple(0.3), AmbientBilinear(0.2 * np.eye(3))])
    def test_l1_constant_coefficients(self, phi):
        for target in (SPHERE, TORUS):
            r = check_condition_l1(phi, target, ConditionParams(2.0, 0.0, 10_000))
            assert r.satisfied and r.worst_margin == 0.0

    def test_l1_linear_matches_dense_brute_force(self, sampled_sphere):
        C0 = 2.0
        rng = np.random.default_rng(123)
        p = SPHERE.sample_points(100_000, rng)
        X, Y, Z = (SPHERE.random_unit_tangent(p, rng) for _ in range(3))
        T = closed_form_T(p, X, Y)
        dT = closed_form_nabla_T(p, X, Y, Z)
        brute = np.max(4 * C0 * np.sum(T * T, -1) + np.sum(dT * X, -1))
        for phi in (LINEAR, sampled_sphere):
            r = check_condition_l1(phi, SPHERE, ConditionParams(C0, 0.0, 10_000))
            assert abs(r.worst_margin - brute) <= 1e-3
            assert not r.satisfied

    def test_monotone_in_sample_count(self):
        margins = [check_condition_l1(LINEAR, SPHERE, ConditionParams(2.0, 0.0, n, seed=9)).worst_margin
                   for n in (10, 100, 1000, 5000)]
        assert margins == sorted(margins)
        margins = [check_condition_ff(ZeroPhi(), TORUS, ConditionParams(2.0, 0.0, n, seed=9)).worst_margin
                   for n in (10, 100, 1000, 5000)]
        assert margins == sorted(margins)

    def test_partition_independent(self, monkeypatch):
        params = ConditionParams(2.0, 0.0, 9000, seed=4)
        serial = check_condition_l1(LINEAR, SPHERE, params)
        monkeypatch.setenv("VTFLOW_THREADS", "3")
        threaded = check_condition_l1(LINEAR, SPHERE, params)
        assert serial.worst_margin == threaded.worst_margin
        assert serial.witness == threaded.witness

    def test_curvature_bound(self):
        r = check_curvature_bound(SPHERE, ConditionParams(2.0, 1.0, 2000))
        assert r.worst_margin == pytest.approx(0.0, abs=1e-6)
        assert not check_curvature_bound(SPHERE, ConditionParams(2.0, 0.5, 2000)).satisfied
        assert check_curvature_bound(TORUS, ConditionParams(2.0, 0.5, 2000)).satisfied

    def test_params_validation(self):
        with pytest.raises(ConfigError) as exc:
            ConditionParams(C0=1.0)
        assert exc.value.problems[0][0] == "C0"
        with pytest.raises(ConfigError):
            ConditionParams(kappa=-1.0)

    def test_report_dict(self):
        d = check_condition_l1(ZeroPhi(), SPHERE, ConditionParams(sample_count=10)).to_dict()
        assert d["pass"] is True and d["sample_count"] == 10 and d["worst_margin"] == 0.0


class TestGateEquivalence:
    @pytest.mark.parametrize("lam", [0.1, 0.49, 0.4999999, 0.5, 0.6])
    def test_validator_matches_sup_norm(self, lam):
        cfg = RunConfig.from_dict({"phi": {"kind": "metric_multiple", "lam": lam}})
        accepted = True
        try:
            cfg.validate()
        except ConfigError as exc:
            accepted = False
            assert any(path == "phi" for path, _ in exc.problems)
        assert accepted == (phi_sup_norm(MetricMultiple(lam), SPHERE) < 0.5)


class TestTables:
    def test_round_trip(self, tmp_path, sampled_sphere):
        path = tmp_path / "phi.json"
        save_phi_table(sampled_sphere, path)
        data = json.loads(path.read_text())
        assert set(data) == {"grid", "coeffs"} and len(data["coeffs"][0]) == 9
        again = load_phi_table(str(path), SPHERE)
        pts = SPHERE.sample_points(50, np.random.default_rng(0))
        np.testing.assert_allclose(again.coeffs(pts), sampled_sphere.coeffs(pts), atol=1e-14)
        phi = make_phi({"kind": "sampled", "table": "phi.json"}, SPHERE, str(tmp_path))
        np.testing.assert_allclose(phi.coeffs(pts), sampled_sphere.coeffs(pts), atol=1e-14)

    def test_scattered_table_linear_fallback(self):
        rng = np.random.default_rng(1)
        grid = np.stack([rng.uniform(0.1, np.pi - 0.1, 800), rng.uniform(-np.pi, np.pi, 800)], -1)
        pts = SPHERE.embed(grid)
        phi = SampledPhi(grid, [linear_coeffs(x) for x in pts], SPHERE)
        assert phi._splines is None
        q = SPHERE.sample_points(200, rng)
        assert np.max(np.abs(phi.coeffs(q) - LINEAR.coeffs(q))) < 5e-3
        # the pole lies outside the hull of the samples: nearest fallback, still finite
        assert np.all(np.isfinite(phi.coeffs(np.array([0, 0, 1.0]))))

    def test_torus_table(self):
        phi = SampledPhi.from_function(linear_coeffs, TORUS)
        pts = TORUS.sample_points(300, np.random.default_rng(2))
        assert np.max(np.abs(phi.coeffs(pts) - LINEAR.coeffs(pts))) < 1e-6

    def test_make_phi_kinds(self):
        assert isinstance(make_phi({"kind": "zero"}, SPHERE), ZeroPhi)
        assert make_phi({"kind": "metric_multiple", "lam": 0.2}, SPHERE).lam == 0.2
        phi = make_phi({"kind": "ambient_affine", "isotropic_scale": 0.1}, SPHERE)
        np.testing.assert_allclose(phi.coeffs(np.array([0, 0, 1.0])), 0.1 * np.eye(3))
        with pytest.raises(ValueError):
            make_phi({"kind": "quartic"}, SPHERE)


def test_tforce_modes():
    assert TForce(ZeroPhi()).mode == "energy_gradient"
    with pytest.raises(ValueError):
        TForce(ZeroPhi(), "implicit")
