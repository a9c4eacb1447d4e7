"""Embedded target manifolds N in R^q.

Every target exposes closed-form closest-point projection, tangent
projection, and finite-difference curvature probes.  All methods are
vectorized over leading axes: points and vectors have shape ``(..., q)``.
"""

import numpy as np

from .errors import DegeneratePlane, OutsideTubularNeighborhood, PointOffManifold

#: central-difference step (relative to the target's length scale) for the
#: second fundamental form
SFF_STEP = 1e-5


def _norm(v):
    return np.sqrt(np.einsum("...i,...i->...", v, v))


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _wrap(angle):
    return (angle + np.pi) % (2 * np.pi) - np.pi


class EmbeddedTarget:
    """Base class for a closed submanifold N of R^q.

    Subclasses implement ``_closest``, ``_apply_projector`` and the
    parametrization helpers.  ``_apply_projector`` must be well defined in
    the tubular neighbourhood, not only on N, since the second fundamental
    form differentiates the projector field off the manifold.
    """

    kind = None
    dim = 2

    def __init__(self, ambient_dim, projection_tolerance=1e-8):
        if ambient_dim < 2:
            raise ValueError("ambient dimension must be at least 2")
        self.ambient_dim = int(ambient_dim)
        self.projection_tolerance = float(projection_tolerance)

    # -- subclass hooks -------------------------------------------------
    def _closest(self, p):
        raise NotImplementedError

    def _apply_projector(self, p, v):
        raise NotImplementedError

    @property
    def length_scale(self):
        return 1.0

    def describe(self):
        """Plain dict of the target's parameters (used for config hashing)."""
        raise NotImplementedError

    # -- public API -----------------------------------------------------
    def _as_points(self, p):
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise ValueError(
                f"expected ambient dimension {self.ambient_dim}, got {p.shape[-1]}")
        if not np.all(np.isfinite(p)):
            raise ValueError("ambient points must be finite")
        return p

    def closest_point(self, p):
        """Nearest point of N to each ambient point ``p``."""
        return self._closest(self._as_points(p))

    def constraint_error(self, p):
        """Max ambient distance of the points ``p`` to N."""
        p = self._as_points(p)
        if p.size == 0:
            return 0.0
        return float(np.max(_norm(self._closest(p) - p)))

    def check_on_manifold(self, p):
        err = self.constraint_error(p)
        if err > self.projection_tolerance:
            raise PointOffManifold(
                f"point(s) lie {err:.3e} from the target "
                f"(tolerance {self.projection_tolerance:.1e})")

    def tangent_project(self, p, v, check=True):
        """Orthogonal projection of ``v`` onto T_pN."""
        p = self._as_points(p)
        if check:
            self.check_on_manifold(p)
        v = np.asarray(v, dtype=float)
        return self._apply_projector(p, np.broadcast_to(v, np.broadcast(p, v).shape))

    def normal_part(self, p, v, check=True):
        v = np.asarray(v, dtype=float)
        return v - self.tangent_project(p, v, check=check)

    def second_fundamental_form(self, p, X, Y, check=True):
        """II(X, Y) at ``p``: normal part of D_X(P Y) for constant Y.

        Computed by a central difference of the projector field along X with
        step ``SFF_STEP * length_scale``.
        """
        p = self._as_points(p)
        if check:
            self.check_on_manifold(p)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        shape = np.broadcast(p, X, Y).shape
        p, X, Y = (np.broadcast_to(a, shape) for a in (p, X, Y))
        xn = _norm(X)
        safe = np.where(xn > 0, xn, 1.0)
        xhat = X / safe[..., None]
        s = SFF_STEP * self.length_scale
        plus = self._apply_projector(p + s * xhat, Y)
        minus = self._apply_projector(p - s * xhat, Y)
        deriv = (plus - minus) / (2 * s) * xn[..., None]
        return deriv - self._apply_projector(p, deriv)

    def curvature_operator(self, p, X, Y, check=True):
        """<R(X,Y)X,Y> through the Gauss equation (unnormalized)."""
        sff = self.second_fundamental_form
        xx = sff(p, X, X, check=check)
        yy = sff(p, Y, Y, check=False)
        xy = sff(p, X, Y, check=False)
        return _dot(xx, yy) - _dot(xy, xy)

    def sectional_curvature(self, p, X, Y, check=True, tol=1e-12):
        """Sectional curvature of the plane spanned by tangent X, Y."""
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        area2 = _dot(X, X) * _dot(Y, Y) - _dot(X, Y) ** 2
        scale = _dot(X, X) * _dot(Y, Y)
        if np.any(area2 <= tol * np.maximum(scale, np.finfo(float).tiny)):
            raise DegeneratePlane("tangent vectors are (nearly) linearly dependent")
        return self.curvature_operator(p, X, Y, check=check) / area2

    def random_unit_tangent(self, p, rng):
        """Uniformly distributed unit tangent vectors at the points ``p``."""
        p = np.asarray(p, dtype=float)
        while True:
            g = rng.standard_normal(p.shape)
            t = self._apply_projector(p, g)
            n = _norm(t)
            if np.all(n > 1e-8):
                return t / n[..., None]

    def sample_points(self, count, rng):
        raise NotImplementedError

    def parameters(self, p):
        """Surface parameters (theta, phi) of points on N, shape ``(..., 2)``."""
        raise NotImplementedError

    def embed(self, params):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.describe().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Sphere(EmbeddedTarget):
    """Round sphere of radius ``radius`` centred at the origin of R^q."""

    kind = "sphere"

    def __init__(self, radius=1.0, ambient_dim=3, projection_tolerance=1e-8):
        super().__init__(ambient_dim, projection_tolerance)
        if radius <= 0:
            raise ValueError("sphere radius must be positive")
        self.radius = float(radius)
        self.dim = self.ambient_dim - 1

    @property
    def length_scale(self):
        return self.radius

    @property
    def tubular_radius(self):
        return self.radius

    def describe(self):
        return {"kind": self.kind, "radius": self.radius, "ambient_dim": self.ambient_dim}

    def _closest(self, p):
        n = _norm(p)
        if np.any(n < 0.1 * self.radius):
            raise OutsideTubularNeighborhood(
                "sphere projection undefined near the centre")
        return self.radius * p / n[..., None]

    def _apply_projector(self, p, v):
        nhat = p / _norm(p)[..., None]
        return v - _dot(nhat, v)[..., None] * nhat

    def sample_points(self, count, rng):
        g = rng.standard_normal((count, self.ambient_dim))
        return self.radius * g / _norm(g)[:, None]

    def parameters(self, p):
        p = np.asarray(p, dtype=float)
        r = _norm(p)
        theta = np.arccos(np.clip(p[..., 2] / r, -1.0, 1.0))
        phi = np.arctan2(p[..., 1], p[..., 0])
        return np.stack([theta, phi], axis=-1)

    def embed(self, params):
        params = np.asarray(params, dtype=float)
        theta, phi = params[..., 0], params[..., 1]
        return self.radius * np.stack(
            [np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)],
            axis=-1)


class TorusOfRevolution(EmbeddedTarget):
    """Torus in R^3 with tube radius ``r`` around a core circle of radius ``R``.

    Parametrization: ``((R + r cos t) cos f, (R + r cos t) sin f, r sin t)``
    with tube angle t (theta) and longitude f (phi).
    """

    kind = "torus_of_revolution"

    def __init__(self, R=2.0, r=1.0, projection_tolerance=1e-8):
        super().__init__(3, projection_tolerance)
        if not R > r > 0:
            raise ValueError("torus requires R > r > 0")
        self.R = float(R)
        self.r = float(r)

    @property
    def length_scale(self):
        return self.r

    @property
    def tubular_radius(self):
        return self.r

    def describe(self):
        return {"kind": self.kind, "R": self.R, "r": self.r}

    def _core(self, p):
        rho = np.hypot(p[..., 0], p[..., 1])
        if np.any(rho < 0.1 * self.r):
            raise OutsideTubularNeighborhood("torus projection undefined on the axis")
        c = np.zeros_like(p)
        c[..., 0] = self.R * p[..., 0] / rho
        c[..., 1] = self.R * p[..., 1] / rho
        return c

    def _closest(self, p):
        c = self._core(p)
        d = p - c
        dn = _norm(d)
        if np.any(dn < 0.1 * self.r):
            raise OutsideTubularNeighborhood(
                "torus projection undefined near the core circle")
        return c + self.r * d / dn[..., None]

    def _apply_projector(self, p, v):
        d = p - self._core(p)
        nhat = d / _norm(d)[..., None]
        return v - _dot(nhat, v)[..., None] * nhat

    def sample_points(self, count, rng):
        angles = rng.uniform(0.0, 2 * np.pi, size=(count, 2))
        return self.embed(angles)

    def parameters(self, p):
        p = np.asarray(p, dtype=float)
        rho = np.hypot(p[..., 0], p[..., 1])
        theta = np.arctan2(p[..., 2], rho - self.R)
        phi = np.arctan2(p[..., 1], p[..., 0])
        return np.stack([theta, phi], axis=-1)

    def embed(self, params):
        params = np.asarray(params, dtype=float)
        theta, phi = params[..., 0], params[..., 1]
        w = self.R + self.r * np.cos(theta)
        return np.stack([w * np.cos(phi), w * np.sin(phi), self.r * np.sin(theta)],
                        axis=-1)

    def gaussian_curvature(self, theta):
        """Closed-form Gaussian curvature at tube angle ``theta``."""
        return np.cos(theta) / (self.r * (self.R + self.r * np.cos(theta)))

    def loop_winding(self, points):
        """Winding numbers (around the tube, around the axis) of a closed loop."""
        params = self.parameters(points)
        closed = np.concatenate([params, params[:1]], axis=0)
        steps = _wrap(np.diff(closed, axis=0))
        total = steps.sum(axis=0) / (2 * np.pi)
        return int(round(total[0])), int(round(total[1]))


class FlatPlanePatch(EmbeddedTarget):
    """The coordinate plane spanned by e1, e2 in R^q (flat, R^N = 0).

    ``extent`` only bounds where :meth:`sample_points` draws from; the
    projection is defined on all of R^q.
    """

    kind = "flat_plane_patch"

    def __init__(self, extent=1.0, ambient_dim=3, projection_tolerance=1e-8):
        super().__init__(ambient_dim, projection_tolerance)
        self.extent = float(extent)

    def describe(self):
        return {"kind": self.kind, "extent": self.extent, "ambient_dim": self.ambient_dim}

    def _closest(self, p):
        out = np.zeros_like(p)
        out[..., :2] = p[..., :2]
        return out

    def _apply_projector(self, p, v):
        out = np.zeros(np.broadcast(p, v).shape)
        out[..., :2] = v[..., :2]
        return out

    def sample_points(self, count, rng):
        pts = np.zeros((count, self.ambient_dim))
        pts[:, :2] = rng.uniform(-self.extent, self.extent, size=(count, 2))
        return pts

    def parameters(self, p):
        return np.asarray(p, dtype=float)[..., :2].copy()

    def embed(self, params):
        params = np.asarray(params, dtype=float)
        out = np.zeros(params.shape[:-1] + (self.ambient_dim,))
        out[..., :2] = params
        return out


def make_target(spec):
    """Build a target from a config mapping ``{"kind": ..., params...}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "sphere":
        return Sphere(**spec)
    if kind in ("torus", "torus_of_revolution"):
        return TorusOfRevolution(**spec)
    if kind in ("flat", "flat_plane_patch"):
        return FlatPlanePatch(**spec)
    raise ValueError(f"unknown target kind {kind!r}")
