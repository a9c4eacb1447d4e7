"""The bilinear form Phi on the target, the derived tensor T, and condition checks.

Phi is stored as an ambient coefficient field ``Phi_ij(p)`` and restricted
to tangent vectors of N.  T is defined by ``<T(Y,Z), X> = (D_X Phi)(Y,Z)``
where D is the ambient directional derivative of the coefficients, i.e.
the Lie derivative along the constant ambient extension of X.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FORCE_MODES = ("energy_gradient", "pointwise_T")


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


class PhiSpec:
    """Ambient (0,2) coefficient field restricted to N."""

    kind = None
    #: True when all coefficient derivatives vanish identically
    constant = True

    def coeffs(self, p):
        """Coefficients Phi_ij at ambient points, shape ``(..., q, q)``."""
        raise NotImplementedError

    def coeff_grad(self, p):
        """Derivatives d_k Phi_ij, shape ``(..., q, q, q)`` indexed [k, i, j]."""
        p = np.asarray(p, dtype=float)
        q = p.shape[-1]
        return np.zeros(p.shape[:-1] + (q, q, q))

    def bilinear(self, p, Y, Z):
        return np.einsum("...i,...ij,...j->...", Y, self.coeffs(p), Z)

    def grad_contract(self, p, Y, Z):
        """Vector g_k = sum_ij d_k Phi_ij Y_i Z_j."""
        return np.einsum("...kij,...i,...j->...k", self.coeff_grad(p), Y, Z)

    def describe(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.describe()!r})"


class ZeroPhi(PhiSpec):
    kind = "zero"

    def coeffs(self, p):
        p = np.asarray(p, dtype=float)
        q = p.shape[-1]
        return np.zeros(p.shape[:-1] + (q, q))

    def describe(self):
        return {"kind": self.kind}


class MetricMultiple(PhiSpec):
    """Phi = lam * h (the induced metric)."""

    kind = "metric_multiple"

    def __init__(self, lam):
        self.lam = float(lam)

    def coeffs(self, p):
        p = np.asarray(p, dtype=float)
        q = p.shape[-1]
        return np.broadcast_to(self.lam * np.eye(q), p.shape[:-1] + (q, q))

    def describe(self):
        return {"kind": self.kind, "lam": self.lam}


class AmbientBilinear(PhiSpec):
    """Constant ambient matrix B, Phi(Y, Z) = Y^T B Z."""

    kind = "ambient_bilinear"

    def __init__(self, B):
        self.B = np.array(B, dtype=float)
        if self.B.ndim != 2 or self.B.shape[0] != self.B.shape[1]:
            raise ValueError("B must be a square matrix")

    def coeffs(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.B, p.shape[:-1] + self.B.shape)

    def describe(self):
        return {"kind": self.kind, "B": self.B.tolist()}


class AffinePhi(PhiSpec):
    """Coefficients affine in the ambient point: Phi_ij(p) = B_ij + sum_k S_kij p_k.

    ``AffinePhi.isotropic(0.1, axis=2)`` is the field 0.1 * p_3 * delta_ij.
    """

    kind = "ambient_affine"
    constant = False

    def __init__(self, base, slopes):
        self.base = np.array(base, dtype=float)
        self.slopes = np.array(slopes, dtype=float)
        q = self.base.shape[0]
        if self.base.shape != (q, q) or self.slopes.shape != (q, q, q):
            raise ValueError("base must be q x q and slopes q x q x q")
        self.constant = not np.any(self.slopes)

    @classmethod
    def isotropic(cls, scale, axis=2, q=3):
        slopes = np.zeros((q, q, q))
        slopes[axis] = scale * np.eye(q)
        return cls(np.zeros((q, q)), slopes)

    def coeffs(self, p):
        p = np.asarray(p, dtype=float)
        return self.base + np.einsum("...k,kij->...ij", p, self.slopes)

    def coeff_grad(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.slopes, p.shape[:-1] + self.slopes.shape)

    def describe(self):
        return {"kind": self.kind, "base": self.base.tolist(), "slopes": self.slopes.tolist()}


class SampledPhi(PhiSpec):
    """Coefficient table over the target's (theta, phi) parameter grid.

    A full tensor-product table is interpolated by bicubic splines, padded
    periodically in the angular parameters (and across the poles on a
    sphere) so the interpolant is smooth and its finite-difference
    derivatives are accurate.  Scattered tables fall back to linear
    interpolation on a Delaunay triangulation, then to the nearest sample
    outside its hull.  Ambient points are first mapped to the target by
    closest-point projection; derivatives are central differences of the
    interpolant with step ``fd_step``.
    """

    kind = "sampled"
    constant = False

    def __init__(self, grid, coeffs, target, fd_step=1e-6, source=None):
        grid = np.asarray(grid, dtype=float)
        q = target.ambient_dim
        if grid.ndim != 2 or grid.shape[1] != 2:
            raise ValueError("grid must be a list of (theta, phi) pairs")
        coeffs = np.asarray(coeffs, dtype=float).reshape(len(grid), q, q)
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("Phi table coefficients must be finite")
        self.grid = grid
        self.table = coeffs
        self.target = target
        self.fd_step = float(fd_step)
        self.source = source
        self._splines = self._build_splines()
        if self._splines is None:
            self._build_scattered()

    def _periodic_axes(self):
        kind = self.target.kind
        if kind == "torus_of_revolution":
            return (0, 1)
        if kind == "sphere":
            return (1,)
        return ()

    def _build_splines(self):
        from scipy.interpolate import RectBivariateSpline

        th = np.unique(self.grid[:, 0])
        ph = np.unique(self.grid[:, 1])
        if len(th) * len(ph) != len(self.grid) or min(len(th), len(ph)) < 4:
            return None
        q = self.target.ambient_dim
        it = np.searchsorted(th, self.grid[:, 0])
        ip = np.searchsorted(ph, self.grid[:, 1])
        vals = np.empty((len(th), len(ph), q * q))
        vals[it, ip] = self.table.reshape(len(self.grid), -1)
        pad = 3
        periodic = self._periodic_axes()
        if 1 in periodic:
            ph = np.concatenate([ph[-pad:] - 2 * np.pi, ph, ph[:pad] + 2 * np.pi])
            vals = np.concatenate([vals[:, -pad:], vals, vals[:, :pad]], axis=1)
        if 0 in periodic:
            th = np.concatenate([th[-pad:] - 2 * np.pi, th, th[:pad] + 2 * np.pi])
            vals = np.concatenate([vals[-pad:], vals, vals[:pad]], axis=0)
        elif self.target.kind == "sphere" and len(ph) % 2 == 0:
            # continue across each pole: (theta, phi) ~ (-theta, phi + pi)
            n = len(ph) - 2 * pad if 1 in periodic else len(ph)
            core = vals[:, pad:pad + n] if 1 in periodic else vals
            shifted = np.roll(core, n // 2, axis=1)
            if 1 in periodic:
                shifted = np.concatenate([shifted[:, -pad:], shifted, shifted[:, :pad]], axis=1)
            lo = th[0] == 0.0
            hi = np.isclose(th[-1], np.pi)
            if lo:
                th = np.concatenate([-th[pad:0:-1], th])
                vals = np.concatenate([shifted[pad:0:-1], vals], axis=0)
                shifted = np.concatenate([shifted[pad:0:-1], shifted], axis=0)
            if hi:
                th = np.concatenate([th, 2 * np.pi - th[-2:-pad - 2:-1]])
                vals = np.concatenate([vals, shifted[-2:-pad - 2:-1]], axis=0)
        return [RectBivariateSpline(th, ph, vals[..., k], kx=3, ky=3)
                for k in range(q * q)]

    def _build_scattered(self):
        from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator

        q = self.target.ambient_dim
        pts, vals = [self.grid], [self.table]
        for axis in self._periodic_axes():
            extra_p, extra_v = [], []
            for shift in (-2 * np.pi, 2 * np.pi):
                for block_p, block_v in zip(pts, vals):
                    moved = block_p.copy()
                    moved[:, axis] += shift
                    extra_p.append(moved)
                    extra_v.append(block_v)
            pts += extra_p
            vals += extra_v
        pts = np.concatenate(pts)
        vals = np.concatenate(vals).reshape(len(pts), q * q)
        self._linear = LinearNDInterpolator(pts, vals)
        self._nearest = NearestNDInterpolator(pts, vals)

    @classmethod
    def from_function(cls, fn, target, n_theta=64, n_phi=64):
        """Tabulate ``fn(p) -> (q, q)`` on a regular parameter grid of ``target``."""
        if target.kind == "sphere":
            theta = np.linspace(0.0, np.pi, n_theta)
        elif target.kind == "torus_of_revolution":
            theta = np.linspace(-np.pi, np.pi, n_theta, endpoint=False)
        else:
            theta = np.linspace(-target.extent, target.extent, n_theta)
        if target.kind == "flat_plane_patch":
            phi = np.linspace(-target.extent, target.extent, n_phi)
        else:
            phi = np.linspace(-np.pi, np.pi, n_phi, endpoint=False)
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        grid = np.stack([tt.ravel(), pp.ravel()], axis=-1)
        pts = target.embed(grid)
        coeffs = np.array([fn(x) for x in pts])
        return cls(grid, coeffs, target)

    def coeffs(self, p):
        p = np.asarray(p, dtype=float)
        q = self.target.ambient_dim
        params = self.target.parameters(self.target.closest_point(p))
        flat = params.reshape(-1, 2)
        if self._splines is not None:
            th, ph = flat[:, 0], flat[:, 1]
            if self.target.kind == "torus_of_revolution":
                th = (th + np.pi) % (2 * np.pi) - np.pi
            vals = np.stack([sp.ev(th, ph) for sp in self._splines], axis=-1)
        else:
            vals = self._linear(flat)
            missing = np.isnan(vals[:, 0])
            if np.any(missing):
                vals[missing] = self._nearest(flat[missing])
        return vals.reshape(p.shape[:-1] + (q, q))

    def coeff_grad(self, p):
        p = np.asarray(p, dtype=float)
        q = p.shape[-1]
        s = self.fd_step
        out = np.empty(p.shape[:-1] + (q, q, q))
        for k in range(q):
            e = np.zeros(q)
            e[k] = s
            out[..., k, :, :] = (self.coeffs(p + e) - self.coeffs(p - e)) / (2 * s)
        return out

    def describe(self):
        if self.source is not None:
            return {"kind": self.kind, "table": str(self.source)}
        return {"kind": self.kind, "grid": self.grid.tolist(),
                "coeffs": self.table.reshape(len(self.grid), -1).tolist()}


def load_phi_table(path, target):
    """Read a sampled Phi from ``{"grid": [[theta, phi], ...], "coeffs": [[...], ...]}``."""
    with open(path) as fh:
        data = json.load(fh)
    return SampledPhi(data["grid"], data["coeffs"], target, source=path)


def save_phi_table(phi, path):
    with open(path, "w") as fh:
        json.dump({"grid": phi.grid.tolist(),
                   "coeffs": phi.table.reshape(len(phi.grid), -1).tolist()}, fh)


def make_phi(spec, target, base_dir="."):
    """Build a PhiSpec from a config mapping."""
    spec = dict(spec)
    kind = spec.pop("kind", "zero")
    if kind == "zero":
        return ZeroPhi()
    if kind == "metric_multiple":
        return MetricMultiple(spec["lam"])
    if kind == "ambient_bilinear":
        return AmbientBilinear(spec["B"])
    if kind == "ambient_affine":
        if "isotropic_scale" in spec:
            return AffinePhi.isotropic(spec["isotropic_scale"], axis=spec.get("axis", 2),
                                       q=target.ambient_dim)
        return AffinePhi(spec["base"], spec["slopes"])
    if kind == "sampled":
        path = spec["table"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        return load_phi_table(path, target)
    raise ValueError(f"unknown phi kind {kind!r}")


# ---------------------------------------------------------------------------
# pointwise evaluation


def phi_eval(phi, p, Y, Z, target=None):
    """Phi_p(Y, Z).  With ``target`` given, ``p`` is checked to lie on N."""
    if target is not None:
        target.check_on_manifold(p)
    p = np.asarray(p, dtype=float)
    return phi.bilinear(p, np.asarray(Y, dtype=float), np.asarray(Z, dtype=float))


def tangent_basis(target, p):
    """Orthonormal tangent frames at ``p``, shape ``(..., q, dim)``."""
    p = np.asarray(p, dtype=float)
    q = target.ambient_dim
    eye = np.broadcast_to(np.eye(q), p.shape[:-1] + (q, q))
    # columns of the projector span the tangent space
    proj = target.tangent_project(p[..., None, :], eye, check=False)
    u, _, _ = np.linalg.svd(np.swapaxes(proj, -1, -2))
    return u[..., :, : target.dim]


def phi_sup_norm(phi, target, samples=10_000, seed=0):
    """max over sampled points of sup_{|Y|=|Z|=1} |Phi(Y, Z)| on tangent vectors.

    At each point the sup over unit tangent pairs is the largest singular
    value of Phi restricted to the tangent plane, so only the points are
    sampled.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    pts = target.sample_points(samples, rng)
    E = tangent_basis(target, pts)
    M = np.einsum("nia,nij,njb->nab", E, phi.coeffs(pts), E)
    return float(np.max(np.linalg.svd(M, compute_uv=False)[..., 0]))


def t_pointwise(phi, target, p, Y, Z, check=True):
    """T(Y, Z) at ``p``: the tangent vector with <T(Y,Z), X> = (D_X Phi)(Y, Z)."""
    p = np.asarray(p, dtype=float)
    Y = np.asarray(Y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if check:
        target.check_on_manifold(p)
    if phi.constant:
        return np.zeros(np.broadcast(p, Y, Z).shape)
    return target.tangent_project(p, phi.grad_contract(p, Y, Z), check=False)


def nabla_t(phi, target, p, X, Y, Z, step=1e-4, check=True):
    """(nabla_X T)(Y, Z) by a central difference along X.

    The base point moves by closest-point projection of ``p +- s X/|X|``
    (a geodesic step to first order) and Y, Z are carried along by tangent
    projection, which approximates parallel transport to first order.
    """
    p = np.asarray(p, dtype=float)
    X, Y, Z = (np.asarray(a, dtype=float) for a in (X, Y, Z))
    if check:
        target.check_on_manifold(p)
    shape = np.broadcast(p, X, Y, Z).shape
    if phi.constant:
        return np.zeros(shape)
    p, X, Y, Z = (np.broadcast_to(a, shape) for a in (p, X, Y, Z))
    xn = np.linalg.norm(X, axis=-1)
    safe = np.where(xn > 0, xn, 1.0)
    xhat = X / safe[..., None]
    s = step * target.length_scale
    vals = []
    for sign in (1.0, -1.0):
        q = target.closest_point(p + sign * s * xhat)
        Yq = target.tangent_project(q, Y, check=False)
        Zq = target.tangent_project(q, Z, check=False)
        vals.append(t_pointwise(phi, target, q, Yq, Zq, check=False))
    deriv = (vals[0] - vals[1]) / (2 * s) * xn[..., None]
    return target.tangent_project(p, deriv, check=False)


# ---------------------------------------------------------------------------
# condition checks


@dataclass(frozen=True)
class ConditionParams:
    C0: float = 2.0
    kappa: float = 0.0
    sample_count: int = 10_000
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not self.C0 > 1:
            problems.append(("C0", "must be > 1"))
        if self.kappa < 0:
            problems.append(("kappa", "must be >= 0"))
        if self.sample_count < 1:
            problems.append(("sample_count", "must be >= 1"))
        if problems:
            raise ConfigError(problems)


@dataclass
class ConditionReport:
    check: str
    satisfied: bool
    worst_margin: float
    witness: dict = field(default_factory=dict)
    sample_count: int = 0

    def to_dict(self):
        return {"check": self.check, "pass": bool(self.satisfied),
                "worst_margin": float(self.worst_margin),
                "sample_count": int(self.sample_count), "witness": self.witness}


@dataclass(frozen=True)
class TForce:
    """Which discrete force the flow uses for the Phi term."""

    phi: PhiSpec
    mode: str = "energy_gradient"

    def __post_init__(self):
        if self.mode not in FORCE_MODES:
            raise ValueError(f"force mode must be one of {FORCE_MODES}")


def _sample_frames(target, count, seed):
    """Points and unit tangent frames (X, Y, Z); nested in ``count`` for a fixed seed."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    pts = target.sample_points(count, streams[0])
    frames = []
    for rng in streams[1:]:
        g = rng.standard_normal((count, target.ambient_dim))
        t = target.tangent_project(pts, g, check=False)
        frames.append(t / np.linalg.norm(t, axis=-1)[:, None])
    return pts, frames


def _worker_count():
    try:
        return max(1, int(os.environ.get("VTFLOW_THREADS", "1")))
    except ValueError:
        return 1


def _chunked_max(fn, count, chunk=4096):
    """Evaluate ``fn(slice) -> margins`` in chunks and return all margins.

    Chunks may run on up to VTFLOW_THREADS threads; the result does not
    depend on the partitioning.
    """
    slices = [slice(i, min(i + chunk, count)) for i in range(0, count, chunk)]
    workers = min(_worker_count(), len(slices))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, slices))
    else:
        parts = [fn(s) for s in slices]
    return np.concatenate(parts)


def _report(name, margins, pts, frames, count):
    k = int(np.argmax(margins))
    worst = float(margins[k])
    witness = {"point": pts[k].tolist(), "X": frames[0][k].tolist(),
               "Y": frames[1][k].tolist(), "Z": frames[2][k].tolist()}
    return ConditionReport(name, worst <= 0.0, worst, witness, count)


def ff_margins(phi, target, C0, pts, X, Y, Z):
    """Left side of the closed-domain condition for each sampled frame.

    <R(X,Y)X,Y> + C0 |T(X,Y)|^2 - 1/2 <(nabla_X T)(Y,Z), X>, with the dual
    1-form of X identified with X through the induced metric.
    """
    curv = target.curvature_operator(pts, X, Y, check=False)
    T = t_pointwise(phi, target, pts, X, Y, check=False)
    dT = nabla_t(phi, target, pts, X, Y, Z, check=False)
    return curv + C0 * _dot(T, T) - 0.5 * _dot(dT, X)


def l1_margins(phi, target, C0, pts, X, Y, Z):
    """4 C0 |T(X,Y)|^2 + <(nabla_X T)(Y,Z), X> for each sampled frame."""
    T = t_pointwise(phi, target, pts, X, Y, check=False)
    dT = nabla_t(phi, target, pts, X, Y, Z, check=False)
    return 4 * C0 * _dot(T, T) + _dot(dT, X)


def _check(name, margin_fn, phi, target, params):
    n = params.sample_count
    pts, frames = _sample_frames(target, n, params.seed)

    def run(sl):
        return margin_fn(phi, target, params.C0, pts[sl], *(f[sl] for f in frames))

    return _report(name, _chunked_max(run, n), pts, frames, n)


def check_condition_ff(phi, target, params):
    """Sampled check of the curvature/T condition for closed and Neumann domains."""
    return _check("ff", ff_margins, phi, target, params)


def check_condition_l1(phi, target, params):
    """Sampled check of the T-only condition used on S^1 domains."""
    return _check("l1", l1_margins, phi, target, params)


def check_curvature_bound(target, params):
    """Sampled check that sectional curvature stays <= kappa."""
    n = params.sample_count
    pts, frames = _sample_frames(target, n, params.seed)
    X, Y = frames[0], frames[1]
    # orthonormalize Y against X so the plane is never degenerate
    Y = Y - _dot(X, Y)[:, None] * X
    norms = np.linalg.norm(Y, axis=-1)
    good = norms > 1e-6
    Y[good] /= norms[good, None]
    margins = np.full(n, -np.inf)
    margins[good] = target.curvature_operator(pts[good], X[good], Y[good], check=False) - params.kappa
    return _report("curvature_bound", margins, pts, [X, Y, frames[2]], n)


def check_phi_gate(phi, target, samples=10_000, seed=0):
    sup = phi_sup_norm(phi, target, samples, seed)
    return ConditionReport("phi_gate", sup < 0.5, sup - 0.5,
                           {"phi_sup_norm": sup}, samples)
