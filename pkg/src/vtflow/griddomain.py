"""Uniform source grids, domain weights and finite-difference operators.

A map u: M -> R^q is stored as an array of shape ``grid.shape + (q,)``.
Three source domains are supported:

* ``circle``   -- n nodes on S^1 = R / 2piZ, periodic
* ``torus2``   -- n x m nodes on the flat 2-torus, periodic in both axes
* ``interval`` -- n nodes on [0, L] with homogeneous Neumann conditions,
  imposed by ghost-point reflection ``u[-1] = u[1]``

Two discrete Laplacians live here.  :func:`laplacian` / :func:`v_laplacian`
are the pointwise stencils (3/5-point Laplacian plus ``V . du``).
:func:`weighted_laplacian` is the flux form ``f^{-1} div_h(f grad_h u)``;
it is exactly minus the gradient of the edge-based Dirichlet energy
(see :mod:`vtflow.energy`) in the f-weighted inner product defined by
:meth:`DomainGrid.node_weights`, and agrees with ``v_laplacian`` to O(h^2).
"""

import numpy as np

from .errors import ShapeMismatch

GRID_KINDS = ("circle", "torus2", "interval")


class DomainGrid:
    """A uniform grid on a flat source manifold."""

    def __init__(self, kind, n, m=None, L=np.pi):
        if kind not in GRID_KINDS:
            raise ValueError(f"unknown domain kind {kind!r}")
        if n < 8 or (kind == "torus2" and (m is None or m < 8)):
            raise ValueError("grids need at least 8 nodes per axis")
        self.kind = kind
        self.n = int(n)
        self.m = int(m) if kind == "torus2" else None
        self.L = float(L) if kind == "interval" else None
        if kind == "circle":
            self.shape = (self.n,)
            self.spacing = (2 * np.pi / self.n,)
        elif kind == "torus2":
            self.shape = (self.n, self.m)
            self.spacing = (2 * np.pi / self.n, 2 * np.pi / self.m)
        else:
            if self.L <= 0:
                raise ValueError("interval length must be positive")
            self.shape = (self.n,)
            self.spacing = (self.L / (self.n - 1),)
        self.ndim = len(self.shape)
        self.periodic = kind != "interval"
        if self.periodic:
            self._prev = [np.roll(np.arange(k), 1) for k in self.shape]
            self._next = [np.roll(np.arange(k), -1) for k in self.shape]
        else:
            k = self.n
            self._prev = [np.concatenate([[1], np.arange(k - 1)])]
            self._next = [np.concatenate([np.arange(1, k), [k - 2]])]

    def describe(self):
        out = {"kind": self.kind, "n": self.n}
        if self.m is not None:
            out["m"] = self.m
        if self.L is not None:
            out["L"] = self.L
        return out

    def __repr__(self):
        return "DomainGrid(" + ", ".join(f"{k}={v!r}" for k, v in self.describe().items()) + ")"

    @property
    def h(self):
        """Smallest grid spacing."""
        return min(self.spacing)

    @property
    def h_eff2(self):
        """Diffusive length scale squared, 1 / sum_a h_a^-2 (h^2 in 1-D)."""
        return 1.0 / sum(1.0 / hh ** 2 for hh in self.spacing)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    def axes(self):
        """Node coordinates along each axis (1-D arrays)."""
        return [np.arange(size) * hh for size, hh in zip(self.shape, self.spacing)]

    def coords(self):
        """Node coordinates broadcast to the grid, one array per axis."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def edge_coords(self, axis):
        """Coordinates of the edge midpoints along ``axis``."""
        axes = self.axes()
        a = axes[axis]
        axes[axis] = a[:-1] + 0.5 * self.spacing[axis] if not self.periodic else a + 0.5 * self.spacing[axis]
        return np.meshgrid(*axes, indexing="ij")

    def node_weights(self):
        """Quadrature weight of each node (midpoint rule, trapezoid on interval)."""
        w = np.full(self.shape, self.cell_volume)
        if not self.periodic:
            w[0] *= 0.5
            w[-1] *= 0.5
        return w

    def check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[: self.ndim] != self.shape or u.ndim not in (self.ndim, self.ndim + 1):
            raise ShapeMismatch(f"field of shape {u.shape} does not fit grid {self.shape}")
        return u

    def check_nodes(self, density):
        density = np.asarray(density, dtype=float)
        if density.shape != self.shape:
            raise ShapeMismatch(f"density of shape {density.shape} does not fit grid {self.shape}")
        return density

    def _take(self, u, idx, axis):
        return u[idx] if axis == 0 else u[:, idx]

    def neighbours(self, u, axis):
        """(u at node - 1, u at node + 1) along ``axis``, with Neumann ghosts."""
        return self._take(u, self._prev[axis], axis), self._take(u, self._next[axis], axis)

    def forward_difference(self, u, axis):
        """Edge differences (u[i+1] - u[i]) / h; n edges if periodic, n-1 otherwise."""
        u = self.check(u)
        if self.periodic:
            return (self._take(u, self._next[axis], axis) - u) / self.spacing[axis]
        return np.diff(u, axis=axis) / self.spacing[axis]

    def edge_midpoints(self, u, axis):
        u = self.check(u)
        if self.periodic:
            return 0.5 * (u + self._take(u, self._next[axis], axis))
        return 0.5 * (u[1:] + u[:-1])

    def edge_to_nodes(self, left, right, axis):
        """Scatter per-edge contributions to the edge's left and right nodes."""
        if self.periodic:
            return left + self._take(right, self._prev[axis], axis)
        pad = np.zeros_like(left[:1])
        return np.concatenate([left, pad], axis=axis) + np.concatenate([pad, right], axis=axis)

    def edge_volume(self, axis):
        """Quadrature weight per edge."""
        return self.cell_volume


class WeightField:
    """Positive domain weight f with V = grad log f.

    ``kind="one"`` gives f = 1.  ``kind="exp_cos"`` gives
    f = exp(a cos s) on the circle, exp(a (cos x + cos y)) on torus2 and
    exp(a cos(pi s / L)) on the interval (so V vanishes at the endpoints).
    """

    def __init__(self, grid, kind="one", amplitude=0.0):
        if kind not in ("one", "exp_cos"):
            raise ValueError(f"unknown weight kind {kind!r}")
        self.grid = grid
        self.kind = kind
        self.amplitude = float(amplitude) if kind == "exp_cos" else 0.0
        self.f = self.evaluate(grid.coords())
        self.V = self.log_gradient(grid.coords())
        self.edge_f = [self.evaluate(grid.edge_coords(a)) for a in range(grid.ndim)]
        if not np.all(self.f > 0) or not np.all(np.isfinite(self.f)):
            raise ValueError("weight must be positive and finite")

    @property
    def is_one(self):
        return self.kind == "one"

    def describe(self):
        return {"kind": self.kind, "amplitude": self.amplitude}

    def _phase(self, coords, axis):
        if self.grid.kind == "interval":
            return np.pi * coords[axis] / self.grid.L, np.pi / self.grid.L
        return coords[axis], 1.0

    def evaluate(self, coords):
        if self.kind == "one":
            return np.ones_like(coords[0])
        total = np.zeros_like(coords[0])
        for axis in range(len(coords)):
            phase, _ = self._phase(coords, axis)
            total += np.cos(phase)
        return np.exp(self.amplitude * total)

    def log_gradient(self, coords):
        if self.kind == "one":
            return np.zeros((len(coords),) + coords[0].shape)
        comps = []
        for axis in range(len(coords)):
            phase, scale = self._phase(coords, axis)
            comps.append(-self.amplitude * scale * np.sin(phase))
        return np.stack(comps)


def first_derivative(grid, u):
    """Central differences of ``u`` along every axis, shape ``(ndim,) + u.shape``.

    On the interval the ghost reflection makes the endpoint derivative
    exactly zero.
    """
    u = grid.check(u)
    out = []
    for axis, hh in enumerate(grid.spacing):
        minus, plus = grid.neighbours(u, axis)
        out.append((plus - minus) / (2 * hh))
    return np.stack(out)


def laplacian(grid, u):
    """3-point (1-D) or 5-point (2-D) Laplacian."""
    u = grid.check(u)
    out = np.zeros_like(u)
    for axis, hh in enumerate(grid.spacing):
        minus, plus = grid.neighbours(u, axis)
        out += (plus - 2 * u + minus) / hh ** 2
    return out


def _contract_v(weight, du):
    V = weight.V
    if du.ndim > V.ndim:
        V = V[..., None]
    return np.sum(V * du, axis=0)


def v_laplacian(grid, weight, u):
    """Delta_V u = Delta u + du(V), with V = grad log f (pointwise stencil)."""
    lap = laplacian(grid, u)
    if weight.is_one:
        return lap
    return lap + _contract_v(weight, first_derivative(grid, u))


def weighted_laplacian(grid, weight, u):
    """Flux form f^{-1} div_h(f_edge grad_h u).

    Exactly minus the f-weighted gradient of the edge energy
    1/2 sum_edges f_edge |D+ u|^2 vol; equals :func:`laplacian` for f = 1.
    """
    u = grid.check(u)
    if weight.is_one:
        return laplacian(grid, u)
    node_w = grid.node_weights()
    total = np.zeros_like(u)
    for axis in range(grid.ndim):
        d = grid.forward_difference(u, axis)
        fe = weight.edge_f[axis]
        if d.ndim > fe.ndim:
            fe = fe[..., None]
        flux = fe * d * (grid.edge_volume(axis) / grid.spacing[axis])
        total += grid.edge_to_nodes(flux, -flux, axis)
    scale = weight.f * node_w
    if u.ndim > scale.ndim:
        scale = scale[..., None]
    return total / scale


def integrate(grid, weight, density):
    """Quadrature of ``density * f`` over the domain."""
    density = grid.check_nodes(density)
    f = 1.0 if weight is None else weight.f
    return float(np.sum(density * f * grid.node_weights()))


def integrate_edges(grid, weight, density, axis):
    """Quadrature of an edge density against the edge-midpoint weight."""
    f = 1.0 if weight is None else weight.edge_f[axis]
    return float(np.sum(np.asarray(density) * f) * grid.edge_volume(axis))


def boundary_values(grid, u):
    """Values of ``u`` on the boundary nodes of an interval grid."""
    if grid.periodic:
        return np.empty((0,) + np.shape(u)[grid.ndim:])
    u = grid.check(u)
    return np.stack([u[0], u[-1]])
