"""Brute-force verifiers for the discrete flow.

The energy here is re-implemented from explicit edge index lists and its
own quadrature, sharing no stencil code with :mod:`vtflow.griddomain`, so
that comparing it against the flow's force is a genuine cross-check.
"""

import numpy as np

from .flow import FlowState, _force, phi_force, pointwise_t_force, resolve_dt, step
from .tensorfield import ZeroPhi


def _edges(grid, axis):
    """(left index, right index, midpoint coordinate) along ``axis``."""
    n = grid.shape[axis]
    h = grid.spacing[axis]
    left = np.arange(n if grid.periodic else n - 1)
    right = (left + 1) % n
    return left, right, (left + 0.5) * h


def _axis_coords(grid):
    return [np.arange(n) * h for n, h in zip(grid.shape, grid.spacing)]


def oracle_energy(u, grid, weight, phi):
    """Discrete energy from explicit edge lists: sum of (1/2|d|^2 + Phi_m(d,d)) f vol."""
    u = np.asarray(u, dtype=float)
    vol = float(np.prod(grid.spacing))
    total = 0.0
    for axis in range(grid.ndim):
        left, right, mid = _edges(grid, axis)
        uL = np.take(u, left, axis=axis)
        uR = np.take(u, right, axis=axis)
        d = (uR - uL) / grid.spacing[axis]
        coords = _axis_coords(grid)
        coords[axis] = mid
        f = weight.evaluate(np.meshgrid(*coords, indexing="ij"))
        dens = 0.5 * np.einsum("...i,...i->...", d, d)
        if not isinstance(phi, ZeroPhi):
            m = 0.5 * (uL + uR)
            dens = dens + np.einsum("...i,...ij,...j->...", d, phi.coeffs(m), d)
        total += vol * float(np.sum(dens * f))
    return total


def oracle_node_weights(grid, weight):
    """f times the node quadrature weight (trapezoid ends on the interval)."""
    w = np.full(grid.shape, float(np.prod(grid.spacing)))
    if not grid.periodic:
        w[0] /= 2
        w[-1] /= 2
    return w * weight.evaluate(np.meshgrid(*_axis_coords(grid), indexing="ij"))


def weighted_pairing(grid, weight, a, b):
    """int f <a, b> with the oracle's own quadrature."""
    return float(np.sum(oracle_node_weights(grid, weight) * np.sum(a * b, axis=-1)))


def fd_first_variation(u, direction, eps, grid, weight, phi, target):
    """[E(P(u + eps v)) - E(P(u - eps v))] / (2 eps), P = closest-point projection."""
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    u = np.asarray(u, dtype=float)
    v = np.asarray(direction, dtype=float)
    normal = v - target.tangent_project(u, v)
    if np.max(np.linalg.norm(normal, axis=-1), initial=0.0) > 1e-8 * (1 + np.max(np.abs(v), initial=0.0)):
        raise ValueError("direction must be tangent at every node")
    plus = target.closest_point(u + eps * v)
    minus = target.closest_point(u - eps * v)
    return (oracle_energy(plus, grid, weight, phi) - oracle_energy(minus, grid, weight, phi)) / (2 * eps)


def random_smooth_direction(grid, target, u, rng, modes=3):
    """Tangent field with a few random low Fourier modes per ambient coordinate."""
    q = u.shape[-1]
    coords = np.meshgrid(*_axis_coords(grid), indexing="ij")
    field = np.zeros_like(u)
    for k in range(1, modes + 1):
        for axis, x in enumerate(coords):
            period = 2 * np.pi if grid.periodic else 2 * grid.L
            phase = 2 * np.pi * k * x / period
            a, b = rng.standard_normal((2, q)) / k
            field += np.cos(phase)[..., None] * a + np.sin(phase)[..., None] * b
    field += rng.standard_normal(q)
    return target.tangent_project(u, field)


def first_variation_error(u, direction, grid, weight, target, tforce, eps=1e-6):
    """Relative error between the FD first variation and -int f <force, v>."""
    fd = fd_first_variation(u, direction, eps, grid, weight, tforce.phi, target)
    F = _force(u, grid, weight, target, tforce)
    analytic = -weighted_pairing(grid, weight, F, direction)
    return abs(fd - analytic) / max(abs(analytic), np.finfo(float).tiny), fd, analytic


def geodesic_residual(u, grid, weight, target, tforce):
    """sup over nodes of |tau_V(u) + Tr T(du, du)| (the VT-harmonic defect)."""
    F = _force(np.asarray(u, dtype=float), grid, weight, target, tforce)
    return float(np.max(np.linalg.norm(F, axis=-1)))


def mode_discrepancy(u, grid, weight, target, phi):
    """sup over nodes of the difference between the two modes' Phi forces.

    Both modes are compared on the same tension term, so the value isolates
    the Phi part; with f = 1 it equals the full force difference.
    """
    u = np.asarray(u, dtype=float)
    target.check_on_manifold(u)
    if isinstance(phi, ZeroPhi):
        return 0.0
    Fe = phi_force(u, grid, weight, target, phi)
    Fp = pointwise_t_force(u, grid, target, phi)
    return float(np.max(np.linalg.norm(Fe - Fp, axis=-1)))


def fd_gradient_force(u, grid, weight, target, phi, eps=1e-6):
    """Energy-gradient force from a dense central-difference gradient.

    Every node coordinate is perturbed independently (no projection), so
    the cost is 2 * u.size energy evaluations.
    """
    u = np.asarray(u, dtype=float)
    flat = u.reshape(-1)
    G = np.empty_like(flat)
    for i in range(flat.size):
        save = flat[i]
        flat[i] = save + eps
        ep = oracle_energy(u, grid, weight, phi)
        flat[i] = save - eps
        em = oracle_energy(u, grid, weight, phi)
        flat[i] = save
        G[i] = (ep - em) / (2 * eps)
    G = G.reshape(u.shape)
    F = -G / oracle_node_weights(grid, weight)[..., None]
    return target.tangent_project(u, F)


def latitude_tension(height, radius=1.0):
    """|tau| of the latitude circle s -> (rho cos s, rho sin s, height) on a sphere."""
    rho = np.sqrt(radius ** 2 - height ** 2)
    return rho * abs(height) / radius


def speed_spread(u, grid):
    """(max - min) / mean of the edge speeds |D+ u| along a closed curve."""
    left, right, _ = _edges(grid, 0)
    speeds = np.linalg.norm(u[right] - u[left], axis=-1) / grid.spacing[0]
    return float((speeds.max() - speeds.min()) / speeds.mean())


def divergence_exponent(u0, v0, problem, config, t_end):
    """Run two flows in lockstep and fit sup|u - v|^2 <= |u0 - v0|^2 e^{C t}.

    Returns ``(C_hat, times, sq_distances)``; C_hat is the smallest
    exponent for which the bound holds at every step.
    """
    dt = resolve_dt(config, u0, problem)
    a = FlowState(0.0, np.array(u0, dtype=float), None, 0)
    b = FlowState(0.0, np.array(v0, dtype=float), None, 0)
    times = [0.0]
    dist = [float(np.max(np.sum((a.u - b.u) ** 2, axis=-1)))]
    while a.t < t_end:
        a = step(a, problem, dt)
        b = step(b, problem, dt)
        times.append(a.t)
        dist.append(float(np.max(np.sum((a.u - b.u) ** 2, axis=-1))))
    times = np.array(times)
    dist = np.array(dist)
    if dist[0] == 0.0:
        return 0.0, times, dist
    ratio = np.maximum(dist[1:], np.finfo(float).tiny) / dist[0]
    c_hat = float(np.max(np.log(ratio) / times[1:]))
    return c_hat, times, dist
