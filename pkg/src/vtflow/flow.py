"""Explicit time integration of du/dt = tau_V(u) + Tr_g T(du, du).

The map lives in the ambient space R^q.  Each step adds ``dt`` times a
tangent force and projects back to the target by closest point.  Two
force modes are available:

``energy_gradient`` (default)
    Minus the gradient of the discrete energy of :mod:`vtflow.energy` in
    the f-weighted node inner product, projected to the tangent space.  The
    Dirichlet part is the flux-form V-Laplacian; the Phi part is assembled
    edge by edge.  This makes the discrete flow an exact projected gradient
    flow.

``pointwise_T``
    The literal formula: tangential part of the pointwise V-Laplacian plus
    ``sum_a T(du(e_a), du(e_a))`` with T from :func:`tensorfield.t_pointwise`.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import FlowLedger, energy_density, kinetic, total_energy
from .errors import CorruptCheckpoint, GateViolation, StabilityBlowup
from .griddomain import first_derivative, v_laplacian, weighted_laplacian
from .tensorfield import TForce, ZeroPhi, phi_sup_norm, t_pointwise

CHECKPOINT_VERSION = 1
CONSTRAINT_TOL = 1e-10


@dataclass
class FlowConfig:
    dt: object = "auto"
    t_max: float = 10.0
    stop_tol: float = 1e-6
    force_mode: str = "energy_gradient"
    checkpoint_every: int = 0
    dt_factor: float = 0.2
    blowup_factor: float = 10.0

    def __post_init__(self):
        if self.dt != "auto" and not float(self.dt) > 0:
            raise ValueError("dt must be positive or 'auto'")


@dataclass(eq=False)
class FlowState:
    t: float
    u: np.ndarray
    u_prev: np.ndarray = None
    step_index: int = 0
    # per-state diagnostics filled in by step(), reused by the ledger
    sup_e: float = field(default=None, repr=False)
    constraint_err: float = field(default=None, repr=False)

    def __eq__(self, other):
        """Field-by-field, bitwise on the arrays (diagnostic caches ignored)."""
        if not isinstance(other, FlowState):
            return NotImplemented

        def same(a, b):
            if a is None or b is None:
                return a is None and b is None
            return np.array_equal(a, b)

        return (self.t == other.t and self.step_index == other.step_index
                and same(self.u, other.u) and same(self.u_prev, other.u_prev))


@dataclass
class FlowProblem:
    """Everything a force evaluation needs, with the Phi gate checked once."""

    grid: object
    weight: object
    target: object
    tforce: TForce = field(default_factory=lambda: TForce(ZeroPhi()))
    gate_samples: int = 10_000

    def __post_init__(self):
        phi = self.tforce.phi
        self.phi_sup = 0.0 if isinstance(phi, ZeroPhi) else phi_sup_norm(
            phi, self.target, self.gate_samples)
        if not self.phi_sup < 0.5:
            raise GateViolation(f"||Phi||_inf = {self.phi_sup:.6g} is not < 1/2")

    @property
    def phi(self):
        return self.tforce.phi

    def force(self, u, check=True):
        return _force(u, self.grid, self.weight, self.target, self.tforce, check)

    def energy(self, u):
        return total_energy(u, self.grid, self.weight, self.phi)


def tension(u, grid, weight, target, scheme="flux", check=True):
    """Tangential part of the V-Laplacian at every node.

    ``scheme="flux"`` uses :func:`weighted_laplacian` (the energy-consistent
    form), ``scheme="pointwise"`` uses :func:`v_laplacian`.  Both coincide
    when f = 1.
    """
    if scheme == "flux":
        lap = weighted_laplacian(grid, weight, u)
    elif scheme == "pointwise":
        lap = v_laplacian(grid, weight, u)
    else:
        raise ValueError(f"unknown tension scheme {scheme!r}")
    return target.tangent_project(u, lap, check=check)


def phi_energy_gradient(u, grid, weight, phi):
    """Euclidean gradient of E_phi with respect to every node coordinate."""
    G = np.zeros_like(u)
    for axis in range(grid.ndim):
        hh = grid.spacing[axis]
        d = grid.forward_difference(u, axis)
        m = grid.edge_midpoints(u, axis)
        C = phi.coeffs(m)
        a = np.einsum("...ij,...j->...i", C + np.swapaxes(C, -1, -2), d)
        scale = (weight.edge_f[axis] * grid.edge_volume(axis))[..., None]
        if phi.constant:
            left, right = -scale * a / hh, scale * a / hh
        else:
            g = 0.5 * phi.grad_contract(m, d, d)
            left, right = scale * (g - a / hh), scale * (g + a / hh)
        G += grid.edge_to_nodes(left, right, axis)
    return G


def phi_force(u, grid, weight, target, phi):
    """Tangential minus-gradient of E_phi in the f-weighted node inner product."""
    G = phi_energy_gradient(u, grid, weight, phi)
    scale = (weight.f * grid.node_weights())[..., None]
    return target.tangent_project(u, -G / scale, check=False)


def pointwise_t_force(u, grid, target, phi):
    """sum_a T(du(e_a), du(e_a)) with central-difference du."""
    out = np.zeros_like(u)
    if phi.constant:
        return out
    for du in first_derivative(grid, u):
        out += t_pointwise(phi, target, u, du, du, check=False)
    return out


def _force(u, grid, weight, target, tforce, check=True):
    if check:
        target.check_on_manifold(u)
    phi = tforce.phi
    if tforce.mode == "energy_gradient":
        F = tension(u, grid, weight, target, "flux", check=False)
        if not isinstance(phi, ZeroPhi):
            F = F + phi_force(u, grid, weight, target, phi)
        return F
    F = tension(u, grid, weight, target, "pointwise", check=False)
    if not phi.constant:
        F = F + pointwise_t_force(u, grid, target, phi)
    return F


def vt_force(u, grid, weight, target, tforce, gate_samples=10_000):
    """Force of the VT flow at every node (tangent to the target).

    Raises GateViolation when the sampled ||Phi||_inf is not below 1/2.
    """
    phi = tforce.phi
    if not isinstance(phi, ZeroPhi):
        sup = phi_sup_norm(phi, target, gate_samples)
        if not sup < 0.5:
            raise GateViolation(f"||Phi||_inf = {sup:.6g} is not < 1/2")
    return _force(np.asarray(u, dtype=float), grid, weight, target, tforce)


def auto_dt(u0, problem, c=0.2):
    """c h^2 / (1 + sup|du|^2 * force_scale) with force_scale = 2 ||Phi||_inf.

    ``h^2`` is the diffusive scale ``1 / sum_a h_a^-2`` of the grid.
    """
    du = first_derivative(problem.grid, u0)
    sup_du2 = float(np.max(np.sum(du * du, axis=(0, -1)))) if du.size else 0.0
    return c * problem.grid.h_eff2 / (1.0 + sup_du2 * 2.0 * problem.phi_sup)


def resolve_dt(config, u0, problem):
    if config.dt == "auto":
        return auto_dt(u0, problem, config.dt_factor)
    return float(config.dt)


def _sup_e(grid, u):
    return float(np.max(energy_density(grid, u)))


def step(state, problem, dt, force=None, blowup_factor=10.0):
    """One explicit Euler step followed by closest-point projection.

    Raises StabilityBlowup when sup|du|^2 grows by more than
    ``blowup_factor`` or the projected map misses the target by more than
    CONSTRAINT_TOL.
    """
    u = state.u
    if force is None:
        force = problem.force(u)
    u_new = problem.target.closest_point(u + dt * force)
    err = problem.target.constraint_error(u_new)
    if err > CONSTRAINT_TOL:
        raise StabilityBlowup(f"constraint error {err:.3e} after projection")
    before = state.sup_e if state.sup_e is not None else _sup_e(problem.grid, u)
    after = _sup_e(problem.grid, u_new)
    if before > 0 and after > blowup_factor * before:
        raise StabilityBlowup(
            f"sup|du|^2 grew by {after / before:.3g}x in one step (dt={dt:.3e})")
    return FlowState(state.t + dt, u_new, u, state.step_index + 1, after, err)


def _ledger_row(problem, state, force, dt):
    grid, weight = problem.grid, problem.weight
    E, E_dir, E_phi = problem.energy(state.u)
    if state.u_prev is None:
        # no previous state: use the instantaneous du/dt given by the equation
        k = np.sum(force * force, axis=-1)
        kin_l2, kin_sup = float(np.sum(k * weight.f * grid.node_weights())), float(np.max(k))
    else:
        kin_l2, kin_sup = kinetic(state.u, state.u_prev, dt, grid, weight)
    return dict(
        step=state.step_index, t=state.t, E_total=E, E_dirichlet=E_dir, E_phi=E_phi,
        sup_e=state.sup_e if state.sup_e is not None else _sup_e(grid, state.u),
        kinetic_L2=kin_l2, kinetic_sup=kin_sup,
        constraint_err=(state.constraint_err if state.constraint_err is not None
                        else problem.target.constraint_error(state.u)),
        residual_inf=float(np.max(np.linalg.norm(force, axis=-1))),
    )


@dataclass
class RunResult:
    state: FlowState
    ledger: FlowLedger
    status: str
    dt: float
    residual_inf: float
    force: np.ndarray = None

    @property
    def converged(self):
        return self.status == "converged"


def run(u0, problem, config, resume=None, on_checkpoint=None, max_steps=None):
    """Integrate until ||du/dt||_inf < stop_tol or t >= t_max.

    ``resume`` is a FlowState (e.g. from :func:`load_checkpoint`) to continue
    from; the time step is always derived from ``u0`` and ``config`` so that
    resumed and uninterrupted runs take identical steps.
    ``on_checkpoint(state)`` is called every ``config.checkpoint_every`` steps.
    """
    u0 = np.asarray(u0, dtype=float)
    problem.target.check_on_manifold(u0)
    dt = resolve_dt(config, u0, problem)
    state = resume if resume is not None else FlowState(0.0, u0.copy(), None, 0)
    ledger = FlowLedger({"h": problem.grid.h, "dt": dt})
    force = problem.force(state.u)
    ledger.append(**_ledger_row(problem, state, force, dt))

    def converged(row):
        if state.u_prev is None:
            return row["residual_inf"] < config.stop_tol
        return math.sqrt(row["kinetic_sup"]) < config.stop_tol

    status = None
    if converged(ledger.row(-1)):
        status = "converged"
    taken = 0
    while status is None:
        if state.t >= config.t_max:
            status = "horizon"
            break
        if max_steps is not None and taken >= max_steps:
            status = "max_steps"
            break
        state = step(state, problem, dt, force, config.blowup_factor)
        taken += 1
        force = problem.force(state.u, check=False)
        row = _ledger_row(problem, state, force, dt)
        ledger.append(**row)
        if on_checkpoint is not None and config.checkpoint_every and \
                state.step_index % config.checkpoint_every == 0:
            on_checkpoint(state)
        if converged(row):
            status = "converged"
    residual = float(np.max(np.linalg.norm(force, axis=-1)))
    return RunResult(state, ledger, status, dt, residual, force)


# ---------------------------------------------------------------------------
# checkpoints


def _digest(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _rows(a):
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, a.shape[-1]).tolist()


def save_checkpoint(state, path, config_hash="", dt=None):
    """Write ``state`` as JSON with an integrity digest.

    Floats are written with ``repr`` precision, so the round trip is exact.
    """
    payload = {
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "t": float(state.t),
        "step_index": int(state.step_index),
        "shape": list(np.shape(state.u)),
        "u": _rows(state.u),
        "u_prev": None if state.u_prev is None else _rows(state.u_prev),
        "dt": dt,
    }
    payload["integrity"] = _digest(payload)
    with open(path, "w") as fh:
        json.dump(payload, fh)


def read_checkpoint(path):
    """Parse and integrity-check a checkpoint, returning the raw payload."""
    try:
        with open(path, "rb") as fh:
            payload = json.loads(fh.read().decode())
        digest = payload.pop("integrity")
    except (ValueError, KeyError, UnicodeDecodeError, AttributeError, TypeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from exc
    if _digest(payload) != digest:
        raise CorruptCheckpoint(f"{path}: integrity digest mismatch")
    return payload


def load_checkpoint(path):
    payload = read_checkpoint(path)
    shape = tuple(payload["shape"])
    u = np.array(payload["u"], dtype=float).reshape(shape)
    u_prev = payload.get("u_prev")
    if u_prev is not None:
        u_prev = np.array(u_prev, dtype=float).reshape(shape)
    return FlowState(payload["t"], u, u_prev, payload["step_index"])
