"""Discrete energies, the per-step flow ledger, and ledger-level checks.

The discrete energy is edge based::

    E_dirichlet = sum_axes sum_edges  1/2 |D+ u|^2      f(edge midpoint) vol
    E_phi       = sum_axes sum_edges  Phi_m(D+ u, D+ u) f(edge midpoint) vol

with ``m`` the ambient midpoint of the edge.  Node-based quantities
(the energy density ``e(u)`` behind ``sup_e``, kinetic densities) use
central differences and the node quadrature weights of the grid.
"""

import csv
import math

import numpy as np

from .errors import NoPreviousState
from .griddomain import first_derivative, integrate, integrate_edges
from .tensorfield import ZeroPhi

LEDGER_COLUMNS = ("step", "t", "E_total", "E_dirichlet", "E_phi", "sup_e",
                  "kinetic_L2", "kinetic_sup", "constraint_err", "residual_inf")


def total_energy(u, grid, weight, phi, target=None):
    """(E_total, E_dirichlet, E_phi) of the map ``u``."""
    if target is not None:
        target.check_on_manifold(u)
    u = grid.check(u)
    e_dir = 0.0
    e_phi = 0.0
    for axis in range(grid.ndim):
        d = grid.forward_difference(u, axis)
        e_dir += integrate_edges(grid, weight, 0.5 * np.sum(d * d, axis=-1), axis)
        if not isinstance(phi, ZeroPhi):
            m = grid.edge_midpoints(u, axis)
            e_phi += integrate_edges(grid, weight, phi.bilinear(m, d, d), axis)
    return e_dir + e_phi, e_dir, e_phi


def energy_density(grid, u):
    """Node energy density e(u) = 1/2 sum_a |du(e_a)|^2 (central differences)."""
    du = first_derivative(grid, u)
    return 0.5 * np.sum(du * du, axis=(0, -1))


def kinetic(u, u_prev, dt, grid, weight):
    """(int f |du/dt|^2, sup_x |du/dt|^2) from the backward difference (u - u_prev)/dt."""
    if u_prev is None:
        raise NoPreviousState("kinetic density needs the previous state")
    v = (np.asarray(u) - np.asarray(u_prev)) / dt
    k = np.sum(v * v, axis=-1)
    return integrate(grid, weight, k), float(np.max(k))


class FlowLedger:
    """Per-step time series of a flow run.

    Rows are stored in :data:`LEDGER_COLUMNS` order.  ``meta`` carries
    run-level data (grid spacing, time step, config hash) that the
    verifiers need but that is not part of the CSV.
    """

    columns = LEDGER_COLUMNS

    def __init__(self, meta=None):
        self.rows = []
        self.meta = dict(meta or {})

    def append(self, **values):
        self.rows.append(tuple(values[c] for c in self.columns))

    def __len__(self):
        return len(self.rows)

    def __getitem__(self, name):
        i = self.columns.index(name)
        return np.array([row[i] for row in self.rows], dtype=float)

    def row(self, k):
        return dict(zip(self.columns, self.rows[k]))

    def truncate_after(self, step):
        self.rows = [r for r in self.rows if r[0] <= step]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([str(int(row[0]))] + [repr(float(x)) for x in row[1:]])

    @classmethod
    def from_csv(cls, path, meta=None):
        ledger = cls(meta)
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != cls.columns:
                raise ValueError(f"unexpected ledger columns {header}")
            for rec in reader:
                ledger.rows.append((int(rec[0]),) + tuple(float(x) for x in rec[1:]))
        return ledger


def monotonicity_tolerance(E0, h, dt, scale=10.0):
    """tol(h, dt) = C1 h^2 + C2 dt with C1 = C2 = scale * E0."""
    c = scale * abs(E0)
    return c * h ** 2 + c * dt


def verify_monotonicity(ledger, h, dt=None, kinetic=None, scale=10.0):
    """Check dE/dt = -int f |du/dt|^2 step by step.

    The defect of step k -> k+1 is ``(E[k+1] - E[k]) / dt + kinetic_L2[k+1]``.
    ``kinetic`` overrides the ledger's kinetic_L2 column (for comparing
    alternative kinetic terms).
    """
    E = ledger["E_total"]
    t = ledger["t"]
    if len(E) < 2:
        raise ValueError("monotonicity check needs at least two ledger rows")
    steps = np.diff(t)
    if dt is None:
        dt = float(np.median(steps))
    kin = ledger["kinetic_L2"] if kinetic is None else np.asarray(kinetic, dtype=float)
    defects = np.diff(E) / steps + kin[1:]
    tol = monotonicity_tolerance(E[0], h, dt, scale)
    k = int(np.argmax(np.abs(defects)))
    max_defect = float(abs(defects[k]))
    return {
        "check": "monotonicity",
        "pass": bool(max_defect <= tol),
        "max_defect": max_defect,
        "tol": tol,
        "witness_step": int(ledger["step"][k + 1]),
        "tol_model": {"C1": scale * abs(E[0]), "C2": scale * abs(E[0]), "h": h, "dt": dt},
        "energy_increase_steps": int(np.sum(np.diff(E) > 1e-12 * (1 + np.abs(E[:-1])))),
    }


def fitted_exponent(t, values):
    """Smallest C with values[k] <= values[0] * exp(C t[k]) for all k >= 1."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) < 2 or values[0] <= 0:
        return 0.0
    mask = t[1:] > 0
    ratios = np.maximum(values[1:][mask], np.finfo(float).tiny) / values[0]
    if not np.any(mask):
        return 0.0
    return float(np.max(np.log(ratios) / t[1:][mask]))


def _nonincreasing(values, rel_tol):
    """(passed, worst relative growth, witness index) for a per-step check."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return True, 0.0, 0
    prev = values[:-1]
    growth = (values[1:] - prev) / np.where(prev > 0, prev, 1.0)
    growth = np.where((prev == 0) & (values[1:] == 0), 0.0, growth)
    k = int(np.argmax(growth))
    return bool(growth[k] <= rel_tol), float(growth[k]), k + 1


def verify_estimates(ledger, in_regime, rel_tol=1e-8):
    """Maximum-principle checks on sup_e and kinetic_sup.

    Always reports the fitted exponent C_hat of sup_e(t) <= e^{C_hat t} sup_e(0).
    When ``in_regime`` is true (flat target, Phi = 0, f = 1) both sequences
    must also be nonincreasing per step within ``rel_tol`` relative and
    C_hat must not exceed ``rel_tol``.
    """
    t = ledger["t"]
    sup_e = ledger["sup_e"]
    kin = ledger["kinetic_sup"]
    c_hat = fitted_exponent(t, sup_e)
    c_kin = fitted_exponent(t, kin)
    e_ok, e_growth, e_wit = _nonincreasing(sup_e, rel_tol)
    k_ok, k_growth, k_wit = _nonincreasing(kin, rel_tol)
    steps = ledger["step"]
    report = {
        "check": "estimates",
        "in_regime": bool(in_regime),
        "C_hat": c_hat,
        "C_hat_kinetic": c_kin,
        "sup_e_max_rel_growth": e_growth,
        "kinetic_sup_max_rel_growth": k_growth,
        "tol": rel_tol,
    }
    if in_regime:
        report["pass"] = bool(e_ok and k_ok and c_hat <= rel_tol)
        report["max_defect"] = max(e_growth, k_growth)
        worst = e_wit if e_growth >= k_growth else k_wit
        report["witness_step"] = int(steps[worst]) if len(steps) else 0
    else:
        report["pass"] = bool(math.isfinite(c_hat))
        report["max_defect"] = c_hat
        report["witness_step"] = int(steps[int(np.argmax(sup_e))]) if len(steps) else 0
    return report
