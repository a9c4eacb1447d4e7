"""Relax a perturbed meridian loop on a torus to a closed geodesic.

Prints energy, residual and speed spread at the end of the run together
with the loop's winding numbers before and after.

    python demos/torus_geodesic.py [preset]
"""

import sys

from vtflow.config import RunConfig
from vtflow.energy import verify_monotonicity
from vtflow.flow import run
from vtflow.oracle import geodesic_residual, speed_spread


def main(preset="harmonic_torus_meridian"):
    cfg = RunConfig.load(preset)
    problem, u0 = cfg.problem(), cfg.initial_map()
    result = run(u0, problem, cfg.flow_config())
    E = result.ledger["E_total"]
    u = result.state.u
    print(f"{preset}: {result.status} after {result.state.step_index} steps (t={result.state.t:.3f})")
    print(f"  energy          {E[0]:.6f} -> {E[-1]:.6f}")
    print(f"  residual        {geodesic_residual(u, problem.grid, problem.weight, problem.target, problem.tforce):.3e}")
    print(f"  speed spread    {speed_spread(u, problem.grid):.3e}")
    print(f"  winding         {problem.target.loop_winding(u0)} -> {problem.target.loop_winding(u)}")
    mono = verify_monotonicity(result.ledger, problem.grid.h, result.dt)
    print(f"  dE/dt defect    {mono['max_defect']:.3e} (tol {mono['tol']:.3e})")


if __name__ == "__main__":
    main(*sys.argv[1:])
