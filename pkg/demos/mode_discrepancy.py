"""Compare the exact energy-gradient force with the pointwise T force.

The two force modes agree when Phi is zero and differ by a grid-independent
amount otherwise, including Phi = c g.
"""

from vtflow.config import RunConfig
from vtflow.oracle import mode_discrepancy
from vtflow.tensorfield import AffinePhi, MetricMultiple, ZeroPhi


def main():
    for n in (32, 64, 128):
        cfg = RunConfig.load("vt_weighted_circle")
        cfg.data["domain"]["n"] = n
        grid, weight, target, u = cfg.grid(), cfg.weight(), cfg.target(), cfg.initial_map()
        row = []
        for phi in (ZeroPhi(), MetricMultiple(0.25), AffinePhi.isotropic(0.1, axis=2)):
            row.append(mode_discrepancy(u, grid, weight, target, phi))
        print(f"n={n:4d}  zero {row[0]:.2e}  metric {row[1]:.2e}  affine {row[2]:.2e}")


if __name__ == "__main__":
    main()
