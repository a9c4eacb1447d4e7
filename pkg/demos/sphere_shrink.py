"""A loop on the unit sphere that does not wrap around shrinks to a point.

Prints the energy at a few times along the flow.
"""

import numpy as np

from vtflow.config import RunConfig
from vtflow.flow import run


def main():
    cfg = RunConfig.load("sphere_shrink")
    result = run(cfg.initial_map(), cfg.problem(), cfg.flow_config())
    t, E = result.ledger["t"], result.ledger["E_total"]
    for target_t in (0, 1, 2, 4, 6, 8, 10):
        k = min(int(np.searchsorted(t, target_t)), len(t) - 1)
        print(f"t={t[k]:6.2f}  E={E[k]:.3e}")


if __name__ == "__main__":
    main()
