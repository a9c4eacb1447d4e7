"""Sample the curvature and T conditions for a few targets and tensor fields."""

from vtflow.targets import FlatPlanePatch, Sphere, TorusOfRevolution
from vtflow.tensorfield import (AffinePhi, ConditionParams, MetricMultiple, ZeroPhi,
                                check_condition_ff, check_condition_l1)


def main():
    params = ConditionParams(C0=2.0, kappa=0.0, sample_count=10_000, seed=0)
    cases = [
        ("flat, Phi=0", FlatPlanePatch(), ZeroPhi()),
        ("sphere, Phi=0", Sphere(), ZeroPhi()),
        ("torus, Phi=0", TorusOfRevolution(2.0, 1.0), ZeroPhi()),
        ("sphere, Phi=0.25 g", Sphere(), MetricMultiple(0.25)),
        ("sphere, affine Phi", Sphere(), AffinePhi.isotropic(0.1, axis=2)),
    ]
    print(f"{'case':22s} {'ff margin':>10s} {'ff':>5s} {'l1 margin':>10s} {'l1':>5s}")
    for name, target, phi in cases:
        ff = check_condition_ff(phi, target, params)
        l1 = check_condition_l1(phi, target, params)
        print(f"{name:22s} {ff.worst_margin:10.4f} {str(ff.satisfied):>5s} "
              f"{l1.worst_margin:10.4f} {str(l1.satisfied):>5s}")


if __name__ == "__main__":
    main()
