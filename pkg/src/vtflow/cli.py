"""Command-line entry point: ``run``, ``check-conditions`` and ``verify``.

Run directory layout::

    config.json        resolved configuration (all defaults filled in)
    ledger.csv         one row per step, FlowLedger column order
    final_map.json     {t, residual_inf, nodes}
    report.json        run summary, embeds the config hash
    checkpoints/       step_XXXXXXXX.json every flow.checkpoint_every steps

Exit status of ``run``: 0 converged, 2 horizon reached, 1 error.
"""

import argparse
import glob
import json
import logging
import math
import os
import sys

import numpy as np

from .config import RunConfig
from .energy import FlowLedger, kinetic, verify_estimates, verify_monotonicity
from .errors import ConfigError, MissingArtifact, VTFlowError
from .flow import load_checkpoint, read_checkpoint, resolve_dt, run, save_checkpoint
from .griddomain import boundary_values
from .oracle import first_variation_error, geodesic_residual, random_smooth_direction
from .tensorfield import (TForce, ZeroPhi, check_condition_ff, check_condition_l1,
                          check_curvature_bound, check_phi_gate)

logger = logging.getLogger("vtflow")

EXIT_CONVERGED = 0
EXIT_ERROR = 1
EXIT_HORIZON = 2


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    if not os.path.isfile(path):
        raise MissingArtifact(f"missing {os.path.basename(path)} in {os.path.dirname(path) or '.'}")
    with open(path) as fh:
        return json.load(fh)


def _checkpoint_path(run_dir, step_index):
    return os.path.join(run_dir, "checkpoints", f"step_{step_index:08d}.json")


def run_config(cfg, output_dir=None, resume=None):
    """Run ``cfg`` and write every artifact; returns (exit status, report dict)."""
    cfg.validate()
    out = output_dir or cfg["output_dir"]
    if not os.path.isabs(out) and output_dir is None and cfg.base_dir != ".":
        out = os.path.join(cfg.base_dir, out)
    os.makedirs(os.path.join(out, "checkpoints"), exist_ok=True)
    chash = cfg.config_hash
    problem = cfg.problem()
    flow_cfg = cfg.flow_config()
    u0 = cfg.initial_map()

    state = None
    previous = None
    if resume is not None:
        payload = read_checkpoint(resume)
        if payload.get("config_hash") and payload["config_hash"] != chash:
            raise ConfigError([("resume", "checkpoint was written by a different config")])
        state = load_checkpoint(resume)
        ledger_path = os.path.join(out, "ledger.csv")
        if os.path.isfile(ledger_path):
            previous = FlowLedger.from_csv(ledger_path)
            previous.truncate_after(state.step_index - 1)
        logger.info("resuming from step %d (t=%.6g)", state.step_index, state.t)

    dt = resolve_dt(flow_cfg, u0, problem)

    def on_checkpoint(s):
        save_checkpoint(s, _checkpoint_path(out, s.step_index), chash, dt)

    logger.info("running %s: grid %s, dt=%.4g, t_max=%g", cfg.name or "config",
                problem.grid.shape, dt, flow_cfg.t_max)
    result = run(u0, problem, flow_cfg, resume=state, on_checkpoint=on_checkpoint)

    ledger = result.ledger
    if previous is not None:
        previous.rows.extend(ledger.rows)
        ledger = previous
    save_checkpoint(result.state, _checkpoint_path(out, result.state.step_index), chash, result.dt)

    _write_json(os.path.join(out, "config.json"), cfg.to_json_dict())
    ledger.to_csv(os.path.join(out, "ledger.csv"))
    nodes = result.state.u.reshape(-1, result.state.u.shape[-1]).tolist()
    _write_json(os.path.join(out, "final_map.json"),
                {"t": result.state.t, "residual_inf": result.residual_inf, "nodes": nodes})
    report = {
        "config_hash": chash,
        "preset": cfg.name,
        "base_dir": os.path.abspath(cfg.base_dir),
        "status": result.status,
        "steps": result.state.step_index,
        "t": result.state.t,
        "dt": result.dt,
        "h": problem.grid.h,
        "residual_inf": result.residual_inf,
        "E_initial": float(ledger["E_total"][0]),
        "E_final": float(ledger["E_total"][-1]),
        "phi_sup_norm": problem.phi_sup,
        "max_constraint_err": float(np.max(ledger["constraint_err"])),
    }
    if not problem.grid.periodic:
        # Neumann ends move freely; record how far they drifted from u0
        drift = boundary_values(problem.grid, result.state.u) - boundary_values(problem.grid, u0)
        report["boundary_drift"] = float(np.max(np.linalg.norm(drift, axis=-1)))
    _write_json(os.path.join(out, "report.json"), report)
    logger.info("%s after %d steps, t=%.6g, residual %.3e", result.status,
                result.state.step_index, result.state.t, result.residual_inf)
    status = EXIT_CONVERGED if result.status == "converged" else EXIT_HORIZON
    return status, report


def check_conditions(cfg):
    """Condition reports for the configured target and Phi."""
    cfg.validate(check_conditions=True)
    params = cfg.condition_params()
    target, phi = cfg.target(), cfg.phi()
    reports = [
        check_condition_ff(phi, target, params),
        check_condition_l1(phi, target, params),
        check_phi_gate(phi, target, params.sample_count, params.seed),
        check_curvature_bound(target, params),
    ]
    return {"config_hash": cfg.config_hash,
            "C0": params.C0, "kappa": params.kappa,
            "reports": [r.to_dict() for r in reports]}


def _in_estimate_regime(cfg):
    return (cfg.target().kind == "flat_plane_patch" and isinstance(cfg.phi(), ZeroPhi)
            and cfg.weight().is_one)


def _snapshot_check(run_dir, ledger, cfg, dt):
    """Recompute kinetic columns from stored checkpoints (u, u_prev)."""
    grid, weight = cfg.grid(), cfg.weight()
    rows = {int(s): k for k, s in enumerate(ledger["step"])}
    worst = 0.0
    checked = 0
    for path in sorted(glob.glob(os.path.join(run_dir, "checkpoints", "step_*.json"))):
        state = load_checkpoint(path)
        if state.u_prev is None or state.step_index not in rows:
            continue
        k = rows[state.step_index]
        l2, sup = kinetic(state.u, state.u_prev, dt, grid, weight)
        for got, want in ((l2, ledger["kinetic_L2"][k]), (sup, ledger["kinetic_sup"][k])):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        checked += 1
    return {"check": "snapshots", "pass": bool(worst <= 1e-12), "max_defect": worst,
            "tol": 1e-12, "snapshots": checked}


def verify_run(run_dir):
    """Replay energy and oracle checks over the artifacts in ``run_dir``."""
    if not os.path.isdir(run_dir):
        raise MissingArtifact(f"{run_dir} is not a directory")
    data = _read_json(os.path.join(run_dir, "config.json"))
    report = _read_json(os.path.join(run_dir, "report.json"))
    final = _read_json(os.path.join(run_dir, "final_map.json"))
    ledger_path = os.path.join(run_dir, "ledger.csv")
    if not os.path.isfile(ledger_path):
        raise MissingArtifact(f"missing ledger.csv in {run_dir}")
    ledger = FlowLedger.from_csv(ledger_path)
    cfg = RunConfig.from_dict(data, report.get("base_dir", run_dir))
    grid, weight, target = cfg.grid(), cfg.weight(), cfg.target()
    tforce = TForce(cfg.phi(), cfg["flow"]["force_mode"])
    dt = float(report["dt"])
    checks = []

    if len(ledger) >= 2:
        checks.append(verify_monotonicity(ledger, grid.h, dt))
    checks.append(verify_estimates(ledger, _in_estimate_regime(cfg)))

    u = np.array(final["nodes"], dtype=float).reshape(grid.shape + (target.ambient_dim,))
    res = geodesic_residual(u, grid, weight, target, tforce)
    stop_tol = float(cfg["flow"]["stop_tol"])
    res_ok = math.isclose(res, final["residual_inf"], rel_tol=1e-9, abs_tol=1e-15)
    if report["status"] == "converged":
        res_ok = res_ok and res <= max(10 * stop_tol, 1e-14)
    checks.append({"check": "residual", "pass": bool(res_ok), "max_defect": res,
                   "tol": 10 * stop_tol, "reported": final["residual_inf"]})

    if tforce.mode == "energy_gradient":
        u0 = cfg.initial_map()
        rng = np.random.default_rng(int(cfg.data.get("rng_seed", 0)))
        direction = random_smooth_direction(grid, target, u0, rng)
        # a stationary initial map has no first variation to compare against
        if geodesic_residual(u0, grid, weight, target, tforce) > 1e-8:
            rel, fd, analytic = first_variation_error(u0, direction, grid, weight, target, tforce)
            checks.append({"check": "gradient", "pass": bool(rel < 1e-4), "max_defect": rel,
                           "tol": 1e-4, "fd": fd, "analytic": analytic})

    checks.append(_snapshot_check(run_dir, ledger, cfg, dt))
    return {"config_hash": report.get("config_hash", cfg.config_hash),
            "run_dir": os.path.abspath(run_dir),
            "pass": all(c["pass"] for c in checks), "checks": checks}


def build_parser():
    parser = argparse.ArgumentParser(prog="vtflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate the flow for a config or preset")
    p.add_argument("--config", required=True, help="TOML/JSON file or preset name")
    p.add_argument("--resume", help="checkpoint JSON to continue from")
    p.add_argument("--output-dir", help="override output_dir from the config")

    p = sub.add_parser("check-conditions", help="sample the curvature and T conditions")
    p.add_argument("--config", required=True)

    p = sub.add_parser("verify", help="re-check the artifacts of a finished run")
    p.add_argument("run_dir")

    sub.add_parser("presets", help="list shipped presets")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            from .config import preset_names
            print("\n".join(preset_names()))
            return 0
        if args.command == "run":
            status, report = run_config(RunConfig.load(args.config), args.output_dir, args.resume)
            print(json.dumps(report, indent=2, sort_keys=True))
            return status
        if args.command == "check-conditions":
            print(json.dumps(check_conditions(RunConfig.load(args.config)), indent=2))
            return 0
        result = verify_run(args.run_dir)
        print(json.dumps(result, indent=2))
        return 0 if result["pass"] else 1
    except ConfigError as exc:
        print(f"vtflow: invalid config\n{exc}", file=sys.stderr)
        return EXIT_ERROR
    except (VTFlowError, FileNotFoundError) as exc:
        print(f"vtflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
