"""Run configuration: loading, validation, presets and initial maps.

Human-written configs are TOML; every section is a plain table::

    [domain]   kind = "circle" | "torus2" | "interval", n, m, L
    [target]   kind = "sphere" | "torus_of_revolution" | "flat_plane_patch", ...
    [phi]      kind = "zero" | "metric_multiple" | "ambient_bilinear" | "ambient_affine" | "sampled"
    [weight]   kind = "one" | "exp_cos", amplitude
    [flow]     dt, t_max, stop_tol, force_mode, checkpoint_every
    [initial]  kind = "great_circle" | "meridian_loop" | "latitude_circle"
                      | "fourier_perturbation" | "constant" | "file"
    [conditions]  C0, kappa, sample_count, seed
    output_dir, rng_seed
"""

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .flow import FlowConfig, FlowProblem
from .griddomain import GRID_KINDS, DomainGrid, WeightField
from .targets import make_target
from .tensorfield import FORCE_MODES, ConditionParams, TForce, make_phi, phi_sup_norm

DEFAULTS = {
    "domain": {"kind": "circle", "n": 128},
    "target": {"kind": "sphere"},
    "phi": {"kind": "zero"},
    "weight": {"kind": "one"},
    "flow": {"dt": "auto", "t_max": 10.0, "stop_tol": 1e-6,
             "force_mode": "energy_gradient", "checkpoint_every": 0},
    "initial": {"kind": "great_circle"},
    "conditions": {"C0": 2.0, "kappa": 0.0, "sample_count": 10_000, "seed": 0},
    "output_dir": "runs/out",
    "rng_seed": 0,
}

INITIAL_KINDS = ("great_circle", "meridian_loop", "latitude_circle",
                 "fourier_perturbation", "constant", "file")


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = {**out[key], **val}
        else:
            out[key] = val
    return out


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("vtflow.presets").iterdir()
                  if p.name.endswith(".toml"))


@dataclass
class RunConfig:
    data: dict
    base_dir: str = "."
    name: str = ""
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_dict(cls, data, base_dir=".", name=""):
        return cls(_merge(DEFAULTS, data), base_dir, name)

    @classmethod
    def load(cls, path_or_preset):
        """Load a TOML/JSON config file, or a shipped preset by name."""
        path = str(path_or_preset)
        if os.path.isfile(path):
            with open(path, "rb") as fh:
                raw = json.load(fh) if path.endswith(".json") else tomllib.load(fh)
            return cls.from_dict(raw, os.path.dirname(os.path.abspath(path)),
                                 os.path.splitext(os.path.basename(path))[0])
        name = path[:-5] if path.endswith(".toml") else path
        if name in preset_names():
            raw = tomllib.loads(resources.files("vtflow.presets").joinpath(name + ".toml").read_text())
            return cls.from_dict(raw, ".", name)
        raise FileNotFoundError(f"no config file or preset named {path!r}")

    def __getitem__(self, key):
        return self.data[key]

    def to_json_dict(self):
        return json.loads(json.dumps(self.data))

    @property
    def config_hash(self):
        payload = {k: v for k, v in self.data.items() if k != "output_dir"}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()

    # -- builders ------------------------------------------------------
    def grid(self):
        if "grid" not in self._cache:
            d = self.data["domain"]
            self._cache["grid"] = DomainGrid(d["kind"], d["n"], d.get("m"), d.get("L", math.pi))
        return self._cache["grid"]

    def target(self):
        if "target" not in self._cache:
            self._cache["target"] = make_target(self.data["target"])
        return self._cache["target"]

    def phi(self):
        if "phi" not in self._cache:
            self._cache["phi"] = make_phi(self.data["phi"], self.target(), self.base_dir)
        return self._cache["phi"]

    def weight(self):
        if "weight" not in self._cache:
            w = self.data["weight"]
            self._cache["weight"] = WeightField(self.grid(), w["kind"], w.get("amplitude", 0.0))
        return self._cache["weight"]

    def flow_config(self):
        f = self.data["flow"]
        return FlowConfig(dt=f.get("dt", "auto"), t_max=float(f["t_max"]),
                          stop_tol=float(f["stop_tol"]), force_mode=f["force_mode"],
                          checkpoint_every=int(f.get("checkpoint_every", 0)))

    def condition_params(self):
        c = self.data["conditions"]
        return ConditionParams(float(c["C0"]), float(c["kappa"]), int(c["sample_count"]),
                               int(c.get("seed", 0)))

    def problem(self):
        if "problem" not in self._cache:
            tforce = TForce(self.phi(), self.data["flow"]["force_mode"])
            self._cache["problem"] = FlowProblem(self.grid(), self.weight(), self.target(), tforce)
        return self._cache["problem"]

    def initial_map(self):
        return build_initial(self.data["initial"], self.grid(), self.target(),
                             self.base_dir, self.data.get("rng_seed", 0))

    # -- validation ----------------------------------------------------
    def validate(self, check_conditions=False):
        """Build every component and collect all problems before raising ConfigError."""
        problems = []

        def attempt(path, fn):
            try:
                return fn()
            except ConfigError as exc:
                problems.extend((f"{path}.{p}", m) for p, m in exc.problems)
            except (ValueError, KeyError, TypeError, FileNotFoundError) as exc:
                problems.append((path, str(exc)))
            return None

        d = self.data
        if d["domain"].get("kind") not in GRID_KINDS:
            problems.append(("domain.kind", f"must be one of {GRID_KINDS}"))
        grid = attempt("domain", self.grid)
        target = attempt("target", self.target)
        amp = d["weight"].get("amplitude", 0.0)
        if not isinstance(amp, (int, float)) or not math.isfinite(amp):
            problems.append(("weight.amplitude", "must be a finite number"))
        elif grid is not None:
            weight = attempt("weight", self.weight)
            if weight is not None and not np.all(weight.f > 0):
                problems.append(("weight", "f must be > 0 everywhere"))
        if target is not None:
            phi = attempt("phi", self.phi)
            if phi is not None:
                sup = phi_sup_norm(phi, target)
                if not sup < 0.5:
                    problems.append(("phi", f"gate ||Phi||_inf < 1/2 violated (sampled sup = {sup:.6g})"))
        flow = d["flow"]
        if flow.get("force_mode") not in FORCE_MODES:
            problems.append(("flow.force_mode", f"must be one of {FORCE_MODES}"))
        dt = flow.get("dt", "auto")
        if dt != "auto" and not (isinstance(dt, (int, float)) and dt > 0):
            problems.append(("flow.dt", "must be 'auto' or a positive number"))
        for key in ("t_max", "stop_tol"):
            val = flow.get(key)
            if not isinstance(val, (int, float)) or not val >= 0:
                problems.append((f"flow.{key}", "must be a non-negative number"))
        if d["initial"].get("kind") not in INITIAL_KINDS:
            problems.append(("initial.kind", f"must be one of {INITIAL_KINDS}"))
        elif grid is not None and target is not None:
            attempt("initial", self.initial_map)
        if check_conditions:
            attempt("conditions", self.condition_params)
        if problems:
            raise ConfigError(problems)
        return self


# ---------------------------------------------------------------------------
# initial maps


def _base_curve(spec, grid, target):
    kind = spec["kind"]
    coords = grid.coords()
    s = coords[0]
    q = target.ambient_dim
    if kind == "great_circle":
        radius = getattr(target, "radius", spec.get("radius", 1.0))
        if target.kind == "torus_of_revolution":
            radius = target.R + target.r
        speed = spec.get("speed", 1.0)
        out = np.zeros(grid.shape + (q,))
        out[..., 0] = radius * np.cos(speed * s)
        out[..., 1] = radius * np.sin(speed * s)
        return out
    if kind == "meridian_loop":
        if target.kind == "torus_of_revolution":
            params = np.stack([spec.get("speed", 1.0) * s,
                               np.full_like(s, spec.get("phi0", 0.0))], axis=-1)
            return target.embed(params)
        if target.kind == "sphere":
            out = np.zeros(grid.shape + (q,))
            out[..., 0] = target.radius * np.sin(s)
            out[..., 2] = target.radius * np.cos(s)
            return out
        raise ValueError("meridian_loop needs a torus or sphere target")
    if kind == "latitude_circle":
        if target.kind != "sphere":
            raise ValueError("latitude_circle needs a sphere target")
        z0 = float(spec.get("height", 0.5))
        rho = math.sqrt(target.radius ** 2 - z0 ** 2)
        out = np.zeros(grid.shape + (q,))
        out[..., 0] = rho * np.cos(s)
        out[..., 1] = rho * np.sin(s)
        out[..., 2] = z0
        return out
    if kind == "constant":
        point = np.asarray(spec.get("point", [0.0] * (q - 1) + [1.0]), dtype=float)
        return np.broadcast_to(target.closest_point(point), grid.shape + (q,)).copy()
    raise ValueError(f"unknown base map kind {kind!r}")


def build_initial(spec, grid, target, base_dir=".", seed=0):
    """Initial map u0 on ``grid`` as an array of shape ``grid.shape + (q,)``."""
    spec = dict(spec)
    kind = spec["kind"]
    if kind == "file":
        path = spec["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        with open(path) as fh:
            nodes = np.array(json.load(fh)["nodes"], dtype=float)
        u = nodes.reshape(grid.shape + (target.ambient_dim,))
        return target.closest_point(u)
    if kind != "fourier_perturbation":
        return target.closest_point(_base_curve(spec, grid, target))
    base = dict(spec.get("base", {"kind": "constant"}))
    u = _base_curve(base, grid, target)
    rng = np.random.default_rng(spec.get("seed", seed))
    coords = grid.coords()
    period = 2 * math.pi if grid.periodic else 2 * grid.L
    for k, amp in zip(spec.get("modes", [1]), spec.get("amplitudes", [0.1])):
        xi, eta = rng.standard_normal((2, target.ambient_dim))
        xi /= np.linalg.norm(xi)
        eta /= np.linalg.norm(eta)
        phase = sum(2 * math.pi * k * x / period for x in coords)
        u = u + amp * (np.cos(phase)[..., None] * xi + np.sin(phase)[..., None] * eta)
    return target.closest_point(u)
