"""Run configuration: a sectioned TOML document covering every module.

Parsing is strict: unknown sections or keys are rejected, values are
type-checked, and every run emits the fully resolved document (defaults
filled in) alongside its outputs so a rerun reproduces it bit-for-bit in
single-thread mode.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np
import toml

from .errors import ConfigurationError
from .grid import Field, Grid, field_from_binary, field_from_csv
from .noise import NoiseParams
from .solver import SolverConfig
from .nonlinearity import NonlinearitySpec

SCHEMA_VERSION = "fluctuo.run/1"

_NUMBER = (int, float)

# key -> (type, default); required keys use the _REQUIRED sentinel
_REQUIRED = object()

_SCHEMA = {
    "nonlinearity": {
        "family": (str, "power_law"),
        "m": (_NUMBER, 1.0),
        "gamma": (_NUMBER, 1.0),
        "c_nu": (_NUMBER, 0.0),
        "table": (str, ""),
    },
    "grid": {
        "d": (int, 1),
        "L": (_NUMBER, 2.0),
        "N": (int, 64),
    },
    "noise": {
        "alpha": (_NUMBER, 0.25),
        "A": (_NUMBER, 0.5),
        "K_a": (int, 8),
        "seed": (int, 1234),
    },
    "solver": {
        "dt": (_NUMBER, 1e-4),
        "eta": (_NUMBER, 0.0),
        "eps": (_NUMBER, 0.0),
        "cfl_safety": (_NUMBER, 0.5),
        "negativity_policy": (str, "clamp_and_log"),
        "negativity_tol": (_NUMBER, 1e-6),
        "rho_floor": (_NUMBER, 1e-12),
    },
    "run": {
        "T": (_NUMBER, 0.01),
        "store_every": (int, 10),
    },
    "initial": {
        "kind": (str, "gaussian_bump"),
        "amplitude": (_NUMBER, 0.5),
        "width": (_NUMBER, 0.3),
        "center": (list, []),
        "path": (str, ""),
        "format": (str, "binary"),
    },
    "initial2": {
        "kind": (str, "gaussian_bump"),
        "amplitude": (_NUMBER, 0.3),
        "width": (_NUMBER, 0.4),
        "center": (list, []),
        "path": (str, ""),
        "format": (str, "binary"),
    },
    "qv": {
        "n_samples": (int, 2000),
        "dt": (_NUMBER, 1.0),
        "spread_tol": (_NUMBER, 0.05),
        "value_tol": (_NUMBER, 0.05),
    },
    "contract": {
        "n_pairs": (int, 20),
        "tolerance": (_NUMBER, 1.02),
        "min_pass_fraction": (_NUMBER, 0.99),
        "m_values": (list, [1.0, 2.0]),
    },
    "entropy": {
        "theta": (_NUMBER, 1.0),
        "q": (_NUMBER, 1.0),
        "ensemble": (int, 8),
        "sweep_factor": (_NUMBER, 4.0),
        "divqv_samples": (int, 200),
        "stability_factor": (_NUMBER, 2.0),
    },
    "tail": {
        "M_values": (list, [2.0, 4.0]),
        "ensemble": (int, 8),
        "tolerance": (_NUMBER, 1.1),
    },
    "skeleton": {
        "control": (str, "zero"),
        "amplitude": (_NUMBER, 0.3),
        "control_path": (str, ""),
        "dt": (_NUMBER, 0.0),
    },
    "rate": {
        "phi_star_amplitude": (_NUMBER, 0.1),
        "store_every": (int, 5),
        "tolerance": (_NUMBER, 0.02),
    },
    "mc": {
        "eps_levels": (list, [0.04, 0.02, 0.01]),
        "alphas": (list, []),
        "A_values": (list, []),
        "K_a_values": (list, []),
        "n_runs": (int, 100),
        "tube_radius": (_NUMBER, 0.05),
        "phi_star_amplitude": (_NUMBER, 0.25),
        "rate_band": (_NUMBER, 5.0),
    },
    "scaling": {
        "d": (int, 1),
        "eps_levels": (list, []),
        "alphas": (list, []),
        "A_values": (list, []),
        "K_a_values": (list, []),
    },
    "assumptions": {
        "xi_max": (_NUMBER, 8.0),
        "n_points": (int, 200),
        "threshold": (_NUMBER, 1e3),
    },
}


def _check_type(section, key, value, expected):
    if expected is _NUMBER or expected == _NUMBER:
        if isinstance(value, bool) or not isinstance(value, _NUMBER):
            raise ConfigurationError(f"[{section}] {key} must be a number")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"[{section}] {key} must be an integer")
        return value
    if expected is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"[{section}] {key} must be a list")
        return list(value)
    if not isinstance(value, expected):
        raise ConfigurationError(
            f"[{section}] {key} must be {expected.__name__}"
        )
    return value


class RunConfig:
    """Parsed, fully resolved run configuration."""

    def __init__(self, resolved: dict, base_dir: str = "."):
        self.data = resolved
        self.base_dir = base_dir

    def __getattr__(self, section):
        try:
            return SimpleNamespace(**self.data[section])
        except KeyError as exc:
            raise AttributeError(section) from exc

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.data == other.data

    @classmethod
    def parse(cls, doc: dict, base_dir: str = ".") -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise ConfigurationError(
                f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION!r})"
            )
        unknown_sections = set(doc) - set(_SCHEMA)
        if unknown_sections:
            raise ConfigurationError(
                f"unknown config sections: {sorted(unknown_sections)}"
            )
        resolved = {}
        for section, keys in _SCHEMA.items():
            given = doc.get(section, {})
            if not isinstance(given, dict):
                raise ConfigurationError(f"[{section}] must be a table")
            unknown = set(given) - set(keys)
            if unknown:
                raise ConfigurationError(
                    f"unknown keys in [{section}]: {sorted(unknown)}"
                )
            out = {}
            for key, (typ, default) in keys.items():
                if key in given:
                    out[key] = _check_type(section, key, given[key], typ)
                else:
                    out[key] = default
            resolved[section] = out
        return cls(resolved, base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = toml.load(path)
        except (OSError, toml.TomlDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.parse(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    def resolved_document(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **self.data}

    def emit(self, path):
        with open(path, "w") as fh:
            toml.dump(self.resolved_document(), fh)

    # -- builders ---------------------------------------------------------------

    def build_grid(self) -> Grid:
        g = self.data["grid"]
        return Grid(g["d"], g["L"], g["N"])

    def build_spec(self) -> NonlinearitySpec:
        n = self.data["nonlinearity"]
        if n["family"] == "power_law":
            return NonlinearitySpec.power_law(n["m"], n["gamma"], n["c_nu"])
        if n["family"] == "custom":
            if not n["table"]:
                raise ConfigurationError("[nonlinearity] custom family needs a table path")
            path = os.path.join(self.base_dir, n["table"])
            return NonlinearitySpec.from_csv(path, n["gamma"], n["c_nu"])
        raise ConfigurationError(f"unknown nonlinearity family {n['family']!r}")

    def build_params(self, grid: Grid, seed_override: int | None = None) -> NoiseParams:
        n = self.data["noise"]
        seed = n["seed"] if seed_override is None else seed_override
        return NoiseParams.build(grid, n["alpha"], n["A"], n["K_a"], seed)

    def build_solver_config(self) -> SolverConfig:
        s = self.data["solver"]
        return SolverConfig(
            dt=s["dt"], eta=s["eta"], eps=s["eps"], cfl_safety=s["cfl_safety"],
            negativity_policy=s["negativity_policy"],
            negativity_tol=s["negativity_tol"], rho_floor=s["rho_floor"],
        )

    def build_initial(self, grid: Grid, gamma: float, section: str = "initial") -> Field:
        cfg = self.data[section]
        kind = cfg["kind"]
        if kind == "constant":
            return Field.constant(grid, gamma)
        if kind == "gaussian_bump":
            center = cfg["center"] or [0.0] * grid.d
            if len(center) != grid.d:
                raise ConfigurationError(f"[{section}] center needs {grid.d} entries")
            r2 = np.zeros(grid.shape)
            for a, x in enumerate(grid.coords()):
                r2 += (x - float(center[a])) ** 2
            vals = gamma + cfg["amplitude"] * np.exp(-r2 / (2.0 * cfg["width"] ** 2))
            return Field(grid, vals, gamma)
        if kind == "box":
            center = cfg["center"] or [0.0] * grid.d
            inside = np.ones(grid.shape, dtype=bool)
            for a, x in enumerate(grid.coords()):
                inside &= np.abs(x - float(center[a])) < cfg["width"]
            vals = gamma + cfg["amplitude"] * inside
            return Field(grid, vals, gamma)
        if kind == "file":
            path = os.path.join(self.base_dir, cfg["path"])
            if cfg["format"] == "csv":
                return field_from_csv(path, grid, gamma)
            return field_from_binary(path)
        raise ConfigurationError(f"[{section}] unknown initial kind {kind!r}")
