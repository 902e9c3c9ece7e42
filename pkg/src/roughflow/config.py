"""Run configuration: YAML schema, validation, and experiment settings.

A config file collects the physical constants, the wall profile, the grids,
and the sweep settings of one experiment.  Scalars have defaults matching the
Newtonian flat-force benchmark; everything is overridable from the command
line where it makes sense (order, epsilon list).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .params import GridSpec, PhysicalParams, RoughnessProfile


class ConfigError(Exception):
    """Raised for unreadable, malformed, or out-of-range configuration."""


_SCALARS = {
    "re": 0.0, "we": 0.0, "retardation": 0.0,
    "slip_a": 0.0, "stress_diffusion": 1.0,
}
_GRID_KEYS = {
    "macro_ny": 48, "bl_nx": 33, "bl_ny": 96, "ref_nx": 17, "ref_ny": 72,
}
_TOL_KEYS = {
    # decay rates may undershoot the Fourier-mode prediction by this factor
    "decay_margin": 0.1,
    # optional hard gates on fitted slopes, per unknown ("u", "sigma", ...)
    "slope_min": None,
    # band averages of far-field limits must agree to this tolerance
    "far_field_tol": 1e-6,
}


@dataclass
class RunConfig:
    params: PhysicalParams
    profile: RoughnessProfile
    y_max: float = 12.0
    order: int = 1
    epsilon: list = field(default_factory=lambda: [0.1, 0.05, 0.025])
    macro_ny: int = 48
    bl_nx: int = 33
    bl_ny: int = 96
    ref_nx: int = 17
    ref_ny: int = 72
    tolerances: dict = field(default_factory=lambda: dict(_TOL_KEYS))

    @property
    def macro_grid(self) -> GridSpec:
        return GridSpec(1, self.macro_ny)

    @property
    def bl_grid(self) -> GridSpec:
        return GridSpec(self.bl_nx, self.bl_ny)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _as_float(raw: dict, key: str, default: float) -> float:
    v = raw.get(key, default)
    _require(isinstance(v, (int, float)) and not isinstance(v, bool),
             f"'{key}' must be a number, got {v!r}")
    return float(v)


def _parse_profile(rows) -> RoughnessProfile:
    _require(isinstance(rows, list) and rows,
             "'roughness' must be a nonempty list of [j, re, im] rows")
    coeffs: dict[int, complex] = {}
    for row in rows:
        _require(isinstance(row, list) and len(row) == 3,
                 f"roughness row must be [j, re, im], got {row!r}")
        j, cre, cim = row
        _require(isinstance(j, int) and j >= 0,
                 f"roughness mode index must be a nonnegative int, got {j!r}")
        _require(j not in coeffs, f"duplicate roughness mode {j}")
        coeffs[j] = complex(cre, cim)
    try:
        return RoughnessProfile(coeffs)
    except ValueError as exc:
        raise ConfigError(f"invalid roughness profile: {exc}")


def parse_config(raw: dict) -> RunConfig:
    """Build a validated RunConfig from a parsed mapping."""
    _require(isinstance(raw, dict), "config root must be a mapping")
    known = (set(_SCALARS) | {"force", "roughness", "y_max", "order",
                              "epsilon", "grids", "tolerances"})
    extra = set(raw) - known
    _require(not extra, f"unknown config keys: {sorted(extra)}")

    vals = {k: _as_float(raw, k, d) for k, d in _SCALARS.items()}
    force = raw.get("force", [1.0, 0.0])
    _require(isinstance(force, list) and len(force) == 2
             and all(isinstance(c, (int, float)) for c in force),
             f"'force' must be [fx, fy], got {force!r}")
    fx, fy = float(force[0]), float(force[1])
    try:
        params = PhysicalParams(
            reynolds=vals["re"], weissenberg=vals["we"],
            retardation=vals["retardation"], slip_parameter=vals["slip_a"],
            stress_diffusion=vals["stress_diffusion"],
            body_force=lambda x, y, fx=fx, fy=fy: (
                np.full(np.shape(y), fx), np.full(np.shape(y), fy)))
    except ValueError as exc:
        raise ConfigError(str(exc))

    profile = _parse_profile(raw.get("roughness", [[0, 1.0, 0.0]]))

    y_max = _as_float(raw, "y_max", 12.0)
    _require(y_max >= 5.0, f"y_max must be at least 5, got {y_max}")
    order = raw.get("order", 1)
    _require(isinstance(order, int) and 0 <= order <= 4,
             f"'order' must be an int in 0..4, got {order!r}")
    eps = raw.get("epsilon", [0.1, 0.05, 0.025])
    _require(isinstance(eps, list) and eps
             and all(isinstance(e, (int, float)) and 0.0 < e for e in eps),
             f"'epsilon' must be a list of positive numbers, got {eps!r}")
    eps = [float(e) for e in eps]
    _require(all(e * profile.max_height < 1.0 for e in eps),
             "epsilon * max(H) must stay below the channel height 1")

    grids = raw.get("grids", {})
    _require(isinstance(grids, dict), "'grids' must be a mapping")
    _require(set(grids) <= set(_GRID_KEYS),
             f"unknown grid keys: {sorted(set(grids) - set(_GRID_KEYS))}")
    gvals = {}
    for k, d in _GRID_KEYS.items():
        v = grids.get(k, d)
        _require(isinstance(v, int) and v >= 4,
                 f"grid '{k}' must be an int >= 4, got {v!r}")
        gvals[k] = v

    tols = dict(_TOL_KEYS)
    user_tols = raw.get("tolerances", {})
    _require(isinstance(user_tols, dict), "'tolerances' must be a mapping")
    _require(set(user_tols) <= set(_TOL_KEYS),
             f"unknown tolerance keys: "
             f"{sorted(set(user_tols) - set(_TOL_KEYS))}")
    tols.update(user_tols)

    return RunConfig(params=params, profile=profile, y_max=y_max,
                     order=order, epsilon=eps, tolerances=tols, **gvals)


def load_config(path) -> RunConfig:
    """Read and validate a YAML config file.

    YAML syntax errors keep their line anchors; schema violations name the
    offending key.  Both surface as ConfigError.
    """
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path}: {exc}")
    if raw is None:
        raw = {}
    try:
        return parse_config(raw)
    except ConfigError as exc:
        raise ConfigError(f"config {path}: {exc}")
