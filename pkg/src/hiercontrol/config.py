"""JSON configuration: one document with sections grid, geometry,
coefficients, followers, solver.  Every field is optional; the defaults
reproduce the shipped shared-observation heat setup.  Errors carry the
offending JSON path."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientModel, builtin_coefficient
from .geometry import CASE_TAGS, ControlGeometry, build_geometry, require_valid
from .grid import SpaceTimeGrid
from .objectives import FollowerObjective, make_target


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "grid": {"L": 1.0, "T": 1.0, "Nx": 64, "Nt": 64},
    "geometry": {
        "case": "SameObservation",
        "leader": [0.3, 0.7],
        "followers": [[0.1, 0.2], [0.8, 0.9]],
        "observations": [[0.4, 0.6], [0.4, 0.6]],
        "aux_inner": [0.35, 0.65],
        "aux_omega": [[0.45, 0.55]],
    },
    "coefficients": {"family": "constant", "params": {}},
    "followers": [
        {"alpha": 1.0, "mu": 100.0, "target": {"kind": "zero", "amplitude": 0.0}},
        {"alpha": 1.0, "mu": 100.0, "target": {"kind": "zero", "amplitude": 0.0}},
    ],
    "solver": {
        "c_s": 1.0,
        "s": None,
        "lambda": None,
        "weight_cap": 23.0,
        "weight_ref_fraction": 1.0 / 64.0,
        "hum_weight_cap": 4.0,
        "eps_schedule": [1e-2, 1e-4, 1e-6, 1e-8],
        "hum_cg_tol": 1e-9,
        "hum_cg_max_iter": 400,
        "wls_cg_tol": 1e-10,
        "wls_cg_max_iter": None,
        "wls_linear_solver": "auto",
        "nash_mode": "linear",
        "nash_tol": 1e-11,
        "nash_max_sweeps": 500,
        "nash_theta": 1.0,
        "step_tol": 1e-11,
        "picard_max_outer": 30,
        "picard_tol": 1e-8,
        "picard_damping": 0.5,
        "smallness_gate": None,
        "convection_scheme": "centered",
        "initial_state": {"kind": "sine", "amplitude": 1.0, "modes": 1},
        "seed": 0,
    },
}


def _merge(defaults, override, path="$"):
    if override is None:
        return copy.deepcopy(defaults)
    if isinstance(defaults, dict):
        if not isinstance(override, dict):
            raise ConfigError(f"{path}: expected an object")
        out = copy.deepcopy(defaults)
        for key, val in override.items():
            if key in defaults:
                out[key] = _merge(defaults[key], val, f"{path}.{key}")
            else:
                out[key] = copy.deepcopy(val)
        return out
    return copy.deepcopy(override)


def resolve_config(raw: dict | None) -> dict:
    return _merge(DEFAULT_CONFIG, raw or {})


def initial_state(grid: SpaceTimeGrid, spec: dict) -> np.ndarray:
    kind = spec.get("kind", "sine")
    amp = float(spec.get("amplitude", 1.0))
    x = grid.x
    if kind == "zero":
        y0 = np.zeros_like(x)
    elif kind == "sine":
        modes = int(spec.get("modes", 1))
        y0 = amp * np.sin(modes * np.pi * x / grid.L)
    elif kind == "bump":
        c = float(spec.get("center", 0.5 * grid.L))
        r = float(spec.get("radius", 0.2 * grid.L))
        y0 = amp * np.clip(1.0 - ((x - c) / r) ** 2, 0.0, None) ** 2
    else:
        raise ConfigError(f"$.solver.initial_state.kind: unknown kind {kind!r}")
    y0[0] = y0[-1] = 0.0
    return y0


@dataclass
class Problem:
    config: dict
    grid: SpaceTimeGrid
    geom: ControlGeometry
    model: CoefficientModel
    objectives: tuple[FollowerObjective, FollowerObjective]
    solver: dict
    y0: np.ndarray


def load_problem(raw: dict | None) -> Problem:
    cfg = resolve_config(raw)
    gc = cfg["grid"]
    try:
        grid = SpaceTimeGrid(L=float(gc["L"]), T=float(gc["T"]),
                             Nx=int(gc["Nx"]), Nt=int(gc["Nt"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"$.grid: {exc}") from exc

    ge = cfg["geometry"]
    if ge["case"] not in CASE_TAGS:
        raise ConfigError(f"$.geometry.case: must be one of {CASE_TAGS}, got {ge['case']!r}")
    try:
        geom = build_geometry(grid, ge["case"], ge["leader"], ge["followers"],
                              ge["observations"], ge.get("aux_inner"),
                              ge.get("aux_omega"))
        require_valid(geom, grid)
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"$.geometry: {exc}") from exc

    co = cfg["coefficients"]
    try:
        model = builtin_coefficient(co["family"], co.get("params"))
    except Exception as exc:
        raise ConfigError(f"$.coefficients: {exc}") from exc

    fl = cfg["followers"]
    if not isinstance(fl, list) or len(fl) != 2:
        raise ConfigError("$.followers: exactly two follower entries required")
    objectives = []
    for i, entry in enumerate(fl):
        tspec = entry.get("target", {"kind": "zero"})
        try:
            target = make_target(grid, geom.observation_domains[i],
                                 tspec.get("kind", "zero"),
                                 float(tspec.get("amplitude", 0.0)))
            objectives.append(FollowerObjective(alpha=float(entry["alpha"]),
                                                mu=float(entry["mu"]), target=target))
        except Exception as exc:
            raise ConfigError(f"$.followers[{i}]: {exc}") from exc

    sv = cfg["solver"]
    y0 = initial_state(grid, sv["initial_state"])
    return Problem(config=cfg, grid=grid, geom=geom, model=model,
                   objectives=tuple(objectives), solver=sv, y0=y0)


def load_problem_file(path) -> Problem:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return load_problem(raw)
