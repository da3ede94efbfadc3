"""Experiment configuration: one strict JSON file drives every subcommand.

Unknown keys are rejected at every level so that typos fail fast rather than
silently running a different experiment.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import noise as nz
from . import spde
from . import velocity as vel
from .generator import TestFunctional
from .grid import TorusGrid
from .noise import ChainSpec, NoiseModel
from .velocity import VelocityModel


class ConfigError(ValueError):
    """Malformed configuration; mapped to exit code 2 by the CLI."""


def _take(section: dict, allowed: dict, context: str) -> dict:
    """Check keys of a config section against {name: required} and fill defaults."""
    if not isinstance(section, dict):
        raise ConfigError(f"{context}: expected an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    missing = [k for k, req in allowed.items() if req and k not in section]
    if missing:
        raise ConfigError(f"{context}: missing keys {missing}")
    return section


@dataclass
class ModeSpec:
    label: str = ""
    amplitude: float = 1.0
    fourier: list = None

    def build(self, grid: TorusGrid) -> np.ndarray:
        try:
            if self.fourier is not None:
                return self.amplitude * nz.mode_from_fourier(grid, self.fourier)
            return nz.make_mode(grid, self.label, self.amplitude)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_mode(raw, context) -> ModeSpec:
    _take(raw, {"label": False, "amplitude": False, "fourier": False, "chain": False}, context)
    if ("label" in raw) == ("fourier" in raw):
        raise ConfigError(f"{context}: give exactly one of 'label' or 'fourier'")
    return ModeSpec(
        label=raw.get("label", ""),
        amplitude=float(raw.get("amplitude", 1.0)),
        fourier=raw.get("fourier"),
    )


def _parse_chain(raw, context) -> ChainSpec:
    if "kind" in raw:
        _take(raw, {"kind": True, "sigma": False, "rate": False}, context)
        if raw["kind"] != "telegraph":
            raise ConfigError(f"{context}: unknown chain kind {raw['kind']!r}")
        try:
            return nz.telegraph(float(raw.get("sigma", 1.0)), float(raw.get("rate", 1.0)))
        except ValueError as exc:
            raise ConfigError(f"{context}: {exc}") from exc
    _take(raw, {"states": True, "rates": True}, context)
    try:
        return ChainSpec(np.asarray(raw["states"], float), np.asarray(raw["rates"], float))
    except ValueError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass
class ExperimentConfig:
    dim: int
    n: int
    velocity_raw: dict
    noise_raw: list
    dt_factor: float
    spde_steps: int
    initial_mean: float
    initial_modes: list
    functional_raw: list
    epsilons: list
    ensemble_size: int
    final_time: float
    output_times: list
    base_seed: int
    output_dir: str
    moment_p2_factor: float
    moment_p4_factor: float
    raw: dict = field(default=None, repr=False)

    # ---- model builders ------------------------------------------------

    def build_grid(self) -> TorusGrid:
        try:
            return TorusGrid(self.dim, self.n)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_velocity(self) -> VelocityModel:
        raw = self.velocity_raw
        try:
            if "model" in raw:
                name = raw["model"]
                if name == "two_speed":
                    vm = vel.two_speed()
                elif name.startswith("ring:"):
                    vm = vel.ring(int(name.split(":")[1]))
                else:
                    raise ConfigError(f"velocity: unknown model {name!r}")
            else:
                vm = VelocityModel(self.dim, np.asarray(raw["velocities"], float),
                                   np.asarray(raw["weights"], float))
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"velocity: {exc}") from exc
        if vm.dim != self.dim:
            raise ConfigError("velocity: dimension disagrees with the grid")
        bad = vel.validate(vm)
        if bad:
            raise ConfigError("velocity: " + "; ".join(bad))
        return vm

    def build_noise(self, grid: TorusGrid) -> NoiseModel:
        chains, modes = [], []
        for i, raw in enumerate(self.noise_raw):
            ctx = f"noise.modes[{i}]"
            spec = _parse_mode(raw, ctx)
            if "chain" not in raw:
                raise ConfigError(f"{ctx}: missing 'chain'")
            chains.append(_parse_chain(raw["chain"], ctx + ".chain"))
            modes.append(spec.build(grid))
        mode_arr = np.stack(modes) if modes else np.zeros((0,) + grid.shape)
        try:
            return NoiseModel(grid, tuple(chains), mode_arr)
        except ValueError as exc:
            raise ConfigError(f"noise: {exc}") from exc

    def initial_density(self, grid: TorusGrid) -> np.ndarray:
        rho = np.full(grid.shape, self.initial_mean)
        for spec in self.initial_modes:
            rho = rho + spec.build(grid)
        return rho

    def build_functionals(self, grid: TorusGrid) -> list:
        out = []
        for i, raw in enumerate(self.functional_raw):
            ctx = f"functionals[{i}]"
            _take(raw, {"kind": True, "weight": True, "name": False}, ctx)
            if raw["kind"] not in ("linear", "quadratic"):
                raise ConfigError(f"{ctx}: kind must be linear or quadratic")
            weight = _parse_mode(raw["weight"], ctx + ".weight").build(grid)
            name = raw.get("name", f"{raw['kind']}_{i}")
            out.append(TestFunctional(raw["kind"], weight, name))
        names = [t.name for t in out]
        if len(set(names)) != len(names):
            raise ConfigError("functionals: names must be unique")
        return out


def _parse_output_times(raw, final_time) -> list:
    if isinstance(raw, dict):
        _take(raw, {"count": True}, "experiment.output_times")
        count = int(raw["count"])
        if count < 2:
            raise ConfigError("experiment.output_times: count must be at least 2")
        return list(np.linspace(0.0, final_time, count))
    times = [float(t) for t in raw]
    if not times or any(t < 0 or t > final_time * (1 + 1e-12) for t in times):
        raise ConfigError("experiment.output_times must lie in [0, final_time]")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("experiment.output_times must be strictly increasing")
    return times


def parse_config(data: dict) -> ExperimentConfig:
    _take(data, {"grid": True, "velocity": True, "noise": True, "solver": False,
                 "initial": True, "functionals": False, "experiment": True}, "config")

    g = _take(data["grid"], {"dim": True, "n": True}, "grid")
    solver = _take(data.get("solver", {}), {"dt_factor": False, "spde_steps": False}, "solver")
    init = _take(data["initial"], {"mean": False, "modes": False}, "initial")
    init_modes = [_parse_mode(m, f"initial.modes[{i}]")
                  for i, m in enumerate(init.get("modes", []))]
    noise_sect = _take(data["noise"], {"modes": False}, "noise")

    exp = _take(data["experiment"], {
        "epsilons": True, "ensemble_size": True, "final_time": True,
        "output_times": True, "base_seed": True, "output_dir": False,
        "moment_p2_factor": False, "moment_p4_factor": False,
    }, "experiment")

    epsilons = [float(e) for e in exp["epsilons"]]
    if not epsilons or any(not 0 < e <= 1 for e in epsilons):
        raise ConfigError("experiment.epsilons must lie in (0, 1]")
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError("experiment.epsilons must be strictly decreasing")
    final_time = float(exp["final_time"])
    if final_time <= 0:
        raise ConfigError("experiment.final_time must be positive")
    dt_factor_check = float(_take(data.get("solver", {}),
                                  {"dt_factor": False, "spde_steps": False},
                                  "solver").get("dt_factor", 0.1))
    for e in epsilons:
        dt = dt_factor_check * e * e
        if abs(round(final_time / dt) * dt - final_time) > 1e-9 * final_time:
            raise ConfigError(
                f"final_time must be an integer number of macroscopic steps "
                f"(dt_factor * eps^2) at eps={e}; nearest valid values are "
                f"{np.floor(final_time / dt) * dt:.6g} and "
                f"{np.ceil(final_time / dt) * dt:.6g}"
            )
    ensemble = int(exp["ensemble_size"])
    if ensemble < 1:
        raise ConfigError("experiment.ensemble_size must be positive")
    dt_factor = float(solver.get("dt_factor", 0.1))
    if not 0 < dt_factor <= 1:
        raise ConfigError("solver.dt_factor must lie in (0, 1]")
    spde_steps = int(solver.get("spde_steps", spde.DEFAULT_STEPS))
    if spde_steps < 1:
        raise ConfigError("solver.spde_steps must be positive")

    cfg = ExperimentConfig(
        dim=int(g["dim"]),
        n=int(g["n"]),
        velocity_raw=_take(data["velocity"],
                           {"model": False, "velocities": False, "weights": False},
                           "velocity"),
        noise_raw=[_take(m, {"label": False, "amplitude": False, "fourier": False,
                             "chain": True}, f"noise.modes[{i}]")
                   for i, m in enumerate(noise_sect.get("modes", []))],
        dt_factor=dt_factor,
        spde_steps=spde_steps,
        initial_mean=float(init.get("mean", 0.0)),
        initial_modes=init_modes,
        functional_raw=data.get("functionals", []),
        epsilons=epsilons,
        ensemble_size=ensemble,
        final_time=final_time,
        output_times=_parse_output_times(exp["output_times"], final_time),
        base_seed=int(exp["base_seed"]),
        output_dir=str(exp.get("output_dir", "out")),
        moment_p2_factor=float(exp.get("moment_p2_factor", 4.0)),
        moment_p4_factor=float(exp.get("moment_p4_factor", 16.0)),
        raw=data,
    )
    # fail fast on model construction problems
    grid = cfg.build_grid()
    cfg.build_velocity()
    cfg.build_noise(grid)
    cfg.build_functionals(grid)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(data)
