"""Experiment configuration, presets, sweeps and CSV output."""

from __future__ import annotations

import copy
import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .evolve import NumericalError, PulseSpec
from .hilbert import SpaceShape
from .model import NoiseConfig, SystemConfig, paul_trap_config
from .protocol import (
    Sequence,
    asymptotic_fidelity,
    build_sequence_channel,
    default_sequence,
    optimize_pulse_durations,
    run_iterations,
    target_state,
)

PRESETS = ("fig2", "fig3a", "fig3b")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


DEFAULTS = {
    "system": {"n_spins": 4, "j1": 0.05, "couplings": None, "g": 5e-3, "rabi": None, "n_max": 3},
    "noise": {"gamma_flip": 0.0, "gamma_deph": 0.0, "during_cooling": False},
    "sequence": {
        "pulses": "default",
        "gamma": 0.1,
        "gamma_t": 20.0,
        "nbar": 0.0,
        "parity": "flip_z",
        "correction_site": 1,
        "optimize": True,
        "objective": "asymptotic",
        "window": None,
        "duration_scale": 1.0,
    },
    "initial_state": {"kind": "maximally_mixed", "seed": 0},
    "run": {"method": "iterate", "max_iters": 2000, "convergence_tol": 1e-10},
    "sweep": None,
    "output": None,
}


@dataclass
class ExperimentConfig:
    """Resolved experiment description; ``data`` mirrors the YAML schema."""

    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, raw: dict | None) -> "ExperimentConfig":
        raw = raw or {}
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a mapping")
        data = copy.deepcopy(DEFAULTS)
        for key, value in raw.items():
            if key not in data:
                raise ConfigError(f"unknown section {key!r}")
            if isinstance(data[key], dict) and key != "sweep":
                if not isinstance(value, dict):
                    raise ConfigError(f"section {key!r} must be a mapping")
                for sub, v in value.items():
                    if sub not in data[key]:
                        raise ConfigError(f"unknown key {key}.{sub}")
                    data[key][sub] = v
            else:
                data[key] = value
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = yaml.safe_load(fh)
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self) -> None:
        try:
            self.system_config()
            self.noise_config()
            self.base_sequence()
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        init = self.data["initial_state"]["kind"]
        if init not in ("all_up", "maximally_mixed", "random", "target"):
            raise ConfigError(f"unknown initial state {init!r}")
        run = self.data["run"]
        if run["method"] not in ("iterate", "fixed_point"):
            raise ConfigError(f"unknown run method {run['method']!r}")
        if int(run["max_iters"]) < 1:
            raise ConfigError("run.max_iters must be at least 1")
        sweep = self.data["sweep"]
        if sweep is not None:
            sweep_values(sweep)

    def system_config(self) -> SystemConfig:
        s = self.data["system"]
        n = int(s["n_spins"])
        couplings = s["couplings"]
        if couplings is None:
            couplings = paul_trap_config(n, float(s["j1"])).couplings
        rabi = s["rabi"] if s["rabi"] is not None else [float(s["g"])] * n
        return SystemConfig(n, tuple(couplings), tuple(rabi), int(s["n_max"]))

    def noise_config(self) -> NoiseConfig:
        n = self.data["noise"]
        return NoiseConfig(float(n["gamma_flip"]), float(n["gamma_deph"]), bool(n["during_cooling"]))

    def base_sequence(self) -> Sequence:
        s = self.data["sequence"]
        system = self.system_config()
        gamma, gamma_t = float(s["gamma"]), float(s["gamma_t"])
        if gamma <= 0:
            raise ValueError("sequence.gamma must be positive")
        if s["pulses"] == "default":
            seq = default_sequence(system, gamma, gamma_t, 0.0)
        else:
            if not isinstance(s["pulses"], list) or not s["pulses"]:
                raise ValueError("sequence.pulses must be 'default' or a non-empty list")
            pulses = [
                PulseSpec(float(p["delta"]), float(p["t"]), gamma_t / gamma, gamma, 0.0)
                for p in s["pulses"]
            ]
            seq = Sequence(tuple(pulses))
        return Sequence(seq.pulses, s["parity"], int(s["correction_site"]))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def with_value(self, path: str, value) -> "ExperimentConfig":
        data = self.to_dict()
        for p in path.split(","):
            keys = p.strip().split(".")
            node = data
            for k in keys[:-1]:
                if not isinstance(node, dict) or k not in node:
                    raise ConfigError(f"unknown parameter path {p!r}")
                node = node[k]
            if not isinstance(node, dict) or keys[-1] not in node:
                raise ConfigError(f"unknown parameter path {p!r}")
            node[keys[-1]] = value
        return ExperimentConfig.from_dict(data)


def sweep_values(sweep: dict) -> list[float]:
    if not isinstance(sweep, dict) or "parameter" not in sweep:
        raise ConfigError("sweep needs a 'parameter'")
    if "values" in sweep:
        values = [float(v) for v in sweep["values"]]
    else:
        try:
            start, stop, count = float(sweep["start"]), float(sweep["stop"]), int(sweep["count"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError("sweep needs 'values' or start/stop/count") from exc
        if count < 2:
            raise ConfigError("sweep count must be at least 2")
        if not (np.isfinite(start) and np.isfinite(stop)):
            raise ConfigError("sweep bounds must be finite")
        values = list(np.linspace(start, stop, count))
    if not all(np.isfinite(values)):
        raise ConfigError("sweep bounds must be finite")
    return values


# ---------------------------------------------------------------------------
# Running


_optimized: dict[str, Sequence] = {}


def resolved_sequence(cfg: ExperimentConfig) -> Sequence:
    """Base sequence, optimized if requested, scaled, with the cooling ``nbar``."""
    s = cfg.data["sequence"]
    system = cfg.system_config()
    seq = cfg.base_sequence()
    if s["optimize"]:
        key = json.dumps([cfg.data["system"], {k: s[k] for k in (
            "pulses", "gamma", "gamma_t", "parity", "correction_site", "objective", "window")}],
            sort_keys=True)
        if key not in _optimized:
            window = tuple(s["window"]) if s["window"] is not None else None
            _optimized[key] = optimize_pulse_durations(
                seq, system, objective=s["objective"], window=window
            ).sequence
        seq = _optimized[key]
    return seq.scaled(float(s["duration_scale"])).with_nbar(float(s["nbar"]))


def resolved_pulses(cfg: ExperimentConfig) -> list[dict]:
    """Pulses actually run, after optimization and scaling."""
    seq = resolved_sequence(cfg)
    return [{"delta": p.delta, "t": p.t_coherent} for p in seq.pulses]


def initial_state(cfg: ExperimentConfig) -> np.ndarray:
    """Initial spin state tensored with the oscillator ground state."""
    system = cfg.system_config()
    shape = system.shape
    kind = cfg.data["initial_state"]["kind"]
    ds = shape.spin_dim
    if kind == "maximally_mixed":
        spins = np.eye(ds, dtype=complex) / ds
    elif kind == "all_up":
        spins = np.zeros((ds, ds), dtype=complex)
        spins[0, 0] = 1.0
    elif kind == "target":
        v = target_state(system.n_spins).vector
        spins = np.outer(v, v.conj())
    else:
        spins = haar_state(ds, int(cfg.data["initial_state"]["seed"]))
    return np.kron(spins, _ground(shape))


def haar_state(dim: int, seed: int) -> np.ndarray:
    """Haar-random pure state projector from a seeded generator."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    v /= np.linalg.norm(v)
    return np.outer(v, v.conj())


def _ground(shape: SpaceShape) -> np.ndarray:
    g = np.zeros((shape.n_osc_levels,) * 2, dtype=complex)
    g[0, 0] = 1.0
    return g


def run_single(cfg: ExperimentConfig):
    """Run one protocol; returns the fidelity trace or the limit fidelity."""
    system = cfg.system_config()
    noise = cfg.noise_config()
    seq = resolved_sequence(cfg)
    rho0 = initial_state(cfg)
    run = cfg.data["run"]
    if run["method"] == "fixed_point":
        shape = system.shape
        spins = rho0.reshape(shape.spin_dim, shape.n_osc_levels, shape.spin_dim, shape.n_osc_levels)
        spins = np.einsum("iaja->ij", spins)
        return asymptotic_fidelity(seq, system, noise, rho0_spins=spins)
    return run_iterations(
        rho0, seq, system, noise, int(run["max_iters"]), float(run["convergence_tol"])
    )


def scalar_result(cfg: ExperimentConfig) -> float:
    out = run_single(cfg)
    return float(out if np.isscalar(out) else out.asymptotic_fidelity)


def sweep(cfg: ExperimentConfig, parameter: str, values, threads: int = 1) -> list[float]:
    """Asymptotic fidelity for each value of ``parameter``, in input order."""
    values = list(values)
    if not values:
        return []
    configs = [cfg.with_value(parameter, v) for v in values]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(scalar_result, configs))
    return [scalar_result(c) for c in configs]


# ---------------------------------------------------------------------------
# Presets


def preset_config(name: str, overrides: dict | None = None) -> tuple[ExperimentConfig, dict]:
    """Base configuration and grid settings for a named preset."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    overrides = copy.deepcopy(overrides or {})
    grid = overrides.pop("grid", None) or {}
    base = ExperimentConfig.from_dict(overrides)
    if name == "fig2":
        base = base.with_value("system.n_spins", 4)
        return base, {}
    defaults = {
        "fig3a": {"start": 0.0, "stop": 0.2, "count": 21},
        "fig3b": {"start": 0.0, "stop": 0.01, "count": 21},
    }[name]
    defaults.update(grid)
    return base.with_value("run.method", "fixed_point"), defaults


def run_preset(name: str, overrides: dict | None = None, threads: int = 1):
    """Return ``(header, rows, resolved)`` for a preset."""
    base, grid = preset_config(name, overrides)
    if name == "fig2":
        trace = run_single(base)
        rows = [
            (int(i), float(t), float(1 - f))
            for i, t, f in zip(trace.iteration, trace.time, trace.fidelity)
        ]
        resolved = base.to_dict()
        resolved["resolved_pulses"] = resolved_pulses(base)
        return ["iteration", "time_in_omega_t_units", "infidelity"], rows, resolved
    xs = sweep_values({"parameter": "-", **grid})
    resolved = base.to_dict()
    resolved["grid"] = grid
    n2 = base.with_value("system.n_spins", 2)
    n4 = base.with_value("system.n_spins", 4)
    resolved["resolved_pulses"] = {"N2": resolved_pulses(n2), "N4": resolved_pulses(n4)}
    if name == "fig3a":
        f2 = sweep(n2, "sequence.nbar", xs, threads)
        f4 = sweep(n4, "sequence.nbar", xs, threads)
        return ["nbar", "fidelity_N2", "fidelity_N4"], list(zip(xs, f2, f4)), resolved
    g = float(base.data["system"]["g"])
    rates = [x * g / 2 for x in xs]
    path = "noise.gamma_flip,noise.gamma_deph"
    f2 = sweep(n2, path, rates, threads)
    f4, f4_off = fig3b_n4(n4, rates, threads)
    return (
        ["two_gamma_flip_over_g", "fidelity_N2", "fidelity_N4", "fidelity_N4_no_parity"],
        list(zip(xs, f2, f4, f4_off)),
        resolved,
    )


def fig3b_n4(cfg: ExperimentConfig, rates, threads: int = 1):
    """N = 4 noise sweep with and without parity, sharing the pulse maps."""
    system = cfg.system_config()
    seq = resolved_sequence(cfg)
    rho0 = initial_state(cfg)
    shape = system.shape
    spins = np.einsum(
        "iaja->ij", rho0.reshape(shape.spin_dim, shape.n_osc_levels, shape.spin_dim, shape.n_osc_levels)
    )
    during = bool(cfg.data["noise"]["during_cooling"])

    def point(rate):
        noise = NoiseConfig(rate, rate, during)
        channel = build_sequence_channel(seq, system, noise)
        on = asymptotic_fidelity(seq, system, noise, spins, channel)
        off_seq = seq.with_parity("off")
        off = asymptotic_fidelity(off_seq, system, noise, spins, channel.with_parity("off"))
        return on, off

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(point, rates))
    else:
        pairs = [point(r) for r in rates]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def run_experiment(cfg: ExperimentConfig, threads: int = 1):
    """Run a configured experiment; returns ``(header, rows, resolved)``."""
    resolved = cfg.to_dict()
    resolved["resolved_pulses"] = resolved_pulses(cfg)
    sweep_cfg = cfg.data["sweep"]
    if sweep_cfg is not None:
        values = sweep_values(sweep_cfg)
        results = sweep(cfg, sweep_cfg["parameter"], values, threads)
        return [sweep_cfg["parameter"], "fidelity"], list(zip(values, results)), resolved
    out = run_single(cfg)
    if np.isscalar(out):
        return ["fidelity"], [(float(out),)], resolved
    rows = [
        (int(i), float(t), float(f), float(1 - f), float(p), float(n))
        for i, t, f, p, n in zip(out.iteration, out.time, out.fidelity, out.even_parity,
                                 out.mean_occupation)
    ]
    header = ["iteration", "time_in_omega_t_units", "fidelity", "infidelity", "even_parity",
              "mean_occupation"]
    return header, rows, resolved


def format_csv(header, rows, resolved: dict) -> str:
    buf = io.StringIO()
    buf.write(f"# spinpump {__version__}\n")
    buf.write("# config: " + json.dumps(resolved, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "NumericalError",
    "PRESETS",
    "format_csv",
    "run_experiment",
    "run_preset",
    "sweep",
]
