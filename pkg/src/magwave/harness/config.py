"""Flat ``key = value`` experiment configuration.

Keys carry a section prefix (``geometry.h``, ``probes.sigma``, ...).  Lists
are comma separated.  Potential presets take parameters through keys of the
form ``potentials.A2.amplitude = 0.3``.  Lines starting with ``#`` are
comments.

Every key has a default, so an empty file is a valid configuration (the
desk configuration).  Unknown keys, malformed values, unknown presets and
probe frequencies that the grid cannot resolve are rejected with
:class:`ConfigError`.
"""

from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..domain import CrossSection, WaveguideGrid, disk, rectangle
from ..fields import PRESETS, MagneticPotential, PotentialPair, make_potential


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# key -> (kind, default); kinds: float, int, str, floats, ints
SCHEMA: dict[str, tuple[str, Any]] = {
    "geometry.shape": ("str", "rectangle"),
    "geometry.half_width_2": ("float", 0.5),
    "geometry.half_width_3": ("float", 0.5),
    "geometry.radius": ("float", 1.0),
    "geometry.h": ("float", 1 / 32),
    "geometry.n1": ("int", 8),
    "geometry.margin": ("float", 0.05),
    "time.T": ("float", 0.8),
    "time.n_t": ("int", 400),
    "time.dt_scale": ("float", 0.2),
    "time.dt_profile": ("float", 1 / 512),
    "potentials.A1": ("str", "zero"),
    "potentials.A2": ("str", "bump"),
    "potentials.B": ("str", "bump"),
    "potentials.eps": ("floats", [0.05, 0.1, 0.2]),
    "gauge.amplitude": ("float", 0.5),
    "gauge.radius": ("float", 0.3),
    "gauge.tilt": ("float", 0.0),
    "fibers.theta": ("floats", [0.4]),
    "fbg.n_theta": ("int", 64),
    "fbg.samples": ("int", 10),
    "probes.sigma": ("floats", [5.0, 6.5, 8.0]),
    "probes.omega_angle": ("float", 0.3),
    "probes.profile_radius": ("float", 0.5),
    "probes.k": ("int", 0),
    "probes.window": ("int", 1),
    "probes.k_max": ("int", 1),
    "probes.xi_max": ("float", 90.0),
    "recover.path": ("str", "oracle"),
    "recover.gamma": ("float", 0.0),
    "recover.mass": ("float", 0.99),
    "recover.pde_xi_max": ("float", 0.0),
    "recover.pde_k_max": ("int", 0),
    "stability.c_gamma": ("float", 20.0),
    "stability.gamma_max": ("float", 40.0),
    "stability.battery": ("int", 2),
    "stability.sigma": ("float", 5.0),
    "tolerances.parseval": ("float", 1e-10),
    "tolerances.unitarity": ("float", 1e-11),
    "tolerances.duhamel": ("float", 1e-8),
    "tolerances.gauge": ("float", 0.02),
    "tolerances.green": ("float", 0.01),
    "tolerances.transport": ("float", 1e-6),
    "tolerances.telescope": ("float", 1e-8),
    "tolerances.slice": ("float", 1e-8),
    "run.out": ("str", "out"),
    "run.workers": ("int", 1),
    "run.seed": ("int", 0),
}

_POTENTIAL_SLOTS = ("A1", "A2", "B")


def _convert(key: str, kind: str, raw: str):
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "str":
            return raw
        if kind == "floats":
            return [float(x) for x in raw.split(",") if x.strip()]
        if kind == "ints":
            return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot read {raw!r} as {kind}") from exc
    raise AssertionError(kind)


@dataclass
class ExperimentConfig:
    values: dict[str, Any]
    preset_params: dict[str, dict[str, float]] = field(default_factory=dict)
    source: str = "<defaults>"

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **flat) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in flat.items():
            vals[k.replace("__", ".")] = v
        cfg = ExperimentConfig(vals, {k: dict(v) for k, v in self.preset_params.items()}, self.source)
        cfg.validate()
        return cfg

    # -- derived objects -----------------------------------------------
    def cross_section(self) -> CrossSection:
        if self["geometry.shape"] == "rectangle":
            return rectangle(self["geometry.half_width_2"], self["geometry.half_width_3"], self["geometry.h"])
        return disk(self["geometry.radius"], self["geometry.h"])

    def enclosing_radius(self) -> float:
        return self.cross_section().enclosing_radius + self["geometry.margin"]

    def grid(self, n_t: int | None = None) -> WaveguideGrid:
        return WaveguideGrid(self.cross_section(), self["geometry.n1"], self["time.T"], n_t or self["time.n_t"])

    def steps_for(self, sigma: float) -> int:
        """Time steps with dt <= dt_scale / sigma^2 and dt <= dt_profile / sigma.

        The second cap resolves the passage of the probe profile, which moves
        at speed 2 sigma across a width of 1/8.
        """
        T = self["time.T"]
        dt = self["time.dt_scale"] / sigma**2
        if self["time.dt_profile"] > 0:
            dt = min(dt, self["time.dt_profile"] / sigma)
        return int(np.ceil(T / dt - 1e-9))

    def probe_grid(self, sigma: float) -> WaveguideGrid:
        return self.grid(self.steps_for(sigma))

    def potential(self, slot: str) -> MagneticPotential:
        return make_potential(self[f"potentials.{slot}"], **self.preset_params.get(slot, {}))

    def pair(self) -> PotentialPair:
        return PotentialPair(self.potential("A1"), self.potential("A2"), name="config")

    def omega(self) -> tuple[float, float]:
        a = self["probes.omega_angle"]
        return (float(np.cos(a)), float(np.sin(a)))

    def sigmas(self) -> list[float]:
        """Probe frequencies, deduplicated, in ascending order."""
        return sorted(set(float(s) for s in self["probes.sigma"]))

    # -- validation ----------------------------------------------------
    def validate(self) -> None:
        v = self.values
        if v["geometry.shape"] not in ("rectangle", "disk"):
            raise ConfigError("geometry.shape must be 'rectangle' or 'disk'")
        for key in ("geometry.h", "time.T", "geometry.half_width_2", "geometry.half_width_3", "geometry.radius"):
            if not v[key] > 0:
                raise ConfigError(f"{key} must be positive")
        if v["geometry.n1"] < 1 or v["time.n_t"] < 1:
            raise ConfigError("geometry.n1 and time.n_t must be positive")
        for slot in _POTENTIAL_SLOTS:
            name = v[f"potentials.{slot}"]
            if name not in PRESETS:
                raise ConfigError(f"potentials.{slot}: unknown preset {name!r} (known: {', '.join(sorted(PRESETS))})")
            accepted = inspect.signature(PRESETS[name]).parameters
            for p in self.preset_params.get(slot, {}):
                if p not in accepted:
                    raise ConfigError(f"potentials.{slot}.{p}: preset {name!r} has no parameter {p!r}")
        if v["recover.path"] not in ("oracle", "pde"):
            raise ConfigError("recover.path must be 'oracle' or 'pde'")
        if not 0 < v["recover.mass"] < 1:
            raise ConfigError("recover.mass must lie in (0, 1)")
        if v["run.workers"] < 1:
            raise ConfigError("run.workers must be at least 1")
        if not v["time.dt_scale"] <= 0.2 + 1e-15:
            raise ConfigError("time.dt_scale must not exceed 0.2 (probe resolution rule)")
        if not v["probes.sigma"]:
            raise ConfigError("probes.sigma must list at least one frequency")
        h = v["geometry.h"]
        for s in list(v["probes.sigma"]) + [v["stability.sigma"]]:
            if s * h > 2 * np.pi / 8 + 1e-12:
                raise ConfigError(
                    f"probe resolution rule violated: sigma = {s:g} with h = {h:g} gives sigma h > 2 pi / 8"
                )

    def snapshot(self) -> str:
        lines = [f"{k} = {_fmt(self.values[k])}" for k in sorted(self.values)]
        for slot in sorted(self.preset_params):
            for p in sorted(self.preset_params[slot]):
                lines.append(f"potentials.{slot}.{p} = {self.preset_params[slot][p]!r}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, list):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    values = {k: (list(d) if isinstance(d, list) else d) for k, (_, d) in SCHEMA.items()}
    params: dict[str, dict[str, float]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in SCHEMA:
            values[key] = _convert(key, SCHEMA[key][0], raw)
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "potentials" and parts[1] in _POTENTIAL_SLOTS:
            params.setdefault(parts[1], {})[parts[2]] = _convert(key, "float", raw)
            continue
        raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    cfg = ExperimentConfig(values, params, source)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return parse_config("", "<defaults>")
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))
