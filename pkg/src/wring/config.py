"""Experiment configuration: TOML with one section per pipeline stage.

Units are fixed: µm, µs, rad/µs. Unknown sections or keys are rejected.

Example::

    [lattice]
    L = 7
    a = 6.0

    [prep]
    omega = 11.46
    delta = 26.0
    t_final = 2.0
    omega_ramp = 0.25

    [rotation]
    omega_rot = 8.47
    tau_rot = 0.15
"""

from __future__ import annotations

import dataclasses
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, get_type_hints

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import DEFAULT_DT, DEFAULT_METHOD, NoiseParams
from .errors import ConfigError, ValidationError
from .lattice import (C6_DEFAULT, TRUNCATIONS, HardwareLimits, PrepParams, PulseSchedule,
                      RingGeometry, Violation, build_prep_schedule, build_rotation_schedule, ring_positions,
                      validate_hardware)
from .measurement import P_G_TO_R_DEFAULT, P_R_TO_G_DEFAULT, ConfusionModel


class ConfigTypeError(ConfigError, TypeError):
    pass


@dataclass(frozen=True)
class LatticeSection:
    L: int
    a: float
    c6: float = C6_DEFAULT
    truncation: str = "full"
    # π/2 puts a symmetry axis of the ring vertical, so mirror pairs share rows
    orientation: float = math.pi / 2


@dataclass(frozen=True)
class PrepSection:
    omega: float
    delta: float
    t_final: float
    omega_ramp: float
    delta_initial: float = -40.0
    delta_ramp: Optional[float] = None


@dataclass(frozen=True)
class RotationSection:
    omega_rot: float = 0.0
    tau_rot: float = 0.0
    ramp: float = 0.05
    phase: float = math.pi / 2
    # Ω_rot variants of the rotation experiments
    offsets: tuple = (-1.0, -0.5, 0.0, 0.5, 1.0)


@dataclass(frozen=True)
class NoiseSection:
    gamma: float = 0.0
    sigma_pos: float = 0.15
    sigma_omega_rel: float = 0.0
    sigma_delta: float = 0.0
    p_g_to_r: float = P_G_TO_R_DEFAULT
    p_r_to_g: float = P_R_TO_G_DEFAULT


@dataclass(frozen=True)
class SamplingSection:
    shots: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class EnsembleSection:
    Q: int = 100
    seed: int = 0


@dataclass(frozen=True)
class NumericsSection:
    dt: float = DEFAULT_DT
    method: str = DEFAULT_METHOD


@dataclass(frozen=True)
class LimitsSection:
    plate_size: float = HardwareLimits.plate_size
    min_vertical_spacing: float = HardwareLimits.min_vertical_spacing
    min_distance: float = HardwareLimits.min_distance
    omega_max: float = HardwareLimits.omega_max
    omega_slew_max: float = HardwareLimits.omega_slew_max
    delta_max: float = HardwareLimits.delta_max
    delta_slew_max: float = HardwareLimits.delta_slew_max
    t_max: float = HardwareLimits.t_max
    max_sites: int = 13
    allow_unphysical: bool = False


_SECTIONS = {
    "lattice": LatticeSection, "prep": PrepSection, "rotation": RotationSection,
    "noise": NoiseSection, "sampling": SamplingSection, "ensemble": EnsembleSection,
    "numerics": NumericsSection, "limits": LimitsSection,
}
_REQUIRED = ("lattice", "prep")


@dataclass(frozen=True)
class ExperimentConfig:
    lattice: LatticeSection
    prep: PrepSection
    rotation: RotationSection = RotationSection()
    noise: NoiseSection = NoiseSection()
    sampling: SamplingSection = SamplingSection()
    ensemble: EnsembleSection = EnsembleSection()
    numerics: NumericsSection = NumericsSection()
    limits: LimitsSection = LimitsSection()

    @property
    def L(self) -> int:
        return self.lattice.L

    def geometry(self) -> RingGeometry:
        return ring_positions(self.lattice.L, self.lattice.a, self.lattice.orientation)

    def prep_schedule(self) -> PulseSchedule:
        p = self.prep
        return build_prep_schedule(PrepParams(p.omega, p.delta, p.t_final, p.omega_ramp,
                                              p.delta_initial, p.delta_ramp))

    def rotation_schedules(self) -> list:
        r = self.rotation
        return [build_rotation_schedule(r.omega_rot + off, r.tau_rot, r.ramp, r.phase)
                for off in r.offsets]

    def rotation_labels(self) -> list:
        return [f"omega_rot={self.rotation.omega_rot + off:.6g}" for off in self.rotation.offsets]

    def noise_params(self) -> NoiseParams:
        n = self.noise
        return NoiseParams(n.gamma, n.sigma_pos, n.sigma_omega_rel, n.sigma_delta,
                           n.p_g_to_r, n.p_r_to_g)

    def confusion(self) -> ConfusionModel:
        return ConfusionModel.uniform(self.L, self.noise.p_g_to_r, self.noise.p_r_to_g)

    def hardware_limits(self) -> HardwareLimits:
        lim = self.limits
        return HardwareLimits(lim.plate_size, lim.min_vertical_spacing, lim.min_distance,
                              lim.omega_max, lim.omega_slew_max, lim.delta_max,
                              lim.delta_slew_max, lim.t_max)

    def violations(self) -> list:
        """Hardware violations of the register, preparation and each rotation pulse."""
        limits = self.hardware_limits()
        out = validate_hardware(self.geometry(), self.prep_schedule(), limits)
        for label, rot in zip(self.rotation_labels(), self.rotation_schedules()):
            if rot.t_final == 0:
                continue
            out += [dataclasses.replace(v, message=f"rotation {label}: {v.message}")
                    for v in validate_hardware(None, rot, limits)]
            total = self.prep.t_final + rot.t_final
            if total > limits.t_max:
                out.append(Violation("duration", f"preparation plus rotation lasts {total:.6g} µs "
                                                 f"(> {limits.t_max} µs)"))
        return out

    def to_dict(self) -> dict:
        out = {}
        for name in _SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sec.items()
                         if v is not None}
        return out


def _coerce(section: str, key: str, value, hint):
    where = f"[{section}].{key}"
    origin = getattr(hint, "__args__", None)
    if hint is Optional[float] or (origin and type(None) in origin):
        hint = float
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigTypeError(f"{where} must be true or false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigTypeError(f"{where} must be an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigTypeError(f"{where} must be a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigTypeError(f"{where} must be a string, got {value!r}")
        return value
    if hint is tuple:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigTypeError(f"{where} must be a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    raise ConfigTypeError(f"{where}: unsupported type")


def config_from_dict(data: dict, *, allow_unphysical: Optional[bool] = None) -> ExperimentConfig:
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for name in _REQUIRED:
        if name not in data:
            raise ConfigError(f"missing required section [{name}]")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigTypeError(f"[{name}] must be a table")
        hints = get_type_hints(cls)
        names = {f.name for f in dataclasses.fields(cls)}
        extra = sorted(set(raw) - names)
        if extra:
            raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(extra)}")
        missing = [f.name for f in dataclasses.fields(cls)
                   if f.default is dataclasses.MISSING and f.name not in raw]
        if missing:
            raise ConfigError(f"missing required key(s) in [{name}]: {', '.join(missing)}")
        sections[name] = cls(**{k: _coerce(name, k, v, hints[k]) for k, v in raw.items()})
    cfg = ExperimentConfig(**sections)
    validate_config(cfg, allow_unphysical)
    return cfg


def validate_config(cfg: ExperimentConfig, allow_unphysical: Optional[bool] = None) -> None:
    lat = cfg.lattice
    if lat.truncation not in TRUNCATIONS:
        raise ConfigError(f"[lattice].truncation must be one of {TRUNCATIONS}")
    if lat.L > cfg.limits.max_sites:
        raise ConfigError(f"[lattice].L = {lat.L} exceeds [limits].max_sites = "
                          f"{cfg.limits.max_sites}")
    if cfg.numerics.dt <= 0:
        raise ConfigError("[numerics].dt must be positive")
    if cfg.numerics.method not in ("cfm4", "midpoint"):
        raise ConfigError("[numerics].method must be 'cfm4' or 'midpoint'")
    if cfg.sampling.shots < 1 or cfg.ensemble.Q < 1:
        raise ConfigError("shot count and ensemble size must be positive")
    try:
        cfg.noise_params()
        cfg.geometry()
        cfg.prep_schedule()
        cfg.rotation_schedules()
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    allow = cfg.limits.allow_unphysical if allow_unphysical is None else allow_unphysical
    if not allow:
        bad = cfg.violations()
        if bad:
            raise ConfigError("hardware limits violated:\n  " + "\n  ".join(map(str, bad)))


def load_config(path, *, allow_unphysical: Optional[bool] = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, allow_unphysical=allow_unphysical)


def reference_config(L: int) -> ExperimentConfig:
    """Reference preparation and rotation settings for L = 5, 7, 9 and 11."""
    rows = {
        5: (6.0, 11.46, 29.0, 2.0, 0.25, 0.15, 7.97),
        7: (6.0, 11.46, 26.0, 2.0, 0.25, 0.15, 8.47),
        9: (6.0, 11.46, 29.0, 2.0, 0.25, 0.15, 7.21),
        11: (7.1, 11.46, 25.0, 3.0, 0.5, 0.2, 6.99),
    }
    if L not in rows:
        raise ValidationError(f"no reference settings for L={L}")
    a, om, de, tf, tau, trot, orot = rows[L]
    return config_from_dict({
        "lattice": {"L": L, "a": a},
        "prep": {"omega": om, "delta": de, "t_final": tf, "omega_ramp": tau},
        "rotation": {"omega_rot": orot, "tau_rot": trot},
    })
