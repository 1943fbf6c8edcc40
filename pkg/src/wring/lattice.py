"""Ring registers, interaction matrices and piecewise-linear pulse schedules.

Units throughout: lengths in µm, times in µs, angular frequencies in rad/µs,
phases in rad.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GeometryError, ScheduleError

# Van der Waals coefficient expressed in the same angular units as the drive.
C6_DEFAULT = 5.42e6  # rad/µs · µm^6

TRUNCATIONS = ("full", "nearest", "next-nearest")


@dataclass(frozen=True)
class RingGeometry:
    L: int
    a: float
    positions: np.ndarray
    perturbed: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] != self.L:
            raise GeometryError(f"expected {self.L} positions, got {pos.shape[0]}")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def radius(self) -> float:
        return self.a / (2.0 * math.sin(math.pi / self.L))

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def ring_offset(self, i: int, j: int) -> int:
        """Separation of sites i and j along the ring (0 .. L//2)."""
        d = abs(i - j) % self.L
        return min(d, self.L - d)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "a": self.a,
            "positions": [[float(x), float(y)] for x, y in self.positions],
            "perturbed": self.perturbed,
            "seed": self.seed,
        }


def ring_positions(L: int, a: float, orientation: float = 0.0) -> RingGeometry:
    """Place ``L`` atoms counter-clockwise on a circle with nearest-neighbour chord ``a``.

    The first atom sits at polar angle ``orientation`` (0 by default).
    """
    if int(L) != L or L < 3:
        raise GeometryError(f"a ring needs at least 3 atoms, got L={L}")
    if not a > 0:
        raise GeometryError(f"lattice spacing must be positive, got a={a}")
    L = int(L)
    radius = a / (2.0 * math.sin(math.pi / L))
    theta = orientation + 2.0 * np.pi * np.arange(L) / L
    pos = radius * np.column_stack([np.cos(theta), np.sin(theta)])
    return RingGeometry(L=L, a=float(a), positions=pos)


def perturb_positions(g: RingGeometry, sigma_x: float, sigma_y: Optional[float] = None,
                      seed=None) -> RingGeometry:
    """Displace every coordinate by an independent Gaussian draw (frozen per shot)."""
    if sigma_y is None:
        sigma_y = sigma_x
    if sigma_x < 0 or sigma_y < 0:
        raise GeometryError("position spread must be non-negative")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((g.L, 2)) * np.array([sigma_x, sigma_y])
    return RingGeometry(L=g.L, a=g.a, positions=g.positions + noise,
                        perturbed=True, seed=seed if isinstance(seed, int) else None)


def interaction_matrix(g: RingGeometry, c6: float = C6_DEFAULT,
                       truncation: str = "full") -> np.ndarray:
    """Pairwise van der Waals shifts ``c6 / r**6`` (rad/µs), zero on the diagonal."""
    if truncation not in TRUNCATIONS:
        raise ValueError(f"unknown truncation {truncation!r}; expected one of {TRUNCATIONS}")
    r = g.distances()
    iu = np.triu_indices(g.L, k=1)
    if np.any(r[iu] < 1e-9):
        raise GeometryError("coincident atoms: interaction distance is singular")
    U = np.zeros((g.L, g.L))
    keep = {"full": g.L, "nearest": 1, "next-nearest": 2}[truncation]
    for i, j in zip(*iu):
        if g.ring_offset(i, j) <= keep:
            U[i, j] = U[j, i] = c6 / r[i, j] ** 6
    return U


@dataclass(frozen=True)
class Waveform:
    """Piecewise-linear function of time, clamped outside its breakpoints."""

    breakpoints: tuple

    def __post_init__(self):
        pts = tuple((float(t), float(v)) for t, v in self.breakpoints)
        if not pts:
            raise ScheduleError("a waveform needs at least one breakpoint")
        times = [t for t, _ in pts]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise ScheduleError(f"breakpoint times must be strictly increasing: {times}")
        object.__setattr__(self, "breakpoints", pts)

    @classmethod
    def constant(cls, value: float, t_final: float) -> "Waveform":
        if t_final > 0:
            return cls(((0.0, value), (t_final, value)))
        return cls(((0.0, value),))

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.breakpoints])

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.breakpoints])

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def slopes(self) -> np.ndarray:
        if len(self.breakpoints) < 2:
            return np.zeros(0)
        return np.diff(self.values) / np.diff(self.times)

    def integral(self) -> float:
        if len(self.breakpoints) < 2:
            return 0.0
        v, t = self.values, self.times
        return float(np.sum(0.5 * (v[1:] + v[:-1]) * np.diff(t)))

    def to_list(self) -> list:
        return [[t, v] for t, v in self.breakpoints]


@dataclass(frozen=True)
class PulseSchedule:
    omega: Waveform
    delta: Waveform
    phi: Waveform
    t_final: float

    def __post_init__(self):
        if self.t_final < 0:
            raise ScheduleError("t_final must be non-negative")
        for name in ("omega", "delta", "phi"):
            w = getattr(self, name)
            spans = w.times[0] == 0.0 and (
                len(w.breakpoints) == 1 or math.isclose(w.times[-1], self.t_final, abs_tol=1e-12))
            if not spans:
                raise ScheduleError(f"{name} waveform must span [0, {self.t_final}] µs")
        if np.any(self.omega.values < 0):
            raise ScheduleError("Rabi amplitude must be non-negative")

    def at(self, t: float):
        """(Ω, Δ, φ) at time ``t``."""
        return float(self.omega(t)), float(self.delta(t)), float(self.phi(t))

    def knots(self) -> np.ndarray:
        """Union of all breakpoint times inside [0, t_final]."""
        ts = np.concatenate([self.omega.times, self.delta.times, self.phi.times,
                             [0.0, self.t_final]])
        return np.unique(np.clip(ts, 0.0, self.t_final))

    def area(self) -> float:
        """Integrated Rabi amplitude (rad)."""
        return self.omega.integral()

    def to_dict(self) -> dict:
        return {
            "t_final": self.t_final,
            "omega": self.omega.to_list(),
            "delta": self.delta.to_list(),
            "phi": self.phi.to_list(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSchedule":
        return cls(omega=Waveform(d["omega"]), delta=Waveform(d["delta"]),
                   phi=Waveform(d["phi"]), t_final=float(d["t_final"]))


@dataclass(frozen=True)
class PrepParams:
    omega: float
    delta: float
    t_final: float
    omega_ramp: float
    delta_initial: float = -40.0
    # Duration of the detuning sweep; None means the whole window between
    # the Rabi ramps.
    delta_ramp: Optional[float] = None


def _drop_duplicate_times(points):
    out = []
    for t, v in points:
        if out and t <= out[-1][0]:
            out[-1] = (out[-1][0], v)
            continue
        out.append((t, v))
    return tuple(out)


def build_prep_schedule(p: PrepParams) -> PulseSchedule:
    """Rabi ramp-up at fixed negative detuning, linear detuning sweep, Rabi ramp-down."""
    tau, tf = p.omega_ramp, p.t_final
    if tau < 0:
        raise ScheduleError("Rabi ramp time must be non-negative")
    if not 2 * tau < tf:
        raise ScheduleError(f"2·τ_ramp = {2 * tau} must be shorter than t_F = {tf}")
    if p.omega < 0:
        raise ScheduleError("Rabi amplitude must be non-negative")
    window = tf - 2 * tau
    sweep = window if p.delta_ramp is None else p.delta_ramp
    if not 0 < sweep <= window + 1e-12:
        raise ScheduleError(f"detuning ramp {sweep} does not fit the {window} µs window")
    omega = _drop_duplicate_times([(0.0, 0.0), (tau, p.omega), (tf - tau, p.omega), (tf, 0.0)])
    delta = _drop_duplicate_times([(0.0, p.delta_initial), (tau, p.delta_initial),
                                   (tau + sweep, p.delta), (tf, p.delta)])
    return PulseSchedule(omega=Waveform(omega), delta=Waveform(delta),
                         phi=Waveform.constant(0.0, tf), t_final=tf)


def build_rotation_schedule(omega_rot: float, tau_rot: float, ramp: float = 0.05,
                            phase: float = math.pi / 2) -> PulseSchedule:
    """Trapezoidal resonant pulse: ``ramp`` up, plateau ``tau_rot``, ``ramp`` down.

    The pulse area is ``omega_rot * (tau_rot + ramp)``.
    """
    if omega_rot < 0 or tau_rot < 0 or ramp < 0:
        raise ScheduleError("rotation amplitude and durations must be non-negative")
    tf = tau_rot + 2 * ramp
    omega = _drop_duplicate_times([(0.0, 0.0), (ramp, omega_rot), (ramp + tau_rot, omega_rot),
                                   (tf, 0.0)])
    if ramp == 0:
        omega = ((0.0, omega_rot), (tf, omega_rot)) if tf > 0 else ((0.0, 0.0),)
    return PulseSchedule(omega=Waveform(omega), delta=Waveform.constant(0.0, tf),
                         phi=Waveform.constant(phase, tf), t_final=tf)


@dataclass(frozen=True)
class HardwareLimits:
    plate_size: float = 75.0          # µm, square field of view
    min_vertical_spacing: float = 2.0  # µm between distinct rows
    min_distance: float = 4.0         # µm between any two atoms
    omega_max: float = 15.8           # rad/µs
    omega_slew_max: float = 250.0     # rad/µs²
    delta_max: float = 125.0          # rad/µs (absolute)
    delta_slew_max: float = 2500.0    # rad/µs²
    t_max: float = 4.0                # µs
    row_tolerance: float = 1e-6       # µm; smaller vertical offsets count as one row


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str

    def __str__(self):
        return f"{self.kind}: {self.message}"


def validate_hardware(g: Optional[RingGeometry], s: Optional[PulseSchedule] = None,
                      limits: HardwareLimits = HardwareLimits()) -> list:
    """Collect every hardware-constraint violation; an empty list means the job is runnable."""
    out = []
    if g is not None:
        pos = g.positions
        extent = pos.max(axis=0) - pos.min(axis=0)
        if np.any(extent > limits.plate_size):
            out.append(Violation("plate", f"register extent {extent.round(3).tolist()} µm "
                                          f"exceeds the {limits.plate_size} µm plate"))
        for i in range(g.L):
            for j in range(i + 1, g.L):
                dy = abs(pos[i, 1] - pos[j, 1])
                if limits.row_tolerance < dy < limits.min_vertical_spacing:
                    out.append(Violation("vertical-spacing",
                                         f"atoms {i},{j} are {dy:.3f} µm apart vertically "
                                         f"(< {limits.min_vertical_spacing})"))
                r = float(np.hypot(*(pos[i] - pos[j])))
                if r < limits.min_distance:
                    out.append(Violation("distance", f"atoms {i},{j} are {r:.3f} µm apart "
                                                     f"(< {limits.min_distance})"))
    if s is not None:
        if s.t_final > limits.t_max:
            out.append(Violation("duration", f"t_F = {s.t_final} µs exceeds {limits.t_max} µs"))
        if s.omega.values.max(initial=0.0) > limits.omega_max + 1e-12:
            out.append(Violation("omega", f"Rabi amplitude above {limits.omega_max} rad/µs"))
        if np.any(np.abs(s.omega.slopes()) > limits.omega_slew_max + 1e-9):
            out.append(Violation("omega-slew", f"Rabi slope above {limits.omega_slew_max} rad/µs²"))
        if np.abs(s.delta.values).max(initial=0.0) > limits.delta_max + 1e-12:
            out.append(Violation("delta", f"|Δ| above {limits.delta_max} rad/µs"))
        if np.any(np.abs(s.delta.slopes()) > limits.delta_slew_max + 1e-9):
            out.append(Violation("delta-slew", f"detuning slope above {limits.delta_slew_max} rad/µs²"))
    return out
