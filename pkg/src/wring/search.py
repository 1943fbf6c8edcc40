"""Protocol optimization and scaling analysis.

Detuning sweeps and minimal-time searches run on the ideal ring, where the
whole detuning grid is propagated at once in the dihedral symmetry sector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .dynamics import (DEFAULT_DT, DEFAULT_METHOD, _model_for, evolve_closed_batch,
                       ideal_y_rotation)
from .errors import (OptimizationError, SearchExhaustedError, ValidationError)
from .hamiltonian import (RydbergModel, ground_state, kink_superposition, spectral_gap)
from .lattice import (C6_DEFAULT, HardwareLimits, PrepParams, PulseSchedule, Waveform,
                      build_prep_schedule, interaction_matrix, ring_positions)

DELTA_RANGE = (10.0, 50.0)
DELTA_STEP = 1.0
RAMP_FRACTION = 0.25


@dataclass(frozen=True)
class SweepResult:
    grid: list                 # [(Δ, F_th)], ascending Δ
    best: tuple                # (Δ, F_th)
    t_final: float = float("nan")


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    stderr: float
    points: tuple


@dataclass(frozen=True)
class MinTimeResult:
    t_star: float
    delta: float
    infidelity: float
    history: tuple             # ((t_F, best Δ, best infidelity), ...) in evaluation order


def search_schedule(omega: float, delta: float, t_final: float,
                    ramp_fraction: float = RAMP_FRACTION,
                    delta_initial: Optional[float] = None) -> PulseSchedule:
    """Preparation schedule used by the searches.

    The Rabi ramps last ``ramp_fraction·t_F`` each; the detuning sweep runs
    from ``delta_initial`` (mirror image ``-Δ`` by default) to ``+Δ``.
    """
    di = -delta if delta_initial is None else delta_initial
    return build_prep_schedule(PrepParams(omega, delta, t_final, ramp_fraction * t_final,
                                          delta_initial=di))


def _detuning_grid(delta_range, delta_step, limits: HardwareLimits):
    lo, hi = delta_range
    if delta_step <= 0:
        raise ValidationError("detuning step must be positive")
    if lo > hi:
        raise ValidationError(f"empty detuning range {delta_range}")
    if max(abs(lo), abs(hi)) > limits.delta_max:
        raise ValidationError(f"detuning range {delta_range} exceeds ±{limits.delta_max} rad/µs")
    n = int(math.floor((hi - lo) / delta_step + 1e-9)) + 1
    return lo + delta_step * np.arange(n)


def sweep_detuning(L: int, a: float, omega: float, t_final: float,
                   delta_range=DELTA_RANGE, delta_step: float = DELTA_STEP, *,
                   ramp_fraction: float = RAMP_FRACTION, delta_initial: Optional[float] = None,
                   c6: float = C6_DEFAULT, truncation: str = "full",
                   dt: float = DEFAULT_DT, method: str = DEFAULT_METHOD,
                   limits: HardwareLimits = HardwareLimits()) -> SweepResult:
    """F_th = |⟨K_S|ψ(t_F)⟩|² over a detuning grid; ties go to the smaller Δ."""
    deltas = _detuning_grid(delta_range, delta_step, limits)
    if len(deltas) == 0:
        raise ValidationError("empty detuning grid")
    model = RydbergModel(interaction_matrix(ring_positions(L, a), c6, truncation), symmetric=True)
    sector = model.sector
    schedules = [search_schedule(omega, d, t_final, ramp_fraction, delta_initial) for d in deltas]
    finals = evolve_closed_batch(model, schedules, sector.project(ground_state(L).data),
                                 dt=dt, method=method)
    target = sector.project(kink_superposition(L).data)
    fid = np.abs(target.conj() @ finals) ** 2
    grid = [(float(d), float(f)) for d, f in zip(deltas, fid)]
    k = int(np.argmax(fid))
    return SweepResult(grid=grid, best=grid[k], t_final=t_final)


def min_time_for_infidelity(L: int, a: float, omega: float, target: float = 1e-3, *,
                            t_start: float = 0.5, t_max: float = 32.0, rel_width: float = 0.05,
                            **sweep_kwargs) -> MinTimeResult:
    """Smallest t_F (doubling, then bisection to ``rel_width``) with 1 − F_th ≤ target.

    The detuning is re-optimized on the sweep grid at every trial time.
    """
    if not 0 < target < 1:
        raise ValidationError("target infidelity must lie in (0, 1)")
    history = []

    def trial(t):
        res = sweep_detuning(L, a, omega, t, **sweep_kwargs)
        infid = 1.0 - res.best[1]
        history.append((t, res.best[0], infid))
        return infid, res.best[0]

    t_lo, t_hi = None, t_start
    while True:
        infid, delta = trial(t_hi)
        if infid <= target:
            best = (t_hi, delta, infid)
            break
        t_lo = t_hi
        t_hi *= 2.0
        if t_hi > t_max:
            raise SearchExhaustedError(f"infidelity {target} not reached for L={L} "
                                       f"within t_F <= {t_max} µs")
    if t_lo is None:
        t_lo = 0.0
    while t_hi - t_lo > rel_width * t_hi:
        t_mid = 0.5 * (t_lo + t_hi)
        infid, delta = trial(t_mid)
        if infid <= target:
            t_hi = t_mid
            best = (t_mid, delta, infid)
        else:
            t_lo = t_mid
    return MinTimeResult(t_star=best[0], delta=best[1], infidelity=best[2],
                         history=tuple(history))


def fit_power_law(points: Sequence) -> PowerLawFit:
    """Least-squares line through (log L, log y); the slope is the exponent."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValidationError("a power-law fit needs at least three points")
    x, y = np.array(pts).T
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("power-law fit needs strictly positive values")
    fit = stats.linregress(np.log(x), np.log(y))
    return PowerLawFit(exponent=float(fit.slope), prefactor=float(np.exp(fit.intercept)),
                       stderr=float(fit.stderr), points=tuple(pts))


@dataclass(frozen=True)
class GapRow:
    L: int
    gap: float
    gap_above_ground: float
    ground_multiplicity: int


def gap_scan(sizes: Sequence[int], a: float = 6.0, omega: float = 5.0, delta: float = 29.0,
             c6: float = C6_DEFAULT, truncation: str = "full") -> list:
    """Low-energy gaps of ideal rings.

    Odd rings report E1 − E0 inside the kink band. Even rings have a Néel
    doublet whose splitting vanishes exponentially; their entry is the gap
    above that doublet.
    """
    rows = []
    for L in sizes:
        model = RydbergModel(interaction_matrix(ring_positions(L, a), c6, truncation))
        mult = 1 if L % 2 else 2
        info = spectral_gap(model.matrix(omega, delta), k=6, ground_multiplicity=mult)
        rows.append(GapRow(L, info.gap, info.gap_above_ground, mult))
    return rows


# --------------------------------------------------------------------------
# GRAPE

@dataclass
class GrapeResult:
    schedule: PulseSchedule
    controls: np.ndarray          # (n_slices, 3): Ω, φ, Δ
    slice_duration: float
    fidelity_trace: list
    fidelity: float
    unitary: Optional[np.ndarray] = None


def _slice_unitaries(model: RydbergModel, controls, dt):
    """Per-slice exponentials and their eigen-data (for exact derivatives)."""
    out = []
    X = model.x_part.toarray()
    Y = 1j * model.y_part.toarray()
    for om, ph, de in controls:
        H = np.diag(model.diagonal(de)).astype(complex) + 0.5 * om * (math.cos(ph) * X + math.sin(ph) * Y)
        lam, V = np.linalg.eigh(H)
        out.append((lam, V, (V * np.exp(-1j * lam * dt)) @ V.conj().T))
    return out, X, Y


def _dexp(lam, V, dH, dt):
    """Derivative of exp(−i·dt·H) along dH, via the eigenbasis divided differences."""
    e = np.exp(-1j * lam * dt)
    diff = lam[:, None] - lam[None, :]
    same = np.abs(diff) < 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(same, -1j * dt * e[:, None], (e[:, None] - e[None, :]) / np.where(same, 1, diff))
    return V @ ((V.conj().T @ dH @ V) * f) @ V.conj().T


def grape_fidelity_and_gradient(model: RydbergModel, target: np.ndarray, controls: np.ndarray,
                                dt: float):
    """Operator fidelity of the piecewise-constant controls and its exact gradient."""
    d = target.shape[0]
    slices, X, Y = _slice_unitaries(model, controls, dt)
    n = len(slices)
    fwd = [np.eye(d, dtype=complex)]
    for _, _, U in slices:
        fwd.append(U @ fwd[-1])
    U_tot = fwd[-1]
    g = np.trace(target.conj().T @ U_tot)
    fid = abs(g) ** 2 / d ** 2
    grad = np.zeros_like(controls, dtype=float)
    N = np.diag(model.number).astype(complex)
    back = target.conj().T
    for k in range(n - 1, -1, -1):
        lam, V, Uk = slices[k]
        om, ph, _ = controls[k]
        dHs = (0.5 * (math.cos(ph) * X + math.sin(ph) * Y),
               0.5 * om * (-math.sin(ph) * X + math.cos(ph) * Y),
               -N)
        for c, dH in enumerate(dHs):
            dU = _dexp(lam, V, dH, dt)
            dg = np.trace(back @ dU @ fwd[k])
            grad[k, c] = 2.0 * np.real(np.conj(g) * dg) / d ** 2
        back = back @ Uk
    return fid, grad


def grape_optimize(target: np.ndarray, system, initial: Optional[PulseSchedule] = None, *,
                   n_slices: int = 40, duration: float = 0.25, iterations: int = 200,
                   seed=None, limits: HardwareLimits = HardwareLimits(),
                   c6: float = C6_DEFAULT, truncation: str = "full") -> GrapeResult:
    """Maximize |Tr(W†U)|²/d² over per-slice (Ω, φ, Δ) with L-BFGS-B under hardware bounds.

    Starts from ``initial`` sampled at slice centres, or from seeded random
    controls. The returned schedule interpolates the optimized slice values
    linearly between slice centres; the reported fidelities refer to the
    piecewise-constant controls.
    """
    model = _model_for(system, c6, truncation)
    if target.shape != (model.dim, model.dim):
        raise ValidationError(f"target is {target.shape}, register needs {model.dim}x{model.dim}")
    if initial is not None:
        duration = initial.t_final
    dt = duration / n_slices
    centres = (np.arange(n_slices) + 0.5) * dt
    if initial is not None:
        x0 = np.column_stack([initial.omega(centres), initial.phi(centres), initial.delta(centres)])
    else:
        rng = np.random.default_rng(seed)
        x0 = np.column_stack([rng.uniform(0.2, 0.8, n_slices) * limits.omega_max,
                              rng.uniform(-math.pi, math.pi, n_slices),
                              rng.uniform(-0.1, 0.1, n_slices) * limits.delta_max])
    f0, _ = grape_fidelity_and_gradient(model, target, x0, dt)
    if iterations == 0:
        sched = initial if initial is not None else _controls_schedule(x0, dt)
        return GrapeResult(sched, x0, dt, [f0], f0)

    trace = [f0]

    def objective(flat):
        fid, grad = grape_fidelity_and_gradient(model, target, flat.reshape(-1, 3), dt)
        if not np.all(np.isfinite(grad)):
            raise OptimizationError("non-finite GRAPE gradient")
        return -fid, -grad.ravel()

    def record(xk):
        trace.append(-objective(xk)[0])

    bounds = [(0.0, limits.omega_max), (None, None), (-limits.delta_max, limits.delta_max)] * n_slices
    res = optimize.minimize(objective, x0.ravel(), jac=True, method="L-BFGS-B", bounds=bounds,
                            callback=record, options={"maxiter": iterations, "ftol": 1e-14,
                                                      "gtol": 1e-10})
    best = res.x.reshape(-1, 3)
    fid, _ = grape_fidelity_and_gradient(model, target, best, dt)
    slices, _, _ = _slice_unitaries(model, best, dt)
    U = np.eye(model.dim, dtype=complex)
    for _, _, Uk in slices:
        U = Uk @ U
    return GrapeResult(_controls_schedule(best, dt), best, dt, trace, fid, U)


def _controls_schedule(controls, dt) -> PulseSchedule:
    n = len(controls)
    tf = n * dt
    times = np.concatenate([[0.0], (np.arange(n) + 0.5) * dt, [tf]])

    def wave(col):
        vals = np.concatenate([[controls[0, col]], controls[:, col], [controls[-1, col]]])
        return Waveform(tuple(zip(times, vals)))

    return PulseSchedule(omega=wave(0), phi=wave(1), delta=wave(2), t_final=tf)


def rotation_target(L: int) -> np.ndarray:
    return ideal_y_rotation(L)
