"""Closed and open-system time evolution under piecewise-linear schedules.

Each step applies exact exponentials of frozen Hamiltonians (Taylor series on
a Gershgorin-shifted generator, truncated adaptively at machine precision).
The default ``method="cfm4"`` is the fourth-order commutator-free Magnus
scheme (two exponentials per step at the Gauss points); ``"midpoint"`` is the
piecewise-constant second-order rule.

Local dephasing ``(γ/2)Σ(2nρn − {ρ, n})`` is diagonal in the z-basis: the
element ρ_ab decays at rate (γ/2)·|a ⊕ b|, where |·| counts differing bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import jv

from .errors import CapacityError, IntegrationError, ValidationError
from .hamiltonian import (QuantumState, RydbergModel, dihedral_sector, kink_superposition, occupations)
from .lattice import (C6_DEFAULT, PulseSchedule, RingGeometry, interaction_matrix,
                      perturb_positions)

DEFAULT_DT = 5e-3  # µs
DEFAULT_METHOD = "cfm4"
DENSE_OPEN_MAX_SITES = 9
TRAJECTORY_MAX_SITES = 13
_DENSE_STAGE_MAX_DIM = 128

# exp(-ih(B1 H1 + B2 H2)) is applied first, then exp(-ih(B2 H1 + B1 H2))
_CFM4_B1 = (3 + 2 * math.sqrt(3)) / 12
_CFM4_B2 = (3 - 2 * math.sqrt(3)) / 12
_GAUSS = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)


@dataclass(frozen=True)
class NoiseParams:
    gamma: float = 0.0            # dephasing rate, rad/µs
    sigma_pos: float = 0.0        # µm, per coordinate
    sigma_omega_rel: float = 0.0  # relative shot-to-shot Rabi fluctuation
    sigma_delta: float = 0.0      # rad/µs, shot-to-shot detuning offset
    p_g_to_r: float = 0.0         # readout flip probabilities
    p_r_to_g: float = 0.0

    def __post_init__(self):
        for name in ("gamma", "sigma_pos", "sigma_omega_rel", "sigma_delta"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        for name in ("p_g_to_r", "p_r_to_g"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must be a probability")


@dataclass(frozen=True)
class NoiseRealization:
    """One shot's frozen imperfections: register, global Rabi scale, detuning offset."""

    geometry: RingGeometry
    omega_scale: float = 1.0
    delta_offset: float = 0.0
    seed: Optional[int] = None


def draw_realization(geometry: RingGeometry, noise: NoiseParams, seed) -> NoiseRealization:
    rng = np.random.default_rng(seed)
    pos_seed, field_seed = rng.integers(0, 2 ** 63 - 1, size=2)
    g = geometry
    if noise.sigma_pos > 0:
        g = perturb_positions(geometry, noise.sigma_pos, noise.sigma_pos, seed=int(pos_seed))
    frng = np.random.default_rng(field_seed)
    scale = 1.0 + noise.sigma_omega_rel * frng.standard_normal()
    offset = noise.sigma_delta * frng.standard_normal()
    return NoiseRealization(g, max(scale, 0.0), offset, seed if isinstance(seed, int) else None)


@dataclass
class EvolutionResult:
    state: Optional[QuantumState]
    trajectory: list = field(default_factory=list)   # (t, state snapshot)
    norm_drift: float = 0.0
    steps: int = 0
    min_eigenvalue: Optional[float] = None
    members: list = field(default_factory=list)      # final pure trajectories (large L)


# --------------------------------------------------------------------------
# exponential kernel

def _expm_apply(apply, v, dt, lo, hi, tol=1e-15, max_terms=80):
    """exp(-i·dt·A)·v for Hermitian-dominated A with spectrum inside [lo, hi].

    ``apply`` may be non-Hermitian (jump terms, Liouvillians); the bounds then
    refer to the real part, and the imaginary part is assumed small.
    """
    c = 0.5 * (lo + hi)
    radius = 0.5 * (hi - lo) * abs(dt)
    nsub = max(1, int(math.ceil(radius / 2.0)))
    h = dt / nsub
    phase = np.exp(-1j * c * h)
    out = v
    for _ in range(nsub):
        term = out
        acc = out.copy()
        ref = np.linalg.norm(acc)
        for k in range(1, max_terms + 1):
            term = (-1j * h / k) * (apply(term) - c * term)
            acc += term
            if np.linalg.norm(term) <= tol * ref:
                break
        else:
            raise IntegrationError("Taylor series for the step exponential did not converge")
        out = phase * acc
    return out


def _chebyshev_expm_apply(apply, v, dt, lo, hi, tol=1e-15):
    """exp(-i·dt·A)·v for Hermitian A with spectrum inside [lo, hi] (Jacobi-Anger series)."""
    c = 0.5 * (lo + hi)
    r = 0.5 * (hi - lo)
    phase = np.exp(-1j * c * dt)
    rho = r * dt
    if rho < 1e-14:
        return phase * v
    kmax = int(rho + 30 + 3 * rho ** (1 / 3))
    coeffs = jv(np.arange(kmax + 1), rho)
    tail = np.flatnonzero((np.arange(kmax + 1) > rho) & (np.abs(coeffs) < tol))
    if not len(tail):
        raise IntegrationError("Chebyshev series for the step exponential did not converge")
    nterms = tail[0]

    def scaled(x):
        return (apply(x) - c * x) / r

    t_prev, t_cur = v, scaled(v)
    out = coeffs[0] * t_prev + (2 * (-1j) * coeffs[1]) * t_cur
    for k in range(2, nterms):
        t_prev, t_cur = t_cur, 2 * scaled(t_cur) - t_prev
        out += (2 * (-1j) ** k * coeffs[k]) * t_cur
    return phase * out


def _step_grid(schedule: PulseSchedule, dt: float) -> np.ndarray:
    """Step boundaries that never straddle a schedule knot."""
    knots = schedule.knots()
    grid = [0.0]
    for t0, t1 in zip(knots[:-1], knots[1:]):
        n = max(1, int(math.ceil((t1 - t0) / dt - 1e-9)))
        grid.extend(np.linspace(t0, t1, n + 1)[1:])
    return np.array(grid)


class _Generator:
    """Time-dependent Hamiltonian H(t) built from a model, schedule and frozen noise."""

    def __init__(self, model: RydbergModel, schedule: PulseSchedule,
                 omega_scale: float = 1.0, delta_offset=0.0, extra_diag=None):
        self.model = model
        self.schedule = schedule
        self.omega_scale = omega_scale
        self.delta_offset = np.asarray(delta_offset, dtype=float)
        self.extra_diag = extra_diag
        self.hermitian = extra_diag is None or not np.iscomplexobj(extra_diag)

    def _expm(self, apply, v, dt, lo, hi):
        if self.hermitian:
            return _chebyshev_expm_apply(apply, v, dt, lo, hi)
        return _expm_apply(apply, v, dt, lo, hi)

    def fields(self, t):
        om, de, ph = self.schedule.at(t)
        return om * self.omega_scale, de + self.delta_offset, ph

    def diag(self, delta):
        m = self.model
        if np.ndim(delta) == 0:
            d = m.interaction - float(delta) * m.number
        else:
            d = m.interaction[:, None] - m.number[:, None] * np.asarray(delta)[None, :]
        if self.extra_diag is not None:
            d = d + (self.extra_diag if d.ndim == 1 else self.extra_diag[:, None])
        return d

    def parts(self, t):
        om, de, ph = self.fields(t)
        return om, ph, self.diag(de)

    def step(self, v, t0, t1, method):
        m = self.model
        dt = t1 - t0
        if method == "midpoint":
            om, ph, d = self.parts(0.5 * (t0 + t1))
            lo, hi = m.spectral_bounds(om, d)
            return self._expm(lambda x: m.apply(x, om, None, ph, diag=d), v, dt, lo, hi)
        if method == "cfm4":
            om1, ph1, d1 = self.parts(t0 + _GAUSS[0] * dt)
            om2, ph2, d2 = self.parts(t0 + _GAUSS[1] * dt)
            for (wa, wb) in ((_CFM4_B1, _CFM4_B2), (_CFM4_B2, _CFM4_B1)):
                d = wa * d1 + wb * d2
                if ph1 == ph2:
                    om = wa * om1 + wb * om2

                    def apply(x, d=d, om=om):
                        return m.apply(x, om, None, ph1, diag=d)
                else:
                    zero = np.zeros_like(d)

                    def apply(x, d=d, wa=wa, wb=wb, zero=zero):
                        return (m.apply(x, wa * om1, None, ph1, diag=d)
                                + m.apply(x, wb * om2, None, ph2, diag=zero))

                lo, hi = m.spectral_bounds(abs(wa * om1) + abs(wb * om2), d)
                v = self._expm(apply, v, dt, lo, hi)
            return v
        raise ValueError(f"unknown integration method {method!r}")


def _model_for(geometry_or_U, c6=C6_DEFAULT, truncation="full", symmetric=False,
               omega_weights=1.0, detuning_offsets=0.0) -> RydbergModel:
    if isinstance(geometry_or_U, RydbergModel):
        return geometry_or_U
    if isinstance(geometry_or_U, RingGeometry):
        U = interaction_matrix(geometry_or_U, c6, truncation)
    else:
        U = np.asarray(geometry_or_U, dtype=float)
    return RydbergModel(U, omega_weights, detuning_offsets, symmetric=symmetric)


# --------------------------------------------------------------------------
# closed evolution

def evolve_closed(system, schedule: PulseSchedule, psi0: QuantumState, *,
                  dt: float = DEFAULT_DT, method: str = DEFAULT_METHOD, tol: float = 1e-8,
                  c6: float = C6_DEFAULT, truncation: str = "full",
                  omega_scale: float = 1.0, delta_offset=0.0,
                  use_symmetry="auto", snapshots: int = 0) -> EvolutionResult:
    """Integrate i dψ/dt = H(t)ψ over [0, t_F].

    ``system`` is a RingGeometry, an interaction matrix or a prepared
    RydbergModel. With ``use_symmetry="auto"`` an ideal ring with uniform
    fields and a symmetric initial state is propagated in the dihedral sector.
    The final norm drift is reported and must stay within ``tol``.
    """
    if psi0.kind != "pure":
        raise ValidationError("closed evolution needs a pure initial state")
    psi0.check(1e-9)
    model = _model_for(system, c6, truncation)
    if use_symmetry and model.sector is None and np.ndim(delta_offset) == 0:
        sector_ok = model.ring_symmetric() and dihedral_sector(model.L).contains(psi0.data)
        if sector_ok or use_symmetry is True:
            if not sector_ok:
                raise ValidationError("initial state or register is not ring-symmetric")
            model = RydbergModel(model.U, model.omega_weights, model.detuning_offsets,
                                 symmetric=True)
    sector = model.sector
    v = sector.project(psi0.data) if sector is not None else psi0.data.copy()
    gen = _Generator(model, schedule, omega_scale, delta_offset)
    grid = _step_grid(schedule, dt)
    snap_every = max(1, (len(grid) - 1) // snapshots) if snapshots else 0
    traj = []
    for i, (t0, t1) in enumerate(zip(grid[:-1], grid[1:])):
        v = gen.step(v, t0, t1, method)
        if snap_every and (i + 1) % snap_every == 0:
            traj.append((float(t1), _full(sector, v, psi0.L)))
    drift = abs(np.linalg.norm(v) - 1.0)
    if drift > tol:
        raise IntegrationError(f"norm drift {drift:.2e} exceeds tolerance {tol:.1e}")
    return EvolutionResult(_full(sector, v, psi0.L), traj, drift, len(grid) - 1)


def _full(sector, v, L) -> QuantumState:
    vec = sector.embed(v) if sector is not None else v
    return QuantumState("pure", np.asarray(vec, dtype=complex), L)


def evolve_closed_batch(model: RydbergModel, schedules, psi0: np.ndarray, *,
                        dt: float = DEFAULT_DT, method: str = DEFAULT_METHOD) -> np.ndarray:
    """Propagate one initial vector under several schedules that differ only in detuning.

    All schedules must share Rabi/phase waveforms and breakpoint times; the
    columns of the returned array are the final states (in the model's space).
    """
    ref = schedules[0]
    for s in schedules[1:]:
        if s.omega != ref.omega or s.phi != ref.phi or not np.array_equal(s.knots(), ref.knots()):
            raise ValidationError("batched schedules may differ only in detuning values")
    grid = _step_grid(ref, dt)
    V = np.repeat(np.asarray(psi0, dtype=complex)[:, None], len(schedules), axis=1)
    gens = _BatchGenerator(model, schedules)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        V = gens.step(V, t0, t1, method)
    return V


class _BatchGenerator(_Generator):
    def __init__(self, model, schedules):
        super().__init__(model, schedules[0])
        self.schedules = schedules

    def fields(self, t):
        om, _, ph = self.schedule.at(t)
        return om, np.array([s.delta(t) for s in self.schedules]), ph


# --------------------------------------------------------------------------
# fidelity with the kink superposition

def preparation_fidelity(result, L: Optional[int] = None) -> float:
    state = result.state if isinstance(result, EvolutionResult) else result
    L = state.L if L is None else L
    return state.overlap(kink_superposition(L))


def operator_fidelity(U: np.ndarray, V: np.ndarray, check: bool = True) -> float:
    """|Tr(U†V)|² / d² (global-phase invariant)."""
    U, V = np.asarray(U), np.asarray(V)
    if U.shape != V.shape or U.shape[0] != U.shape[1]:
        raise ValidationError(f"operator shapes differ: {U.shape} vs {V.shape}")
    d = U.shape[0]
    if check:
        eye = np.eye(d)
        for name, X in (("U", U), ("V", V)):
            if np.abs(X.conj().T @ X - eye).max() > 1e-8:
                raise ValidationError(f"{name} is not unitary")
    return float(abs(np.trace(U.conj().T @ V)) ** 2 / d ** 2)


# --------------------------------------------------------------------------
# open evolution

def hamming_table(L: int) -> np.ndarray:
    occ = occupations(L).astype(np.int16)
    return np.abs(occ[:, None, :] - occ[None, :, :]).sum(axis=-1).astype(float)


def evolve_open(system, schedule: PulseSchedule, rho0: QuantumState, gamma: float, *,
                dt: float = DEFAULT_DT, method: str = DEFAULT_METHOD, tol: float = 1e-8,
                c6: float = C6_DEFAULT, truncation: str = "full",
                omega_scale: float = 1.0, delta_offset=0.0,
                snapshots: int = 0, check_positivity: bool = False) -> EvolutionResult:
    """Lindblad evolution with local dephasing at rate ``gamma`` (dense, L ≤ 9)."""
    if gamma < 0:
        raise ValidationError("dephasing rate must be non-negative")
    rho0 = rho0.as_density()
    rho0.check(1e-9)
    if rho0.L > DENSE_OPEN_MAX_SITES:
        raise CapacityError(f"dense open-system evolution is limited to L <= {DENSE_OPEN_MAX_SITES}; "
                            "use evolve_trajectories")
    model = _model_for(system, c6, truncation)
    gen = _Generator(model, schedule, omega_scale, delta_offset)
    decay = 0.5 * gamma * hamming_table(rho0.L)
    rho = rho0.data.copy()
    grid = _step_grid(schedule, dt)
    snap_every = max(1, (len(grid) - 1) // snapshots) if snapshots else 0
    traj, min_eig = [], None
    for i, (t0, t1) in enumerate(zip(grid[:-1], grid[1:])):
        rho = _liouville_step(gen, rho, decay, t0, t1, method)
        if check_positivity:
            e = float(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min())
            min_eig = e if min_eig is None else min(min_eig, e)
        if snap_every and (i + 1) % snap_every == 0:
            traj.append((float(t1), QuantumState("density", rho.copy(), rho0.L)))
    drift = abs(np.trace(rho) - 1.0)
    if drift > tol:
        raise IntegrationError(f"trace drift {drift:.2e} exceeds tolerance {tol:.1e}")
    rho = 0.5 * (rho + rho.conj().T)
    return EvolutionResult(QuantumState("density", rho, rho0.L), traj, float(drift),
                           len(grid) - 1, min_eig)


def _liouville_step(gen: _Generator, rho, decay, t0, t1, method):
    m = gen.model
    dt = t1 - t0
    if method == "midpoint":
        stages = [(1.0, 0.5 * (t0 + t1), 0.0, None)]
    elif method == "cfm4":
        stages = [(_CFM4_B1, t0 + _GAUSS[0] * dt, _CFM4_B2, t0 + _GAUSS[1] * dt),
                  (_CFM4_B2, t0 + _GAUSS[0] * dt, _CFM4_B1, t0 + _GAUSS[1] * dt)]
    else:
        raise ValueError(f"unknown integration method {method!r}")
    for wa, ta, wb, tb in stages:
        om_a, ph_a, d_a = gen.parts(ta)
        if tb is not None:
            om_b, ph_b, d_b = gen.parts(tb)
            d = wa * d_a + wb * d_b
        else:
            om_b, ph_b, d = 0.0, 0.0, wa * d_a
        zero = np.zeros_like(d)
        damp = 1j * (wa + wb) * decay

        if m.dim <= _DENSE_STAGE_MAX_DIM:
            H = np.diag(d) + m.dense_drive(wa * om_a, ph_a)
            if wb:
                H += m.dense_drive(wb * om_b, ph_b)

            def gen_apply(x, H=H, damp=damp):
                return H @ x - x @ H - damp * x
        else:
            def ham(x, d=d, om_a=om_a, ph_a=ph_a, om_b=om_b, ph_b=ph_b, wa=wa, wb=wb):
                out = m.apply(x, wa * om_a, None, ph_a, diag=d)
                if wb:
                    out = out + m.apply(x, wb * om_b, None, ph_b, diag=zero)
                return out

            # i·L(ρ) = [H, ρ] − i·decay∘ρ, so exp(dt·L) = exp(−i·dt·(i·L))
            def gen_apply(x, ham=ham, damp=damp):
                return ham(x) - ham(x.conj().T).conj().T - damp * x

        lo, hi = m.spectral_bounds(abs(wa * om_a) + abs(wb * om_b), d)
        width = hi - lo
        rho = _expm_apply(gen_apply, rho, dt, -width, width)
    return rho


def evolve_trajectories(system, schedule: PulseSchedule, psi0: QuantumState, gamma: float,
                        n_traj: int, seed=None, *, dt: float = DEFAULT_DT,
                        c6: float = C6_DEFAULT, truncation: str = "full",
                        omega_scale: float = 1.0, delta_offset=0.0) -> EvolutionResult:
    """Quantum-jump unravelling of the dephasing master equation (L ≤ 13).

    First-order jump/no-jump per step: the non-Hermitian step shrinks the norm
    by the jump probability; on a jump, site ℓ is projected with probability
    ∝ ⟨n_ℓ⟩. Returns the trajectory-averaged density matrix for L ≤ 9 and
    the final pure trajectories (``members``) above that.
    """
    if psi0.kind != "pure":
        raise ValidationError("trajectories start from a pure state")
    L = psi0.L
    if L > TRAJECTORY_MAX_SITES:
        raise CapacityError(f"trajectory evolution is limited to L <= {TRAJECTORY_MAX_SITES}")
    if n_traj < 1:
        raise ValidationError("need at least one trajectory")
    model = _model_for(system, c6, truncation)
    occ = occupations(L).astype(float)
    gen = _Generator(model, schedule, omega_scale, delta_offset,
                     extra_diag=-0.5j * gamma * model.number)
    grid = _step_grid(schedule, dt)
    rng = np.random.default_rng(seed)
    average = L <= DENSE_OPEN_MAX_SITES
    rho = np.zeros((psi0.dim, psi0.dim), dtype=complex) if average else None
    finals = []
    for _ in range(n_traj):
        psi = psi0.data.copy()
        for t0, t1 in zip(grid[:-1], grid[1:]):
            pop = np.abs(psi) ** 2
            new = gen.step(psi, t0, t1, "midpoint")
            p_jump = max(0.0, 1.0 - float(np.vdot(new, new).real))
            if rng.random() < p_jump:
                site_w = pop @ occ
                site = rng.choice(L, p=site_w / site_w.sum())
                psi = psi * occ[:, site]
            else:
                psi = new
            psi = psi / np.linalg.norm(psi)
        if average:
            rho += np.outer(psi, psi.conj())
        else:
            finals.append(QuantumState("pure", psi, L))
    if not average:
        # the averaged density matrix would not fit in memory; keep the members
        return EvolutionResult(None, [], 0.0, len(grid) - 1, members=finals)
    rho /= n_traj
    return EvolutionResult(QuantumState("density", rho, L), [], abs(np.trace(rho) - 1.0),
                           len(grid) - 1)


# --------------------------------------------------------------------------
# rotation sequence

def apply_rotation(state: QuantumState, rotation: PulseSchedule, system, gamma: float = 0.0, *,
                   dt: float = DEFAULT_DT, **kwargs) -> QuantumState:
    """Evolve under the full interacting Hamiltonian during the basis-change pulse."""
    if rotation.t_final == 0:
        return state
    if gamma > 0 or state.kind == "density":
        return evolve_open(system, rotation, state.as_density(), gamma, dt=dt, **kwargs).state
    return evolve_closed(system, rotation, state, dt=dt, use_symmetry=False, **kwargs).state


def ideal_y_rotation(L: int, angle: float = math.pi / 2) -> np.ndarray:
    """exp(−i(angle/2)Σσʸ) on L sites (angle π/2 is the target basis change)."""
    c, s = math.cos(angle / 2), math.sin(angle / 2)
    # σʸ in the (g, r) = (↓, ↑) ordering is [[0, i], [-i, 0]]
    single = np.array([[c, s], [-s, c]], dtype=complex)
    out = np.array([[1.0 + 0j]])
    for _ in range(L):
        out = np.kron(single, out)
    return out


def propagator(system, schedule: PulseSchedule, *, dt: float = DEFAULT_DT,
               method: str = DEFAULT_METHOD, **kwargs) -> np.ndarray:
    """Full unitary of a schedule (columns = evolved basis states)."""
    model = _model_for(system, kwargs.pop("c6", C6_DEFAULT), kwargs.pop("truncation", "full"))
    gen = _Generator(model, schedule, **kwargs)
    V = np.eye(model.dim, dtype=complex)
    grid = _step_grid(schedule, dt)
    for t0, t1 in zip(grid[:-1], grid[1:]):
        V = gen.step(V, t0, t1, method)
    return V
