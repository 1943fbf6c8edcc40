"""Fidelity estimation and Bayesian reweighting of simulated density matrices."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import (DEFAULT_DT, NoiseParams, NoiseRealization, apply_rotation,
                       draw_realization, evolve_open)
from .errors import DegeneratePosteriorError, ValidationError
from .hamiltonian import (QuantumState, ground_state, kink_indices, occupations, px_expectation,
                          px_masks)
from .lattice import C6_DEFAULT, PulseSchedule, ring_positions
from .measurement import ConfusionModel, ShotSet


def kl_divergence(f, t, epsilon: float = 0.0) -> float:
    """Σ f log(f / max(t, ε)); infinite when t vanishes on the support of f and ε = 0."""
    f = np.asarray(f, dtype=float)
    t = np.asarray(t, dtype=float)
    if f.shape != t.shape:
        raise ValidationError(f"distribution shapes differ: {f.shape} vs {t.shape}")
    if epsilon < 0:
        raise ValidationError("epsilon must be non-negative")
    mask = f > 0
    tt = np.maximum(t[mask], epsilon)
    if np.any(tt <= 0):
        return math.inf
    return float(max(np.sum(f[mask] * (np.log(f[mask]) - np.log(tt))), 0.0))


def log_likelihood(f, t, N: int, epsilon: Optional[float] = None) -> float:
    if N < 1:
        raise ValidationError("sample count must be at least 1")
    eps = 1.0 / (10.0 * N) if epsilon is None else epsilon
    return -N * kl_divergence(f, t, eps)


def likelihood(f, t, N: int, epsilon: Optional[float] = None) -> float:
    """exp(−N·D_KL(f‖t)); ε defaults to 1/(10N)."""
    return float(math.exp(log_likelihood(f, t, N, epsilon)))


@dataclass(frozen=True)
class FidelityEstimate:
    value: float
    out_of_range: bool

    def __float__(self):
        return self.value


def fidelity_from_counts(p: Sequence[float], px: float, L: int) -> FidelityEstimate:
    """(1/L)[Σ_k p_k + Tr(ρ𝒫ₓ)], flagged when sampling noise pushes it outside [0, 1]."""
    p = np.asarray(p, dtype=float)
    if len(p) != L:
        raise ValidationError(f"need {L} kink populations, got {len(p)}")
    if np.any(p < -1e-12) or p.sum() > 1 + 1e-9:
        raise ValidationError("kink populations must be non-negative and sum to at most 1")
    value = float((p.sum() + px) / L)
    return FidelityEstimate(value, not (0.0 <= value <= 1.0))


def kink_populations(dist: np.ndarray, L: int) -> np.ndarray:
    """p_k for k = 1..L from a distribution over all strings."""
    return np.asarray(dist)[kink_indices(L)]


def magnetization_distribution(dist: np.ndarray, L: int) -> np.ndarray:
    """Distribution of the number of r characters per string."""
    counts = occupations(L).sum(axis=1)
    return np.bincount(counts, weights=np.asarray(dist, dtype=float), minlength=L + 1)


def px_from_samples(shots: ShotSet):
    """Estimate of Tr(ρ𝒫ₓ) and its standard error from x-basis shots.

    Each shot contributes the sum of its even-length contiguous ±1 products,
    so the error accounts for correlations between overlapping strings.
    """
    if shots.basis != "x":
        raise ValidationError("𝒫ₓ needs x-basis shots")
    n = len(shots)
    if n == 0:
        raise ValidationError("empty shot set")
    spins = 1 - 2 * shots.bits().astype(np.int64)
    L = shots.L
    per_shot = np.zeros(n)
    for m in px_masks(L):
        sites = [i for i in range(L) if m >> i & 1]
        per_shot += np.prod(spins[:, sites], axis=1)
    err = float(per_shot.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return float(per_shot.mean()), err


def px_from_distribution(dist, L: int) -> float:
    """Tr(ρ𝒫ₓ) from an x-basis distribution over all strings (e.g. after mitigation)."""
    dist = np.asarray(dist, dtype=float)
    spins = 1 - 2 * occupations(L).astype(np.int64)
    total = np.zeros(len(dist))
    for m in px_masks(L):
        sites = [i for i in range(L) if m >> i & 1]
        total += np.prod(spins[:, sites], axis=1)
    return float(dist @ total)


def exact_fidelity(state: QuantumState) -> float:
    """Estimator evaluated on exact expectations of a state."""
    L = state.L
    p = state.probabilities()[kink_indices(L)]
    return float((p.sum() + px_expectation(state)) / L)


# --------------------------------------------------------------------------
# prior ensemble

@dataclass(frozen=True)
class EnsembleMember:
    seed: int
    realization: NoiseRealization
    rho: QuantumState
    z_dist: np.ndarray
    x_dists: tuple             # one predicted distribution per rotation experiment
    fidelity: float


@dataclass(frozen=True)
class PriorEnsemble:
    L: int
    members: tuple
    seed: Optional[int]
    labels: tuple = ()         # rotation experiment names

    def __len__(self):
        return len(self.members)

    @property
    def fidelities(self) -> np.ndarray:
        return np.array([m.fidelity for m in self.members])


def member_seeds(seed, Q: int) -> list:
    """Per-member seeds spawned from one root seed (stable under Q growth)."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(Q)]


def build_prior_ensemble(L: int, a: float, prep: PulseSchedule, rotations: Sequence[PulseSchedule],
                         noise: NoiseParams, Q: int, seed=None, *,
                         readout: Optional[ConfusionModel] = None, c6: float = C6_DEFAULT,
                         truncation: str = "full", dt: float = DEFAULT_DT,
                         labels: Sequence[str] = ()) -> PriorEnsemble:
    """Q noisy open-system preparations with predicted z and post-rotation readouts.

    The readout model defaults to the flip rates in ``noise``.
    """
    if Q < 1:
        raise ValidationError("ensemble needs Q >= 1")
    geometry = ring_positions(L, a)
    if readout is None:
        readout = ConfusionModel.uniform(L, noise.p_g_to_r, noise.p_r_to_g)
    rho0 = ground_state(L).as_density()
    members = []
    for s in member_seeds(seed, Q):
        real = draw_realization(geometry, noise, s)
        kw = dict(c6=c6, truncation=truncation, dt=dt, omega_scale=real.omega_scale,
                  delta_offset=real.delta_offset)
        rho = evolve_open(real.geometry, prep, rho0, noise.gamma, **kw).state
        z = readout.apply(rho.probabilities())
        xs = []
        for rot in rotations:
            after = apply_rotation(rho, rot, real.geometry, noise.gamma, **kw)
            xs.append(readout.apply(after.probabilities()))
        members.append(EnsembleMember(s, real, rho, z / z.sum(),
                                      tuple(x / x.sum() for x in xs), exact_fidelity(rho)))
    return PriorEnsemble(L, tuple(members), seed, tuple(labels))


# --------------------------------------------------------------------------
# posterior

@dataclass(frozen=True)
class PosteriorWeights:
    w: np.ndarray
    log_evidence: np.ndarray   # Σ_α log ℒ_j^(α) per member

    def __post_init__(self):
        if np.any(self.w < 0) or abs(self.w.sum() - 1.0) > 1e-12:
            raise ValidationError("posterior weights must be non-negative and sum to 1")


def posterior_weights(likelihoods, *, log: bool = False) -> PosteriorWeights:
    """Normalized products over experiments of a Q×M likelihood matrix (log-space)."""
    m = np.asarray(likelihoods, dtype=float)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2 or m.shape[0] < 1:
        raise ValidationError("likelihoods must form a Q×M matrix")
    if log:
        logs = m
    else:
        if np.any(m < 0):
            raise ValidationError("likelihoods must be non-negative")
        with np.errstate(divide="ignore"):
            logs = np.log(m)
    total = logs.sum(axis=1)
    top = total.max()
    if not np.isfinite(top):
        raise DegeneratePosteriorError("every ensemble member has zero likelihood")
    w = np.exp(total - top)
    w /= w.sum()
    return PosteriorWeights(w, total)


def ensemble_log_likelihoods(ensemble: PriorEnsemble, observed: Sequence[np.ndarray],
                             counts: Sequence[int], basis: str = "x",
                             epsilon: Optional[float] = None) -> np.ndarray:
    """Q×M log-likelihood matrix for observed post-rotation (or z) frequencies."""
    if basis == "x":
        preds = [m.x_dists for m in ensemble.members]
    elif basis == "z":
        preds = [(m.z_dist,) * len(observed) for m in ensemble.members]
    else:
        raise ValidationError(f"unknown basis {basis!r}")
    if any(len(p) != len(observed) for p in preds):
        raise ValidationError("observed experiments do not match the ensemble's rotations")
    return np.array([[log_likelihood(f, t, N, epsilon) for f, t, N in zip(observed, p, counts)]
                     for p in preds])


def posterior_fidelity(ensemble, w: PosteriorWeights):
    """Weighted mean and weighted standard deviation of the member fidelities."""
    fe = ensemble.fidelities if isinstance(ensemble, PriorEnsemble) else np.asarray(ensemble)
    weights = w.w if isinstance(w, PosteriorWeights) else np.asarray(w, dtype=float)
    if len(fe) != len(weights):
        raise ValidationError(f"{len(fe)} fidelities but {len(weights)} weights")
    mean = float(weights @ fe)
    spread = float(math.sqrt(max(weights @ (fe - mean) ** 2, 0.0)))
    return mean, spread


def prior_band(ensemble: PriorEnsemble):
    fe = ensemble.fidelities
    return float(fe.min()), float(fe.max())
