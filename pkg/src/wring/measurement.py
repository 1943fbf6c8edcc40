"""Shot data: projective sampling, readout noise, mitigation, post-selection,
resonance calibration and bootstrap errors.

Strings use the package convention: character i is site i, ``g`` ground and
``r`` Rydberg. In the x-basis, ``g`` records the +1 eigenvalue of σˣ.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize, stats

from .errors import FitError, SingularModelError, ValidationError
from .hamiltonian import (QuantumState, bitstring_to_index, normalize_bitstring, occupations)

BASES = ("z", "x")
P_G_TO_R_DEFAULT = 0.01
P_R_TO_G_DEFAULT = 0.08

# exp(-i(π/4)σʸ) on one site, (g, r) ordering: maps the σˣ = +1 state onto g
_TO_X = np.array([[1.0, 1.0], [-1.0, 1.0]], dtype=complex) / math.sqrt(2.0)


@dataclass(frozen=True)
class ShotSet:
    L: int
    basis: str
    pre: tuple
    post: tuple
    ids: tuple = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.basis not in BASES:
            raise ValidationError(f"unknown basis {self.basis!r}")
        pre = tuple(normalize_bitstring(s, self.L) for s in self.pre)
        post = tuple(normalize_bitstring(s, self.L) for s in self.post)
        if len(pre) != len(post):
            raise ValidationError("pre and post strings must pair up")
        ids = tuple(self.ids) if self.ids else tuple(range(len(post)))
        if len(ids) != len(post):
            raise ValidationError("one shot id per shot is required")
        object.__setattr__(self, "pre", pre)
        object.__setattr__(self, "post", post)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.post)

    def counts(self) -> Counter:
        return Counter(self.post)

    def indices(self) -> np.ndarray:
        return np.array([bitstring_to_index(s) for s in self.post], dtype=np.int64)

    def distribution(self) -> np.ndarray:
        """Observed frequencies over all 2^L strings."""
        if not self.post:
            raise ValidationError("empty shot set")
        hist = np.bincount(self.indices(), minlength=1 << self.L).astype(float)
        return hist / hist.sum()

    def bits(self) -> np.ndarray:
        """(n, L) array of 0/1 outcomes (1 = r)."""
        return np.array([[c == "r" for c in s] for s in self.post], dtype=np.int8).reshape(-1, self.L)


@dataclass(frozen=True)
class ConfusionModel:
    """Independent per-site flips: p_g_to_r[i] = P(read r | true g) at site i."""

    p_g_to_r: np.ndarray
    p_r_to_g: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.p_g_to_r, dtype=float))
        b = np.atleast_1d(np.asarray(self.p_r_to_g, dtype=float))
        if a.shape != b.shape or a.ndim != 1:
            raise ValidationError("flip probabilities must be per-site vectors of equal length")
        if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
            raise ValidationError("flip probabilities must lie in [0, 1]")
        object.__setattr__(self, "p_g_to_r", a)
        object.__setattr__(self, "p_r_to_g", b)

    @classmethod
    def uniform(cls, L: int, p_g_to_r: float = P_G_TO_R_DEFAULT,
                p_r_to_g: float = P_R_TO_G_DEFAULT) -> "ConfusionModel":
        return cls(np.full(L, p_g_to_r), np.full(L, p_r_to_g))

    @property
    def L(self) -> int:
        return len(self.p_g_to_r)

    def site_matrix(self, i: int) -> np.ndarray:
        """Column-stochastic 2×2 map, columns = true (g, r), rows = observed."""
        a, b = self.p_g_to_r[i], self.p_r_to_g[i]
        return np.array([[1 - a, b], [a, 1 - b]])

    def apply(self, dist: np.ndarray) -> np.ndarray:
        """Forward map of a distribution over 2^L strings."""
        return _apply_sitewise(dist, [self.site_matrix(i) for i in range(self.L)])


def _apply_sitewise(vec: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply mats[i] on site i of a 2^L vector (site i is bit i)."""
    L = len(mats)
    t = np.asarray(vec).reshape((2,) * L)
    for i, M in enumerate(mats):
        ax = L - 1 - i
        t = np.moveaxis(np.tensordot(M, t, axes=([1], [ax])), 0, ax)
    return t.reshape(-1)


def rotate_to_x(state: QuantumState) -> QuantumState:
    """Exact single-site basis change so that z-readout measures σˣ."""
    mats = [_TO_X] * state.L
    if state.kind == "pure":
        return QuantumState("pure", _apply_sitewise(state.data, mats), state.L)
    dim = state.dim
    rho = np.stack([_apply_sitewise(col, mats) for col in state.data.T], axis=1)
    rho = np.stack([_apply_sitewise(row, [m.conj() for m in mats]) for row in rho], axis=0)
    return QuantumState("density", rho.reshape(dim, dim), state.L)


def _strings(idx: np.ndarray, L: int) -> tuple:
    chars = np.where(occupations(L)[idx].astype(bool), "r", "g")
    return tuple("".join(row) for row in chars)


def sample_bitstrings(state: QuantumState, basis: str, n: int, seed=None, *,
                      rotated: bool = False, metadata: Optional[dict] = None) -> ShotSet:
    """Draw ``n`` Born-rule shots.

    For ``basis="x"`` the state is first mapped by the exact single-site basis
    change, unless ``rotated`` says it already went through a rotation pulse.
    """
    if n < 1:
        raise ValidationError("need at least one shot")
    if basis not in BASES:
        raise ValidationError(f"unknown basis {basis!r}")
    state.check(1e-6)
    if basis == "x" and not rotated:
        state = rotate_to_x(state)
    p = state.probabilities()
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(p), size=n, p=p)
    L = state.L
    meta = {"seed": seed, **(metadata or {})}
    return ShotSet(L, basis, ("g" * L,) * n, _strings(idx, L), metadata=meta)


def _flip(strings: tuple, cm: ConfusionModel, rng) -> tuple:
    if not strings:
        return strings
    L = cm.L
    bits = np.array([[c == "r" for c in s] for s in strings], dtype=bool)
    u = rng.random(bits.shape)
    flip = np.where(bits, u < cm.p_r_to_g, u < cm.p_g_to_r)
    out = np.where(bits ^ flip, "r", "g")
    return tuple("".join(row) for row in out.reshape(-1, L))


def apply_readout_noise(shots: ShotSet, cm: ConfusionModel, seed=None, *,
                        include_pre: bool = True) -> ShotSet:
    """Flip every character independently with its directional probability.

    The pre-sequence image is read out by the same imperfect detector, so it
    is corrupted too unless ``include_pre`` is false.
    """
    if cm.L != shots.L:
        raise ValidationError(f"confusion model has {cm.L} sites, shots have {shots.L}")
    rng = np.random.default_rng(seed)
    post = _flip(shots.post, cm, rng)
    pre = _flip(shots.pre, cm, rng) if include_pre else shots.pre
    return replace(shots, pre=pre, post=post)


@dataclass(frozen=True)
class MitigationResult:
    distribution: np.ndarray   # non-negative, sums to 1
    quasi: np.ndarray          # raw inverse-map output
    clipped_mass: float        # total negative weight removed


def _simplex_projection(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def mitigate_readout(freq, cm: ConfusionModel, method: str = "clip") -> MitigationResult:
    """Invert the tensor-product confusion map site by site.

    ``method="clip"`` zeroes negative quasi-probabilities and renormalizes;
    ``"project"`` takes the Euclidean projection onto the simplex.
    """
    if isinstance(freq, dict):
        vec = np.zeros(1 << cm.L)
        for s, p in freq.items():
            vec[bitstring_to_index(normalize_bitstring(s, cm.L))] += p
        freq = vec
    freq = np.asarray(freq, dtype=float)
    if freq.shape != (1 << cm.L,):
        raise ValidationError(f"distribution needs {1 << cm.L} entries, got {freq.shape}")
    if abs(freq.sum() - 1.0) > 1e-9:
        raise ValidationError(f"distribution sums to {freq.sum():.12g}, not 1")
    inverses = []
    for i in range(cm.L):
        M = cm.site_matrix(i)
        det = 1.0 - cm.p_g_to_r[i] - cm.p_r_to_g[i]
        if abs(det) < 1e-12:
            raise SingularModelError(f"confusion matrix at site {i} is singular")
        inverses.append(np.linalg.inv(M))
    quasi = _apply_sitewise(freq, inverses)
    neg = float(-quasi[quasi < 0].sum())
    if method == "clip":
        dist = np.clip(quasi, 0.0, None)
        dist = dist / dist.sum()
    elif method == "project":
        dist = _simplex_projection(quasi)
    else:
        raise ValidationError(f"unknown mitigation method {method!r}")
    return MitigationResult(dist, quasi, neg)


def postselect_shots(shots: ShotSet, required: Optional[str] = None) -> ShotSet:
    """Keep shots whose pre-sequence image equals ``required`` (all-ground by default)."""
    required = "g" * shots.L if required is None else normalize_bitstring(required, shots.L)
    keep = [k for k, s in enumerate(shots.pre) if s == required]
    if not keep:
        warnings.warn("post-selection discarded every shot", RuntimeWarning, stacklevel=2)
    meta = dict(shots.metadata)
    meta.update(retained=len(keep), discarded=len(shots) - len(keep))
    return ShotSet(shots.L, shots.basis, tuple(shots.pre[k] for k in keep),
                   tuple(shots.post[k] for k in keep), tuple(shots.ids[k] for k in keep), meta)


# --------------------------------------------------------------------------
# single-atom resonance calibration

def resonance_curve(delta, omega: float, delta_offset: float, t_pi: float):
    det = np.asarray(delta, dtype=float) - delta_offset
    w2 = omega ** 2 + det ** 2
    return omega ** 2 / w2 * np.sin(np.sqrt(w2) * t_pi / 2) ** 2


@dataclass(frozen=True)
class CalibrationFit:
    omega: float
    delta_offset: float
    residual: float            # root-mean-square residual
    omega_stderr: float
    delta_offset_stderr: float


def calibration_fit(data: Sequence, t_pi: float, omega_guess: Optional[float] = None
                    ) -> CalibrationFit:
    """Fit P_e(Δ) over (Ω, Δ_offset).

    Starts from Ω = π/t_π and the detuning of the largest measured P_e.
    """
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 5:
        raise ValidationError("calibration needs at least five (Δ, P_e) points")
    if t_pi <= 0:
        raise ValidationError("t_pi must be positive")
    d, pe = arr[:, 0], arr[:, 1]
    peak = d[np.argmax(pe)]
    if not d.min() < peak < d.max():
        raise ValidationError("calibration data do not span the resonance")
    x0 = [math.pi / t_pi if omega_guess is None else omega_guess, peak]

    def resid(x):
        return resonance_curve(d, x[0], x[1], t_pi) - pe

    res = optimize.least_squares(resid, x0, x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    diag = {"status": int(res.status), "message": res.message, "nfev": int(res.nfev),
            "x": res.x.tolist(), "cost": float(res.cost)}
    if not res.success or not np.all(np.isfinite(res.x)):
        raise FitError("calibration fit did not converge", diag)
    dof = max(len(d) - 2, 1)
    s2 = 2 * res.cost / dof
    try:
        cov = s2 * np.linalg.inv(res.jac.T @ res.jac)
    except np.linalg.LinAlgError as exc:
        raise FitError("calibration Jacobian is singular", diag) from exc
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CalibrationFit(float(abs(res.x[0])), float(res.x[1]),
                          float(math.sqrt(2 * res.cost / len(d))), float(err[0]), float(err[1]))


# --------------------------------------------------------------------------

def bootstrap_stat(samples, statistic: Callable = np.mean, B: int = 1000, seed=None):
    """(mean, standard error) of ``statistic`` over ``B`` resamples with replacement."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ValidationError("bootstrap needs at least one sample")
    if B < 100:
        raise ValidationError("bootstrap needs B >= 100 resamples")
    if np.all(samples == samples.flat[0]):
        value = float(statistic(samples))
        return value, 0.0
    res = stats.bootstrap((samples,), statistic, n_resamples=B, vectorized=False,
                          method="percentile", random_state=np.random.default_rng(seed))
    dist = np.asarray(res.bootstrap_distribution)
    return float(dist.mean()), float(res.standard_error)
