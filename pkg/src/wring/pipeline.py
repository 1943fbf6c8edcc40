"""Table builders shared by the command-line stages and the report."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .fileio import Table
from .hamiltonian import kink_indices, kink_strings
from .inference import (PosteriorWeights, PriorEnsemble, kl_divergence, magnetization_distribution,
                        posterior_fidelity, prior_band)
from .measurement import ConfusionModel, ShotSet, bootstrap_stat, mitigate_readout


MITIGATION_METHODS = ("linear", "clip", "project")


def mitigated_distribution(freq: np.ndarray, cm: ConfusionModel, method: str = "linear"):
    """Readout-corrected frequencies and the clipped mass.

    ``linear`` keeps the raw inverse-map output. Bucket sums and the fidelity
    estimator are linear in the distribution, so this is the unbiased choice;
    clipping at ~10³ shots over 2^L strings pushes mass into sparse buckets.
    """
    if method not in MITIGATION_METHODS:
        raise ValidationError(f"mitigation method must be one of {MITIGATION_METHODS}")
    res = mitigate_readout(freq, cm, "clip" if method == "linear" else method)
    return (res.quasi if method == "linear" else res.distribution), res.clipped_mass


def population_table(shots: ShotSet, cm: Optional[ConfusionModel] = None, B: int = 200,
                     seed: int = 0, method: str = "linear") -> Table:
    """Kink populations, raw and readout-mitigated, with bootstrap errors.

    Rows: the L kink strings then an ``other`` bucket for every remaining string.
    """
    L = shots.L
    idx = shots.indices()
    kinks = kink_indices(L)
    dim = 1 << L

    def hist(sample):
        h = np.bincount(sample, minlength=dim).astype(float)
        return h / h.sum()

    def mitigated(sample):
        return mitigated_distribution(hist(sample), cm, method)[0]

    def bucket_stats(fn):
        def stat(k):
            if k < L:
                return lambda s: fn(s.astype(np.int64))[kinks[k]]
            return lambda s: 1.0 - fn(s.astype(np.int64))[kinks].sum()
        return stat

    raw_stat = bucket_stats(hist)
    mit_stat = bucket_stats(mitigated) if cm is not None else None
    raw_full = hist(idx)
    mit_full, clipped = mitigated_distribution(raw_full, cm, method) if cm is not None else (None, 0.0)
    t = Table("populations", ["k [1]", "string [1]", "p_raw [1]", "p_raw_err [1]",
                              "p_mitigated [1]", "p_mitigated_err [1]", "reference [1]"])
    labels = kink_strings(L) + ["other"]
    for k, label in enumerate(labels):
        if k < L:
            p_raw = raw_full[kinks[k]]
            p_mit = mit_full[kinks[k]] if mit_full is not None else float("nan")
            ref = 1.0 / L
        else:
            p_raw = 1.0 - raw_full[kinks].sum()
            p_mit = 1.0 - mit_full[kinks].sum() if mit_full is not None else float("nan")
            ref = 0.0
        _, e_raw = bootstrap_stat(idx, raw_stat(k), B=B, seed=seed)
        e_mit = bootstrap_stat(idx, mit_stat(k), B=B, seed=seed)[1] if mit_stat else float("nan")
        t.add(k + 1 if k < L else 0, label, float(p_raw), e_raw, float(p_mit), e_mit, ref)
    t.notes.append(f"shots={len(shots)}")
    if cm is not None:
        t.notes.append(f"mitigation={method} clipped_mass={clipped:.6g}")
    return t


def kl_table(observed: Sequence[np.ndarray], counts: Sequence[int], predicted: Sequence[np.ndarray],
             labels: Sequence[str], L: int, epsilon: Optional[float] = None) -> Table:
    """Bit-string and magnetization KL divergences between data and prediction."""
    t = Table("kl", ["experiment [1]", "shots [1]", "kl_bitstring [nat]", "kl_magnetization [nat]"])
    for f, n, p, lab in zip(observed, counts, predicted, labels):
        eps = 1.0 / (10.0 * n) if epsilon is None else epsilon
        t.add(lab, int(n), kl_divergence(f, p, eps),
              kl_divergence(magnetization_distribution(f, L), magnetization_distribution(p, L), eps))
    return t


def fidelity_table(ensemble: PriorEnsemble, weights: Optional[PosteriorWeights],
                   estimate: Optional[float] = None) -> Table:
    lo, hi = prior_band(ensemble)
    fe = ensemble.fidelities
    t = Table("fidelity", ["L [1]", "prior_min [1]", "prior_max [1]", "prior_mean [1]",
                           "prior_spread [1]", "posterior [1]", "posterior_spread [1]",
                           "direct_estimate [1]", "floor_1_over_L [1]"])
    prior_mean, prior_spread = posterior_fidelity(fe, np.full(len(fe), 1.0 / len(fe)))
    post, spread = posterior_fidelity(fe, weights) if weights is not None else (float("nan"),) * 2
    t.add(ensemble.L, lo, hi, prior_mean, prior_spread, post, spread,
          float("nan") if estimate is None else estimate, 1.0 / ensemble.L)
    return t


def member_table(ensemble: PriorEnsemble, weights: Optional[PosteriorWeights] = None) -> Table:
    t = Table("members", ["j [1]", "seed [1]", "F_e [1]", "w [1]", "omega_scale [1]",
                          "delta_offset [rad/us]"])
    w = weights.w if weights is not None else np.full(len(ensemble), 1.0 / len(ensemble))
    for j, (m, wj) in enumerate(zip(ensemble.members, w)):
        t.add(j, m.seed, m.fidelity, float(wj), m.realization.omega_scale,
              m.realization.delta_offset)
    return t


def predicted_mixture(ensemble: PriorEnsemble, weights: Optional[PosteriorWeights], basis: str,
                      experiment: int = 0) -> np.ndarray:
    """Weighted average of the members' predicted distributions."""
    w = weights.w if weights is not None else np.full(len(ensemble), 1.0 / len(ensemble))
    if basis == "z":
        stack = np.stack([m.z_dist for m in ensemble.members])
    else:
        stack = np.stack([m.x_dists[experiment] for m in ensemble.members])
    return w @ stack
