"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The verdict lines are collected and printed in the terminal summary. The
searches behind criteria 3 and 9 take several minutes; they are marked
``slow`` but still run by default.
"""

import math
import os
from pathlib import Path

import numpy as np
import pytest

from wring.config import load_config, reference_config
from wring.dynamics import NoiseParams, evolve_closed, evolve_open, ideal_y_rotation
from wring.hamiltonian import (QuantumState, ground_state, kink_indices, kink_superposition,
                               px_expectation)
from wring.inference import (build_prior_ensemble, ensemble_log_likelihoods, fidelity_from_counts,
                             kink_populations, posterior_fidelity, posterior_weights)
from wring.lattice import PulseSchedule, RingGeometry, Waveform, interaction_matrix, ring_positions
from wring import cli
from wring.fileio import read_table
from wring.measurement import (ConfusionModel, apply_readout_noise, calibration_fit,
                               mitigate_readout, postselect_shots, resonance_curve,
                               sample_bitstrings)
from wring.search import (fit_power_law, gap_scan, grape_fidelity_and_gradient, grape_optimize,
                          min_time_for_infidelity, sweep_detuning)
from wring.hamiltonian import RydbergModel
from wring.pipeline import mitigated_distribution

from conftest import random_density


def test_criterion_01_gap_scaling(verdict):
    odd = gap_scan([5, 7, 9, 11, 13])
    even = gap_scan([4, 6, 8, 10, 12])
    a_odd = fit_power_law([(r.L, r.gap) for r in odd]).exponent
    a_even = fit_power_law([(r.L, r.gap_above_ground) for r in even]).exponent
    ok = abs(a_odd + 2.0) <= 0.3 and a_even > -0.5
    verdict(1, ok, f"odd-L gap exponent {a_odd:.3f} (want -2 ± 0.3); "
                   f"even-L gap above the Néel doublet exponent {a_even:.3f} (want > -0.5)")


def test_criterion_02_adiabatic_trend(verdict):
    sizes, times = (5, 7, 9), (1.0, 2.0, 4.0)
    F = {(L, t): sweep_detuning(L, 6.0, 15.0, t).best[1] for L in sizes for t in times}
    up_in_t = all(F[L, times[0]] < F[L, times[1]] < F[L, times[2]] for L in sizes)
    down_in_L = all(F[sizes[0], t] > F[sizes[1], t] > F[sizes[2], t] for t in times)
    table = " ".join(f"L{L}:" + "/".join(f"{F[L, t]:.4f}" for t in times) for L in sizes)
    verdict(2, up_in_t and down_in_L, f"F_th at t_F=1/2/4 µs {table}")


@pytest.mark.slow
def test_criterion_03_infidelity_target(verdict):
    sizes = (5, 7, 9, 11, 13)
    results = {L: min_time_for_infidelity(L, 6.0, 15.0, 1e-3) for L in sizes}
    t_star = [results[L].t_star for L in sizes]
    fit = fit_power_law(list(zip(sizes, t_star)))
    monotone = all(a <= b for a, b in zip(t_star, t_star[1:]))
    ok = abs(fit.exponent - 1.87) <= 0.5 and monotone
    detail = ", ".join(f"L{L}: t*={results[L].t_star:.4g} µs Δ={results[L].delta:g}" for L in sizes)
    verdict(3, ok, f"{detail}; α = {fit.exponent:.3f} ± {fit.stderr:.3f} (want 1.87 ± 0.5)")


def test_criterion_04_estimator_identity(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for L in (3, 5, 7):
        idx = kink_indices(L)
        ks = kink_superposition(L).data
        for _ in range(100):
            rho = np.zeros((1 << L, 1 << L), dtype=complex)
            rho[np.ix_(idx, idx)] = random_density(L, rng)
            p = np.real(np.diag(rho))[idx]
            est = fidelity_from_counts(p, px_expectation(QuantumState.density(rho)), L).value
            worst = max(worst, abs(est - np.real(ks.conj() @ rho @ ks)))
    verdict(4, worst <= 1e-10, f"max |F_e − ⟨K_S|ρ|K_S⟩| = {worst:.2e} over 300 matrices")


def test_criterion_05_px_of_target(verdict):
    errs, floors = [], []
    for L in (3, 5, 7, 9):
        errs.append(abs(px_expectation(kink_superposition(L)) - (L - 1)))
        rho = np.zeros((1 << L, 1 << L))
        rho[kink_indices(L), kink_indices(L)] = 1.0 / L
        mix = QuantumState.density(rho)
        px_mix = px_expectation(mix)
        est = fidelity_from_counts(np.full(L, 1.0 / L), px_mix, L).value
        floors.append(max(abs(px_mix), abs(est - 1.0 / L)))
    ok = max(errs) <= 1e-10 and max(floors) <= 1e-10
    verdict(5, ok, f"max |Tr(K_S 𝒫ₓ) − (L−1)| = {max(errs):.1e}; "
                   f"mixture 𝒫ₓ and floor deviation {max(floors):.1e}")


def test_criterion_06_lindblad_analytics(verdict):
    free = np.zeros((1, 1))
    c = 0.5
    rho0 = QuantumState.density(np.array([[0.5, c], [c, 0.5]]))
    decay_err = 0.0
    for gamma in (0.05, 0.5, 2.0):
        for t in (0.3, 1.0, 3.0):
            sched = PulseSchedule(Waveform.constant(0.0, t), Waveform.constant(0.0, t),
                                  Waveform.constant(0.0, t), t)
            out = evolve_open(free, sched, rho0, gamma).state.data
            decay_err = max(decay_err, abs(abs(out[0, 1]) - c * math.exp(-gamma * t / 2)))
    cfg = reference_config(5)
    geom, sched = cfg.geometry(), cfg.prep_schedule()
    psi = evolve_closed(geom, sched, ground_state(5), use_symmetry=False).state.data
    pure = np.outer(psi, psi.conj())
    closed_err = max(np.abs(evolve_open(geom, sched, ground_state(5), g).state.data - pure).max()
                     for g in (0.0, 1e-9))
    drift = evolve_open(geom, sched, ground_state(5), 0.5).norm_drift
    ok = decay_err <= 1e-6 and closed_err <= 1e-6 and drift <= 1e-8
    verdict(6, ok, f"coherence error {decay_err:.1e}; γ→0 vs closed {closed_err:.1e}; "
                   f"trace drift {drift:.1e}")


def test_criterion_07_measurement_round_trip(verdict):
    L, n = 5, 100_000
    cm = ConfusionModel.uniform(L, 0.01, 0.08)
    ks = kink_superposition(L)
    worst = 0.0
    for seed in range(50):
        shots = sample_bitstrings(ks, "z", n, seed)
        noisy = apply_readout_noise(shots, cm, seed + 10_000, include_pre=False)
        rec = kink_populations(mitigate_readout(noisy.distribution(), cm).distribution, L)
        worst = max(worst, np.abs(rec - 1.0 / L).max())
    # mitigated non-kink mass on reference preparations: mean of 20 seeded 1000-shot runs
    other, clipped = {}, {}
    for Lt in (5, 7, 9, 11):
        cfg = reference_config(Lt)
        state = evolve_closed(cfg.geometry(), cfg.prep_schedule(), ground_state(Lt)).state
        lin, clip = [], []
        for seed in range(20):
            shots = sample_bitstrings(state, "z", 1000, 100 * Lt + seed)
            kept = postselect_shots(apply_readout_noise(shots, cfg.confusion(), seed))
            freq = kept.distribution()
            lin.append(1.0 - mitigated_distribution(freq, cfg.confusion(), "linear")[0][
                kink_indices(Lt)].sum())
            clip.append(1.0 - mitigated_distribution(freq, cfg.confusion(), "clip")[0][
                kink_indices(Lt)].sum())
        other[Lt], clipped[Lt] = float(np.mean(lin)), float(np.mean(clip))
    ok = worst <= 0.01 and max(other.values()) < 0.05
    shown = ", ".join(f"L{k}: {v:.4f}" for k, v in other.items())
    shown_clip = ", ".join(f"L{k}: {v:.3f}" for k, v in clipped.items())
    verdict(7, ok, f"max |p_k − 1/5| after mitigation {worst:.4f} (want ≤ 0.01); "
                   f"mitigated non-kink mass {shown} (want < 0.05; clip-renormalized "
                   f"for comparison {shown_clip})")


def test_criterion_08_calibration(verdict):
    om = 11.46
    t_pi = math.pi / om
    d = np.linspace(-40.0, 40.0, 81)
    pe = resonance_curve(d, om, 0.0, t_pi)
    exact = calibration_fit(list(zip(d, pe)), t_pi, omega_guess=10.0)
    z_scores = []
    for seed in range(10):
        noisy = pe + np.random.default_rng(seed).normal(0.0, 0.02, d.size)
        fit = calibration_fit(list(zip(d, noisy)), t_pi)
        z_scores.append(abs(fit.omega - om) / fit.omega_stderr)
    ok = abs(exact.omega - om) <= 1e-6 and max(z_scores) <= 3.0
    verdict(8, ok, f"noiseless |ΔΩ| = {abs(exact.omega - om):.1e}; "
                   f"2% noise max |ΔΩ|/σ = {max(z_scores):.2f} over 10 seeds")


@pytest.mark.slow
def test_criterion_09_bayesian_pipeline(verdict):
    L = 5
    cfg = reference_config(L)
    noise = NoiseParams(gamma=0.1, sigma_pos=0.15, sigma_omega_rel=0.02, sigma_delta=1.0)
    rotations = cfg.rotation_schedules()
    assert len(rotations) == 5
    ens = build_prior_ensemble(L, cfg.lattice.a, cfg.prep_schedule(), rotations, noise, 100,
                               seed=2024, readout=cfg.confusion())
    fe = ens.fidelities
    prior_mean, prior_spread = posterior_fidelity(fe, np.full(len(fe), 1.0 / len(fe)))
    hits = closer = 0
    spread_ok = True
    for seed in range(25):
        rng = np.random.default_rng(seed)
        j = int(rng.integers(len(ens)))
        counts = [int(rng.integers(1000, 3001)) for _ in rotations]
        observed = [rng.multinomial(N, x) / N for N, x in zip(counts, ens.members[j].x_dists)]
        w = posterior_weights(ensemble_log_likelihoods(ens, observed, counts), log=True)
        mean, spread = posterior_fidelity(fe, w)
        hits += int(np.argmax(w.w) == j)
        closer += int(abs(mean - fe[j]) < abs(prior_mean - fe[j]))
        spread_ok &= spread <= prior_spread
    ok = hits >= 20 and closer >= 20 and spread_ok
    verdict(9, ok, f"true member is the maximum in {hits}/25 seeds; posterior mean closer in "
                   f"{closer}/25; spread never above prior ({prior_spread:.4f}): {spread_ok}")


def test_criterion_10_grape(verdict):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        r = rng.uniform(5.0, 9.0)
        model = RydbergModel(interaction_matrix(RingGeometry(2, r, [[0.0, 0.0], [r, 0.0]])))
        U, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
        ctrl = np.column_stack([rng.uniform(1, 15, 5), rng.uniform(-3, 3, 5),
                                rng.uniform(-20, 20, 5)])
        _, grad = grape_fidelity_and_gradient(model, U, ctrl, 0.04)
        fd = np.zeros_like(grad)
        for idx in np.ndindex(*ctrl.shape):
            up, dn = ctrl.copy(), ctrl.copy()
            up[idx] += 1e-6
            dn[idx] -= 1e-6
            fd[idx] = (grape_fidelity_and_gradient(model, U, up, 0.04)[0]
                       - grape_fidelity_and_gradient(model, U, dn, 0.04)[0]) / 2e-6
        worst = max(worst, np.abs(grad - fd).max() / np.abs(fd).max())
    free = grape_optimize(ideal_y_rotation(3), ring_positions(3, 500.0), n_slices=10,
                          iterations=200, seed=1).fidelity
    ring = grape_optimize(ideal_y_rotation(3), ring_positions(3, 6.0), iterations=200,
                          seed=1).fidelity
    ok = worst <= 1e-5 and free > 0.99
    verdict(10, ok, f"gradient relative error {worst:.1e}; non-interacting L=3 fidelity "
                    f"{free:.6f}; interacting a=6 µm ceiling {ring:.3f} (report only)")


def test_criterion_11_hardware_data(verdict, tmp_path):
    # expects config.toml, z.csv and x.csv (post-rotation shots) in the data directory
    root = os.environ.get("WRING_L11_DATA")
    if not root:
        verdict(11, None, "measured L=11 shot data not supplied (set WRING_L11_DATA)")
    root = Path(root)
    cfg = load_config(root / "config.toml")
    out = tmp_path / "estimate.csv"
    code = cli.main(["estimate", "--z", str(root / "z.csv"), "--x", str(root / "x.csv"),
                     "--mitigate", "--p-g-to-r", str(cfg.noise.p_g_to_r),
                     "--p-r-to-g", str(cfg.noise.p_r_to_g), "--out", str(out)])
    cols, rows = read_table(out)
    est = float(rows[0][cols.index("F_e [1]")])
    verdict(11, code == 0 and abs(est - 0.774) <= 0.02, f"F_e = {est:.4f} (want 0.774 ± 0.02)")
