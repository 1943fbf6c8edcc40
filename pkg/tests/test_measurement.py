import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wring.errors import FitError, SingularModelError, ValidationError
from wring.hamiltonian import QuantumState, kink_indices, kink_superposition
from wring.measurement import (ConfusionModel, ShotSet, apply_readout_noise, bootstrap_stat,
                               calibration_fit, mitigate_readout, postselect_shots,
                               resonance_curve, rotate_to_x, sample_bitstrings)

from conftest import random_density


def random_pure(L, rng):
    v = rng.normal(size=1 << L) + 1j * rng.normal(size=1 << L)
    return QuantumState.pure(v / np.linalg.norm(v))


def test_basis_state_sampling():
    shots = sample_bitstrings(QuantumState.basis("ggg"), "z", 50, seed=0)
    assert set(shots.post) == {"ggg"} and len(shots) == 50


def test_kink_frequencies():
    n = 10_000
    shots = sample_bitstrings(kink_superposition(5), "z", n, seed=1)
    freq = shots.distribution()[kink_indices(5)]
    sigma = math.sqrt(0.2 * 0.8 / n)
    assert np.all(np.abs(freq - 0.2) < 5 * sigma)
    assert freq.sum() == pytest.approx(1.0)


@pytest.mark.parametrize("n", [0, -3])
def test_needs_shots(n):
    with pytest.raises(ValidationError):
        sample_bitstrings(QuantumState.basis("gg"), "z", n)


def test_sampling_is_seeded():
    s = kink_superposition(5)
    assert sample_bitstrings(s, "x", 200, 4).post == sample_bitstrings(s, "x", 200, 4).post


def test_invalid_state_rejected():
    with pytest.raises(ValidationError):
        sample_bitstrings(QuantumState("pure", np.array([1.0, 1.0]), 1), "z", 10)


@pytest.mark.parametrize("L", [2, 4, 7])
@pytest.mark.parametrize("seed", [0, 1])
def test_born_rule_total_variation(L, seed):
    rng = np.random.default_rng(100 + seed)
    state = random_pure(L, rng)
    n = 20_000
    for basis in ("z", "x"):
        shots = sample_bitstrings(state, basis, n, seed)
        exact = (rotate_to_x(state) if basis == "x" else state).probabilities()
        tv = 0.5 * np.abs(shots.distribution() - exact).sum()
        assert tv < 4 * math.sqrt((1 << L) / n)


def test_x_basis_rotation_matches_pauli_expectations(rng):
    rho = random_density(8, rng, rank=3)
    state = QuantumState.density(rho)
    p = rotate_to_x(state).probabilities()
    X = np.array([[0, 1], [1, 0]])
    for site in range(3):
        ops = [np.eye(2)] * 3
        ops[site] = X
        # site i is bit i: kron order runs from the highest site down
        full = np.kron(np.kron(ops[2], ops[1]), ops[0])
        sign = np.array([1 - 2 * (k >> site & 1) for k in range(8)])
        assert p @ sign == pytest.approx(np.trace(rho @ full).real, abs=1e-12)


def test_zero_flip_rates_identity():
    shots = sample_bitstrings(kink_superposition(5), "z", 300, 0)
    out = apply_readout_noise(shots, ConfusionModel.uniform(5, 0.0, 0.0), seed=1)
    assert out.post == shots.post and out.pre == shots.pre


def test_deterministic_decay():
    shots = sample_bitstrings(kink_superposition(5), "z", 300, 0)
    out = apply_readout_noise(shots, ConfusionModel.uniform(5, 0.0, 1.0), seed=1)
    assert set(out.post) == {"ggggg"}


def test_empirical_flip_rates():
    n = 100_000
    L = 4
    shots = ShotSet(L, "z", ("gggg",) * n, ("grgr",) * n)
    out = apply_readout_noise(shots, ConfusionModel.uniform(L, 0.01, 0.08), seed=7)
    bits = out.bits()
    for p, cols, expect_r in ((0.01, [0, 2], True), (0.08, [1, 3], False)):
        flips = (bits[:, cols] == (1 if expect_r else 0)).mean()
        sigma = math.sqrt(p * (1 - p) / (n * len(cols)))
        assert abs(flips - p) < 3 * sigma


def test_pre_strings_read_by_same_detector():
    shots = ShotSet(3, "z", ("ggg",) * 2000, ("ggg",) * 2000)
    noisy = apply_readout_noise(shots, ConfusionModel.uniform(3, 0.2, 0.0), seed=0)
    assert len(postselect_shots(noisy)) < 2000
    clean = apply_readout_noise(shots, ConfusionModel.uniform(3, 0.2, 0.0), seed=0, include_pre=False)
    assert clean.pre == shots.pre


def test_model_validation():
    with pytest.raises(ValidationError):
        ConfusionModel([0.1, 1.2], [0.0, 0.0])
    with pytest.raises(ValidationError):
        ConfusionModel([0.1], [0.0, 0.0])


@given(st.floats(0, 1), st.floats(0, 1))
def test_site_matrix_column_stochastic(a, b):
    M = ConfusionModel([a], [b]).site_matrix(0)
    assert np.allclose(M.sum(axis=0), 1.0) and np.all(M >= 0)


def test_identity_mitigation(rng):
    p = rng.dirichlet(np.ones(32))
    res = mitigate_readout(p, ConfusionModel.uniform(5, 0.0, 0.0))
    assert np.allclose(res.distribution, p) and res.clipped_mass == 0.0


def test_uniform_fixed_point():
    p = np.full(16, 1 / 16)
    res = mitigate_readout(p, ConfusionModel.uniform(4, 0.05, 0.05))
    assert np.allclose(res.distribution, p, atol=1e-14)


def test_exact_inverse(rng):
    cm = ConfusionModel(rng.uniform(0, 0.1, 5), rng.uniform(0, 0.1, 5))
    p = rng.dirichlet(np.ones(32))
    assert np.allclose(mitigate_readout(cm.apply(p), cm).distribution, p, atol=1e-12)


def test_forward_map_matches_dense_kron(rng):
    cm = ConfusionModel(rng.uniform(0, 0.2, 3), rng.uniform(0, 0.2, 3))
    full = np.kron(np.kron(cm.site_matrix(2), cm.site_matrix(1)), cm.site_matrix(0))
    p = rng.dirichlet(np.ones(8))
    assert np.allclose(cm.apply(p), full @ p)


def test_singular_model():
    with pytest.raises(SingularModelError):
        mitigate_readout(np.full(4, 0.25), ConfusionModel.uniform(2, 0.3, 0.7))


def test_distribution_must_be_normalized():
    with pytest.raises(ValidationError):
        mitigate_readout(np.full(4, 0.3), ConfusionModel.uniform(2))


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_mitigation_normalized_and_reports_clipping(seed):
    rng = np.random.default_rng(seed)
    f = rng.dirichlet(np.full(16, 0.3))
    cm = ConfusionModel.uniform(4, 0.05, 0.1)
    for method in ("clip", "project"):
        res = mitigate_readout(f, cm, method)
        assert res.distribution.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(res.distribution >= 0)
        assert res.clipped_mass == pytest.approx(-res.quasi[res.quasi < 0].sum())


def test_noise_mitigation_round_trip():
    L, n = 5, 100_000
    truth = kink_superposition(L).probabilities()
    cm = ConfusionModel.uniform(L)
    recovered = []
    for seed in range(10):
        shots = apply_readout_noise(sample_bitstrings(kink_superposition(L), "z", n, seed), cm,
                                    seed + 1000, include_pre=False)
        rec = mitigate_readout(shots.distribution(), cm).distribution
        assert np.abs(rec[kink_indices(L)] - 0.2).max() < 0.01
        recovered.append(rec)
    assert 0.5 * np.abs(np.mean(recovered, axis=0) - truth).sum() < 0.005


def test_postselection_counts():
    pre = ("ggggg",) * 963 + ("gggrg",) * 37
    shots = ShotSet(5, "z", pre, ("rgrgg",) * 1000)
    kept = postselect_shots(shots)
    assert len(kept) == 963
    assert kept.metadata["retained"] == 963 and kept.metadata["discarded"] == 37


def test_postselection_keeps_shots_unchanged(rng):
    post = tuple("".join(rng.choice(["g", "r"], 5)) for _ in range(200))
    pre = tuple("ggggg" if rng.random() < 0.9 else "ggrgg" for _ in range(200))
    shots = ShotSet(5, "z", pre, post)
    kept = postselect_shots(shots)
    expected = [(i, p) for i, (q, p) in enumerate(zip(pre, post)) if q == "ggggg"]
    assert list(zip(kept.ids, kept.post)) == expected


def test_postselection_all_matching():
    shots = ShotSet(3, "x", ("ggg",) * 5, ("grg", "ggr", "rgg", "ggg", "rrr"))
    assert postselect_shots(shots) == shots


def test_empty_postselection_warns():
    shots = ShotSet(3, "z", ("rgg",) * 4, ("ggg",) * 4)
    with pytest.warns(RuntimeWarning):
        assert len(postselect_shots(shots)) == 0


def test_resonance_point():
    om = 11.46
    assert resonance_curve(3.0, om, 3.0, math.pi / om) == pytest.approx(1.0)


def calibration_data(om, offset, noise=0.0, seed=0):
    t_pi = math.pi / om
    d = np.linspace(-40, 40, 81) + offset
    pe = resonance_curve(d, om, offset, t_pi)
    pe = pe + np.random.default_rng(seed).normal(0, noise, d.size) if noise else pe
    return list(zip(d, pe)), t_pi


def test_calibration_noiseless():
    data, t_pi = calibration_data(11.46, 1.3)
    fit = calibration_fit(data, t_pi, omega_guess=10.0)
    assert fit.omega == pytest.approx(11.46, abs=1e-6)
    assert fit.delta_offset == pytest.approx(1.3, abs=1e-6)
    assert fit.residual < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_calibration_noisy_within_three_sigma(seed):
    data, t_pi = calibration_data(11.46, 0.0, noise=0.02, seed=seed)
    fit = calibration_fit(data, t_pi)
    assert abs(fit.omega - 11.46) < 3 * fit.omega_stderr


def test_calibration_needs_points():
    with pytest.raises(ValidationError):
        calibration_fit([(0, 1), (1, 0.9)], 0.3)


def test_calibration_must_span_resonance():
    data = [(d, resonance_curve(d, 11.46, 0.0, math.pi / 11.46)) for d in range(5, 15)]
    with pytest.raises(ValidationError):
        calibration_fit(data, math.pi / 11.46)


def test_fit_error_carries_diagnostics():
    err = FitError("x", {"status": 0})
    assert err.diagnostics["status"] == 0


def test_bootstrap_constant():
    assert bootstrap_stat(np.full(50, 3.0), B=200, seed=0) == (3.0, 0.0)


def test_bootstrap_bernoulli():
    x = np.random.default_rng(2).integers(0, 2, 1000)
    _, se = bootstrap_stat(x, B=2000, seed=3)
    assert se == pytest.approx(math.sqrt(0.25 / 1000), rel=0.15)


def test_bootstrap_seeded():
    x = np.random.default_rng(2).normal(size=100)
    assert bootstrap_stat(x, B=300, seed=9) == bootstrap_stat(x, B=300, seed=9)


@pytest.mark.parametrize("args", [([], 200), ([1.0, 2.0], 50)])
def test_bootstrap_preconditions(args):
    with pytest.raises(ValidationError):
        bootstrap_stat(args[0], B=args[1])


def test_shotset_aliases_and_validation():
    s = ShotSet(3, "z", ("000",), ("101",))
    assert s.post == ("rgr",)
    with pytest.raises(ValidationError):
        ShotSet(3, "y", ("ggg",), ("ggg",))
    with pytest.raises(ValidationError):
        ShotSet(3, "z", ("ggg",), ("gg",))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert ShotSet(2, "z", (), ()).metadata == {}
