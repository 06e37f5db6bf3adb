import numpy as np
import pytest

from conftest import random_symplectic
from services.errors import ConfigError, RankDeficientFrameError
from services.lyapunov import (
    CocycleAccumulator,
    FrameFlavor,
    LagrangianFrame,
    LyapunovEstimate,
    contractivity_probe,
    custom_frame,
    degeneracy_residual,
    directional_sum_check,
    energy_scan,
    estimate_from_transfers,
    holder_fit,
    lagrangian_frame,
    ldp_probability,
    lyapunov_spectrum,
    product_log_singular_values,
    projected_singular_values,
    spectral_gap,
    symmetry_residual,
    upper_sum,
    vanishing_count,
)
from services.model import DisorderLaw, ModelSpec, cell_transfers, sample_word, word_from_entries


def free_model(N):
    return ModelSpec.from_case(1, N, 1.0, v_per=np.zeros((N, N)), disorder=(DisorderLaw.point(0.0),) * N)


def estimate(gamma, stderr=None):
    gamma = np.asarray(gamma, dtype=float)
    return LyapunovEstimate(gamma=gamma, stderr=np.zeros_like(gamma) if stderr is None else stderr,
                            steps=1, energy=0.0)


def test_diagonal_word_gives_exact_exponents():
    D = np.diag([2.0, 0.5])
    est = estimate_from_transfers([D] * 1000, ell=1.0, steps=1000)
    assert np.allclose(est.gamma, [np.log(2), -np.log(2)], atol=1e-12)
    assert np.allclose(est.stderr, 0.0, atol=1e-12)


def test_diagonal_word_with_cell_length():
    D = np.diag([2.0, 0.5])
    est = estimate_from_transfers([D] * 100, ell=0.5, steps=100, batches=10)
    assert np.allclose(est.gamma, [2 * np.log(2), -2 * np.log(2)], atol=1e-12)


def test_overflow_guard_keeps_estimate_finite():
    D = np.diag([1e3, 1e-3])
    est = estimate_from_transfers([D] * 500, ell=1.0, steps=500, reorth_period=1000, batches=1)
    assert np.allclose(est.gamma, [np.log(1e3), -np.log(1e3)], atol=1e-10)


def test_accumulator_rejects_rank_deficient_frame():
    with pytest.raises(RankDeficientFrameError):
        CocycleAccumulator.start(np.zeros((4, 2)))
    with pytest.raises(ConfigError):
        CocycleAccumulator.start(np.eye(2), reorth_period=0)


def test_free_model_exponents_vanish():
    est = lyapunov_spectrum(free_model(2), 0.8, 100_000, seed=1)
    assert np.all(np.abs(est.gamma) <= 1e-3)
    assert vanishing_count(est) == 4


def test_case1_exponents_vanish():
    est = lyapunov_spectrum(ModelSpec.from_case(1, 2, 1.0), 1.0, 20_000, seed=2)
    assert np.all(np.abs(est.gamma) <= 1e-2)


def test_exponents_sum_to_zero():
    est = lyapunov_spectrum(ModelSpec.from_case(3, 2, 0.7), 0.3, 5_000, seed=3)
    assert abs(est.gamma.sum()) <= 4 * 1e-8
    assert np.all(np.diff(est.gamma) <= 0)


def test_symmetry_residual():
    assert symmetry_residual(estimate([1.0, 0.2, -0.2, -1.0])) == 0.0
    est = lyapunov_spectrum(ModelSpec.from_case(2, 2, 1.0), 1.0, 20_000, seed=4)
    assert symmetry_residual(est) <= 4 * est.stderr.max()
    assert est.gamma[0] > 0


def test_degeneracy_residual():
    assert degeneracy_residual(estimate([3.0, 3.0, 1.0, 1.0])) == 0.0
    est = lyapunov_spectrum(ModelSpec.from_case(5, 2, 1.0), 1.0, 20_000, seed=5)
    assert degeneracy_residual(est) <= 4 * est.stderr.max()


def test_odd_spo_model_has_zero_middle_exponent():
    est = lyapunov_spectrum(ModelSpec.from_case(5, 3, 1.0), 1.0, 20_000, seed=6)
    assert degeneracy_residual(est) <= 4 * est.stderr.max()
    assert abs(est.gamma[2]) <= max(4 * est.stderr[2], 1e-3)


def test_reorthonormalization_period_invariance(rng):
    spec = ModelSpec.from_case(3, 2, 0.5)
    word = word_from_entries(rng.integers(0, 2, size=(1000, 2)))
    every = lyapunov_spectrum(spec, 0.4, 1000, seed=0, reorth_period=1, word=word)
    second = lyapunov_spectrum(spec, 0.4, 1000, seed=0, reorth_period=2, word=word)
    assert np.allclose(every.gamma, second.gamma, atol=1e-8)


def test_directional_sum_matches_spectrum():
    spec = ModelSpec.from_case(2, 2, 1.0)
    x = np.eye(4)[:, :2]
    value = directional_sum_check(spec, 1.0, x, 10_000, seed=7)
    est = lyapunov_spectrum(spec, 1.0, 10_000, seed=7)
    assert value == pytest.approx(est.gamma[0] + est.gamma[1], abs=1e-8)


def test_directional_sum_hyperbolic_cell():
    spec = ModelSpec.from_case(2, 1, 1.0, v_per=np.zeros((1, 1)), disorder=(DisorderLaw.point(1.0),))
    value = directional_sum_check(spec, 0.0, np.array([1.0, 0.0]), 10_000, seed=0)
    assert value == pytest.approx(1.0, abs=1e-3)


def test_directional_sum_free_and_rank_deficient():
    assert abs(directional_sum_check(free_model(2), 0.5, np.eye(4)[:, :2], 5_000, seed=0)) <= 1e-3
    with pytest.raises(RankDeficientFrameError):
        directional_sum_check(free_model(2), 0.5, np.zeros((4, 2)), 10, seed=0)


@pytest.mark.parametrize("flavor", list(FrameFlavor)[:-1])
def test_named_frames(flavor):
    frame = lagrangian_frame(2, flavor)
    assert frame.flavor is flavor
    B = frame.basis
    assert np.allclose(B.T @ B, np.eye(B.shape[1]))


def test_split_frames_need_even_n():
    with pytest.raises(ConfigError):
        lagrangian_frame(3, "FplusPlus")
    assert lagrangian_frame(3, "Fminus").basis.shape == (6, 3)


def test_frame_validation():
    with pytest.raises(ConfigError):
        LagrangianFrame(np.eye(4)[:, [0, 2]], FrameFlavor.F_PLUS)
    with pytest.raises(RankDeficientFrameError):
        custom_frame(np.ones((4, 2)))
    assert custom_frame(np.eye(4)[:, [0, 2]]).flavor is FrameFlavor.CUSTOM


def test_projected_singular_values(rng):
    for flavor in ("Fplus", "Fminus"):
        assert np.allclose(projected_singular_values(np.eye(4), lagrangian_frame(2, flavor)), 1.0)

    a = 3.0
    values = projected_singular_values(np.diag([a, 1 / a]), lagrangian_frame(1, "Fminus"))
    assert np.allclose(values, [1 / a])

    T = random_symplectic(rng, 3)
    values = projected_singular_values(T, lagrangian_frame(3, "Fplus"))
    assert np.allclose(values, np.linalg.svd(T[:, :3], compute_uv=False), atol=1e-12)
    assert np.all(values <= np.linalg.svd(T, compute_uv=False)[:3] + 1e-12)


def test_contractivity():
    D = np.diag([2.0, 1.0, 1.0, 0.5])
    est = estimate_from_transfers([D] * 200, ell=1.0, steps=200)
    assert spectral_gap(est, 1) == pytest.approx(-np.log(2), abs=1e-12)

    spec = ModelSpec.from_case(2, 2, 1.0)
    est = lyapunov_spectrum(spec, 1.0, 20_000, seed=8)
    probe = contractivity_probe(spec, 1.0, 2, 20_000, seed=8)
    assert probe < -3 * est.stderr.max()

    probe = contractivity_probe(ModelSpec.from_case(1, 2, 1.0), 1.0, 1, 5_000, seed=8)
    assert abs(probe) <= 1e-3

    with pytest.raises(ConfigError):
        contractivity_probe(spec, 1.0, 3, 10, seed=8)


def test_contractivity_of_explicit_transfers():
    spec = ModelSpec.from_case(2, 2, 1.0)
    D = np.diag([2.0, 1.0, 1.0, 0.5])
    probe = contractivity_probe(spec, 0.0, 1, 200, seed=0, transfers=[D] * 200)
    assert probe == pytest.approx(-np.log(2), abs=1e-12)
    assert contractivity_probe(spec, 0.0, 2, 200, seed=0, transfers=[D] * 200) == pytest.approx(0.0, abs=1e-12)

    half = ModelSpec.from_case(2, 2, 0.5)
    assert contractivity_probe(half, 0.0, 1, 200, seed=0, transfers=[D] * 200) == pytest.approx(-2 * np.log(2))


def test_contractivity_on_a_fixed_word():
    spec = ModelSpec.from_case(2, 2, 1.0)
    word = sample_word(spec, 8, 0, 4_999)
    assert contractivity_probe(spec, 1.0, 2, 5_000, seed=0, word=word) == contractivity_probe(spec, 1.0, 2, 5_000, seed=8)
    with pytest.raises(ConfigError):
        contractivity_probe(spec, 1.0, 1, 5_000, seed=0, word=word, transfers=[np.eye(4)] * 5_000)


def test_holder_fit_of_power_law():
    energies = np.linspace(0.0, 1.0, 11)
    fit = holder_fit(energies, np.sqrt(energies))
    assert 0.0 <= fit.exponent <= 1.0
    assert fit.constant > 0.0
    flat = holder_fit(energies, np.zeros_like(energies))
    assert flat.constant == 0.0


def test_energy_scan_free_model():
    scan = energy_scan(free_model(1), np.linspace(0.5, 1.5, 5), 2_000, seed=9)
    assert len(scan.estimates) == 5
    assert scan.holder.constant <= 1e-2
    assert [count for _, count in scan.flags] == [2] * 5


def test_energy_scan_is_continuous_and_worker_independent():
    spec = ModelSpec.from_case(2, 1, 1.0)
    grid = np.round(np.arange(0.5, 1.5 + 1e-9, 0.05), 10)
    scan = energy_scan(spec, grid, 10_000, seed=10)
    sums = np.array([upper_sum(est) for est in scan.estimates])
    stderr = max(est.stderr.max() for est in scan.estimates)
    assert np.abs(np.diff(sums)).max() <= 5 * stderr

    parallel = energy_scan(spec, grid[:4], 10_000, seed=10, workers=2)
    for a, b in zip(scan.estimates[:4], parallel.estimates):
        assert np.array_equal(a.gamma, b.gamma)


def test_energy_scan_rejects_unsorted_grid():
    with pytest.raises(ConfigError):
        energy_scan(free_model(1), [1.0, 0.5], 10, seed=0)


def test_ldp_deterministic_model():
    spec = ModelSpec.from_case(2, 1, 1.0, disorder=(DisorderLaw.point(1.0),))
    result = ldp_probability(spec, 0.3, 1, 0.05, 40, 100, seed=1, gamma_ref=[0.0, 0.0])
    assert result.p_hat in (0.0, 1.0)

    spec = ModelSpec.from_case(2, 1, 1.0)
    result = ldp_probability(spec, 1.0, 1, 100.0, 200, 100, seed=1, gamma_ref=[0.3, -0.3])
    assert result.p_hat == 0.0
    assert result.ci_low <= 1e-12 < result.ci_high


def test_ldp_frequency_decays_with_length():
    spec = ModelSpec.from_case(2, 1, 1.0)
    reference = lyapunov_spectrum(spec, 1.0, 100_000, seed=11).gamma
    eps = reference[0] / 4
    short = ldp_probability(spec, 1.0, 1, eps, 50, 2000, seed=12, gamma_ref=reference)
    long = ldp_probability(spec, 1.0, 1, eps, 200, 2000, seed=12, gamma_ref=reference, workers=2)
    assert long.p_hat < short.p_hat
    assert long.ci_high < short.ci_low


def test_ldp_argument_checks():
    spec = ModelSpec.from_case(2, 1, 1.0)
    with pytest.raises(ConfigError):
        ldp_probability(spec, 1.0, 3, 0.1, 10, 100, seed=0, gamma_ref=[0.0, 0.0])
    with pytest.raises(ConfigError):
        ldp_probability(spec, 1.0, 1, 0.1, 10, 10, seed=0, gamma_ref=[0.0, 0.0])


def test_frame_singular_values_keep_the_weak_direction():
    spec = ModelSpec.from_case(2, 2, 1.0)
    basis = lagrangian_frame(2, "Fplus").basis
    n = 300
    values = product_log_singular_values(spec, 1.0, n, [5, 6], basis)
    assert values.shape == (2, 2)
    assert np.all(np.isfinite(values))
    assert np.all(values[:, 0] >= values[:, 1])
    for row, seed in zip(values, (5, 6)):
        volume = directional_sum_check(spec, 1.0, basis, n, seed=seed) * spec.ell * n
        assert row.sum() == pytest.approx(volume, rel=1e-9)


def test_frame_singular_values_match_direct_product():
    spec = ModelSpec.from_case(2, 2, 1.0)
    basis = lagrangian_frame(2, "Fminus").basis
    n = 12
    values = product_log_singular_values(spec, 1.0, n, [3], basis)
    M = np.eye(4)
    for T in cell_transfers(spec, sample_word(spec, 3, 0, n - 1).entries, 1.0):
        M = T @ M
    assert np.allclose(values[0], np.log(np.linalg.svd(M @ basis, compute_uv=False)), atol=1e-9)
