import numpy as np
import pytest

from services.errors import CoverageError, DimensionError, ModelError
from services.lyapunov import lyapunov_spectrum
from services.matgroup import GroupTag, is_orthogonal, is_spo, is_symplectic, structural_set
from services.model import (
    DisorderLaw,
    Kind,
    ModelSpec,
    case_coefficients,
    cell_transfer,
    cell_transfers,
    dual_model,
    energy_lipschitz_fit,
    generator,
    gronwall_factor,
    group_check,
    interval_pieces,
    potential,
    sample_word,
    schrodinger_cell_transfer,
    taylor_expm,
    transfer_interval,
    word_from_entries,
)


def rk4(field, u0, x0, x1, steps=400):
    """Classical RK4 for u' = field(x) u over [x0, x1]."""
    u = np.array(u0, dtype=float)
    h = (x1 - x0) / steps
    x = x0
    for _ in range(steps):
        k1 = field(x) @ u
        k2 = field(x + h / 2) @ (u + h / 2 * k1)
        k3 = field(x + h / 2) @ (u + h / 2 * k2)
        k4 = field(x + h) @ (u + h * k3)
        u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        x += h
    return u


def free_model(N=1, ell=1.0, kind=Kind.DIRAC):
    return ModelSpec.from_case(1, N, ell, v_per=np.zeros((N, N)), kind=kind)


@pytest.mark.parametrize(
    "case_id,alpha,beta",
    [
        (1, (1, 0, 0, 0), (1, 0, 0, 0)),
        (4, (0, 1, 0, 0), (0, 0, 0, 1)),
        (5, (0, 0, 0, 1), (1, 0, 0, 0)),
    ],
)
def test_case_coefficients(case_id, alpha, beta):
    assert case_coefficients(case_id) == (alpha, beta)


@pytest.mark.parametrize("case_id", [0, 6, -1])
def test_case_coefficients_out_of_range(case_id):
    with pytest.raises(ModelError):
        case_coefficients(case_id)


def test_model_spec_validation():
    with pytest.raises(ModelError):
        ModelSpec.from_case(2, 2, 1.0, v_per=np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(DimensionError):
        ModelSpec.from_case(2, 2, 1.0, v_per=np.zeros((3, 3)))
    with pytest.raises(ModelError):
        ModelSpec.from_case(2, 1, -1.0)
    with pytest.raises(ModelError):
        DisorderLaw(values=(0.0, 1.0), probs=(0.5, 0.6))
    with pytest.raises(ModelError):
        DisorderLaw(values=(), probs=())
    with pytest.raises(ModelError):
        ModelSpec(N=1, ell=1.0, alpha=(0, 0, 1, 0), beta=(1, 0, 0, 0),
                  v_per=np.zeros((1, 1)), disorder=(DisorderLaw.bernoulli(),))


def test_case_mode_needs_single_coefficients():
    with pytest.raises(ModelError):
        ModelSpec(N=1, ell=1.0, alpha=(1, 0, 0, 1), beta=(1, 0, 0, 0),
                  v_per=np.zeros((1, 1)), disorder=(DisorderLaw.bernoulli(),), case_id=1)
    spec = ModelSpec(N=1, ell=1.0, alpha=(1, 0, 0, 1), beta=(1, 0, 0, 0),
                     v_per=np.zeros((1, 1)), disorder=(DisorderLaw.bernoulli(),))
    assert spec.case_id is None


def test_support_assumption():
    assert ModelSpec.from_case(3, 2, 1.0).satisfies_support_assumption()
    spec = ModelSpec.from_case(3, 1, 1.0, disorder=(DisorderLaw.point(0.0),))
    assert not spec.satisfies_support_assumption()


def test_potential_examples():
    assert np.allclose(potential(free_model(2), np.zeros(2)), 0.0)

    spec = ModelSpec.from_case(2, 1, 1.0, v_per=np.zeros((1, 1)))
    assert np.allclose(potential(spec, [1.0]), np.diag([1.0, -1.0]))

    spec = ModelSpec.from_case(5, 2, 1.0)
    delta = structural_set(2).Delta
    expected = np.block([[delta, np.zeros((2, 2))], [np.zeros((2, 2)), -delta]]) + np.diag([1.0, 0.0, 1.0, 0.0])
    assert np.allclose(potential(spec, [1.0, 0.0]), expected)


def test_potential_dimension_mismatch():
    with pytest.raises(DimensionError):
        potential(free_model(2), np.zeros(3))


def test_generator_examples():
    E = 0.37
    J = structural_set(1).J
    assert np.allclose(generator(free_model(1), [0.0], E), -E * J)

    spec = ModelSpec.from_case(2, 1, 1.0, v_per=np.zeros((1, 1)))
    assert np.allclose(generator(spec, [1.0], E), [[0.0, E + 1.0], [-E + 1.0, 0.0]])

    X = generator(ModelSpec.from_case(1, 3, 1.0), [1.0, 0.0, 1.0], E)
    assert np.allclose(X + X.T, 0.0)


def test_free_cell_transfer_is_rotation():
    spec = free_model(1, ell=1.0)
    T = cell_transfer(spec, [0.0], np.pi / 2)
    assert np.allclose(T.entries, [[0.0, 1.0], [-1.0, 0.0]])
    assert T.tag is GroupTag.ORTHO_SYMPLECTIC


def test_nilpotent_cell_transfer():
    ell = 0.4
    spec = ModelSpec.from_case(2, 1, ell, v_per=np.zeros((1, 1)))
    T = cell_transfer(spec, [1.0], 1.0)
    assert np.allclose(T.entries, np.eye(2) + ell * np.array([[0.0, 2.0], [0.0, 0.0]]))


def test_case5_cell_transfer_against_taylor():
    spec = ModelSpec.from_case(5, 2, 0.3)
    E = 0.7
    T = cell_transfer(spec, [1.0, 0.0], E)
    assert is_spo(T.entries)
    assert T.tag is GroupTag.ORTHO_SYMPLECTIC
    oracle = taylor_expm(0.3 * generator(spec, [1.0, 0.0], E), order=12)
    assert np.allclose(T.entries, oracle, atol=1e-10)


def test_case1_transfers_are_orthogonal(rng):
    spec = ModelSpec.from_case(1, 3, 0.8)
    for omega in rng.integers(0, 2, size=(10, 3)):
        assert is_orthogonal(cell_transfer(spec, omega, 1.3).entries, 1e-8)


def test_batched_transfers_match_single_cells(rng):
    spec = ModelSpec.from_case(3, 2, 0.5)
    omegas = rng.integers(0, 2, size=(12, 2)).astype(float)
    batch = cell_transfers(spec, omegas, -0.4)
    for omega, T in zip(omegas, batch):
        assert np.allclose(T, cell_transfer(spec, omega, -0.4).entries)


def test_taylor_expm_matches_closed_form():
    theta = 7.5
    J = structural_set(1).J
    expected = np.cos(theta) * np.eye(2) + np.sin(theta) * J
    assert np.allclose(taylor_expm(theta * J), expected, atol=1e-10)


@pytest.mark.parametrize("E", [-2.0, 3.0])
def test_free_schrodinger_transfer(E):
    ell = 0.7
    spec = free_model(1, ell, kind=Kind.SCHRODINGER)
    T = schrodinger_cell_transfer(spec, [0.0], E).entries
    k = np.sqrt(abs(E))
    if E < 0:
        expected = [[np.cosh(k * ell), np.sinh(k * ell) / k], [k * np.sinh(k * ell), np.cosh(k * ell)]]
    else:
        expected = [[np.cos(k * ell), np.sin(k * ell) / k], [-k * np.sin(k * ell), np.cos(k * ell)]]
    assert np.allclose(T, expected)
    assert is_symplectic(T)


def test_schrodinger_transfer_against_rk4(rng):
    N, ell, E = 2, 0.5, 0.8
    spec = ModelSpec.from_case(1, N, ell, kind=Kind.SCHRODINGER)
    omega = np.array([1.0, 0.0])
    W = spec.v_per + np.diag(omega)
    field = lambda x: np.block([[np.zeros((N, N)), np.eye(N)], [W - E * np.eye(N), np.zeros((N, N))]])
    T = cell_transfer(spec, omega, E).entries
    for column in range(2 * N):
        u = rk4(field, np.eye(2 * N)[column], 0.0, ell)
        assert np.allclose(T[:, column], u, atol=1e-8)


def test_schrodinger_transfer_requires_kind():
    with pytest.raises(ModelError):
        schrodinger_cell_transfer(free_model(1), [0.0], 1.0)


def test_interval_pieces():
    assert interval_pieces(1.0, 0.5, 2.25) == [(0, 0.5), (1, 1.0), (2, 0.25)]
    assert interval_pieces(1.0, 2.0, 0.0) == [(1, -1.0), (0, -1.0)]
    assert interval_pieces(1.0, 1.0, 1.0) == []


@pytest.fixture
def case3_word():
    spec = ModelSpec.from_case(3, 2, 0.6)
    return spec, sample_word(spec, 11, -3, 10)


def test_transfer_interval_identity_and_composition(case3_word):
    spec, word = case3_word
    E = 0.9
    assert np.allclose(transfer_interval(spec, word, E, 1.1, 1.1).entries, np.eye(4))

    T = transfer_interval(spec, word, E, 0.0, 2 * spec.ell).entries
    expected = cell_transfer(spec, word.omega(1), E).entries @ cell_transfer(spec, word.omega(0), E).entries
    assert np.allclose(T, expected, atol=1e-12)

    x, y, z = -1.3, 0.45, 3.1
    T_xz = transfer_interval(spec, word, E, x, z).entries
    T_yz = transfer_interval(spec, word, E, y, z).entries
    T_xy = transfer_interval(spec, word, E, x, y).entries
    assert np.allclose(T_xz, T_yz @ T_xy, atol=1e-8 * np.linalg.norm(T_xz))


def test_transfer_interval_inverse(case3_word):
    spec, word = case3_word
    forward = transfer_interval(spec, word, -0.3, 0.2, 4.0).entries
    backward = transfer_interval(spec, word, -0.3, 4.0, 0.2).entries
    assert np.allclose(backward @ forward, np.eye(4), atol=1e-8)
    assert transfer_interval(spec, word, -0.3, 4.0, 0.2).tag is not GroupTag.GENERAL_LINEAR


def test_mid_cell_transfer_against_rk4(case3_word):
    spec, word = case3_word
    E, ell = 0.55, spec.ell
    T = transfer_interval(spec, word, E, 0.5 * ell, 1.5 * ell).entries
    for column in range(4):
        u = rk4(lambda x: generator(spec, word.omega(0), E), np.eye(4)[column], 0.5 * ell, ell)
        u = rk4(lambda x: generator(spec, word.omega(1), E), u, ell, 1.5 * ell)
        assert np.allclose(T[:, column], u, atol=1e-8)


def test_transfer_interval_coverage(case3_word):
    spec, word = case3_word
    with pytest.raises(CoverageError):
        transfer_interval(spec, word, 0.0, 0.0, 20.0)
    with pytest.raises(CoverageError):
        transfer_interval(spec, word, 0.0, -5.0, 0.0)


def test_sample_word_point_mass():
    spec = ModelSpec.from_case(3, 2, 1.0, disorder=(DisorderLaw.point(0.0), DisorderLaw.point(0.0)))
    assert np.array_equal(sample_word(spec, 1, 0, 99).entries, np.zeros((100, 2)))


def test_sample_word_bernoulli_mean():
    spec = ModelSpec.from_case(3, 1, 1.0)
    word = sample_word(spec, 123456789, 0, 99_999)
    assert set(np.unique(word.entries)) <= {0.0, 1.0}
    assert 0.494 <= word.entries[:, 0].mean() <= 0.506


def test_sample_word_is_deterministic_and_random_access():
    spec = ModelSpec.from_case(4, 3, 1.0)
    first = sample_word(spec, 42, -10, 30)
    assert np.array_equal(first.entries, sample_word(spec, 42, -10, 30).entries)
    assert np.array_equal(first.entries[15:20], sample_word(spec, 42, 5, 9).entries)
    assert not np.array_equal(first.entries, sample_word(spec, 43, -10, 30).entries)


def test_sample_word_general_law():
    law = DisorderLaw(values=(0.0, 1.0, 2.5), probs=(0.2, 0.3, 0.5))
    spec = ModelSpec.from_case(3, 1, 1.0, disorder=(law,))
    word = sample_word(spec, 7, 0, 49_999)
    for value, p in zip(law.values, law.probs):
        assert abs(np.mean(word.entries[:, 0] == value) - p) < 0.01


def test_sample_word_empty_range():
    with pytest.raises(ModelError):
        sample_word(ModelSpec.from_case(3, 1, 1.0), 1, 5, 4)


def test_word_from_entries():
    word = word_from_entries([[1.0, 0.0], [0.0, 1.0]], n_min=-1)
    assert word.n_max == 0
    assert np.array_equal(word.omega(-1), [1.0, 0.0])
    with pytest.raises(CoverageError):
        word.omega(1)


def test_dual_model_pattern():
    spec = ModelSpec.from_case(3, 2, 1.0)
    dual = dual_model(spec)
    assert dual.alpha == (-1.0, 0.0, 0.0, 0.0)
    assert dual.beta == (0.0, -1.0, 0.0, 0.0)
    twice = dual_model(dual)
    assert twice.alpha == spec.alpha and twice.beta == spec.beta


def test_dual_transfers_are_conjugate():
    spec = ModelSpec.from_case(4, 2, 0.7)
    dual = dual_model(spec)
    P = structural_set(2).P
    omega = np.array([1.0, 0.0])
    T = cell_transfer(spec, omega, 0.8).entries
    T_dual = cell_transfer(dual, omega, -0.8).entries
    assert np.allclose(T_dual, P @ T @ P, atol=1e-10)


def test_dual_lyapunov_spectra_agree():
    spec = ModelSpec.from_case(2, 1, 1.0)
    E, seed = 0.6, 99
    estimate = lyapunov_spectrum(spec, E, 100_000, seed)
    dual = lyapunov_spectrum(dual_model(spec), -E, 100_000, seed)
    assert np.allclose(estimate.gamma, dual.gamma, atol=1e-3)


def test_group_check_counts():
    counts = group_check(ModelSpec.from_case(1, 2, 1.0), 0.4, 50, 3)
    assert sum(counts.values()) == 50
    assert set(counts) <= {GroupTag.ORTHO_SYMPLECTIC.value, GroupTag.SPECIAL_ORTHOGONAL.value}

    counts = group_check(ModelSpec.from_case(5, 2, 1.0), 0.4, 50, 3)
    assert counts == {GroupTag.ORTHO_SYMPLECTIC.value: 50}


def test_gronwall_bound(case3_word):
    spec, word = case3_word
    E = 1.7
    for n in range(0, 5):
        T = cell_transfer(spec, word.omega(n), E).entries
        factor = gronwall_factor(spec, word.omega(n), E)
        for psi in np.eye(4):
            assert np.linalg.norm(T @ psi) <= factor * (1 + 1e-12)


def test_energy_lipschitz_fit(case3_word):
    spec, word = case3_word
    grid = np.linspace(-1.0, 1.0, 81)
    holdout = [(-0.93, -0.41), (0.12, 0.13), (0.5, 0.95)]
    fit = energy_lipschitz_fit(spec, word, 0.0, 3.0, grid, holdout)
    assert fit.holds
    assert fit.holdout_ratio > 0.0
