"""
Random operator family for dirac-loc
Pauli-tensor potentials, cell generators, transfer matrices over arbitrary
intervals, disorder words and the duality map
"""

from collections import Counter
from dataclasses import dataclass
from enum import Enum
import logging
import math

import numpy as np
from scipy.linalg import expm

from config import TRANSFER_TOL
from services.errors import CoverageError, DimensionError, ModelError, NumericalError
from services.matgroup import GroupTag, PAULI, classify_matrix, structural_set
from services.rng import STREAM_DISORDER, uniforms

logger = logging.getLogger(__name__)

PROBABILITY_TOL = 1e-12
SYMMETRY_TOL = 1e-12
BOUNDARY_SNAP = 1e-12

# Canonical representatives, indexed by case id
CASE_TABLE = {
    1: ((1.0, 0.0, 0.0, 0.0), (1.0, 0.0, 0.0, 0.0)),
    2: ((0.0, 0.0, 0.0, 1.0), (0.0, 0.0, 0.0, 1.0)),
    3: ((1.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.0, 1.0)),
    4: ((0.0, 1.0, 0.0, 0.0), (0.0, 0.0, 0.0, 1.0)),
    5: ((0.0, 0.0, 0.0, 1.0), (1.0, 0.0, 0.0, 0.0)),
}

REAL_PAULI = (0, 1, 3)


class Kind(str, Enum):
    DIRAC = "dirac"
    SCHRODINGER = "schrodinger"


@dataclass(frozen=True)
class DisorderLaw:
    """Finite-support law of one channel."""
    values: tuple
    probs: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if not values:
            raise ModelError("Disorder law has empty support")
        if len(values) != len(probs):
            raise ModelError(f"Disorder law has {len(values)} values but {len(probs)} probabilities")
        if not all(math.isfinite(v) for v in values):
            raise ModelError("Disorder support must be bounded")
        if any(p < 0 for p in probs):
            raise ModelError(f"Negative probability in {probs}")
        if abs(math.fsum(probs) - 1.0) > PROBABILITY_TOL:
            raise ModelError(f"Probabilities sum to {math.fsum(probs)}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def bernoulli(cls, p: float = 0.5) -> "DisorderLaw":
        if not 0.0 <= p <= 1.0:
            raise ModelError(f"Bernoulli parameter {p} outside [0, 1]")
        return cls(values=(0.0, 1.0), probs=(1.0 - p, p))

    @classmethod
    def point(cls, value: float) -> "DisorderLaw":
        return cls(values=(value,), probs=(1.0,))

    @property
    def support(self) -> tuple:
        return tuple(v for v, p in zip(self.values, self.probs) if p > 0)

    def mean(self) -> float:
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    def quantile(self, u: np.ndarray) -> np.ndarray:
        """Inverse CDF applied to uniforms in [0, 1)."""
        cdf = np.cumsum(self.probs)
        cdf[-1] = 1.0
        index = np.searchsorted(cdf, np.asarray(u), side="right")
        return np.asarray(self.values)[np.minimum(index, len(self.values) - 1)]


def default_disorder(N: int) -> tuple:
    return tuple(DisorderLaw.bernoulli(0.5) for _ in range(N))


def case_coefficients(case_id: int) -> tuple:
    """(alpha, beta) of the canonical representative of a case."""
    if case_id not in CASE_TABLE:
        raise ModelError(f"Case id must be one of 1..5, got {case_id}")
    return CASE_TABLE[case_id]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    N: int
    ell: float
    alpha: tuple
    beta: tuple
    v_per: np.ndarray
    disorder: tuple
    kind: Kind = Kind.DIRAC
    case_id: int | None = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise DimensionError(f"N must be a positive integer, got {self.N}")
        if not (self.ell > 0 and math.isfinite(self.ell)):
            raise ModelError(f"Cell length must be positive, got {self.ell}")
        alpha = tuple(float(a) for a in self.alpha)
        beta = tuple(float(b) for b in self.beta)
        if len(alpha) != 4 or len(beta) != 4:
            raise ModelError("alpha and beta need four coefficients each")
        if alpha[2] != 0.0 or beta[2] != 0.0:
            raise ModelError("Magnetic coefficients alpha2, beta2 must vanish in real mode")

        v_per = np.array(self.v_per, dtype=float)
        if v_per.shape != (self.N, self.N):
            raise DimensionError(f"v_per must be {self.N}x{self.N}, got {v_per.shape}")
        if np.max(np.abs(v_per - v_per.T), initial=0.0) > SYMMETRY_TOL:
            raise ModelError("v_per must be symmetric")
        v_per.setflags(write=False)

        disorder = tuple(self.disorder)
        if len(disorder) != self.N:
            raise ModelError(f"Need {self.N} disorder laws, got {len(disorder)}")

        if self.case_id is not None:
            case_coefficients(self.case_id)
            for name, coeffs in (("alpha", alpha), ("beta", beta)):
                nonzero = [k for k in REAL_PAULI if coeffs[k] != 0.0]
                if len(nonzero) != 1:
                    raise ModelError(f"Case mode needs exactly one nonzero {name} among 0, 1, 3, got {nonzero}")

        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "ell", float(self.ell))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "v_per", v_per)
        object.__setattr__(self, "disorder", disorder)
        object.__setattr__(self, "kind", Kind(self.kind))

    @classmethod
    def from_case(cls, case_id: int, N: int, ell: float, v_per=None, disorder=None,
                  kind: Kind = Kind.DIRAC) -> "ModelSpec":
        alpha, beta = case_coefficients(case_id)
        return cls(
            N=N,
            ell=ell,
            alpha=alpha,
            beta=beta,
            v_per=structural_set(N).Delta if v_per is None else v_per,
            disorder=default_disorder(N) if disorder is None else disorder,
            kind=kind,
            case_id=case_id,
        )

    def with_changes(self, **changes) -> "ModelSpec":
        fields = dict(
            N=self.N, ell=self.ell, alpha=self.alpha, beta=self.beta, v_per=self.v_per,
            disorder=self.disorder, kind=self.kind, case_id=self.case_id,
        )
        fields.update(changes)
        return ModelSpec(**fields)

    def satisfies_support_assumption(self) -> bool:
        """True when every channel law charges both 0 and 1."""
        return all({0.0, 1.0} <= set(law.support) for law in self.disorder)

    def describe(self) -> dict:
        return {
            "n": self.N,
            "ell": self.ell,
            "kind": self.kind.value,
            "case": self.case_id if self.case_id is not None else "",
            **{f"alpha{k}": a for k, a in enumerate(self.alpha)},
            **{f"beta{k}": b for k, b in enumerate(self.beta)},
        }


@dataclass
class DisorderWord:
    """Random variables omega^(n) for cells n_min..n_min + len(entries) - 1."""
    entries: np.ndarray
    n_min: int = 0
    seed: int | None = None

    @property
    def n_max(self) -> int:
        return self.n_min + self.entries.shape[0] - 1

    def covers(self, lo_cell: int, hi_cell: int) -> bool:
        return self.n_min <= lo_cell and hi_cell <= self.n_max

    def omega(self, n: int) -> np.ndarray:
        if not self.covers(n, n):
            raise CoverageError(f"Cell {n} outside word cells {self.n_min}..{self.n_max}")
        return self.entries[n - self.n_min]


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    energy: float
    span: tuple
    tag: GroupTag

    @classmethod
    def build(cls, entries: np.ndarray, energy: float, span: tuple) -> "TransferMatrix":
        tol = TRANSFER_TOL * max(1.0, float(np.linalg.norm(entries)))
        return cls(entries=entries, energy=float(energy), span=span, tag=classify_matrix(entries, tol))


def word_from_entries(entries, n_min: int = 0) -> DisorderWord:
    """Deterministic word from explicit cell vectors."""
    entries = np.atleast_2d(np.asarray(entries, dtype=float))
    return DisorderWord(entries=entries, n_min=n_min, seed=None)


def sample_word(spec: ModelSpec, seed: int, n_min: int, n_max: int) -> DisorderWord:
    """
    Draw omega_i^(n) for n_min <= n <= n_max.
    Each draw depends only on (seed, n, i) through the Philox counter.
    """
    if n_min > n_max:
        raise ModelError(f"Empty cell range {n_min}..{n_max}")
    cells = np.arange(n_min, n_max + 1, dtype=np.int64)
    u = uniforms(seed, cells, spec.N, STREAM_DISORDER)
    entries = np.empty((len(cells), spec.N))
    for i, law in enumerate(spec.disorder):
        entries[:, i] = law.quantile(u[:, i])
    return DisorderWord(entries=entries, n_min=n_min, seed=seed)


def _real_pauli_sum(coeffs: tuple) -> np.ndarray:
    return sum(coeffs[k] * np.real(PAULI[k]) for k in REAL_PAULI)


def _check_omega(spec: ModelSpec, omegas: np.ndarray) -> np.ndarray:
    omegas = np.asarray(omegas, dtype=float)
    if omegas.shape[-1] != spec.N:
        raise DimensionError(f"omega has {omegas.shape[-1]} channels, model has {spec.N}")
    return omegas


def potentials(spec: ModelSpec, omegas: np.ndarray) -> np.ndarray:
    """Batched potential for omegas of shape (n, N)."""
    omegas = np.atleast_2d(_check_omega(spec, omegas))
    N = spec.N
    fixed = np.kron(_real_pauli_sum(spec.alpha), spec.v_per)
    random = np.einsum("ab,ni,ij->naibj", _real_pauli_sum(spec.beta), omegas, np.eye(N))
    return fixed[None] + random.reshape(len(omegas), 2 * N, 2 * N)


def potential(spec: ModelSpec, omega) -> np.ndarray:
    """V = sum_k alpha_k sigma_k (x) v_per + sum_k beta_k sigma_k (x) diag(omega)."""
    return potentials(spec, omega)[0]


def _dirac_generators(spec: ModelSpec, omegas: np.ndarray, E: float) -> np.ndarray:
    J = structural_set(spec.N).J
    V = potentials(spec, omegas)
    return J @ (V - E * np.eye(2 * spec.N))


def _schrodinger_generators(spec: ModelSpec, omegas: np.ndarray, E: float) -> np.ndarray:
    omegas = np.atleast_2d(_check_omega(spec, omegas))
    N = spec.N
    W = spec.v_per[None] + omegas[:, :, None] * np.eye(N)[None]
    X = np.zeros((len(omegas), 2 * N, 2 * N))
    X[:, :N, N:] = np.eye(N)
    X[:, N:, :N] = W - E * np.eye(N)
    return X


def generator(spec: ModelSpec, omega, E: float) -> np.ndarray:
    """X = J (V - E)."""
    if spec.kind is not Kind.DIRAC:
        raise ModelError("generator() is defined for the Dirac kind")
    return _dirac_generators(spec, omega, E)[0]


def cell_generators(spec: ModelSpec, omegas: np.ndarray, E: float) -> np.ndarray:
    if spec.kind is Kind.SCHRODINGER:
        return _schrodinger_generators(spec, omegas, E)
    return _dirac_generators(spec, omegas, E)


def _expm(X: np.ndarray) -> np.ndarray:
    result = expm(X)
    if not np.all(np.isfinite(result)):
        raise NumericalError("Matrix exponential overflowed")
    return result


def cell_transfers(spec: ModelSpec, omegas: np.ndarray, E: float) -> np.ndarray:
    """
    exp(ell X) for every row of omegas, shape (n, 2N, 2N).
    Each distinct row is exponentiated once.
    """
    omegas = np.atleast_2d(_check_omega(spec, omegas))
    alphabet, inverse = np.unique(omegas, axis=0, return_inverse=True)
    table = _expm(spec.ell * cell_generators(spec, alphabet, E))
    return table[np.asarray(inverse).reshape(-1)]


def cell_transfer(spec: ModelSpec, omega, E: float) -> TransferMatrix:
    if spec.kind is Kind.SCHRODINGER:
        return schrodinger_cell_transfer(spec, omega, E)
    entries = _expm(spec.ell * generator(spec, omega, E))
    return TransferMatrix.build(entries, E, (0.0, spec.ell))


def schrodinger_cell_transfer(spec: ModelSpec, omega, E: float) -> TransferMatrix:
    """Transfer of (u, u') for -u'' + (v_per + diag(omega)) u = E u over one cell."""
    if spec.kind is not Kind.SCHRODINGER:
        raise ModelError("schrodinger_cell_transfer() needs the Schrodinger kind")
    entries = _expm(spec.ell * _schrodinger_generators(spec, omega, E)[0])
    return TransferMatrix.build(entries, E, (0.0, spec.ell))


def interval_pieces(ell: float, x: float, y: float) -> list:
    """(cell, signed length) pieces of the path from x to y, in path order."""
    if x == y:
        return []
    direction = 1 if y > x else -1
    q = x / ell
    if abs(q - round(q)) < BOUNDARY_SNAP:
        q = round(q)
    cell = math.floor(q) if direction > 0 else math.ceil(q) - 1
    current = x
    pieces = []
    while (y - current) * direction > 0:
        if direction > 0:
            stop = min((cell + 1) * ell, y)
        else:
            stop = max(cell * ell, y)
        pieces.append((cell, stop - current))
        current = stop
        cell += direction
    return pieces


def transfer_interval(spec: ModelSpec, word: DisorderWord, E: float, x: float, y: float) -> TransferMatrix:
    """T_x^y: maps the solution value at x to its value at y."""
    pieces = interval_pieces(spec.ell, x, y)
    if pieces:
        cells = [cell for cell, _ in pieces]
        if not word.covers(min(cells), max(cells)):
            raise CoverageError(
                f"Interval [{min(x, y)}, {max(x, y)}] needs cells {min(cells)}..{max(cells)}, "
                f"word covers {word.n_min}..{word.n_max}"
            )

    full_cells = {}
    T = np.eye(2 * spec.N)
    for cell, length in pieces:
        omega = word.omega(cell)
        if abs(abs(length) - spec.ell) <= BOUNDARY_SNAP * spec.ell:
            key = (omega.tobytes(), length > 0)
            if key not in full_cells:
                X = cell_generators(spec, omega, E)[0]
                full_cells[key] = _expm(math.copysign(spec.ell, length) * X)
            step = full_cells[key]
        else:
            step = _expm(length * cell_generators(spec, omega, E)[0])
        T = step @ T
    return TransferMatrix.build(T, E, (float(x), float(y)))


def dual_model(spec: ModelSpec) -> ModelSpec:
    """(V0, V1, V3) -> (-V0, -V3, -V1); transfers at -E are P-conjugates of those at E."""
    if spec.kind is not Kind.DIRAC:
        raise ModelError("Duality is defined for the Dirac kind")

    def swap(c: tuple) -> tuple:
        return (-c[0], -c[3], 0.0, -c[1])

    return spec.with_changes(alpha=swap(spec.alpha), beta=swap(spec.beta), case_id=None)


def group_check(spec: ModelSpec, E: float, samples: int, seed: int) -> dict:
    """Counts of group tags over sampled single-cell transfers."""
    word = sample_word(spec, seed, 0, samples - 1)
    tags = Counter()
    for T in cell_transfers(spec, word.entries, E):
        tol = TRANSFER_TOL * max(1.0, float(np.linalg.norm(T)))
        tags[classify_matrix(T, tol).value] += 1
    logger.info(f"Group check at E={E}: {dict(tags)}")
    return dict(tags)


def gronwall_factor(spec: ModelSpec, omega, E: float) -> float:
    """exp(ell ||X||_op) bounds the growth of any solution across one cell."""
    X = cell_generators(spec, omega, E)[0]
    return float(np.exp(spec.ell * np.linalg.norm(X, 2)))


@dataclass(frozen=True)
class LipschitzFit:
    constant: float
    holdout_ratio: float
    holds: bool


def energy_lipschitz_fit(spec: ModelSpec, word: DisorderWord, x: float, y: float,
                         energies, holdout, margin: float = 1.1) -> LipschitzFit:
    """
    Fit C in ||T(E) - T(E')|| <= C |E - E'| from neighbouring grid points,
    then test it on held-out energy pairs.
    """
    energies = np.sort(np.asarray(energies, dtype=float))
    if len(energies) < 2:
        raise ModelError("Need at least two grid energies")
    grid = [transfer_interval(spec, word, E, x, y).entries for E in energies]
    slopes = [
        np.linalg.norm(b - a, 2) / (e1 - e0)
        for a, b, e0, e1 in zip(grid, grid[1:], energies, energies[1:])
        if e1 > e0
    ]
    constant = margin * float(max(slopes))

    ratio = 0.0
    for E, E2 in holdout:
        if E == E2:
            continue
        diff = transfer_interval(spec, word, E, x, y).entries - transfer_interval(spec, word, E2, x, y).entries
        ratio = max(ratio, float(np.linalg.norm(diff, 2) / abs(E - E2)))
    return LipschitzFit(constant=constant, holdout_ratio=ratio, holds=ratio <= constant)


def taylor_expm(X: np.ndarray, order: int = 30) -> np.ndarray:
    """Truncated Taylor series with scaling by 2^s and s squarings."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    norm = np.linalg.norm(X, 1)
    nsquare = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    SX = X / 2.0 ** nsquare

    coeffs = np.ones(order + 1)
    for i in range(order):
        coeffs[i + 1] = coeffs[i] / (i + 1)
    EX = np.eye(n) * coeffs[order]
    for i in range(order - 1, -1, -1):
        EX = SX @ EX + np.eye(n) * coeffs[i]

    for _ in range(nsquare):
        EX = EX @ EX
    return EX
