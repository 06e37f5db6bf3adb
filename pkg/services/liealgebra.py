"""
Lie algebras generated by cell generators for dirac-loc
Bracket closure, classification, the disorder threshold and the
critical-energy scan
"""

from dataclasses import dataclass
import itertools
import logging
import math

import numpy as np
from joblib import Parallel, delayed

from config import (
    CLOSURE_TOL,
    CRITICAL_MAX_N,
    CRITICAL_REFINE_TOL,
    DEFAULT_D_LOG_O,
    VERTEX_MAX_N,
)
from services.errors import ConfigError, DimensionError, EnumerationError, UnclosedBasisError
from services.matgroup import Classification, LieBasis, in_sp_algebra, in_spo_algebra
from services.model import Kind, ModelSpec, cell_generators, potentials

logger = logging.getLogger(__name__)

ELEMENT_TOL = 1e-7


def vertex_words(N: int, max_n: int = VERTEX_MAX_N) -> np.ndarray:
    """All P in {0,1}^N in lexicographic order, shape (2^N, N)."""
    if N > max_n:
        raise EnumerationError(f"2^N enumeration refused for N={N} > {max_n}")
    return np.array(list(itertools.product((0.0, 1.0), repeat=N)))


def vertex_generators(spec: ModelSpec, E: float) -> list:
    """X_P(E) for every P in {0,1}^N."""
    return list(cell_generators(spec, vertex_words(spec.N), E))


def _residual(rows: list, v: np.ndarray) -> np.ndarray:
    if not rows:
        return v
    span = np.array(rows)
    r = v - span.T @ (span @ v)
    return r - span.T @ (span @ r)


def generate_algebra(generators, tol: float = CLOSURE_TOL, max_dim: int | None = None) -> LieBasis:
    """
    Breadth-first bracket closure. Each new direction is bracketed with every
    basis element; a bracket enters the basis when its residual after
    projection exceeds tol times the geometric mean of the operand norms.
    """
    mats = [np.asarray(g, dtype=float) for g in generators]
    if not mats:
        raise ConfigError("generate_algebra needs at least one generator")
    size = mats[0].shape[0]
    if any(m.shape != (size, size) for m in mats):
        raise DimensionError("Generators must share one square shape")
    max_dim = size * size + 1 if max_dim is None else max_dim

    rows = []
    scale = max(np.linalg.norm(m) for m in mats)

    def admit(v: np.ndarray, threshold: float) -> bool:
        r = _residual(rows, v)
        norm = np.linalg.norm(r)
        if norm > threshold:
            rows.append(r / norm)
            return True
        return False

    if scale > 0:
        for m in mats:
            if len(rows) < max_dim:
                admit(m.ravel(), tol * scale)

    frontier = list(range(len(rows)))
    closed = True
    while frontier:
        added = []
        for i in frontier:
            A = rows[i].reshape(size, size)
            for j in range(len(rows)):
                if j == i:
                    continue
                B = rows[j].reshape(size, size)
                C = A @ B - B @ A
                if admit(C.ravel(), tol * math.sqrt(np.linalg.norm(A) * np.linalg.norm(B))):
                    added.append(len(rows) - 1)
                if len(rows) >= max_dim:
                    break
            if len(rows) >= max_dim:
                break
        if len(rows) >= max_dim and added:
            closed = False
            logger.warning(f"Closure stopped at the dimension cap {max_dim}")
            break
        frontier = added

    logger.debug(f"Bracket closure of {len(mats)} generators has dimension {len(rows)}")
    return LieBasis(
        elements=[r.reshape(size, size) for r in rows],
        dim=len(rows),
        tol=tol,
        closed=closed,
    )


def classify(basis: LieBasis, N: int) -> Classification:
    if not basis.closed:
        raise UnclosedBasisError(f"Basis of dimension {basis.dim} is not bracket-closed")
    elements = basis.elements
    if any(X.shape != (2 * N, 2 * N) for X in elements):
        raise DimensionError(f"Basis elements are not {2 * N}x{2 * N}")

    if basis.dim == 2 * N * N + N and all(in_sp_algebra(X, ELEMENT_TOL) for X in elements):
        result = Classification.FULL_SYMPLECTIC
    elif basis.dim == N * N and all(in_spo_algebra(X, ELEMENT_TOL) for X in elements):
        result = Classification.ORTHO_SYMPLECTIC
    elif all(np.linalg.norm(X + X.T) <= ELEMENT_TOL for X in elements):
        result = Classification.INSIDE_SPECIAL_ORTHOGONAL
    else:
        result = Classification.OTHER
    basis.classification = result
    return result


@dataclass(frozen=True)
class ThresholdReport:
    lambda_max: float
    lambda_min: float
    ell_c: float
    interval: tuple | None
    d_log_O: float
    ell: float

    @property
    def is_empty(self) -> bool:
        return self.interval is None


def disorder_threshold(spec: ModelSpec, d_log_O: float = DEFAULT_D_LOG_O) -> ThresholdReport:
    """
    Extreme eigenvalues of the potential over the vertex words, the critical
    cell length 2 d / (lambda_max - lambda_min) and the energy interval
    [lambda_max - d / ell, lambda_min + d / ell].
    """
    if d_log_O <= 0:
        raise ConfigError(f"d_log_O must be positive, got {d_log_O}")
    words = vertex_words(spec.N)
    if spec.kind is Kind.SCHRODINGER:
        V = spec.v_per[None] + words[:, :, None] * np.eye(spec.N)[None]
    else:
        V = potentials(spec, words)
    eigenvalues = np.linalg.eigvalsh(V)
    lambda_max, lambda_min = float(eigenvalues.max()), float(eigenvalues.min())

    spread = lambda_max - lambda_min
    if spread <= 0:
        ell_c, interval = math.inf, (-math.inf, math.inf)
    else:
        ell_c = 2.0 * d_log_O / spread
        lo, hi = lambda_max - d_log_O / spec.ell, lambda_min + d_log_O / spec.ell
        interval = (lo, hi) if spec.ell < ell_c else None
    return ThresholdReport(
        lambda_max=lambda_max, lambda_min=lambda_min, ell_c=ell_c,
        interval=interval, d_log_O=d_log_O, ell=spec.ell,
    )


def algebra_dimension(spec: ModelSpec, E: float, tol: float = CLOSURE_TOL) -> int:
    return generate_algebra(vertex_generators(spec, E), tol).dim


@dataclass
class CriticalScan:
    points: list  # (E, dim) for every grid energy
    drops: list  # (refined E, dim) per low-dimension region
    generic_dim: int


def _refine_edge(spec: ModelSpec, high: float, low: float, generic: int, tol: float) -> float:
    """Bisect between a generic-dimension energy and a low one; returns the low end."""
    while abs(low - high) > CRITICAL_REFINE_TOL:
        mid = 0.5 * (low + high)
        if algebra_dimension(spec, mid, tol) < generic:
            low = mid
        else:
            high = mid
    return low


def critical_energy_scan(spec: ModelSpec, energies, tol: float = CLOSURE_TOL, workers: int = 1) -> CriticalScan:
    """
    Algebra dimension on the grid. Runs of grid points below the generic
    (maximal) dimension are refined by bisection towards their generic
    neighbours; each run is reported at the midpoint of its refined edges.
    """
    if spec.N > CRITICAL_MAX_N:
        raise EnumerationError(f"Critical scan refused for N={spec.N} > {CRITICAL_MAX_N}")
    energies = np.asarray(energies, dtype=float)
    if len(energies) == 0 or np.any(np.diff(energies) <= 0):
        raise ConfigError("Energy grid must be nonempty and strictly increasing")

    dims = Parallel(n_jobs=workers)(delayed(algebra_dimension)(spec, float(E), tol) for E in energies)
    generic = max(dims)
    low = [i for i, d in enumerate(dims) if d < generic]

    drops = []
    for _, run in itertools.groupby(enumerate(low), key=lambda item: item[1] - item[0]):
        run = [i for _, i in run]
        first, last = run[0], run[-1]
        left = energies[first]
        if first > 0:
            left = _refine_edge(spec, energies[first - 1], energies[first], generic, tol)
        right = energies[last]
        if last < len(energies) - 1:
            right = _refine_edge(spec, energies[last + 1], energies[last], generic, tol)
        drops.append((0.5 * (left + right), min(dims[i] for i in run)))

    if drops:
        logger.info(f"Found {len(drops)} dimension drops below {generic}: {[E for E, _ in drops]}")
    else:
        logger.info(f"No dimension drop on {len(energies)} grid points (dimension {generic})")
    return CriticalScan(
        points=[(float(E), int(d)) for E, d in zip(energies, dims)],
        drops=drops,
        generic_dim=generic,
    )
