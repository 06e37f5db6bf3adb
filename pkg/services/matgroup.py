"""
Matrix groups for dirac-loc
Structural matrices, group-membership predicates, the ^s operator,
the spo basis with its bracket identities and the KRU decomposition
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
import logging

import numpy as np

from config import MEMBERSHIP_TOL, KRU_RECONSTRUCTION_TOL, KRU_DEGENERACY_TOL
from services.errors import DimensionError, MembershipError, NumericalError

logger = logging.getLogger(__name__)

SQRT_HALF = np.sqrt(0.5)

PAULI = (
    np.eye(2),
    np.array([[0.0, 1.0], [1.0, 0.0]]),
    np.array([[0.0, -1.0j], [1.0j, 0.0]]),
    np.array([[1.0, 0.0], [0.0, -1.0]]),
)


class GroupTag(str, Enum):
    GENERAL_LINEAR = "GeneralLinear"
    SYMPLECTIC = "Symplectic"
    ORTHO_SYMPLECTIC = "OrthoSymplectic"
    SPECIAL_ORTHOGONAL = "SpecialOrthogonal"
    COMPLEX_SYMPLECTIC = "ComplexSymplectic"


class Classification(str, Enum):
    FULL_SYMPLECTIC = "FullSymplectic"
    ORTHO_SYMPLECTIC = "OrthoSymplectic"
    INSIDE_SPECIAL_ORTHOGONAL = "InsideSpecialOrthogonal"
    OTHER = "Other"


@dataclass(frozen=True)
class StructuralSet:
    N: int
    J: np.ndarray
    S: np.ndarray
    K: np.ndarray
    P: np.ndarray
    Delta: np.ndarray
    pauli: tuple = PAULI


@dataclass
class LieBasis:
    """Frobenius-orthonormal spanning set of a matrix Lie algebra."""
    elements: list
    dim: int
    classification: Classification | None = None
    tol: float = MEMBERSHIP_TOL
    closed: bool = True

    def stacked(self) -> np.ndarray:
        if not self.elements:
            return np.zeros((0, 0, 0))
        return np.stack(self.elements)


@dataclass(frozen=True)
class KRUDecomposition:
    K: np.ndarray
    R: np.ndarray
    U: np.ndarray
    t: np.ndarray


def _frozen(matrix: np.ndarray) -> np.ndarray:
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=64)
def structural_set(N: int) -> StructuralSet:
    """J, S, K, P and Delta for N lines."""
    if N < 1:
        raise DimensionError(f"N must be positive, got {N}")
    eye = np.eye(N)
    zero = np.zeros((N, N))
    K = np.diag([(-1.0) ** i for i in range(N)])  # (-1)^{i+1} with 1-based i
    J = np.block([[zero, -eye], [eye, zero]])
    S = np.block([[K, zero], [zero, K]])
    P = SQRT_HALF * np.block([[eye, eye], [eye, -eye]])
    Delta = np.eye(N, k=1) + np.eye(N, k=-1)
    return StructuralSet(
        N=N, J=_frozen(J), S=_frozen(S), K=_frozen(K),
        P=_frozen(P), Delta=_frozen(Delta),
    )


def half_size(M: np.ndarray) -> int:
    """N for a 2N x 2N matrix; dimension error otherwise."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {M.shape}")
    if M.shape[0] % 2:
        raise DimensionError(f"Expected even size, got {M.shape[0]}")
    return M.shape[0] // 2


def default_tol(M: np.ndarray) -> float:
    return MEMBERSHIP_TOL * max(1.0, float(np.linalg.norm(M)))


def is_symplectic(M: np.ndarray, tol: float | None = None, complex_mode: bool | None = None) -> bool:
    """
    True iff ||M^T J M - J||_F <= tol.
    Complex input (or complex_mode=True) uses the conjugate transpose.
    """
    M = np.asarray(M)
    N = half_size(M)
    tol = default_tol(M) if tol is None else tol
    if complex_mode is None:
        complex_mode = np.iscomplexobj(M)
    J = structural_set(N).J
    adjoint = M.conj().T if complex_mode else M.T
    return bool(np.linalg.norm(adjoint @ J @ M - J) <= tol)


def is_spo(M: np.ndarray, tol: float | None = None) -> bool:
    """True iff M preserves both J and S."""
    M = np.asarray(M)
    N = half_size(M)
    tol = default_tol(M) if tol is None else tol
    st = structural_set(N)
    return bool(
        np.linalg.norm(M.T @ st.J @ M - st.J) <= tol
        and np.linalg.norm(M.T @ st.S @ M - st.S) <= tol
    )


def is_orthogonal(M: np.ndarray, tol: float | None = None) -> bool:
    M = np.asarray(M)
    tol = default_tol(M) if tol is None else tol
    return bool(np.linalg.norm(M.T @ M - np.eye(M.shape[0])) <= tol)


def classify_matrix(M: np.ndarray, tol: float | None = None) -> GroupTag:
    """Strongest group tag the matrix earns at the given tolerance."""
    M = np.asarray(M)
    if np.iscomplexobj(M) and np.any(np.abs(M.imag) > 0):
        if is_symplectic(M, tol, complex_mode=True):
            return GroupTag.COMPLEX_SYMPLECTIC
        return GroupTag.GENERAL_LINEAR
    M = np.real(M)
    if not is_symplectic(M, tol):
        return GroupTag.GENERAL_LINEAR
    if is_spo(M, tol):
        return GroupTag.ORTHO_SYMPLECTIC
    if is_orthogonal(M, tol):
        return GroupTag.SPECIAL_ORTHOGONAL
    return GroupTag.SYMPLECTIC


def s_transpose(A: np.ndarray) -> np.ndarray:
    """(^sA)_{ij} = (-1)^{i-j+1} A_{ji}."""
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"Expected a square matrix, got shape {A.shape}")
    idx = np.arange(A.shape[0])
    sign = -((-1.0) ** (idx[:, None] - idx[None, :]))
    return sign * A.T


def s_symmetrize(A: np.ndarray) -> np.ndarray:
    """Projection onto {^sA = A}."""
    return 0.5 * (A + s_transpose(A))


def sp_project(M: np.ndarray) -> np.ndarray:
    """Orthogonal projection onto sp_N: X is in sp_N iff JX is symmetric."""
    J = structural_set(half_size(M)).J
    JX = J @ M
    return -J @ (0.5 * (JX + JX.T))


def in_sp_algebra(X: np.ndarray, tol: float) -> bool:
    J = structural_set(half_size(X)).J
    return bool(np.linalg.norm(X.T @ J + J @ X) <= tol)


def in_spo_algebra(X: np.ndarray, tol: float) -> bool:
    st = structural_set(half_size(X))
    return bool(
        np.linalg.norm(X.T @ st.J + st.J @ X) <= tol
        and np.linalg.norm(X.T @ st.S + st.S @ X) <= tol
    )


def lie_bracket(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A, B = np.asarray(A), np.asarray(B)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"Bracket of shapes {A.shape} and {B.shape}")
    return A @ B - B @ A


def _unit(N: int, i: int, j: int) -> np.ndarray:
    E = np.zeros((N, N))
    E[i - 1, j - 1] = 1.0
    return E


def _sign(i: int, j: int) -> float:
    """(-1)^{i-j+1}"""
    return -1.0 if (i - j) % 2 == 0 else 1.0


def v_matrix(N: int, i: int, j: int) -> np.ndarray:
    """V_ij, block-diagonal element of spo_N (1-based indices)."""
    Eij, Eji = _unit(N, i, j), _unit(N, j, i)
    a = _sign(i, j)
    zero = np.zeros((N, N))
    return np.block([[Eij + a * Eji, zero], [zero, -a * Eij - Eji]])


def w_matrix(N: int, i: int, j: int) -> np.ndarray:
    """W_ij, off-diagonal element of spo_N (1-based indices)."""
    B = _unit(N, i, j) + _unit(N, j, i)
    zero = np.zeros((N, N))
    return np.block([[zero, B], [_sign(i, j) * B, zero]])


def spo_basis(N: int) -> LieBasis:
    """Normalized V_ij (i<j) and W_ij (i<=j); V_ii vanishes and is left out."""
    if N < 1:
        raise DimensionError(f"N must be positive, got {N}")
    elements = []
    for i in range(1, N + 1):
        for j in range(i, N + 1):
            if i < j:
                V = v_matrix(N, i, j)
                elements.append(V / np.linalg.norm(V))
            W = w_matrix(N, i, j)
            elements.append(W / np.linalg.norm(W))
    return LieBasis(
        elements=elements,
        dim=len(elements),
        classification=Classification.ORTHO_SYMPLECTIC,
    )


def bracket_identity_check(N: int, i: int, j: int, k: int, r: int) -> float:
    """
    Residual of the closed-form brackets [V_ij, W_kr] and [W_ij, W_kr].
    Returns the larger Frobenius residual.
    """
    for index in (i, j, k, r):
        if not 1 <= index <= N:
            raise DimensionError(f"Index {index} outside 1..{N}")

    def delta(p: int, q: int) -> float:
        return 1.0 if p == q else 0.0

    V, W = (lambda p, q: v_matrix(N, p, q)), (lambda p, q: w_matrix(N, p, q))

    rhs_vw = (
        _sign(i, j) * (delta(i, k) * W(j, r) + delta(i, r) * W(j, k))
        + delta(j, k) * W(i, r)
        + delta(j, r) * W(i, k)
    )
    rhs_ww = _sign(k, r) * (
        delta(j, k) * V(i, r) + delta(j, r) * V(i, k)
        + delta(i, k) * V(j, r) + delta(i, r) * V(j, k)
    )
    res_vw = np.linalg.norm(lie_bracket(V(i, j), W(k, r)) - rhs_vw)
    res_ww = np.linalg.norm(lie_bracket(W(i, j), W(k, r)) - rhs_ww)
    return float(max(res_vw, res_ww))


def normal_form(t: np.ndarray, N: int) -> np.ndarray:
    """Block matrix diag(B_t1..B_td[,1]) (+) diag(B_-t1..B_-td[,1])."""
    t = np.asarray(t, dtype=float)
    top = np.eye(N)
    for p, tp in enumerate(t):
        c, s = np.cosh(tp), np.sinh(tp)
        top[2 * p:2 * p + 2, 2 * p:2 * p + 2] = [[c, s], [s, c]]
    bottom = top.copy()
    for p in range(len(t)):
        bottom[2 * p, 2 * p + 1] *= -1.0
        bottom[2 * p + 1, 2 * p] *= -1.0
    zero = np.zeros((N, N))
    return np.block([[top, zero], [zero, bottom]])


def _structured_basis(basis: np.ndarray, structure: np.ndarray) -> list:
    """
    Pick m/2 unit vectors v from span(basis) such that the vectors v and
    structure @ v, over all picks, are orthonormal. structure must be an
    orthogonal antisymmetric map preserving span(basis).
    """
    dim, m = basis.shape
    if m % 2:
        raise NumericalError(f"Invariant subspace of odd dimension {m}")
    span = np.zeros((dim, 0))
    picked = []
    for _ in range(m // 2):
        residual = basis - span @ (span.T @ basis)
        residual -= span @ (span.T @ residual)
        v = residual[:, np.argmax(np.linalg.norm(residual, axis=0))]
        v = v / np.linalg.norm(v)
        w = structure @ v
        w -= span @ (span.T @ w) + v * (v @ w)
        w = w / np.linalg.norm(w)
        span = np.column_stack([span, v, w])
        picked.append(v)
    return picked


def _eigen_clusters(indices: np.ndarray, t: np.ndarray) -> list:
    clusters = []
    for index in indices:
        if clusters and abs(t[index] - t[clusters[-1][-1]]) <= KRU_DEGENERACY_TOL * max(1.0, abs(t[index])):
            clusters[-1].append(index)
        else:
            clusters.append([index])
    return clusters


def kru_decompose(M: np.ndarray, tol: float | None = None) -> KRUDecomposition:
    """
    M = K R U with K, U orthogonal in SpO_N and R in block normal form.
    The right singular vectors of M are grouped into quadruples
    (v, Jv, Sv, JSv) which U sends onto the standard basis.
    """
    M = np.asarray(M, dtype=float)
    N = half_size(M)
    if not is_spo(M, tol):
        raise MembershipError("Matrix is not in SpO_N(R)")
    st = structural_set(N)
    J, S = st.J, st.S
    JS = J @ S

    try:
        _, sing, vh = np.linalg.svd(M)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"SVD failed: {e}") from e
    t_all = np.log(sing)
    vecs = vh.T

    quadruples = []  # (t, v)
    positive = np.flatnonzero(t_all > KRU_DEGENERACY_TOL)
    for cluster in _eigen_clusters(positive, t_all):
        t_c = float(np.mean(t_all[cluster]))
        for v in _structured_basis(vecs[:, cluster], JS):
            quadruples.append((t_c, v))

    ones = vecs[:, np.abs(t_all) <= KRU_DEGENERACY_TOL]
    halves = []
    for sign in (1.0, -1.0):
        projected = 0.5 * (ones + sign * (S @ ones))
        u, s, _ = np.linalg.svd(projected, full_matrices=False)
        halves.append(_structured_basis(u[:, s > 0.5], J))
    plus, minus = halves
    if len(plus) - len(minus) != N % 2:
        raise NumericalError(f"Unexpected split of the unit eigenspace: {len(plus)} and {len(minus)}")
    for a, b in zip(plus, minus):
        quadruples.append((0.0, SQRT_HALF * (a + b)))
    if len(quadruples) != N // 2:
        raise NumericalError(f"Found {len(quadruples)} quadruples for N={N}")

    quadruples.sort(key=lambda item: -item[0])
    sources = np.zeros((2 * N, 2 * N))
    targets = np.zeros((2 * N, 2 * N))
    column = 0
    for p, (_, v) in enumerate(quadruples):
        lo, hi = 2 * p, 2 * p + 1
        for src, row_a, row_b, sign in (
            (v, lo, hi, 1.0),
            (S @ v, lo, hi, -1.0),
            (J @ v, N + lo, N + hi, 1.0),
            (JS @ v, N + lo, N + hi, -1.0),
        ):
            sources[:, column] = src
            targets[row_a, column] = SQRT_HALF
            targets[row_b, column] = sign * SQRT_HALF
            column += 1
    if N % 2:
        v = plus[-1]
        sources[:, column], targets[N - 1, column] = v, 1.0
        sources[:, column + 1], targets[2 * N - 1, column + 1] = J @ v, 1.0

    U = targets @ sources.T
    t = np.array([item[0] for item in quadruples])
    R = normal_form(t, N)
    K = M @ U.T @ normal_form(-t, N)

    scale = max(1.0, float(np.linalg.norm(M)))
    if np.linalg.norm(K @ R @ U - M) > KRU_RECONSTRUCTION_TOL * scale:
        raise NumericalError("KRU reconstruction failed")
    if np.linalg.norm(K.T @ K - np.eye(2 * N)) > KRU_RECONSTRUCTION_TOL * scale:
        raise NumericalError("KRU factor K is not orthogonal")
    logger.debug(f"KRU decomposition with t={t}")
    return KRUDecomposition(K=K, R=R, U=U, t=t)
