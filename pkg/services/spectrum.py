"""
Finite-volume spectra for dirac-loc
Dirichlet boxes solved by shooting, integrated density of states, Wegner
frequencies and the Thouless-formula residual
"""

from dataclasses import dataclass
import logging
import math

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import quad
from scipy.linalg import expm
from scipy.optimize import minimize_scalar
from scipy.stats import binomtest

from config import BISECTION_TOL, ENDPOINT_TOL, MULTIPLICITY_TOL, THOULESS_MARGIN
from services.errors import ConfigError, CoverageError, DomainError, NumericalError
from services.lyapunov import EnergyScan, upper_sum
from services.model import DisorderWord, ModelSpec, Kind, cell_generators, potentials, sample_word
from services.rng import sample_seed_chunks

logger = logging.getLogger(__name__)

ENERGY_CHUNK = 2048
DIP_SUBDIVISIONS = 32
MIN_GRID_POINTS = 9
KERNEL_FLOOR = 1e-12


@dataclass(frozen=True)
class BoxSpec:
    """Dirichlet box (center - ell L, center + ell L) in units of cells."""
    L: int
    center: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError(f"Box half-width must be a positive number of cells, got {self.L}")

    @property
    def cells(self) -> tuple:
        return self.center - self.L, self.center + self.L - 1

    def interval(self, ell: float) -> tuple:
        return (self.center - self.L) * ell, (self.center + self.L) * ell

    def volume(self, ell: float) -> float:
        return 2.0 * ell * self.L

    def entries(self, word: DisorderWord) -> np.ndarray:
        """omega for the box cells, in cell order."""
        lo, hi = self.cells
        if not word.covers(lo, hi):
            raise CoverageError(f"Box cells {lo}..{hi} outside word cells {word.n_min}..{word.n_max}")
        return word.entries[lo - word.n_min:hi - word.n_min + 1]


@dataclass(frozen=True)
class IdsCurve:
    energies: np.ndarray
    F: np.ndarray
    stderr: np.ndarray
    L: int
    samples: int


@dataclass(frozen=True)
class GammaCurve:
    """Sum of the top N Lyapunov exponents on an energy grid."""
    energies: np.ndarray
    gamma_sum: np.ndarray
    stderr: np.ndarray

    @classmethod
    def from_scan(cls, scan: EnergyScan) -> "GammaCurve":
        estimates = scan.estimates
        half = estimates[0].size // 2
        return cls(
            energies=np.array([est.energy for est in estimates]),
            gamma_sum=np.array([upper_sum(est) for est in estimates]),
            stderr=np.array([math.sqrt(np.sum(est.stderr[:half] ** 2)) for est in estimates]),
        )


@dataclass(frozen=True)
class ThoulessReport:
    a_fit: float
    max_residual: float
    truncation_bound: float
    ids_window: tuple
    eval_window: tuple


def _shoot(spec: ModelSpec, word: DisorderWord, box: BoxSpec, energies) -> tuple:
    """
    Propagate the Dirichlet frame [0; I] across the box for every energy.
    Returns the upper block of the orthonormal frame, shape (n, N, N), and
    the accumulated log of the positive R diagonals; the (1,2) block of the
    box transfer is Q_up times an upper-triangular factor with that log-det.
    """
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    entries = box.entries(word)
    alphabet, inverse = np.unique(entries, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    X0 = cell_generators(spec, alphabet, 0.0)
    dX = cell_generators(spec, alphabet, 1.0) - X0
    N = spec.N

    uppers, logs = [], []
    for start in range(0, len(energies), ENERGY_CHUNK):
        E = energies[start:start + ENERGY_CHUNK]
        table = expm(spec.ell * (X0[:, None] + E[None, :, None, None] * dX[:, None]))
        if not np.all(np.isfinite(table)):
            raise NumericalError("Matrix exponential overflowed in the box propagation")
        Q = np.broadcast_to(np.eye(2 * N)[:, N:], (len(E), 2 * N, N)).copy()
        log_r = np.zeros(len(E))
        for a in inverse:
            Q, R = np.linalg.qr(table[a] @ Q)
            d = np.diagonal(R, axis1=1, axis2=2)
            Q = Q * np.where(d < 0, -1.0, 1.0)[:, None, :]
            log_r += np.log(np.abs(d)).sum(axis=1)
        uppers.append(Q[:, :N, :])
        logs.append(log_r)
    return np.concatenate(uppers), np.concatenate(logs)


def boundary_determinant(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float) -> float:
    """det of the upper-right block of the box transfer; zero exactly at restricted eigenvalues."""
    upper, log_r = _shoot(spec, word, box, [E])
    sign, logdet = np.linalg.slogdet(upper[0])
    return float(sign * math.exp(logdet + log_r[0])) if sign else 0.0


def _potential_scale(spec: ModelSpec, word: DisorderWord, box: BoxSpec) -> float:
    entries = box.entries(word)
    if spec.kind is Kind.SCHRODINGER:
        V = spec.v_per[None] + entries[:, :, None] * np.eye(spec.N)[None]
    else:
        V = potentials(spec, np.unique(entries, axis=0))
    return float(np.linalg.norm(V, 2, axis=(1, 2)).max())


def _bisect(spec: ModelSpec, word: DisorderWord, box: BoxSpec, lo, hi, sign_lo) -> np.ndarray:
    """Simultaneous bisection of sign-change brackets down to BISECTION_TOL."""
    lo, hi, sign_lo = np.array(lo, dtype=float), np.array(hi, dtype=float), np.array(sign_lo)
    while len(lo) and np.max(hi - lo) > BISECTION_TOL:
        mid = 0.5 * (lo + hi)
        upper, _ = _shoot(spec, word, box, mid)
        sign_mid = np.sign(np.linalg.det(upper))
        left = sign_mid == sign_lo
        lo = np.where(left, mid, lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def _multiplicity(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, scale: float) -> int:
    upper, _ = _shoot(spec, word, box, [E])
    s = np.linalg.svd(upper[0], compute_uv=False)
    return max(1, int(np.sum(s < MULTIPLICITY_TOL * scale)))


def _refine_dip(spec: ModelSpec, word: DisorderWord, box: BoxSpec, lo: float, center: float,
                hi: float, scale: float) -> list:
    """Roots hidden in a dip of the smallest singular value between two grid points."""
    fine = np.linspace(lo, hi, DIP_SUBDIVISIONS + 1)
    upper, _ = _shoot(spec, word, box, fine)
    signs = np.sign(np.linalg.det(upper))
    change = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
    if len(change):
        logger.warning(f"Grid too coarse near [{lo:.6g}, {hi:.6g}]: {len(change)} sign changes inside one dip")
        return list(_bisect(spec, word, box, fine[change], fine[change + 1], signs[change]))

    # offsets from the dip keep the minimizer's relative tolerance small
    def smallest(u):
        upper, _ = _shoot(spec, word, box, [center + u])
        return np.linalg.svd(upper[0], compute_uv=False)[-1]

    result = minimize_scalar(
        smallest, bounds=(lo - center, hi - center), method="bounded", options={"xatol": BISECTION_TOL},
    )
    if result.fun < MULTIPLICITY_TOL * scale:
        return [center + float(result.x)]
    return []


def restricted_eigenvalues(spec: ModelSpec, word: DisorderWord, box: BoxSpec, window: tuple) -> list:
    """
    Eigenvalues of the Dirichlet restriction in the window with multiplicities.
    Sign changes of the boundary determinant are bisected; dips of the
    smallest singular value without a sign change are refined locally.
    """
    E_lo, E_hi = map(float, window)
    if not (math.isfinite(E_lo) and math.isfinite(E_hi)) or E_lo >= E_hi:
        raise ConfigError(f"Eigenvalue window must be finite and nonempty, got {window}")

    volume = box.volume(spec.ell)
    norm = _potential_scale(spec, word, box)
    step = math.pi / (4.0 * volume * (1.0 + norm))
    grid = np.linspace(E_lo, E_hi, max(MIN_GRID_POINTS, math.ceil((E_hi - E_lo) / step) + 1))
    scale = max(1.0, volume * (1.0 + norm))

    upper, _ = _shoot(spec, word, box, grid)
    signs = np.sign(np.linalg.det(upper))
    smallest = np.linalg.svd(upper, compute_uv=False)[:, -1]

    roots = list(grid[signs == 0])
    change = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
    roots.extend(_bisect(spec, word, box, grid[change], grid[change + 1], signs[change]))

    same = signs[:-1] * signs[1:] > 0
    dips = [
        i for i in range(1, len(grid) - 1)
        if same[i - 1] and same[i] and smallest[i] < smallest[i - 1] and smallest[i] <= smallest[i + 1]
    ]
    for i in dips:
        roots.extend(_refine_dip(spec, word, box, grid[i - 1], grid[i], grid[i + 1], scale))

    roots = sorted(float(E) for E in roots)
    merged = []
    for E in roots:
        if merged and E - merged[-1] <= 10 * BISECTION_TOL:
            continue
        merged.append(E)
    result = [(E, _multiplicity(spec, word, box, E, scale)) for E in merged]
    logger.debug(f"{len(result)} restricted eigenvalues in [{E_lo}, {E_hi}] for L={box.L}")
    return result


def _signed_counts(eigenvalues: list, energies: np.ndarray) -> np.ndarray:
    """Eigenvalues between 0 and E, negative for E < 0; endpoints count one half."""
    lam = np.array([E for E, _ in eigenvalues], dtype=float)[:, None]
    mult = np.array([m for _, m in eigenvalues], dtype=float)[:, None]
    E = energies[None, :]
    inside = (lam >= np.minimum(E, 0.0) - ENDPOINT_TOL) & (lam <= np.maximum(E, 0.0) + ENDPOINT_TOL)
    weight = np.where((np.abs(lam) <= ENDPOINT_TOL) | (np.abs(lam - E) <= ENDPOINT_TOL), 0.5, 1.0)
    return np.sign(energies) * np.sum(inside * weight * mult, axis=0)


def _sample_counts(spec: ModelSpec, box: BoxSpec, seeds: list, energies: np.ndarray, window: tuple) -> np.ndarray:
    lo, hi = box.cells
    rows = []
    for s in seeds:
        word = sample_word(spec, s, lo, hi)
        rows.append(_signed_counts(restricted_eigenvalues(spec, word, box, window), energies))
    return np.array(rows)


def ids_estimate(spec: ModelSpec, L: int, samples: int, E_grid, seed: int, workers: int = 1) -> IdsCurve:
    """F(E) averaged over disorder samples, normalized by the box length 2 ell L."""
    energies = np.asarray(E_grid, dtype=float)
    if len(energies) == 0 or np.any(np.diff(energies) <= 0):
        raise ConfigError("IDS energy grid must be nonempty and strictly increasing")
    if samples < 1:
        raise ConfigError(f"samples must be positive, got {samples}")
    box = BoxSpec(L)
    window = (min(energies[0], 0.0) - 2 * ENDPOINT_TOL, max(energies[-1], 0.0) + 2 * ENDPOINT_TOL)

    chunks = sample_seed_chunks(seed, samples, workers)
    results = Parallel(n_jobs=workers)(
        delayed(_sample_counts)(spec, box, chunk, energies, window) for chunk in chunks
    )
    F = np.concatenate(results) / box.volume(spec.ell)
    stderr = F.std(axis=0, ddof=1) / math.sqrt(samples) if samples > 1 else np.zeros(len(energies))
    logger.info(f"IDS over {samples} samples at L={L} on {len(energies)} energies")
    return IdsCurve(energies=energies, F=F.mean(axis=0), stderr=stderr, L=L, samples=samples)


def free_ids(N: int, energies) -> IdsCurve:
    """F_0(E) = N E / pi"""
    energies = np.asarray(energies, dtype=float)
    return IdsCurve(energies=energies, F=N * energies / math.pi, stderr=np.zeros(len(energies)), L=0, samples=0)


def ids_deviation_bound(curve: IdsCurve, N: int) -> float:
    """Empirical constant C in |F(E) - F_0(E)| <= C on the curve's window."""
    return float(np.abs(curve.F - N * curve.energies / math.pi).max())


def _wegner_hits(spec: ModelSpec, box: BoxSpec, seeds: list, E: float, radius: float) -> int:
    lo, hi = box.cells
    window = (E - radius - ENDPOINT_TOL, E + radius + ENDPOINT_TOL)
    hits = 0
    for s in seeds:
        eigenvalues = restricted_eigenvalues(spec, sample_word(spec, s, lo, hi), box, window)
        hits += any(abs(lam - E) <= radius for lam, _ in eigenvalues)
    return hits


def wegner_probability(spec: ModelSpec, E: float, L: int, sigma: float, beta: float, samples: int,
                       seed: int, workers: int = 1) -> tuple:
    """Frequency of dist(E, restricted spectrum) <= exp(-sigma L^beta) with a Wilson 95% interval."""
    if not 0.0 < beta < 1.0:
        raise ConfigError(f"beta must lie in (0, 1), got {beta}")
    if samples < 1:
        raise ConfigError(f"samples must be positive, got {samples}")
    radius = math.exp(-sigma * L ** beta)
    box = BoxSpec(L)

    chunks = sample_seed_chunks(seed, samples, workers)
    hits = sum(Parallel(n_jobs=workers)(
        delayed(_wegner_hits)(spec, box, chunk, E, radius) for chunk in chunks
    ))
    ci = binomtest(hits, samples).proportion_ci(confidence_level=0.95, method="wilson")
    logger.info(f"Wegner at E={E}, L={L}: {hits}/{samples} within {radius:.3e}")
    return hits / samples, (float(ci.low), float(ci.high))


def _kernel(E, t):
    """log |(E - t) / (t - i)|, clipped at the integrable singularity t = E"""
    return np.log(np.maximum(np.abs(E - t), KERNEL_FLOOR)) - 0.5 * np.log1p(t * t)


def _tail_bound(E: float, edge: float, direction: int) -> float:
    """integral of |d/dt kernel| beyond the edge plus the boundary term"""
    def derivative(t):
        return abs((1.0 + t * E) / ((t - E) * (t * t + 1.0)))

    if direction > 0:
        integral, _ = quad(derivative, edge, math.inf)
    else:
        integral, _ = quad(derivative, -math.inf, edge)
    return abs(float(_kernel(E, edge))) + integral


def thouless_residual(gamma_curve: GammaCurve, ids_curve: IdsCurve, free_ids_curve: IdsCurve, E_eval_grid,
                      margin: float = THOULESS_MARGIN) -> ThoulessReport:
    """
    Fit gamma_sum(E) = -a + int log|(E - t) / (t - i)| d(F - F_0)(t) on the
    evaluation grid. The integral is a midpoint Stieltjes sum on the IDS grid.
    """
    E_eval = np.asarray(E_eval_grid, dtype=float)
    t = np.asarray(ids_curve.energies, dtype=float)
    if not np.array_equal(t, np.asarray(free_ids_curve.energies, dtype=float)):
        raise ConfigError("IDS and free IDS curves must share one energy grid")
    if t[0] > E_eval.min() - margin or t[-1] < E_eval.max() + margin:
        raise DomainError(
            f"IDS window [{t[0]}, {t[-1]}] needs a margin of {margin} around [{E_eval.min()}, {E_eval.max()}]"
        )
    if gamma_curve.energies[0] > E_eval.min() or gamma_curve.energies[-1] < E_eval.max():
        raise DomainError("Evaluation grid leaves the Lyapunov curve's window")

    D = ids_curve.F - free_ids_curve.F
    midpoints = 0.5 * (t[1:] + t[:-1])
    integral = _kernel(E_eval[:, None], midpoints[None, :]) @ np.diff(D)
    gamma = np.interp(E_eval, gamma_curve.energies, gamma_curve.gamma_sum)

    a_fit = float(np.mean(integral - gamma))
    residual = float(np.abs(gamma + a_fit - integral).max())
    C = float(np.abs(D).max())
    truncation = C * max(_tail_bound(E, t[-1], 1) + _tail_bound(E, t[0], -1) for E in E_eval)
    logger.info(f"Thouless fit a={a_fit:.4g}, residual {residual:.3e}, truncation bound {truncation:.3e}")
    return ThoulessReport(
        a_fit=a_fit,
        max_residual=residual,
        truncation_bound=truncation,
        ids_window=(float(t[0]), float(t[-1])),
        eval_window=(float(E_eval.min()), float(E_eval.max())),
    )
