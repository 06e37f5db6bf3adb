"""
Lyapunov spectra for dirac-loc
QR evolution of the transfer-matrix cocycle, symmetry checks, energy scans
with a Hölder fit, projected singular values and large-deviation frequencies
"""

from dataclasses import dataclass, field
from enum import Enum
import logging

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import binomtest, linregress

from config import DEFAULT_BATCHES, DEFAULT_REORTH_PERIOD, OVERFLOW_LOG_LIMIT, VANISHING_FLOOR
from services.errors import ConfigError, CoverageError, RankDeficientFrameError
from services.matgroup import structural_set
from services.model import ModelSpec, TransferMatrix, cell_transfers, sample_word
from services.rng import derive_seed

logger = logging.getLogger(__name__)

CHUNK_CELLS = 4096
LDP_CHUNK_SAMPLES = 256
FRAME_RANK_TOL = 1e-12
ISOTROPY_TOL = 1e-12


def positive_qr(M: np.ndarray) -> tuple:
    """QR with a nonnegative diagonal in R, for one matrix or a stack."""
    Q, R = np.linalg.qr(M)
    signs = np.where(np.diagonal(R, axis1=-2, axis2=-1) < 0, -1.0, 1.0)
    return Q * signs[..., None, :], signs[..., :, None] * R


@dataclass
class CocycleAccumulator:
    """Orthonormal frame pushed through a product of matrices."""
    frame: np.ndarray
    log_stretch: np.ndarray
    steps: int = 0
    reorth_period: int = DEFAULT_REORTH_PERIOD
    pending: np.ndarray | None = field(default=None, repr=False)
    pending_steps: int = 0

    @classmethod
    def start(cls, frame: np.ndarray, reorth_period: int = DEFAULT_REORTH_PERIOD) -> "CocycleAccumulator":
        if reorth_period < 1:
            raise ConfigError(f"reorth_period must be positive, got {reorth_period}")
        Q, R = positive_qr(np.asarray(frame, dtype=float))
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag.min() <= FRAME_RANK_TOL * max(1.0, diag.max()):
            raise RankDeficientFrameError(f"Initial frame of shape {np.shape(frame)} is rank deficient")
        return cls(frame=Q, log_stretch=np.zeros(Q.shape[1]), reorth_period=reorth_period)

    def push(self, T: np.ndarray):
        self.pending = T if self.pending is None else T @ self.pending
        self.steps += 1
        self.pending_steps += 1
        if self.pending_steps >= self.reorth_period:
            self.reorthonormalize()
        elif np.log(np.abs(self.pending).max()) > OVERFLOW_LOG_LIMIT:
            logger.debug(f"Early re-orthonormalization after {self.pending_steps} steps")
            self.reorthonormalize()

    def reorthonormalize(self):
        if self.pending is None:
            return
        Q, R = positive_qr(self.pending @ self.frame)
        self.frame = Q
        self.log_stretch += np.log(np.diag(R))
        self.pending = None
        self.pending_steps = 0


@dataclass(frozen=True)
class LyapunovEstimate:
    gamma: np.ndarray
    stderr: np.ndarray
    steps: int
    energy: float

    @property
    def size(self) -> int:
        return len(self.gamma)


class FrameFlavor(str, Enum):
    F_PLUS = "Fplus"
    F_MINUS = "Fminus"
    F_PLUS_PLUS = "FplusPlus"
    F_PLUS_MINUS = "FplusMinus"
    F_MINUS_PLUS = "FminusPlus"
    F_MINUS_MINUS = "FminusMinus"
    CUSTOM = "Custom"


@dataclass(frozen=True)
class LagrangianFrame:
    basis: np.ndarray
    flavor: FrameFlavor

    def __post_init__(self):
        B = np.asarray(self.basis, dtype=float)
        object.__setattr__(self, "flavor", FrameFlavor(self.flavor))
        if B.ndim != 2 or B.shape[0] % 2 or B.shape[1] > B.shape[0] // 2:
            raise ConfigError(f"Frame basis of shape {B.shape} is not 2N x k with k <= N")
        if not np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-10):
            raise RankDeficientFrameError("Frame columns are not orthonormal")
        if self.flavor is not FrameFlavor.CUSTOM:
            st = structural_set(B.shape[0] // 2)
            if np.abs(B.T @ st.J @ B).max(initial=0.0) > ISOTROPY_TOL:
                raise ConfigError(f"Frame {self.flavor.value} is not J-isotropic")
            if self.flavor not in (FrameFlavor.F_PLUS, FrameFlavor.F_MINUS):
                if np.abs(B.T @ st.S @ B).max(initial=0.0) > ISOTROPY_TOL:
                    raise ConfigError(f"Frame {self.flavor.value} is not S-isotropic")
        object.__setattr__(self, "basis", B)


def lagrangian_frame(N: int, flavor: FrameFlavor | str) -> LagrangianFrame:
    """
    Named frames: F_+ (upper half), F_- (lower half) and, for even N, their
    splittings into (x1, +-x1, ..., xd, +-xd) pairs.
    """
    flavor = FrameFlavor(flavor)
    if flavor is FrameFlavor.CUSTOM:
        raise ConfigError("Custom frames are built with custom_frame()")
    eye = np.eye(2 * N)
    if flavor is FrameFlavor.F_PLUS:
        return LagrangianFrame(eye[:, :N], flavor)
    if flavor is FrameFlavor.F_MINUS:
        return LagrangianFrame(eye[:, N:], flavor)

    if N % 2:
        raise ConfigError(f"Frame {flavor.value} needs even N, got {N}")
    offset = 0 if flavor in (FrameFlavor.F_PLUS_PLUS, FrameFlavor.F_PLUS_MINUS) else N
    sign = 1.0 if flavor in (FrameFlavor.F_PLUS_PLUS, FrameFlavor.F_MINUS_PLUS) else -1.0
    d = N // 2
    basis = np.zeros((2 * N, d))
    for p in range(d):
        basis[offset + 2 * p, p] = np.sqrt(0.5)
        basis[offset + 2 * p + 1, p] = sign * np.sqrt(0.5)
    return LagrangianFrame(basis, flavor)


def custom_frame(basis: np.ndarray) -> LagrangianFrame:
    Q, R = positive_qr(np.asarray(basis, dtype=float))
    if np.abs(np.diag(R)).min() <= FRAME_RANK_TOL * max(1.0, np.abs(R).max()):
        raise RankDeficientFrameError("Custom frame is rank deficient")
    return LagrangianFrame(Q, FrameFlavor.CUSTOM)


def _transfer_chunks(spec: ModelSpec, E: float, steps: int, seed: int, word=None):
    """Cell transfers for cells 0..steps-1, in order, in bounded chunks."""
    if word is not None and not word.covers(0, steps - 1):
        raise CoverageError(f"Word covers {word.n_min}..{word.n_max}, need 0..{steps - 1}")
    for start in range(0, steps, CHUNK_CELLS):
        stop = min(start + CHUNK_CELLS, steps)
        if word is None:
            entries = sample_word(spec, seed, start, stop - 1).entries
        else:
            entries = word.entries[start - word.n_min:stop - word.n_min]
        yield from cell_transfers(spec, entries, E)


def _evolve(transfers, frame: np.ndarray, steps: int, batches: int, reorth_period: int) -> tuple:
    """Total log-stretch and per-batch log-stretch increments."""
    if steps < 1:
        raise ConfigError(f"steps must be positive, got {steps}")
    batches = max(1, min(batches, steps))
    boundaries = set(np.cumsum([len(b) for b in np.array_split(np.arange(steps), batches)]).tolist())

    acc = CocycleAccumulator.start(frame, reorth_period)
    snapshots = [acc.log_stretch.copy()]
    for T in transfers:
        acc.push(T)
        if acc.steps in boundaries:
            acc.reorthonormalize()
            snapshots.append(acc.log_stretch.copy())
        if acc.steps == steps:
            break
    if acc.steps != steps:
        raise CoverageError(f"Transfer stream ended after {acc.steps} of {steps} steps")
    snapshots = np.array(snapshots)
    lengths = np.diff(sorted(boundaries | {0}))
    return acc.log_stretch, np.diff(snapshots, axis=0), lengths


def estimate_from_transfers(transfers, ell: float, steps: int, energy: float = 0.0,
                            batches: int = DEFAULT_BATCHES,
                            reorth_period: int = DEFAULT_REORTH_PERIOD) -> LyapunovEstimate:
    """Lyapunov spectrum of an explicit sequence of cell transfers."""
    transfers = iter(transfers)
    first = np.asarray(next(transfers))

    def stream():
        yield first
        yield from transfers

    total, increments, lengths = _evolve(stream(), np.eye(first.shape[0]), steps, batches, reorth_period)
    gamma = total / (ell * steps)
    if len(lengths) > 1:
        batch_gamma = increments / (ell * lengths[:, None])
        stderr = batch_gamma.std(axis=0, ddof=1) / np.sqrt(len(lengths))
    else:
        stderr = np.zeros_like(gamma)

    order = np.argsort(-gamma, kind="stable")
    return LyapunovEstimate(gamma=gamma[order], stderr=stderr[order], steps=steps, energy=float(energy))


def lyapunov_spectrum(spec: ModelSpec, E: float, steps: int, seed: int,
                      reorth_period: int = DEFAULT_REORTH_PERIOD,
                      batches: int = DEFAULT_BATCHES, word=None) -> LyapunovEstimate:
    """gamma_p = (1 / (ell n)) log s_p of the n-cell cocycle, with batch-means errors."""
    estimate = estimate_from_transfers(
        _transfer_chunks(spec, E, steps, seed, word), spec.ell, steps, E, batches, reorth_period,
    )
    logger.debug(f"Lyapunov spectrum at E={E}: {estimate.gamma}")
    return estimate


def symmetry_residual(est: LyapunovEstimate) -> float:
    """max_i |gamma_i + gamma_{2N-i+1}|"""
    gamma = np.asarray(est.gamma)
    return float(np.abs(gamma + gamma[::-1]).max())


def degeneracy_residual(est: LyapunovEstimate) -> float:
    """max_p |gamma_{2p-1} - gamma_{2p}|"""
    pairs = np.asarray(est.gamma)[: 2 * (len(est.gamma) // 2)].reshape(-1, 2)
    return float(np.abs(pairs[:, 0] - pairs[:, 1]).max())


def vanishing_count(est: LyapunovEstimate) -> int:
    threshold = np.maximum(3.0 * np.asarray(est.stderr), VANISHING_FLOOR)
    return int(np.sum(np.abs(est.gamma) <= threshold))


def directional_sum_check(spec: ModelSpec, E: float, x: np.ndarray, steps: int, seed: int,
                          reorth_period: int = DEFAULT_REORTH_PERIOD, word=None) -> float:
    """(1 / (ell n)) log ||Lambda^k Phi x|| for a 2N x k frame x."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != 2 * spec.N:
        raise ConfigError(f"Frame has {x.shape[0]} rows, model needs {2 * spec.N}")
    total, _, _ = _evolve(_transfer_chunks(spec, E, steps, seed, word), x, steps, 1, reorth_period)
    return float(total.sum() / (spec.ell * steps))


def projected_singular_values(T, frame: LagrangianFrame) -> np.ndarray:
    """Singular values of T restricted to the frame, descending."""
    entries = T.entries if isinstance(T, TransferMatrix) else np.asarray(T)
    return np.linalg.svd(entries @ frame.basis, compute_uv=False)


def contractivity_probe(spec: ModelSpec, E: float, p: int, steps: int, seed: int,
                        word=None, transfers=None) -> float:
    """
    gamma_{p+1} - gamma_p; negative when the p-th gap contracts. Sampled cells
    unless a fixed word or an explicit transfer sequence is given; transfers
    only take ell from the model.
    """
    if not 1 <= p <= spec.N:
        raise ConfigError(f"p must lie in 1..{spec.N}, got {p}")
    if transfers is not None:
        if word is not None:
            raise ConfigError("Give a word or a transfer sequence, not both")
        est = estimate_from_transfers(transfers, spec.ell, steps, E)
    else:
        est = lyapunov_spectrum(spec, E, steps, seed, word=word)
    return spectral_gap(est, p)


def spectral_gap(est: LyapunovEstimate, p: int) -> float:
    return float(est.gamma[p] - est.gamma[p - 1])


@dataclass(frozen=True)
class HolderFit:
    exponent: float
    constant: float
    r_squared: float


@dataclass
class EnergyScan:
    estimates: list
    holder: HolderFit
    flags: list  # (energy, vanishing count) where some exponents vanish


def upper_sum(est: LyapunovEstimate) -> float:
    """gamma_1 + ... + gamma_N"""
    return float(np.sum(est.gamma[: len(est.gamma) // 2]))


def holder_fit(energies, values) -> HolderFit:
    """
    Log-log regression of |f(E) - f(E')| against |E - E'| over all grid pairs.
    The exponent is clipped to [0, 1]; C is the smallest constant valid on the grid.
    """
    energies, values = np.asarray(energies, dtype=float), np.asarray(values, dtype=float)
    i, j = np.triu_indices(len(energies), k=1)
    gaps = np.abs(energies[i] - energies[j])
    jumps = np.abs(values[i] - values[j])
    usable = (gaps > 0) & (jumps > 0)
    if usable.sum() < 2:
        constant = float(np.max(jumps / gaps, initial=0.0)) if len(gaps) else 0.0
        return HolderFit(exponent=1.0, constant=constant, r_squared=float("nan"))

    fit = linregress(np.log(gaps[usable]), np.log(jumps[usable]))
    exponent = float(np.clip(fit.slope, 0.0, 1.0))
    constant = float(np.max(jumps[gaps > 0] / gaps[gaps > 0] ** exponent))
    return HolderFit(exponent=exponent, constant=constant, r_squared=float(fit.rvalue ** 2))


def energy_scan(spec: ModelSpec, energies, steps: int, seed: int, workers: int = 1,
                reorth_period: int = DEFAULT_REORTH_PERIOD, batches: int = DEFAULT_BATCHES) -> EnergyScan:
    """
    One estimate per grid energy. Every grid point sees the same disorder
    word, so neighbouring estimates share their fluctuations.
    """
    energies = np.asarray(energies, dtype=float)
    if np.any(np.diff(energies) <= 0):
        raise ConfigError("Energy grid must be strictly increasing")
    estimates = Parallel(n_jobs=workers)(
        delayed(lyapunov_spectrum)(spec, float(E), steps, seed, reorth_period, batches) for E in energies
    )
    holder = holder_fit(energies, [upper_sum(est) for est in estimates])
    flags = [(est.energy, vanishing_count(est)) for est in estimates if vanishing_count(est) > 0]
    logger.info(f"Energy scan over {len(energies)} points: Hölder exponent {holder.exponent:.3f}, "
                f"{len(flags)} points with vanishing exponents")
    return EnergyScan(estimates=list(estimates), holder=holder, flags=flags)


@dataclass(frozen=True)
class LdpResult:
    p_hat: float
    ci_low: float
    ci_high: float
    exceedances: int
    samples: int


def _frame_log_singular_values(table: np.ndarray, index: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """
    Frame pushed through the product cell by cell with a positive QR at each
    step; the product times the frame is Q R_n ... R_1, so its singular values
    are those of the accumulated triangular factor.
    """
    samples, n_cells = index.shape
    k = basis.shape[1]
    F = np.broadcast_to(basis, (samples,) + basis.shape).copy()
    R_total = np.broadcast_to(np.eye(k), (samples, k, k)).copy()
    log_scale = np.zeros(samples)
    for n in range(n_cells):
        F, R = positive_qr(table[index[:, n]] @ F)
        R_total = R @ R_total
        scale = np.abs(R_total).max(axis=(1, 2))
        R_total /= scale[:, None, None]
        log_scale += np.log(scale)
    return np.log(np.linalg.svd(R_total, compute_uv=False)) + log_scale[:, None]


def product_log_singular_values(spec: ModelSpec, E: float, n_cells: int, seeds,
                                basis: np.ndarray | None = None) -> np.ndarray:
    """
    log s_p of the n-cell product for each seed, shape (len(seeds), k).
    Without a basis only the top N values come from the rescaled product;
    the rest follow from symplectic pairing.
    """
    words = np.stack([sample_word(spec, s, 0, n_cells - 1).entries for s in seeds])
    alphabet, inverse = np.unique(words.reshape(-1, spec.N), axis=0, return_inverse=True)
    table = cell_transfers(spec, alphabet, E)
    index = np.asarray(inverse).reshape(len(seeds), n_cells)
    if basis is not None:
        return _frame_log_singular_values(table, index, np.asarray(basis, dtype=float))

    M = np.broadcast_to(np.eye(2 * spec.N), (len(seeds), 2 * spec.N, 2 * spec.N)).copy()
    log_scale = np.zeros(len(seeds))
    for n in range(n_cells):
        M = table[index[:, n]] @ M
        scale = np.abs(M).max(axis=(1, 2))
        M /= scale[:, None, None]
        log_scale += np.log(scale)

    top = np.log(np.linalg.svd(M, compute_uv=False)[:, : spec.N]) + log_scale[:, None]
    return np.concatenate([top, -top[:, ::-1]], axis=1)


def ldp_probability(spec: ModelSpec, E: float, p: int, eps: float, n_cells: int, samples: int,
                    seed: int, gamma_ref, frame: LagrangianFrame | None = None,
                    workers: int = 1) -> LdpResult:
    """Frequency of |(1 / (ell n)) log s_p - gamma_p| >= eps with a Wilson 95% interval."""
    size = 2 * spec.N if frame is None else frame.basis.shape[1]
    if not 1 <= p <= size:
        raise ConfigError(f"p must lie in 1..{size}, got {p}")
    if samples < 100:
        raise ConfigError(f"Need at least 100 samples, got {samples}")
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    gamma_ref = np.atleast_1d(np.asarray(gamma_ref, dtype=float))
    reference = gamma_ref[p - 1] if len(gamma_ref) > 1 else gamma_ref[0]

    seeds = [derive_seed(seed, k) for k in range(samples)]
    chunks = [seeds[i:i + LDP_CHUNK_SAMPLES] for i in range(0, samples, LDP_CHUNK_SAMPLES)]
    basis = None if frame is None else frame.basis
    results = Parallel(n_jobs=workers)(
        delayed(product_log_singular_values)(spec, E, n_cells, chunk, basis) for chunk in chunks
    )
    rates = np.concatenate(results)[:, p - 1] / (spec.ell * n_cells)
    exceedances = int(np.sum(np.abs(rates - reference) >= eps))

    ci = binomtest(exceedances, samples).proportion_ci(confidence_level=0.95, method="wilson")
    logger.info(f"LDP at n={n_cells}, p={p}, eps={eps}: {exceedances}/{samples}")
    return LdpResult(
        p_hat=exceedances / samples,
        ci_low=float(ci.low),
        ci_high=float(ci.high),
        exceedances=exceedances,
        samples=samples,
    )
