"""
Green kernels for dirac-loc
Boundary-value solutions launched from the Dirichlet ends of a box, the
Dirac and Schrödinger kernels built from them, decay fits over disorder and
the regularity frequency of the Schur surrogate
"""

from dataclasses import dataclass, field
from enum import Enum
import logging
import math

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import expm, solve_triangular
from scipy.stats import binomtest, linregress

from config import (
    BOOTSTRAP_RESAMPLES,
    COLLAR,
    CONDITION_LIMIT,
    SCHUR_X_POINTS,
    SCHUR_Y_POINTS,
    SINGULAR_RATE_LIMIT,
)
from services.errors import ConfigError, DataQualityError, ModelError, SingularConfigurationError
from services.lyapunov import positive_qr
from services.matgroup import structural_set
from services.model import DisorderWord, Kind, ModelSpec, cell_generators, cell_transfers, sample_word
from services.rng import sample_seed_chunks
from services.spectrum import BoxSpec

logger = logging.getLogger(__name__)

POSITION_SNAP = 1e-9  # relative to ell


class Side(str, Enum):
    PLUS = "plus"
    MINUS = "minus"


@dataclass(frozen=True)
class BoundarySolution:
    """
    Phi_+ (launched at the right end) or Phi_- (launched at the left end)
    with Phi = (0; I) at the launch point. Stored as orthonormal frames at
    the positions in path order plus the triangular step between consecutive
    positions, so that Phi(p_k) = frames[k] @ steps[k] @ ... @ steps[1].
    """
    side: Side
    energy: float
    positions: np.ndarray
    frames: np.ndarray
    steps: np.ndarray

    @property
    def N(self) -> int:
        return self.frames.shape[2]

    def index(self, x: float) -> int:
        k = int(np.argmin(np.abs(self.positions - x)))
        if abs(self.positions[k] - x) > POSITION_SNAP * max(1.0, abs(x)):
            raise ConfigError(f"Position {x} is not stored in the {self.side.value} solution")
        return k

    def transports(self, i: int, targets) -> dict:
        """
        Steps product from position i to each later target, as (P, log scale)
        with the product equal to exp(log scale) P.
        """
        targets = sorted(set(targets))
        if targets and targets[0] < i:
            raise ConfigError("Transport targets must follow the start in path order")
        P = np.eye(self.N)
        log_scale = 0.0
        out = {}
        k = i
        for j in targets:
            while k < j:
                k += 1
                P = self.steps[k] @ P
                c = np.abs(P).max()
                P = P / c
                log_scale += math.log(c)
            out[j] = (P.copy(), log_scale)
        return out

    def frame(self, x: float) -> np.ndarray:
        return self.frames[self.index(x)]

    def value(self, x: float) -> np.ndarray:
        k = self.index(x)
        P, log_scale = self.transports(0, [k])[k]
        return self.frames[k] @ P * math.exp(log_scale)

    def up(self, x: float) -> np.ndarray:
        return self.value(x)[: self.N]

    def down(self, x: float) -> np.ndarray:
        return self.value(x)[self.N:]


def _inverse_symplectic(T: np.ndarray) -> np.ndarray:
    J = structural_set(T.shape[0] // 2).J
    return -J @ T.T @ J


def _positions(spec: ModelSpec, box: BoxSpec, points) -> np.ndarray:
    lo, hi = box.interval(spec.ell)
    grid = lo + spec.ell * np.arange(2 * box.L + 1)
    extra = []
    for p in points:
        p = float(p)
        if p < lo - POSITION_SNAP * spec.ell or p > hi + POSITION_SNAP * spec.ell:
            raise ConfigError(f"Position {p} outside the box [{lo}, {hi}]")
        if np.min(np.abs(grid - p)) > POSITION_SNAP * spec.ell:
            extra.append(p)
    return np.unique(np.concatenate([grid, extra]))


def _launch(spec: ModelSpec, entries: np.ndarray, table: np.ndarray, box: BoxSpec, E: float,
            side: Side, positions: np.ndarray) -> BoundarySolution:
    lo, _ = box.interval(spec.ell)
    path = positions[::-1] if side is Side.PLUS else positions
    N = spec.N
    Q = np.eye(2 * N)[:, N:]
    frames, steps = [Q], [np.eye(N)]
    for a, b in zip(path[:-1], path[1:]):
        cell = min(int(math.floor((min(a, b) - lo) / spec.ell + POSITION_SNAP)), len(entries) - 1)
        length = b - a
        if abs(abs(length) - spec.ell) <= POSITION_SNAP * spec.ell:
            T = table[cell] if length > 0 else _inverse_symplectic(table[cell])
        else:
            T = expm(length * cell_generators(spec, entries[cell], E)[0])
        Q, R = positive_qr(T @ Q)
        frames.append(Q)
        steps.append(R)
    return BoundarySolution(
        side=side, energy=float(E), positions=np.asarray(path),
        frames=np.array(frames), steps=np.array(steps),
    )


def boundary_solutions(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, points=()) -> tuple:
    """(Phi_+, Phi_-) at every cell boundary of the box and at the requested points."""
    entries = box.entries(word)
    table = cell_transfers(spec, entries, E)
    positions = _positions(spec, box, points)
    return (
        _launch(spec, entries, table, box, E, Side.PLUS, positions),
        _launch(spec, entries, table, box, E, Side.MINUS, positions),
    )


def kernel_source(spec: ModelSpec) -> np.ndarray:
    """
    Jump of the first-order kernel across x = y. J d/dx + V - E inverts with
    a jump of -J; for -d^2/dx^2 + W - E the source enters the derivative row.
    """
    N = spec.N
    if spec.kind is Kind.SCHRODINGER:
        return np.vstack([np.zeros((N, N)), -np.eye(N)])
    return -structural_set(N).J


def _coefficients(spec: ModelSpec, plus: BoundarySolution, minus: BoundarySolution, x: float) -> tuple:
    """Solve [Q_+, -Q_-] beta = source at x; beta_+ and beta_- are frame coefficients."""
    M = np.hstack([plus.frame(x), -minus.frame(x)])
    condition = float(np.linalg.cond(M))
    if not condition <= CONDITION_LIMIT:
        raise SingularConfigurationError(
            f"Boundary solutions are dependent at x={x}, E={plus.energy}", condition,
        )
    beta = np.linalg.solve(M, kernel_source(spec))
    return beta[: spec.N], beta[spec.N:]


def _inverse_condition(A: np.ndarray, scale: float = 1.0) -> float:
    """scale / sigma_min(A); frame blocks have norm at most one."""
    s = np.linalg.svd(A, compute_uv=False)
    return math.inf if s[-1] == 0 else float(scale / s[-1])


def _ratio_difference_condition(A1, B1, A2, B2) -> float:
    """Conditioning of A1 B1^-1 - A2 B2^-1 against the size of its terms."""
    try:
        first = np.linalg.solve(B1.T, A1.T).T
        second = np.linalg.solve(B2.T, A2.T).T
    except np.linalg.LinAlgError:
        return math.inf
    scale = max(np.linalg.norm(first, 2), np.linalg.norm(second, 2))
    return _inverse_condition(first - second, scale)


def lemma_conditions(spec: ModelSpec, plus: BoundarySolution, minus: BoundarySolution, x: float) -> dict:
    """Condition numbers of every block the explicit kernel formula inverts at x."""
    N = spec.N
    Qp, Qm = plus.frame(x), minus.frame(x)
    conditions = {
        "plus_up": _inverse_condition(Qp[:N]),
        "minus_up": _inverse_condition(Qm[:N]),
        "down_over_up": _ratio_difference_condition(Qp[N:], Qp[:N], Qm[N:], Qm[:N]),
    }
    if spec.kind is Kind.DIRAC:
        conditions["plus_down"] = _inverse_condition(Qp[N:])
        conditions["minus_down"] = _inverse_condition(Qm[N:])
        conditions["up_over_down"] = _ratio_difference_condition(Qp[:N], Qp[N:], Qm[:N], Qm[N:])
    return conditions


def _log_kernel(spec: ModelSpec, plus: BoundarySolution, minus: BoundarySolution, x: float, ys) -> list:
    """(block, log scale) pairs with G(x, y) = exp(log scale) block."""
    beta_plus, beta_minus = _coefficients(spec, plus, minus, x)
    rows = slice(0, spec.N) if spec.kind is Kind.SCHRODINGER else slice(None)
    results = []
    for y in ys:
        sol, beta = (plus, beta_plus) if x <= y else (minus, beta_minus)
        i, k = sol.index(y), sol.index(x)
        P, log_scale = sol.transports(i, [k])[k]
        block = sol.frames[i][rows] @ solve_triangular(P, beta)
        results.append((block, -log_scale))
    return results


def _check_kind(spec: ModelSpec, kind: Kind):
    if spec.kind is not kind:
        raise ModelError(f"Kernel needs the {kind.value} kind, model is {spec.kind.value}")


def dirac_green(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, x: float, y: float,
                strict: bool = False) -> np.ndarray:
    """
    G(E, x, y) = Phi_+(y) alpha_+(x) for x <= y and Phi_-(y) alpha_-(x) for
    x > y, a 2N x 2N block. With strict, every block the explicit formula
    inverts must be well conditioned, not only the combined system.
    """
    _check_kind(spec, Kind.DIRAC)
    plus, minus = boundary_solutions(spec, word, box, E, (x, y))
    if strict:
        for name, condition in lemma_conditions(spec, plus, minus, x).items():
            if not condition <= CONDITION_LIMIT:
                raise SingularConfigurationError(f"Kernel hypothesis {name} fails at x={x}", condition)
    (block, log_scale), = _log_kernel(spec, plus, minus, x, [y])
    return block * math.exp(log_scale)


def schrodinger_green(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, x: float, y: float,
                      strict: bool = False) -> np.ndarray:
    """
    N x N kernel of -d^2/dx^2 + W - E with Dirichlet ends:
    -Phi_+(y) Phi_+(x)^-1 (Phi_+' Phi_+^-1 - Phi_-' Phi_-^-1)(x)^-1 for x <= y.
    """
    _check_kind(spec, Kind.SCHRODINGER)
    plus, minus = boundary_solutions(spec, word, box, E, (x, y))
    if strict:
        for name, condition in lemma_conditions(spec, plus, minus, x).items():
            if not condition <= CONDITION_LIMIT:
                raise SingularConfigurationError(f"Kernel hypothesis {name} fails at x={x}", condition)
    (block, log_scale), = _log_kernel(spec, plus, minus, x, [y])
    return block * math.exp(log_scale)


def green_kernel(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, x: float, y: float) -> np.ndarray:
    if spec.kind is Kind.SCHRODINGER:
        return schrodinger_green(spec, word, box, E, x, y)
    return dirac_green(spec, word, box, E, x, y)


def kernel_jump(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float, x: float) -> np.ndarray:
    """G(x, x+) - G(x, x-) from the two branches at one point."""
    plus, minus = boundary_solutions(spec, word, box, E, (x,))
    beta_plus, beta_minus = _coefficients(spec, plus, minus, x)
    rows = slice(0, spec.N) if spec.kind is Kind.SCHRODINGER else slice(None)
    # the step product from x to x is the identity
    return plus.frame(x)[rows] @ beta_plus - minus.frame(x)[rows] @ beta_minus


@dataclass(frozen=True)
class GreenSample:
    energy: float
    x: float
    y: float
    norm: float
    log_norm: float
    seed: int
    L: int

    @property
    def singular(self) -> bool:
        return not math.isfinite(self.log_norm)


def _decay_points(spec: ModelSpec, L: int) -> tuple:
    return 0.0, spec.ell * (L - 2)


def _green_samples(spec: ModelSpec, E: float, L: int, seeds: list) -> list:
    box = BoxSpec(L)
    lo, hi = box.cells
    x, y = _decay_points(spec, L)
    out = []
    for s in seeds:
        word = sample_word(spec, s, lo, hi)
        plus, minus = boundary_solutions(spec, word, box, E, (x, y))
        try:
            (block, log_scale), = _log_kernel(spec, plus, minus, x, [y])
        except SingularConfigurationError as e:
            logger.debug(f"Sample {s} at L={L} is singular (condition {e.condition:.3e})")
            out.append(GreenSample(E, x, y, math.inf, math.inf, s, L))
            continue
        log_norm = math.log(np.linalg.norm(block, 2)) + log_scale
        out.append(GreenSample(E, x, y, math.exp(log_norm), log_norm, s, L))
    return out


def green_samples(spec: ModelSpec, E: float, L: int, samples: int, seed: int, workers: int = 1) -> list:
    """Kernel norms between x = 0 and y = ell (L - 2) over disorder samples."""
    if L < 3:
        raise ConfigError(f"Decay samples need L >= 3, got {L}")
    chunks = sample_seed_chunks(seed, samples, workers)
    results = Parallel(n_jobs=workers)(delayed(_green_samples)(spec, E, L, chunk) for chunk in chunks)
    return [sample for chunk in results for sample in chunk]


@dataclass
class DecayFit:
    slope: float
    ci: tuple
    Ls: list
    medians: list
    q25: list
    q75: list
    samples: int
    singular: dict = field(default_factory=dict)


def green_decay_fit(spec: ModelSpec, E: float, L_list, samples: int, seed: int,
                    workers: int = 1) -> DecayFit:
    """
    Least-squares slope in L of the median log kernel norm, with a bootstrap
    95% interval over disorder samples.
    """
    Ls = sorted(int(L) for L in L_list)
    if len(set(Ls)) < 3:
        raise ConfigError(f"Decay fit needs at least three box sizes, got {Ls}")
    if samples < 2:
        raise ConfigError(f"samples must be at least 2, got {samples}")

    logs, singular = [], {}
    for L in Ls:
        batch = green_samples(spec, E, L, samples, seed, workers)
        bad = sum(sample.singular for sample in batch)
        singular[L] = bad
        if bad > SINGULAR_RATE_LIMIT * samples:
            raise DataQualityError(f"{bad}/{samples} singular configurations at L={L}, E={E}")
        logs.append(np.array([sample.log_norm for sample in batch if not sample.singular]))

    medians = [float(np.median(v)) for v in logs]
    slope = float(linregress(Ls, medians).slope)

    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(BOOTSTRAP_RESAMPLES):
        resampled = [np.median(rng.choice(v, size=len(v))) for v in logs]
        boot.append(linregress(Ls, resampled).slope)
    ci = (float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5)))

    logger.info(f"Green decay at E={E}: slope {slope:.4f} per cell, 95% interval {ci}")
    return DecayFit(
        slope=slope, ci=ci, Ls=Ls, medians=medians,
        q25=[float(np.percentile(v, 25)) for v in logs],
        q75=[float(np.percentile(v, 75)) for v in logs],
        samples=samples, singular=singular,
    )


def schur_grid(spec: ModelSpec, L: int, collar: tuple = COLLAR) -> tuple:
    """x points in the middle third of the box and y points in both boundary collars."""
    near, far = collar
    if not 0 <= near < far <= L:
        raise ConfigError(f"Collar {collar} does not fit a box of half-width {L}")
    half = spec.ell * L
    xs = np.linspace(-half / 3, half / 3, SCHUR_X_POINTS)
    right = np.linspace(spec.ell * (L - far), spec.ell * (L - near), SCHUR_Y_POINTS)
    return xs, np.concatenate([-right[::-1], right])


def schur_surrogate(spec: ModelSpec, word: DisorderWord, box: BoxSpec, E: float,
                    collar: tuple = COLLAR) -> float:
    """log of L max |G(x, y)| over the grid; a lower bound on the Schur-test bound."""
    xs, ys = schur_grid(spec, box.L, collar)
    plus, minus = boundary_solutions(spec, word, box, E, np.concatenate([xs, ys]))
    best = -math.inf
    for x in xs:
        for block, log_scale in _log_kernel(spec, plus, minus, float(x), ys):
            norm = np.linalg.norm(block, 2)
            if norm > 0:
                best = max(best, math.log(norm) + log_scale)
    return math.log(box.L) + best


def _regular_count(spec: ModelSpec, E: float, m: float, L: int, seeds: list, collar: tuple) -> int:
    box = BoxSpec(L)
    lo, hi = box.cells
    regular = 0
    for s in seeds:
        try:
            log_bound = schur_surrogate(spec, sample_word(spec, s, lo, hi), box, E, collar)
        except SingularConfigurationError:
            continue
        regular += log_bound <= -m * L
    return regular


def regularity_probability(spec: ModelSpec, E: float, m: float, L: int, samples: int, seed: int,
                           collar: tuple = COLLAR, workers: int = 1) -> tuple:
    """Frequency of L sup |G| <= exp(-m L) with a Wilson 95% interval; singular boxes are not regular."""
    if m < 0:
        raise ConfigError(f"m must be nonnegative, got {m}")
    if samples < 1:
        raise ConfigError(f"samples must be positive, got {samples}")
    schur_grid(spec, L, collar)
    chunks = sample_seed_chunks(seed, samples, workers)
    regular = sum(Parallel(n_jobs=workers)(
        delayed(_regular_count)(spec, E, m, L, chunk, collar) for chunk in chunks
    ))
    ci = binomtest(regular, samples).proportion_ci(confidence_level=0.95, method="wilson")
    logger.info(f"Regularity at E={E}, m={m}, L={L}: {regular}/{samples}")
    return regular / samples, (float(ci.low), float(ci.high))
