"""
Experiment configuration for dirac-loc
Parses key=value or JSON config files and builds the model they describe
"""

from dataclasses import dataclass, field
from pathlib import Path
import json
import logging
import math

import numpy as np

from config import COMMANDS, DEFAULT_SAMPLES, DEFAULT_STEPS, KINDS, OUTPUT_DIR, SEED_LIMIT, WORKERS
from services.errors import ConfigError
from services.matgroup import structural_set
from services.model import DisorderLaw, Kind, ModelSpec, case_coefficients

logger = logging.getLogger(__name__)

MODEL_KEYS = (
    "n", "ell", "case",
    "alpha0", "alpha1", "alpha2", "alpha3",
    "beta0", "beta1", "beta2", "beta3",
    "vper", "disorder", "kind",
)
RUN_KEYS = (
    "command", "seed", "workers", "energy", "e_min", "e_max", "e_step",
    "steps", "reorth_period", "batches", "samples", "l", "l_list", "l_values",
    "sigma", "wegner_beta", "m", "eps", "p", "n_cells", "frame", "d_log_o",
    "tol", "max_dim", "eval_min", "eval_max", "margin", "collar",
    "ids_min", "ids_max", "ids_step",
)
KNOWN_KEYS = frozenset(MODEL_KEYS + RUN_KEYS)


def _flatten(value) -> str:
    if isinstance(value, list):
        return ",".join(_flatten(v) for v in value)
    return str(value)


def parse_text(text: str) -> dict:
    """Flat key=value lines with `#` comments, or a JSON object with the same keys."""
    if text.lstrip().startswith("{"):
        try:
            loaded = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed JSON config: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError("JSON config must be an object")
        values = {str(k).strip().lower(): _flatten(v) for k, v in loaded.items()}
    else:
        values = {}
        for number, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"Line {number} is not key=value: {line!r}")
            key = key.strip().lower()
            if key in values:
                raise ConfigError(f"Key {key!r} given twice")
            values[key] = value.strip()

    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"Unknown config keys: {unknown}")
    return values


def _number(key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {raw!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite, got {raw!r}")
    return value


def _integer(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {raw!r}")


def _numbers(key: str, raw: str) -> list:
    return [_number(key, part) for part in raw.split(",") if part.strip()]


def parse_disorder(raw: str) -> DisorderLaw:
    """`bernoulli:p`, `point:v` or `values:v1,v2,...;probs:p1,p2,...`"""
    name, _, rest = raw.partition(":")
    name = name.strip().lower()
    if name == "bernoulli":
        return DisorderLaw.bernoulli(_number("disorder", rest) if rest else 0.5)
    if name == "point":
        return DisorderLaw.point(_number("disorder", rest))
    if name == "values":
        values, _, probs = rest.partition(";")
        probs = probs.strip()
        if not probs.startswith("probs:"):
            raise ConfigError(f"disorder values need a ';probs:' part, got {raw!r}")
        return DisorderLaw(values=_numbers("disorder", values), probs=_numbers("disorder", probs[len("probs:"):]))
    raise ConfigError(f"Unknown disorder law {raw!r}")


def parse_vper(raw: str, N: int) -> np.ndarray:
    if raw.strip().lower() == "delta":
        return structural_set(N).Delta
    if raw.strip().lower() == "zero":
        return np.zeros((N, N))
    values = _numbers("vper", raw)
    if len(values) != N * N:
        raise ConfigError(f"vper needs {N * N} entries for N={N}, got {len(values)}")
    return np.array(values).reshape(N, N)


def build_model(values: dict) -> ModelSpec:
    """ModelSpec from the model keys; explicit alphas and betas override the case table."""
    if "ell" not in values:
        raise ConfigError("Missing required key 'ell'")
    N = _integer("n", values.get("n", "1"))
    ell = _number("ell", values["ell"])
    kind = values.get("kind", Kind.DIRAC.value).lower()
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")

    case_id = _integer("case", values["case"]) if "case" in values else None
    alpha, beta = case_coefficients(case_id) if case_id is not None else ((0.0,) * 4, (0.0,) * 4)
    alpha, beta = list(alpha), list(beta)
    explicit = False
    for k in range(4):
        if f"alpha{k}" in values:
            alpha[k] = _number(f"alpha{k}", values[f"alpha{k}"])
            explicit = True
        if f"beta{k}" in values:
            beta[k] = _number(f"beta{k}", values[f"beta{k}"])
            explicit = True
    if case_id is None and not explicit:
        raise ConfigError("Model needs a case or explicit alpha/beta coefficients")

    if N < 1:
        raise ConfigError(f"n must be positive, got {N}")
    law = parse_disorder(values.get("disorder", "bernoulli:0.5"))
    return ModelSpec(
        N=N,
        ell=ell,
        alpha=tuple(alpha),
        beta=tuple(beta),
        v_per=parse_vper(values.get("vper", "delta"), N),
        disorder=(law,) * N,
        kind=Kind(kind),
        case_id=None if explicit else case_id,
    )


@dataclass
class ExperimentConfig:
    command: str
    model: ModelSpec
    seed: int
    workers: int
    output_path: Path
    values: dict = field(default_factory=dict)

    def has(self, key: str) -> bool:
        return key in self.values

    def number(self, key: str, default: float | None = None, positive: bool = False) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"Command {self.command} needs key {key!r}")
            return default
        value = _number(key, self.values[key])
        if positive and value <= 0:
            raise ConfigError(f"{key} must be positive, got {value}")
        return value

    def integer(self, key: str, default: int | None = None, minimum: int = 1) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"Command {self.command} needs key {key!r}")
            return default
        value = _integer(key, self.values[key])
        if value < minimum:
            raise ConfigError(f"{key} must be at least {minimum}, got {value}")
        return value

    def integers(self, key: str, minimum: int = 1) -> list:
        if key not in self.values:
            raise ConfigError(f"Command {self.command} needs key {key!r}")
        values = [_integer(key, part.strip()) for part in self.values[key].split(",") if part.strip()]
        if not values or any(v < minimum for v in values):
            raise ConfigError(f"{key} needs integers of at least {minimum}, got {self.values[key]!r}")
        if values != sorted(set(values)):
            raise ConfigError(f"{key} must be strictly increasing, got {values}")
        return values

    def grid(self, low: str = "e_min", high: str = "e_max", step: str = "e_step") -> np.ndarray:
        """Inclusive grid low, low + step, ..., up to high."""
        start, stop = self.number(low), self.number(high)
        width = self.number(step, positive=True)
        if stop < start:
            raise ConfigError(f"{high}={stop} lies below {low}={start}")
        count = int(math.floor((stop - start) / width + 1e-9)) + 1
        return start + width * np.arange(count)

    @property
    def steps(self) -> int:
        return self.integer("steps", DEFAULT_STEPS)

    @property
    def samples(self) -> int:
        return self.integer("samples", DEFAULT_SAMPLES)


def load_experiment(command: str, config_path, seed: int | None = None, out=None) -> ExperimentConfig:
    """Read and validate a config file; CLI flags override the file."""
    if command not in COMMANDS:
        raise ConfigError(f"Unknown command {command!r}, expected one of {COMMANDS}")
    path = Path(config_path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}")
    values = parse_text(text)

    if values.get("command", command) != command:
        raise ConfigError(f"Config is for command {values['command']!r}, not {command!r}")
    if seed is None:
        seed = _integer("seed", values.get("seed", "0"))
    if not 0 <= seed < SEED_LIMIT:
        raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
    workers = WORKERS if WORKERS > 0 else _integer("workers", values.get("workers", "1"))
    if workers < 1:
        raise ConfigError(f"workers must be positive, got {workers}")

    config = ExperimentConfig(
        command=command,
        model=build_model(values),
        seed=seed,
        workers=workers,
        output_path=Path(out if out is not None else OUTPUT_DIR),
        values=values,
    )
    logger.info(f"Loaded {command} config from {path} (seed={seed}, workers={workers})")
    return config
