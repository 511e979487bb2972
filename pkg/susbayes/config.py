"""
Configuration management for SusBayes.

Settings come from ``~/.susbayes`` (loaded into the environment with
python-dotenv) and the process environment. Run files are plain
``key = value`` files with ``#`` comments and ``[prior]`` / ``[data]``
tables; every error names the file and line.
"""

import logging
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv

from .errors import ConfigurationError
from .sus import RunConfig

logger = logging.getLogger(__name__)

SETTINGS_FILE = os.path.expanduser("~/.susbayes")

# Load environment variables from .susbayes file
load_dotenv(SETTINGS_FILE)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
METHODS = ("sus", "bus")


class Settings:
    """Application settings."""

    def __init__(self):
        self.output_dir = Path(os.environ.get("SUSBAYES_OUTPUT_DIR", "results"))
        self.log_level = os.environ.get("SUSBAYES_LOG_LEVEL", "WARNING").upper()
        self.settings_file = Path(SETTINGS_FILE)
        try:
            self.workers = int(os.environ.get("SUSBAYES_WORKERS", "1"))
        except ValueError:
            logger.warning("SUSBAYES_WORKERS is not an integer, using 1")
            self.workers = 1

    def problems(self):
        """Human-readable list of invalid settings."""
        found = []
        if self.log_level not in LOG_LEVELS:
            found.append(f"SUSBAYES_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")
        if self.workers < 1:
            found.append("SUSBAYES_WORKERS must be a positive integer")
        if self.output_dir.exists() and not self.output_dir.is_dir():
            found.append(f"SUSBAYES_OUTPUT_DIR {self.output_dir} is not a directory")
        return found

    def validate(self) -> bool:
        """Validate the settings, printing each problem."""
        problems = self.problems()
        for problem in problems:
            print(f"Error: {problem}")
        return not problems


@dataclass(frozen=True)
class DataOptions:
    """Synthetic spectral data parameters for FE runs."""

    fs: float = 50.0
    n_segments: int = 200
    oversample: int = 4
    seed: Optional[int] = None
    data_path: Optional[Path] = None


@dataclass(frozen=True)
class RunFile:
    """Everything a run, study or FE command reads from a run file."""

    path: Optional[str] = None
    benchmark: Optional[str] = None
    dim: Optional[int] = None
    case: Optional[int] = None
    method: str = "sus"
    config: RunConfig = field(default_factory=RunConfig)
    log_c_inv: Optional[float] = None
    runs: int = 1
    workers: Optional[int] = None
    output_dir: Optional[Path] = None
    posterior_count: int = 1000
    rejuvenate_steps: int = 0
    resampling: str = "multinomial"
    write_samples: bool = True
    prior_bounds: Dict[int, Tuple[float, float]] = field(default_factory=dict)
    data: DataOptions = field(default_factory=DataOptions)

    def with_overrides(self, data: Optional[Dict] = None, **overrides) -> "RunFile":
        """Copy with non-None overrides applied.

        RunConfig field names go into ``config``; ``data`` holds
        DataOptions fields.
        """
        run_keys = {f.name for f in fields(RunConfig)}
        cfg = {k: v for k, v in overrides.items() if k in run_keys and v is not None}
        rest = {k: v for k, v in overrides.items() if k not in run_keys and v is not None}
        data = {k: v for k, v in (data or {}).items() if v is not None}
        updated = replace(self, **rest)
        if cfg:
            updated = replace(updated, config=replace(updated.config, **cfg))
        if data:
            updated = replace(updated, data=replace(updated.data, **data))
        return updated


def _to_bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got '{v}'")


def _to_seed(v: str) -> int:
    seed = int(v)
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return seed


def _to_method(v: str) -> str:
    if v.lower() not in METHODS:
        raise ValueError(f"method must be one of {', '.join(METHODS)}")
    return v.lower()


# key -> (target, name, converter); target is "run", "config" or "data"
_TOP_KEYS = {
    "benchmark": ("run", "benchmark", str),
    "dim": ("run", "dim", int),
    "case": ("run", "case", int),
    "method": ("run", "method", _to_method),
    "log_c_inv": ("run", "log_c_inv", float),
    "runs": ("run", "runs", int),
    "workers": ("run", "workers", int),
    "output_dir": ("run", "output_dir", Path),
    "posterior_count": ("run", "posterior_count", int),
    "rejuvenate_steps": ("run", "rejuvenate_steps", int),
    "resampling": ("run", "resampling", str),
    "write_samples": ("run", "write_samples", _to_bool),
    "pc": ("config", "p_c", float),
    "n": ("config", "n", int),
    "eps1": ("config", "eps1", float),
    "eps2": ("config", "eps2", float),
    "max_levels": ("config", "max_levels", int),
    "seed": ("config", "rng_seed", _to_seed),
    "adapt_fraction": ("config", "adapt_fraction", float),
    "tail_report": ("config", "tail_report", _to_bool),
    "warm_start": ("config", "warm_start", _to_bool),
    "initial_lambda": ("config", "initial_lambda", float),
}

_DATA_KEYS = {
    "fs": float,
    "n_segments": int,
    "oversample": int,
    "seed": _to_seed,
    "data_path": Path,
}

_SECTIONS = ("prior", "data")


def _parse_bounds(value: str) -> Tuple[float, float]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ValueError("prior bounds must be written 'lower, upper'")
    lo, hi = float(parts[0]), float(parts[1])
    if not lo < hi:
        raise ValueError(f"lower bound {lo} is not below upper bound {hi}")
    return lo, hi


def _blame_line(message: str, key_lines: Dict[str, int]) -> Optional[int]:
    """Line of the first run-file key named in a RunConfig error message."""
    for key in ("adapt_fraction", "initial_lambda", "max_levels", "eps1", "eps2",
                "seed", "pc", "n"):
        name = _TOP_KEYS[key][1]
        if name in key_lines and re.search(rf"\b{key}\b", message):
            return key_lines[name]
    return None


def parse_run_text(text: str, path: Optional[str] = None) -> RunFile:
    """Parse run-file text; see ``load_run_file``."""
    run_values = {}
    config_values = {}
    data_values = {}
    prior_bounds: Dict[int, Tuple[float, float]] = {}
    key_lines: Dict[str, int] = {}
    section = None

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#")[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigurationError(f"malformed section header '{line}'", lineno, path)
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{section}]", lineno, path)
            continue
        if "=" not in line:
            raise ConfigurationError(f"expected 'key = value', got '{line}'", lineno, path)
        k, v = (x.strip() for x in line.split("=", 1))
        k = k.lower()
        if not v:
            raise ConfigurationError(f"'{k}' has no value", lineno, path)

        try:
            if section == "prior":
                if not (k.startswith("theta") and k[5:].isdigit() and int(k[5:]) >= 1):
                    raise ConfigurationError(f"prior keys are theta<j> (1-based), got '{k}'",
                                             lineno, path)
                prior_bounds[int(k[5:])] = _parse_bounds(v)
            elif section == "data":
                if k not in _DATA_KEYS:
                    raise ConfigurationError(f"unknown [data] key '{k}'", lineno, path)
                data_values[k] = _DATA_KEYS[k](v)
            else:
                if k not in _TOP_KEYS:
                    raise ConfigurationError(f"unknown key '{k}'", lineno, path)
                target, name, convert = _TOP_KEYS[k]
                (run_values if target == "run" else config_values)[name] = convert(v)
                key_lines[name] = lineno
        except ConfigurationError:
            raise
        except ValueError as e:
            raise ConfigurationError(f"invalid value for '{k}': {e}", lineno, path) from e

    try:
        config = RunConfig(**config_values)
    except ConfigurationError as e:
        raise ConfigurationError(e.message, _blame_line(e.message, key_lines), path) from e

    run_file = RunFile(path=path, config=config, prior_bounds=prior_bounds,
                       data=DataOptions(**data_values), **run_values)
    for name in ("runs", "posterior_count"):
        if getattr(run_file, name) < 1:
            raise ConfigurationError(f"{name} must be a positive integer",
                                     key_lines.get(name), path)
    if run_file.workers is not None and run_file.workers < 1:
        raise ConfigurationError("workers must be a positive integer",
                                 key_lines.get("workers"), path)
    if run_file.rejuvenate_steps < 0:
        raise ConfigurationError("rejuvenate_steps must be non-negative",
                                 key_lines.get("rejuvenate_steps"), path)
    return run_file


def load_run_file(path) -> RunFile:
    """Read and validate a run file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"run file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    run_file = parse_run_text(text, str(path))
    logger.info(f"loaded run file {path}")
    return run_file


# Global settings instance
settings = Settings()
