"""
Bayesian problem definition.

A problem is a box of independent uniform priors plus a log-likelihood.
Samplers work in standard-normal space u and reach the physical
parameters through the transform theta = lower + width * Phi(u).
"""

import logging
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError, LikelihoodEvaluationError

logger = logging.getLogger(__name__)

LogLikelihood = Callable[[np.ndarray], float]
BatchLogLikelihood = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform marginals, one (lower, upper) pair per dimension."""

    marginals: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        marginals = tuple((float(lo), float(hi)) for lo, hi in self.marginals)
        if not marginals:
            raise ConfigurationError("prior needs at least one marginal")
        for j, (lo, hi) in enumerate(marginals):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise ConfigurationError(f"prior bounds of theta{j + 1} must be finite")
            if not lo < hi:
                raise ConfigurationError(
                    f"prior of theta{j + 1} needs lower < upper, got ({lo}, {hi})"
                )
        object.__setattr__(self, "marginals", marginals)

    @classmethod
    def uniform_box(cls, lower: float, upper: float, dimension: int) -> "PriorSpec":
        return cls(tuple((lower, upper) for _ in range(dimension)))

    @property
    def dimension(self) -> int:
        return len(self.marginals)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.marginals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.marginals])

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def log_volume(self) -> float:
        return float(np.sum(np.log(self.width)))


@dataclass(frozen=True)
class BayesProblem:
    """Everything a sampler needs: dimension, prior and log-likelihood.

    ``log_likelihood`` maps one physical vector to a natural-log likelihood
    (finite or -inf). ``log_likelihood_batch`` optionally maps a 2-D array
    of rows at once and is preferred by the engine when present.
    """

    dimension: int
    prior: PriorSpec
    log_likelihood: LogLikelihood
    reference_log_evidence: Optional[float] = None
    name: str = "problem"
    log_likelihood_batch: Optional[BatchLogLikelihood] = field(default=None, compare=False)
    log_likelihood_sup: Optional[float] = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError("problem dimension must be a positive integer")
        if self.prior.dimension != self.dimension:
            raise ConfigurationError(
                f"prior has {self.prior.dimension} marginals but the problem "
                f"dimension is {self.dimension}"
            )

    def with_prior(self, prior: PriorSpec) -> "BayesProblem":
        """Copy of the problem with overridden prior bounds."""
        return BayesProblem(
            dimension=self.dimension,
            prior=prior,
            log_likelihood=self.log_likelihood,
            reference_log_evidence=None,
            name=self.name,
            log_likelihood_batch=self.log_likelihood_batch,
            log_likelihood_sup=self.log_likelihood_sup,
        )


def phi(x):
    """Standard normal CDF."""
    return special.ndtr(x)


def phi_inv(p):
    """Inverse standard normal CDF, defined on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=float)
    if np.any(~(arr > 0.0) | ~(arr < 1.0)):
        raise DomainError(f"phi_inv is defined on (0, 1), got {p!r}")
    return special.ndtri(p)


def to_physical(u: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Map standard-normal coordinates into the prior box.

    Works on a single vector or on a (n, d) array of rows.
    """
    u = np.asarray(u, dtype=float)
    return prior.lower + prior.width * special.ndtr(u)


def _check_values(values: np.ndarray, where: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = np.isnan(values) | (values == np.inf)
    if np.any(bad):
        raise LikelihoodEvaluationError(
            f"{where} returned {values[bad][0]} (only finite values or -inf are allowed)"
        )
    return values


def log_likelihood_in_u(problem: BayesProblem, u: np.ndarray) -> float:
    """Evaluate the problem log-likelihood at a standard-normal point."""
    theta = to_physical(u, problem.prior)
    try:
        value = problem.log_likelihood(theta)
    except LikelihoodEvaluationError:
        raise
    except Exception as e:
        raise LikelihoodEvaluationError(
            f"likelihood of '{problem.name}' failed at theta={theta}: {e}"
        ) from e
    return float(_check_values(np.asarray(value, dtype=float), f"likelihood of '{problem.name}'"))


class LikelihoodCounter:
    """Counts every likelihood evaluation made on behalf of a run."""

    def __init__(self, problem: BayesProblem):
        self.problem = problem
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self) -> int:
        return self._calls

    def _add(self, n: int):
        with self._lock:
            self._calls += n

    def evaluate(self, u_rows: np.ndarray) -> np.ndarray:
        """Log-likelihood for each row of a (n, d) array of u points."""
        u_rows = np.atleast_2d(np.asarray(u_rows, dtype=float))
        n = u_rows.shape[0]
        if n == 0:
            return np.empty(0)
        self._add(n)
        batch = self.problem.log_likelihood_batch
        if batch is None:
            return np.array([log_likelihood_in_u(self.problem, row) for row in u_rows])

        theta = to_physical(u_rows, self.problem.prior)
        try:
            values = np.asarray(batch(theta), dtype=float).reshape(n)
        except LikelihoodEvaluationError:
            raise
        except Exception as e:
            raise LikelihoodEvaluationError(
                f"batched likelihood of '{self.problem.name}' failed: {e}"
            ) from e
        return _check_values(values, f"likelihood of '{self.problem.name}'")

    def __repr__(self) -> str:
        return f"LikelihoodCounter(problem='{self.problem.name}', calls={self._calls})"


def prior_from_bounds(bounds: Sequence[Tuple[float, float]]) -> PriorSpec:
    """PriorSpec from any sequence of (lower, upper) pairs."""
    return PriorSpec(tuple(tuple(b) for b in bounds))
