"""
Benchmark likelihoods with independent evidence oracles.

Three problems with known evidence:

- eggbox: 2-D, log-likelihood (2 + cos(t1/2) cos(t2/2))^5, prior U(0, 10 pi)^2
- shells: two Gaussian rings of radius 2 and width 0.1 centred at -/+3.5
  on the first axis, prior U(-6, 6)^d
- norm_loggamma: product of LogGamma / Normal factors with four modes in
  the first two coordinates, prior U(-30, 30)^d, d even

All likelihoods accept a (n, d) array of rows.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy import integrate, special, stats

from .errors import ConfigurationError, QuadratureError
from .model import BayesProblem, PriorSpec

logger = logging.getLogger(__name__)

SHELL_RADIUS = 2.0
SHELL_WIDTH = 0.1
SHELL_OFFSET = 3.5
MODE_LOCATION = 10.0
ORACLE_TOLERANCE = 1e-3

# Reference values: analytic ln z, and published SuS / aBUS statistics over
# repeated runs of N = 1000, p_c = 0.1.
# Keys are (benchmark, dimension).
ANALYTIC_LOG_EVIDENCE: Dict[Tuple[str, int], float] = {
    ("eggbox", 2): 235.86,
    ("shells", 2): -1.75,
    ("shells", 5): -5.67,
    ("shells", 10): -14.59,
    ("shells", 20): -36.09,
    ("shells", 30): -60.13,
    ("norm_loggamma", 20): -81.89,
}

# (mean ln z, c.o.v. [%], N_cal [1e3])
REFERENCE_SUS_STUDY: Dict[Tuple[str, int], Tuple[float, float, float]] = {
    ("eggbox", 2): (235.81, 0.13, 19.0),
    ("shells", 2): (-1.75, 4.00, 4.40),
    ("shells", 5): (-5.67, 2.47, 8.80),
    ("shells", 10): (-14.58, 0.96, 72.0),
    ("shells", 20): (-35.96, 0.67, 213.0),
    ("shells", 30): (-59.85, 0.47, 548.0),
    ("norm_loggamma", 20): (-81.86, 1.01, 2490.0),
}

REFERENCE_BUS_STUDY: Dict[Tuple[str, int], Tuple[float, float, float]] = {
    ("eggbox", 2): (235.83, 0.14, 19.1),
    ("shells", 2): (-1.75, 5.14, 4.47),
    ("shells", 5): (-5.67, 2.82, 8.82),
    ("shells", 10): (-14.57, 0.89, 72.3),
    ("shells", 20): (-35.95, 0.64, 202.0),
    ("shells", 30): (-59.87, 0.48, 544.0),
    ("norm_loggamma", 20): (-81.86, 1.00, 2200.0),
}

# (mean N_ess/N_cal [%], c.o.v. [%])
REFERENCE_SUS_ESS: Dict[Tuple[str, int], Tuple[float, float]] = {
    ("eggbox", 2): (4.00, 12.62),
    ("shells", 2): (24.96, 4.33),
    ("shells", 5): (13.25, 3.19),
    ("shells", 10): (4.35, 6.32),
    ("shells", 20): (1.91, 9.19),
    ("shells", 30): (1.36, 2.94),
    ("norm_loggamma", 2): (12.44, 12.26),
    ("norm_loggamma", 10): (3.39, 11.80),
    ("norm_loggamma", 20): (1.83, 6.01),
    ("norm_loggamma", 30): (1.68, 9.52),
}

REFERENCE_BUS_ESS: Dict[Tuple[str, int], Tuple[float, float]] = {
    ("eggbox", 2): (5.83, 16.12),
    ("shells", 2): (23.88, 15.39),
    ("shells", 5): (10.89, 9.26),
    ("shells", 10): (5.04, 7.14),
    ("shells", 20): (1.80, 16.67),
    ("shells", 30): (1.02, 1.98),
    ("norm_loggamma", 2): (14.88, 17.88),
    ("norm_loggamma", 10): (2.56, 16.41),
    ("norm_loggamma", 20): (1.16, 14.66),
    ("norm_loggamma", 30): (0.82, 17.07),
}


@dataclass(frozen=True)
class BenchmarkSpec:
    """A named benchmark at a given dimension."""

    name: str
    dimension: int
    lower: float
    upper: float
    analytic_log_evidence: Optional[float] = None

    @property
    def prior(self) -> PriorSpec:
        return PriorSpec.uniform_box(self.lower, self.upper, self.dimension)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.name, self.dimension)


# --- likelihoods ------------------------------------------------------------


def _rows(theta) -> np.ndarray:
    return np.atleast_2d(np.asarray(theta, dtype=float))


def _scalar_or_array(values: np.ndarray, theta) -> object:
    return float(values[0]) if np.ndim(theta) == 1 else values


def eggbox_loglik(theta):
    """(2 + cos(t1/2) cos(t2/2))^5, in [1, 243]."""
    t = _rows(theta)
    if t.shape[1] != 2:
        raise ValueError("eggbox is two-dimensional")
    values = (2.0 + np.cos(t[:, 0] / 2.0) * np.cos(t[:, 1] / 2.0)) ** 5
    return _scalar_or_array(values, theta)


def shell_centers(dimension: int) -> Tuple[np.ndarray, np.ndarray]:
    c1 = np.zeros(dimension)
    c2 = np.zeros(dimension)
    c1[0], c2[0] = -SHELL_OFFSET, SHELL_OFFSET
    return c1, c2


def _log_circ(t: np.ndarray, center: np.ndarray) -> np.ndarray:
    dist = np.linalg.norm(t - center, axis=1)
    return (-0.5 * math.log(2.0 * math.pi * SHELL_WIDTH ** 2)
            - (dist - SHELL_RADIUS) ** 2 / (2.0 * SHELL_WIDTH ** 2))


def shells_loglik(theta):
    """ln of the sum of two Gaussian shells."""
    t = _rows(theta)
    if t.shape[1] < 2:
        raise ValueError("shells needs at least two dimensions")
    c1, c2 = shell_centers(t.shape[1])
    values = np.logaddexp(_log_circ(t, c1), _log_circ(t, c2))
    return _scalar_or_array(values, theta)


def loggamma_logpdf(x, loc: float, scale: float = 1.0, shape: float = 1.0):
    """LogGamma density exp(shape*s - e^s) / (scale * Gamma(shape)), s = (x - loc)/scale."""
    return stats.loggamma.logpdf(x, shape, loc=loc, scale=scale)


def norm_loggamma_factors(theta) -> np.ndarray:
    """Per-coordinate log-likelihood terms, shape (n, d)."""
    t = _rows(theta)
    d = t.shape[1]
    if d < 2 or d % 2:
        raise ValueError("norm_loggamma needs an even dimension >= 2")
    out = np.empty_like(t)
    half = math.log(0.5)
    out[:, 0] = np.logaddexp(half + loggamma_logpdf(t[:, 0], MODE_LOCATION),
                             half + loggamma_logpdf(t[:, 0], -MODE_LOCATION))
    out[:, 1] = np.logaddexp(half + stats.norm.logpdf(t[:, 1], MODE_LOCATION, 1.0),
                             half + stats.norm.logpdf(t[:, 1], -MODE_LOCATION, 1.0))
    split = (d + 2) // 2
    if split > 2:
        out[:, 2:split] = loggamma_logpdf(t[:, 2:split], MODE_LOCATION)
    if split < d:
        out[:, split:] = stats.norm.logpdf(t[:, split:], MODE_LOCATION, 1.0)
    return out


def norm_loggamma_loglik(theta):
    """Sum of the per-coordinate LogGamma / Normal log-densities."""
    values = norm_loggamma_factors(theta).sum(axis=1)
    return _scalar_or_array(values, theta)


def _norm_loggamma_sup(d: int) -> float:
    lg_max = -1.0
    n_max = -0.5 * math.log(2.0 * math.pi)
    split = (d + 2) // 2
    return lg_max + n_max + (split - 2) * lg_max + (d - split) * n_max


# --- registry ---------------------------------------------------------------

_LIKELIHOODS: Dict[str, Callable] = {
    "eggbox": eggbox_loglik,
    "shells": shells_loglik,
    "norm_loggamma": norm_loggamma_loglik,
}

_BOUNDS = {
    "eggbox": (0.0, 10.0 * math.pi),
    "shells": (-6.0, 6.0),
    "norm_loggamma": (-30.0, 30.0),
}

BENCHMARKS = tuple(_LIKELIHOODS)


def benchmark_spec(name: str, dimension: Optional[int] = None) -> BenchmarkSpec:
    """Validated spec of a benchmark; eggbox defaults to d = 2."""
    if name not in _LIKELIHOODS:
        raise ConfigurationError(
            f"unknown benchmark '{name}' (choose from {', '.join(BENCHMARKS)})"
        )
    if dimension is None:
        dimension = 2
    if name == "eggbox" and dimension != 2:
        raise ConfigurationError("eggbox is only defined for dim = 2")
    if name == "shells" and dimension < 2:
        raise ConfigurationError("shells requires dim >= 2")
    if name == "norm_loggamma" and (dimension < 2 or dimension % 2):
        raise ConfigurationError("norm_loggamma requires an even dim >= 2")
    lower, upper = _BOUNDS[name]
    reference = ANALYTIC_LOG_EVIDENCE.get((name, dimension))
    if reference is None and name == "norm_loggamma":
        reference = -dimension * math.log(upper - lower)
    return BenchmarkSpec(name=name, dimension=dimension, lower=lower, upper=upper,
                         analytic_log_evidence=reference)


def make_problem(name: str, dimension: Optional[int] = None) -> BayesProblem:
    """BayesProblem for a registered benchmark."""
    spec = benchmark_spec(name, dimension)
    fn = _LIKELIHOODS[name]
    if name == "eggbox":
        sup = 243.0
    elif name == "shells":
        sup = math.log(2.0) - 0.5 * math.log(2.0 * math.pi * SHELL_WIDTH ** 2)
    else:
        sup = _norm_loggamma_sup(spec.dimension)
    return BayesProblem(
        dimension=spec.dimension,
        prior=spec.prior,
        log_likelihood=fn,
        reference_log_evidence=spec.analytic_log_evidence,
        name=f"{name}-{spec.dimension}d",
        log_likelihood_batch=fn,
        log_likelihood_sup=sup,
    )


# --- oracles ----------------------------------------------------------------


def _gauss_legendre_grid(lower: float, upper: float, panels: int, order: int):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lower, upper, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, np.log(w)


def _log_grid_integral(log_integrand: Callable, lower: float, upper: float,
                       panels: int, order: int = 10, chunk: int = 256) -> float:
    """ln of a 2-D composite Gauss-Legendre integral, accumulated in log space."""
    x, log_w = _gauss_legendre_grid(lower, upper, panels, order)
    partial = []
    for start in range(0, x.size, chunk):
        xs = x[start:start + chunk]
        g1, g2 = np.meshgrid(xs, x, indexing="ij")
        values = log_integrand(np.column_stack([g1.ravel(), g2.ravel()]))
        terms = (log_w[start:start + chunk][:, None] + log_w[None, :]
                 + np.asarray(values).reshape(g1.shape))
        partial.append(special.logsumexp(terms))
    return float(special.logsumexp(partial))


def _grid_oracle(loglik: Callable, lower: float, upper: float, panels: int,
                 tol: float) -> float:
    log_volume = 2.0 * math.log(upper - lower)
    coarse = _log_grid_integral(loglik, lower, upper, panels) - log_volume
    fine = _log_grid_integral(loglik, lower, upper, 2 * panels) - log_volume
    achieved = abs(fine - coarse)
    if achieved > tol:
        raise QuadratureError("2-D grid quadrature did not converge", achieved)
    return fine


def _log_sphere_area(d: int) -> float:
    """ln of the surface area of the unit sphere in R^d."""
    return math.log(2.0) + 0.5 * d * math.log(math.pi) - special.gammaln(0.5 * d)


def shells_radial_log_evidence(dimension: int, tol: float = ORACLE_TOLERANCE) -> float:
    """Shells evidence by integrating one shell radially (shells lie inside the box)."""
    d = dimension
    w, r0 = SHELL_WIDTH, SHELL_RADIUS
    r_peak = 0.5 * r0 + math.sqrt(0.25 * r0 ** 2 + w ** 2 * (d - 1))

    def log_h(r):
        return (d - 1) * math.log(r) - (r - r0) ** 2 / (2.0 * w ** 2)

    peak = log_h(r_peak)
    lo, hi = max(r0 - 40.0 * w, 1e-12), r0 + 40.0 * w + r_peak
    value, err = integrate.quad(lambda r: math.exp(log_h(r) - peak), lo, hi,
                                points=[r_peak], epsabs=0.0, epsrel=1e-12, limit=200)
    if value <= 0 or err / value > tol:
        raise QuadratureError("radial quadrature did not converge", err / max(value, 1e-300))
    log_one_shell = (_log_sphere_area(d) + peak + math.log(value)
                     - 0.5 * math.log(2.0 * math.pi * w ** 2))
    lower, upper = _BOUNDS["shells"]
    return math.log(2.0) + log_one_shell - d * math.log(upper - lower)


def _norm_loggamma_oracle(dimension: int, tol: float) -> float:
    lower, upper = _BOUNDS["norm_loggamma"]
    total = 0.0
    for j in range(dimension):
        def factor(x, j=j):
            row = np.full((1, dimension), MODE_LOCATION)
            row[0, j] = x
            return math.exp(norm_loggamma_factors(row)[0, j])

        value, err = integrate.quad(factor, lower, upper,
                                    points=[-MODE_LOCATION, MODE_LOCATION],
                                    epsabs=0.0, epsrel=1e-10, limit=200)
        if value <= 0 or err / value > tol:
            raise QuadratureError(f"quadrature of factor {j + 1} did not converge",
                                  err / max(value, 1e-300))
        total += math.log(value) - math.log(upper - lower)
    return total


def oracle_log_evidence(spec: BenchmarkSpec, tol: float = ORACLE_TOLERANCE) -> float:
    """Deterministic quadrature of ln z for a benchmark, independent of sampling."""
    logger.info(f"oracle for {spec.name} d={spec.dimension}")
    if spec.name == "eggbox":
        return _grid_oracle(lambda t: eggbox_loglik(t), spec.lower, spec.upper, 160, tol)
    if spec.name == "shells":
        if spec.dimension == 2:
            return _grid_oracle(lambda t: shells_loglik(t), spec.lower, spec.upper, 200, tol)
        return shells_radial_log_evidence(spec.dimension, tol)
    if spec.name == "norm_loggamma":
        return _norm_loggamma_oracle(spec.dimension, tol)
    raise ConfigurationError(f"no oracle for benchmark '{spec.name}'")
