"""
Subset simulation for Bayesian evidence.

The evidence z = integral of L over the prior is written as the area
under the failure probability function p(l) = P[L > l]. Adaptive
likelihood thresholds split this area into subareas, each estimated
from the samples of one subset simulation level:

    z_i = p_i * E[f_i | L > l_i],
    f_i = l_i * min(L/l_i - 1, l_{i+1}/l_i - 1)

Everything is carried in the log domain. ``run_bus`` is the fixed-c
BUS baseline on the augmented space (theta, pi).
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .csmh import INITIAL_LAMBDA, AdaptState, LevelSamples, run_level
from .errors import BoundViolationError, ConfigurationError, ContractViolationError
from .model import BayesProblem, LikelihoodCounter, PriorSpec, to_physical
from .streams import RandomStreams

logger = logging.getLogger(__name__)

CONVERGENCE_GUARD = 1e-300
LN2 = math.log(2.0)


def _is_integer(x: float) -> bool:
    return abs(x - round(x)) < 1e-9 and round(x) >= 1


@dataclass(frozen=True)
class RunConfig:
    """Tuning of one subset simulation run."""

    p_c: float = 0.1
    n: int = 1000
    eps1: float = 1e-5
    eps2: float = 1e-3
    max_levels: int = 50
    rng_seed: int = 0
    adapt_fraction: float = 0.1
    tail_report: bool = True
    initial_lambda: float = INITIAL_LAMBDA
    warm_start: bool = False

    def __post_init__(self):
        if not 0.0 < self.p_c < 1.0:
            raise ConfigurationError(f"pc must lie in (0, 1), got {self.p_c}")
        if self.n < 2:
            raise ConfigurationError(f"n must be at least 2, got {self.n}")
        if not _is_integer(self.n * self.p_c):
            raise ConfigurationError(
                f"n * pc must be a positive integer (number of chains), "
                f"got {self.n} * {self.p_c} = {self.n * self.p_c:g}"
            )
        if not _is_integer(1.0 / self.p_c):
            raise ConfigurationError(
                f"1 / pc must be a positive integer (states per chain), got {1.0 / self.p_c:g}"
            )
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ConfigurationError("eps1 and eps2 must be positive")
        if self.max_levels < 1:
            raise ConfigurationError("max_levels must be a positive integer")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ConfigurationError("seed must be a non-negative 64-bit integer")
        if not 0.1 <= self.adapt_fraction <= 0.2:
            raise ConfigurationError(
                f"adapt_fraction must lie in [0.1, 0.2], got {self.adapt_fraction}"
            )
        if not self.initial_lambda > 0:
            raise ConfigurationError("initial_lambda must be positive")

    @property
    def n_c(self) -> int:
        """Number of chains (seeds) per level."""
        return int(round(self.n * self.p_c))

    @property
    def n_s(self) -> int:
        """States per chain."""
        return int(round(1.0 / self.p_c))

    @property
    def n_a(self) -> int:
        """Chains per adaptation batch."""
        return min(max(int(math.floor(self.adapt_fraction * self.n_c + 0.5)), 1), self.n_c)


class TerminationReason(str, Enum):
    BOTH_CRITERIA = "both_criteria"
    LEVEL_CAP = "level_cap"


@dataclass(frozen=True, eq=False)
class LevelRecord:
    """One closed level: its samples, thresholds and subarea."""

    level_index: int
    log_p: float
    log_ell: float
    log_ell_next: float
    u: np.ndarray
    log_lik: np.ndarray
    chain_id: np.ndarray
    step: np.ndarray
    n_chains: int
    n_steps: int
    log_h_hat: float
    log_z_hat: float
    p_c_hat: float
    acceptance_rate: Optional[float] = None
    acceptance_trace: Tuple[float, ...] = ()
    lambda_trace: Tuple[float, ...] = ()

    @property
    def n_samples(self) -> int:
        return int(self.log_lik.shape[0])

    def theta(self, prior: PriorSpec) -> np.ndarray:
        return to_physical(self.u, prior)

    def __repr__(self) -> str:
        return (f"LevelRecord(i={self.level_index}, ell_next={self.log_ell_next:.6g}, "
                f"log_z={self.log_z_hat:.6g}, p_c_hat={self.p_c_hat:.3f})")


@dataclass(frozen=True, eq=False)
class SusRun:
    """Result of a full subset simulation evidence run."""

    levels: Tuple[LevelRecord, ...]
    log_evidence: float
    n_levels: int
    n_likelihood_calls: int
    terminated_by: TerminationReason
    config: RunConfig
    prior: PriorSpec
    problem_name: str = "problem"
    tail_log_z: Optional[float] = None
    final_sigma: Optional[np.ndarray] = None
    final_lambda: Optional[float] = None
    reference_log_evidence: Optional[float] = None
    warnings: Tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return bool(np.isfinite(self.log_evidence))

    def fpf_curve(self) -> List[Tuple[float, float]]:
        """(l_i, ln p_i) points of the failure probability function."""
        return [(lvl.log_ell_next, lvl.log_p + _log_fraction(lvl)) for lvl in self.levels]

    def __repr__(self) -> str:
        return (f"SusRun(problem='{self.problem_name}', log_evidence={self.log_evidence:.6g}, "
                f"levels={self.n_levels}, calls={self.n_likelihood_calls}, "
                f"terminated_by={self.terminated_by.value})")


def _log_fraction(level: LevelRecord) -> float:
    return math.log(level.p_c_hat) if level.p_c_hat > 0 else -math.inf


def log_expm1(x):
    """ln(exp(x) - 1) for x > 0 without overflow or cancellation."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        small = np.log(np.expm1(np.minimum(x, LN2)))
        large = x + np.log1p(-np.exp(-np.maximum(x, LN2)))
    out = np.where(x <= LN2, small, large)
    return out if out.ndim else float(out)


def select_threshold(log_liks_desc: Sequence[float], n_c: int) -> float:
    """Midpoint of the n_c-th and (n_c+1)-th largest log-likelihoods."""
    values = np.asarray(log_liks_desc, dtype=float)
    if n_c < 1 or values.shape[0] < n_c + 1:
        raise ConfigurationError(
            f"threshold selection needs at least n_c + 1 = {n_c + 1} values, got {values.shape[0]}"
        )
    a, b = values[n_c - 1], values[n_c]
    if a == b:
        return float(a)
    return float(0.5 * (a + b))


def log_f(log_lik, ell_i: float, ell_next: float):
    """ln f_i for samples above ell_i; vectorized over ``log_lik``."""
    ll = np.asarray(log_lik, dtype=float)
    if not ell_next > ell_i:
        raise ContractViolationError(f"ell_next={ell_next} must exceed ell_i={ell_i}")
    if np.any(~(ll > ell_i)):
        raise ContractViolationError(
            f"log_f is defined for log_lik > ell_i={ell_i}, got {ll[~(ll > ell_i)].min()}"
        )
    capped = np.minimum(ll, ell_next)
    if ell_i == -math.inf:
        out = capped
    else:
        out = ell_i + log_expm1(capped - ell_i)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def subarea_log(log_lik: np.ndarray, log_p: float, ell_i: float, ell_next: float) -> float:
    """ln z_i = ln p_i + ln mean(f_i) over the level's samples.

    At level 0 (ell_i = -inf) zero-likelihood samples contribute f = 0.
    """
    ll = np.asarray(log_lik, dtype=float)
    n = ll.shape[0]
    if ell_i == -math.inf:
        ll = ll[ll > -math.inf]
    if ll.size == 0:
        return -math.inf
    return float(log_p + special.logsumexp(log_f(ll, ell_i, ell_next)) - math.log(n))


def check_convergence(ell_i: float, ell_next: float, log_z_list: Sequence[float],
                      eps1: float = 1e-5, eps2: float = 1e-3) -> bool:
    """Plateau-in-threshold and negligible-subarea criteria, both required."""
    if not log_z_list:
        raise ContractViolationError("convergence check needs at least one subarea")
    if not (math.isfinite(ell_i) and math.isfinite(ell_next)):
        return False
    gap = abs(ell_next - ell_i) / max(abs(ell_next + ell_i), CONVERGENCE_GUARD)
    total = special.logsumexp(np.asarray(log_z_list, dtype=float))
    if not np.isfinite(total):
        return False
    fraction = math.exp(log_z_list[-1] - total)
    return gap <= eps1 and fraction <= eps2


def sort_descending(log_lik: np.ndarray, chain_id: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Indices by (log-likelihood desc, chain_id, step); stable under ties."""
    return np.lexsort((step, chain_id, -np.asarray(log_lik, dtype=float)))


def _seed_indices(order: np.ndarray, values: np.ndarray, threshold: float, n_c: int) -> np.ndarray:
    """Top n_c samples strictly above the threshold, cycled to n_c if fewer clear it."""
    top = order[:n_c]
    strict = top[values[top] > threshold]
    if strict.size == n_c:
        return top
    logger.warning(f"{n_c - strict.size} of {n_c} seeds do not exceed the threshold; "
                   f"reusing the {strict.size} seeds above it")
    return strict[np.arange(n_c) % strict.size]


def _support_threshold(log_lik: np.ndarray, n_c: int, name: str) -> float:
    """Lowest finite log-likelihood, for a level 0 with fewer than n_c + 1 of them.

    The next level then conditions on the support of L, whose probability is
    the observed fraction above this threshold rather than p_c.
    """
    finite = log_lik[log_lik > -math.inf]
    if finite.size == 0:
        raise ConfigurationError(
            f"all {log_lik.shape[0]} level-0 samples have zero likelihood under the prior of '{name}'"
        )
    logger.warning(f"only {finite.size} level-0 sample(s) have non-zero likelihood (n_c={n_c}); "
                   f"thresholding at the lowest finite value")
    return float(finite.min())


def _tail_log_z(level: LevelRecord) -> Optional[float]:
    ell = level.log_ell_next
    above = level.log_lik[level.log_lik > ell]
    if above.size == 0 or not math.isfinite(ell):
        return None
    return float(level.log_p + special.logsumexp(ell + log_expm1(above - ell))
                 - math.log(level.n_samples))


def run(problem: BayesProblem, config: RunConfig) -> SusRun:
    """Estimate ln z of ``problem`` by subset simulation."""
    streams = RandomStreams(config.rng_seed)
    counter = LikelihoodCounter(problem)
    n, n_c, n_s, d = config.n, config.n_c, config.n_s, problem.dimension
    log_pc = math.log(config.p_c)

    logger.info(f"SuS on '{problem.name}' (d={d}): pc={config.p_c}, n={n}, "
                f"seed={config.rng_seed}")

    u = streams.level(0).standard_normal((n, d))
    ll = counter.evaluate(u)
    chain_id = np.arange(n)
    step = np.zeros(n, dtype=int)
    n_chains, n_steps = n, 1
    acceptance_rate: Optional[float] = None
    acc_trace: Tuple[float, ...] = ()
    lam_trace: Tuple[float, ...] = ()

    ell_i = -math.inf
    lam = config.initial_lambda
    final_state: Optional[AdaptState] = None
    levels: List[LevelRecord] = []
    warnings: List[str] = []
    terminated_by = TerminationReason.LEVEL_CAP

    log_p = 0.0
    i = 0
    while True:
        order = sort_descending(ll, chain_id, step)
        ell_next = select_threshold(ll[order], n_c)
        support_only = not math.isfinite(ell_next)
        if support_only:
            ell_next = _support_threshold(ll, n_c, problem.name)

        n_above = int(np.sum(ll > ell_next))
        log_z = subarea_log(ll, log_p, ell_i, ell_next)
        level = LevelRecord(
            level_index=i,
            log_p=log_p,
            log_ell=ell_i,
            log_ell_next=ell_next,
            u=u,
            log_lik=ll,
            chain_id=chain_id,
            step=step,
            n_chains=n_chains,
            n_steps=n_steps,
            log_h_hat=log_z - log_p,
            log_z_hat=log_z,
            p_c_hat=n_above / n,
            acceptance_rate=acceptance_rate,
            acceptance_trace=acc_trace,
            lambda_trace=lam_trace,
        )
        levels.append(level)
        logger.info(f"level {i}: ell_next={ell_next:.6g}, ln z_i={log_z:.6g}, "
                    f"p_c_hat={level.p_c_hat:.3f}"
                    + (f", acceptance={acceptance_rate:.3f}, lambda={lam:.4f}"
                       if acceptance_rate is not None else ""))

        if n_above == 0:
            logger.info(f"level {i}: no sample above ell_next, likelihood ceiling reached")
            terminated_by = TerminationReason.BOTH_CRITERIA
            break
        if check_convergence(ell_i, ell_next, [lv.log_z_hat for lv in levels],
                             config.eps1, config.eps2):
            terminated_by = TerminationReason.BOTH_CRITERIA
            break
        if i + 1 >= config.max_levels:
            msg = f"level cap {config.max_levels} reached before convergence"
            logger.warning(msg)
            warnings.append(msg)
            terminated_by = TerminationReason.LEVEL_CAP
            break

        seeds = _seed_indices(order, ll, ell_next, n_c)
        if not config.warm_start:
            lam = config.initial_lambda
        adapt = AdaptState.from_seeds(u[seeds], lam, config.n_a)
        out: LevelSamples = run_level(u[seeds], ll[seeds], ell_next, counter, adapt,
                                      n_s, streams, i + 1)
        final_state = out.state
        lam = out.state.lam
        u, ll, chain_id, step = out.u, out.log_lik, out.chain_id, out.step
        n_chains, n_steps = out.n_chains, out.n_steps
        acceptance_rate = out.acceptance_rate
        acc_trace, lam_trace = out.acceptance_trace, out.lambda_trace
        log_p += math.log(n_above / n) if support_only else log_pc
        ell_i = ell_next
        i += 1

    log_evidence = float(special.logsumexp([lv.log_z_hat for lv in levels]))
    tail = _tail_log_z(levels[-1]) if config.tail_report else None
    result = SusRun(
        levels=tuple(levels),
        log_evidence=log_evidence,
        n_levels=len(levels),
        n_likelihood_calls=counter.calls,
        terminated_by=terminated_by,
        config=config,
        prior=problem.prior,
        problem_name=problem.name,
        tail_log_z=tail,
        final_sigma=None if final_state is None else final_state.sigma,
        final_lambda=None if final_state is None else final_state.lam,
        reference_log_evidence=problem.reference_log_evidence,
        warnings=tuple(warnings),
    )
    logger.info(f"SuS finished: ln z={log_evidence:.6g}, M={result.n_levels}, "
                f"N_cal={result.n_likelihood_calls}")
    return result


# --- BUS baseline -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BusLevel:
    """One BUS level on the augmented space; scores s > 0 mean failure."""

    level_index: int
    threshold: float
    threshold_next: float
    u: np.ndarray
    score: np.ndarray
    log_lik: np.ndarray
    chain_id: np.ndarray
    step: np.ndarray
    n_chains: int
    n_steps: int
    p_hat: float
    acceptance_rate: Optional[float] = None
    lambda_trace: Tuple[float, ...] = ()

    @property
    def n_samples(self) -> int:
        return int(self.score.shape[0])

    @property
    def indicator(self) -> np.ndarray:
        return self.score > self.threshold_next


@dataclass(frozen=True, eq=False)
class BusRun:
    """Result of a fixed-c BUS run: z = c^-1 * p_f."""

    levels: Tuple[BusLevel, ...]
    log_pf: float
    log_evidence: float
    log_c_inv: float
    n_likelihood_calls: int
    terminated_by: TerminationReason
    config: RunConfig
    prior: PriorSpec
    problem_name: str = "problem"
    warnings: Tuple[str, ...] = ()

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def posterior_pool(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(u, theta, log_lik) of the last-level samples in the failure domain."""
        last = self.levels[-1]
        d = self.prior.dimension
        mask = last.score > 0
        u = last.u[mask, :d]
        return u, to_physical(u, self.prior), last.log_lik[mask]

    def __repr__(self) -> str:
        return (f"BusRun(problem='{self.problem_name}', log_evidence={self.log_evidence:.6g}, "
                f"levels={self.n_levels}, calls={self.n_likelihood_calls})")


class _BusScore:
    """Limit-state score s = L(theta) - ln c^-1 - ln pi on augmented u rows."""

    def __init__(self, counter: LikelihoodCounter, log_c_inv: float):
        self.counter = counter
        self.log_c_inv = log_c_inv
        self.dimension = counter.problem.dimension
        self.last_log_lik = np.empty(0)

    def evaluate(self, u_rows: np.ndarray) -> np.ndarray:
        u_rows = np.atleast_2d(u_rows)
        d = self.dimension
        ll = self.counter.evaluate(u_rows[:, :d])
        bad = ll > self.log_c_inv
        if np.any(bad):
            k = int(np.argmax(bad))
            theta = to_physical(u_rows[k, :d], self.counter.problem.prior)
            raise BoundViolationError(
                f"log-likelihood {ll[k]:.6g} at theta={theta} exceeds ln c^-1={self.log_c_inv:.6g}"
            )
        self.last_log_lik = ll
        return ll - self.log_c_inv - special.log_ndtr(u_rows[:, d])

    def log_lik_of(self, u_rows: np.ndarray, score: np.ndarray) -> np.ndarray:
        return score + self.log_c_inv + special.log_ndtr(np.atleast_2d(u_rows)[:, self.dimension])


def run_bus(problem: BayesProblem, log_c_inv: Optional[float], config: RunConfig) -> BusRun:
    """Fixed-c BUS: subset simulation of P[ln pi < L(theta) - ln c^-1]."""
    if log_c_inv is None:
        log_c_inv = problem.log_likelihood_sup
    if log_c_inv is None or not math.isfinite(log_c_inv):
        raise ConfigurationError(
            f"BUS needs a finite ln c^-1 bounding the likelihood of '{problem.name}'"
        )
    streams = RandomStreams(config.rng_seed)
    counter = LikelihoodCounter(problem)
    score_fn = _BusScore(counter, float(log_c_inv))
    n, n_c, n_s = config.n, config.n_c, config.n_s
    d_aug = problem.dimension + 1

    logger.info(f"BUS on '{problem.name}' (d={problem.dimension}): ln c^-1={log_c_inv:.6g}")

    u = streams.level(0).standard_normal((n, d_aug))
    s = score_fn.evaluate(u)
    chain_id = np.arange(n)
    step = np.zeros(n, dtype=int)
    n_chains, n_steps = n, 1
    acceptance_rate: Optional[float] = None
    lam_trace: Tuple[float, ...] = ()
    h_i = -math.inf
    lam = config.initial_lambda
    log_pf = 0.0
    levels: List[BusLevel] = []
    warnings: List[str] = []

    i = 0
    while True:
        order = sort_descending(s, chain_id, step)
        h_next = select_threshold(s[order], n_c)
        final = h_next >= 0.0
        terminated_by = TerminationReason.BOTH_CRITERIA
        if not final and i + 1 >= config.max_levels:
            msg = f"BUS level cap {config.max_levels} reached before the threshold reached 0"
            logger.warning(msg)
            warnings.append(msg)
            final = True
            terminated_by = TerminationReason.LEVEL_CAP
        if final:
            h_next = 0.0
        if not math.isfinite(h_next):
            raise ConfigurationError(f"BUS level {i} threshold is {h_next}")

        p_hat = float(np.mean(s > h_next))
        log_pf += math.log(p_hat) if p_hat > 0 else -math.inf
        levels.append(BusLevel(
            level_index=i,
            threshold=h_i,
            threshold_next=h_next,
            u=u,
            score=s,
            log_lik=score_fn.log_lik_of(u, s),
            chain_id=chain_id,
            step=step,
            n_chains=n_chains,
            n_steps=n_steps,
            p_hat=p_hat,
            acceptance_rate=acceptance_rate,
            lambda_trace=lam_trace,
        ))
        logger.info(f"BUS level {i}: h={h_next:.6g}, p_hat={p_hat:.4f}")
        if final or p_hat == 0.0:
            break

        seeds = _seed_indices(order, s, h_next, n_c)
        if not config.warm_start:
            lam = config.initial_lambda
        adapt = AdaptState.from_seeds(u[seeds], lam, config.n_a)
        out = run_level(u[seeds], s[seeds], h_next, score_fn, adapt, n_s, streams, i + 1)
        lam = out.state.lam
        u, s, chain_id, step = out.u, out.log_lik, out.chain_id, out.step
        n_chains, n_steps = out.n_chains, out.n_steps
        acceptance_rate = out.acceptance_rate
        lam_trace = out.lambda_trace
        h_i = h_next
        i += 1

    if log_pf == -math.inf:
        msg = "no BUS sample reached the failure domain"
        logger.warning(msg)
        warnings.append(msg)
    result = BusRun(
        levels=tuple(levels),
        log_pf=log_pf,
        log_evidence=float(log_c_inv) + log_pf,
        log_c_inv=float(log_c_inv),
        n_likelihood_calls=counter.calls,
        terminated_by=terminated_by,
        config=config,
        prior=problem.prior,
        problem_name=problem.name,
        warnings=tuple(warnings),
    )
    logger.info(f"BUS finished: ln z={result.log_evidence:.6g}, levels={result.n_levels}")
    return result
