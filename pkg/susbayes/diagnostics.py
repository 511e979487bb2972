"""
Single-run uncertainty of the evidence estimate.

Per level, the subarea estimate is z_i = h_i * prod_{ii<i} p_c^(ii).
The c.o.v. of h_i and p_c^(i), inflated for autocorrelation inside
the Markov chains, give the covariance of the level estimates and
hence VAR[Z]. The same machinery with all correlation factors set to
zero gives the variance of a hypothetical independent-sample run, and
their ratio scales the weight-based effective sample size.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import special

from .errors import DegenerateLevelError, DegenerateWeightsError
from .sus import BusRun, LevelRecord, SusRun, log_f

logger = logging.getLogger(__name__)

RHO_MAX = 0.999
SERIES_SWITCH = 1e-3
TINY_VARIANCE = 1e-14


def g_factor(rho: float, n_s: int) -> float:
    """Variance inflation 2 * sum_{t=1}^{n_s-1} (1 - t/n_s) rho^t."""
    if n_s <= 1 or rho <= 0.0:
        return 0.0
    if rho >= 1.0:
        return float(n_s - 1)
    if 1.0 - rho < SERIES_SWITCH:
        t = np.arange(1, n_s)
        return float(2.0 * np.sum((1.0 - t / n_s) * rho ** t))
    return float(2.0 * rho * (1.0 - rho - (1.0 - rho ** n_s) / n_s) / (1.0 - rho) ** 2)


def _clamp(rho: float) -> Tuple[float, bool]:
    if not np.isfinite(rho):
        return 0.0, True
    clamped = min(max(rho, 0.0), RHO_MAX)
    return clamped, clamped != rho


def _lag1(x: np.ndarray, y: np.ndarray, mean_x: float, mean_y: float,
          normalize_x: np.ndarray, normalize_y: np.ndarray, cross: bool = False) -> float:
    """Average over t of the per-step lag-1 correlation across chains.

    ``x`` and ``y`` are (n_chains, n_steps). Steps whose normalizer is
    numerically zero are skipped; returns 0 when none is usable.
    """
    n_steps = x.shape[1]
    vals = []
    for t in range(n_steps - 1):
        den = math.sqrt(max(normalize_x[t], 0.0) * max(normalize_y[t], 0.0))
        if den <= TINY_VARIANCE:
            continue
        if cross:
            num = 0.5 * np.mean(x[:, t] * y[:, t + 1] + x[:, t + 1] * y[:, t]) - mean_x * mean_y
        else:
            num = np.mean(x[:, t] * y[:, t + 1]) - mean_x * mean_y
        vals.append(num / den)
    return float(np.mean(vals)) if vals else 0.0


def _zero_lag(x: np.ndarray, y: np.ndarray, mean_x: float, mean_y: float,
              normalize_x: np.ndarray, normalize_y: np.ndarray) -> Optional[float]:
    n_steps = x.shape[1]
    vals = []
    for t in range(n_steps):
        den = math.sqrt(max(normalize_x[t], 0.0) * max(normalize_y[t], 0.0))
        if den <= TINY_VARIANCE:
            continue
        vals.append((np.mean(x[:, t] * y[:, t]) - mean_x * mean_y) / den)
    return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class IndicatorStats:
    p_hat: float
    var_ind: float
    rho_lag1: float
    gamma: float
    delta: float


def indicator_cov(indicator: np.ndarray, n_chains: int, n_steps: int,
                  independent: bool = False) -> IndicatorStats:
    """c.o.v. of a level probability estimated from a chain-major indicator."""
    ind = np.asarray(indicator, dtype=float)
    n = ind.shape[0]
    p_hat = float(np.mean(ind))
    var_ind = p_hat * (1.0 - p_hat)
    rho = 0.0
    if n_steps > 1 and not independent and var_ind > 0:
        grid = ind.reshape(n_chains, n_steps)
        second = np.mean(grid ** 2, axis=0) - p_hat ** 2
        rho, _ = _clamp(_lag1(grid, grid, p_hat, p_hat, second, second))
    gamma = g_factor(rho, n_steps)
    delta = math.sqrt(var_ind / (n * p_hat ** 2) * (1.0 + gamma)) if p_hat > 0 else math.inf
    return IndicatorStats(p_hat=p_hat, var_ind=var_ind, rho_lag1=rho, gamma=gamma, delta=delta)


@dataclass(frozen=True)
class LevelStats:
    """Estimator statistics of one level.

    ``rel_var_f`` is var[f_i] / h_i^2, which keeps the statistics finite
    for evidences far outside the floating point range.
    """

    level_index: int
    log_h_hat: float
    p_c_hat: float
    rel_var_f: float
    var_ind: float
    rho_f1: float
    rho_f1_lag: float
    rho_h_lag1: float
    rho_p_lag1: float
    gamma_h: float
    gamma_p: float
    gamma_hp: float
    delta_h: float
    delta_p: float
    rho_hp: float
    n_samples: int
    n_steps: int
    n_clamped: int = 0

    @property
    def h_hat(self) -> float:
        return math.exp(self.log_h_hat) if self.log_h_hat < 709 else math.inf

    def independent(self) -> "LevelStats":
        """The same level with every correlation factor set to zero."""
        delta_h = math.sqrt(self.rel_var_f / self.n_samples)
        if self.p_c_hat > 0:
            delta_p = math.sqrt(self.var_ind / (self.n_samples * self.p_c_hat ** 2))
        else:
            delta_p = 0.0
        return replace(self, gamma_h=0.0, gamma_p=0.0, gamma_hp=0.0,
                       delta_h=delta_h, delta_p=delta_p, rho_hp=_clip_unit(self.rho_f1))

    def to_dict(self) -> dict:
        return {
            "level": self.level_index,
            "log_h_hat": self.log_h_hat,
            "p_c_hat": self.p_c_hat,
            "rel_var_f": self.rel_var_f,
            "var_ind": self.var_ind,
            "rho_f1": self.rho_f1,
            "rho_f1_lag": self.rho_f1_lag,
            "rho_h_lag1": self.rho_h_lag1,
            "rho_p_lag1": self.rho_p_lag1,
            "gamma_h": self.gamma_h,
            "gamma_p": self.gamma_p,
            "gamma_hp": self.gamma_hp,
            "delta_h": self.delta_h,
            "delta_p": self.delta_p,
            "rho_hp": self.rho_hp,
            "n_clamped": self.n_clamped,
        }


def _clip_unit(x: float) -> float:
    return float(min(max(x, -1.0), 1.0))


def level_stats(level: LevelRecord, ell_next: Optional[float] = None,
                final: bool = False) -> LevelStats:
    """Correlation-aware c.o.v. of h_i and p_c^(i) for one level.

    On the ``final`` level the probability term is never used, so a zero
    crossing fraction is tolerated there.
    """
    if ell_next is None:
        ell_next = level.log_ell_next
    ll = level.log_lik
    n = ll.shape[0]
    n_chains, n_steps = level.n_chains, level.n_steps

    lf = np.full(n, -math.inf)
    support = ll > level.log_ell
    if np.any(support):
        lf[support] = log_f(ll[support], level.log_ell, ell_next)
    scale = float(np.max(lf))
    if not np.isfinite(scale):
        raise DegenerateLevelError(f"level {level.level_index}: h_hat is zero")
    f = np.exp(lf - scale)
    h = float(np.mean(f))
    ind = (ll > ell_next).astype(float)
    p = float(np.mean(ind))
    if p == 0.0 and not final:
        raise DegenerateLevelError(
            f"level {level.level_index}: no sample exceeds the next threshold {ell_next}"
        )

    var_f = float(np.var(f))
    var_ind = p * (1.0 - p)
    rel_var_f = var_f / h ** 2

    n_clamped = 0
    rho_h = rho_p = rho_c = 0.0
    if var_f > 0 and var_ind > 0:
        cov = float(np.mean(f * ind)) - h * p
        rho_f1 = cov / math.sqrt(var_f * var_ind)
    else:
        rho_f1 = 0.0

    if n_steps > 1:
        F = f.reshape(n_chains, n_steps)
        I = ind.reshape(n_chains, n_steps)
        second_f = np.mean(F ** 2, axis=0) - h ** 2
        second_i = np.mean(I ** 2, axis=0) - p ** 2
        raw_h = _lag1(F, F, h, h, second_f, second_f)
        raw_p = _lag1(I, I, p, p, second_i, second_i)
        raw_c = _lag1(F, I, h, p, second_f, second_i, cross=True)
        zero = _zero_lag(F, I, h, p, second_f, second_i)
        if zero is not None:
            rho_f1 = zero
        rho_h, c1 = _clamp(raw_h)
        rho_p, c2 = _clamp(raw_p)
        rho_c, c3 = _clamp(raw_c)
        n_clamped = int(c1) + int(c2) + int(c3)
        if n_clamped:
            logger.warning(f"level {level.level_index}: {n_clamped} correlation estimate(s) "
                           f"clamped to [0, {RHO_MAX}]")

    gamma_h = g_factor(rho_h, n_steps)
    gamma_p = g_factor(rho_p, n_steps)
    gamma_hp = g_factor(rho_c, n_steps)
    delta_h = math.sqrt(rel_var_f / n * (1.0 + gamma_h))
    delta_p = math.sqrt(var_ind / (n * p ** 2) * (1.0 + gamma_p)) if p > 0 else 0.0
    rho_hp = _clip_unit(rho_f1 * (1.0 + gamma_hp) / math.sqrt((1.0 + gamma_h) * (1.0 + gamma_p)))

    return LevelStats(
        level_index=level.level_index,
        log_h_hat=scale + math.log(h),
        p_c_hat=p,
        rel_var_f=rel_var_f,
        var_ind=var_ind,
        rho_f1=rho_f1,
        rho_f1_lag=rho_c,
        rho_h_lag1=rho_h,
        rho_p_lag1=rho_p,
        gamma_h=gamma_h,
        gamma_p=gamma_p,
        gamma_hp=gamma_hp,
        delta_h=delta_h,
        delta_p=delta_p,
        rho_hp=rho_hp,
        n_samples=n,
        n_steps=n_steps,
        n_clamped=n_clamped,
    )


def evidence_variance(levels: Sequence[LevelRecord], stats: Sequence[LevelStats],
                      log_scale: float = 0.0) -> Tuple[float, float]:
    """(VAR[Z_hat], VAR[Z_check]) in units of exp(2 * log_scale).

    COV[Z_i, Z_j] for i <= j is z_i z_j (dh_i^2 [i=j] + sum_{ii<i} dp_ii^2
    + rho_hp_i dh_i dp_i [i<j]), mirrored for j < i.
    """
    if len(levels) != len(stats):
        raise ValueError("one LevelStats per level is required")
    z = np.array([math.exp(lv.log_z_hat - log_scale) for lv in levels])

    def assemble(st: Sequence[LevelStats]) -> float:
        m = len(st)
        dp2 = np.array([s.delta_p ** 2 for s in st])
        shared = np.concatenate(([0.0], np.cumsum(dp2)))[:m]
        total = 0.0
        for i in range(m):
            for j in range(i, m):
                term = shared[i]
                if i == j:
                    term += st[i].delta_h ** 2
                else:
                    term += st[i].rho_hp * st[i].delta_h * st[i].delta_p
                cov = z[i] * z[j] * term
                total += cov if i == j else 2.0 * cov
        return max(total, 0.0)

    var_hat = assemble(stats)
    var_check = assemble([s.independent() for s in stats])
    return var_hat, var_check


def effective_sample_size(log_weights: np.ndarray, var_z_check: float, var_z_hat: float) -> float:
    """(sum w)^2 / sum w^2 scaled by VAR[Z_check] / VAR[Z_hat]."""
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[lw > -math.inf]
    if lw.size == 0:
        raise DegenerateWeightsError("all posterior weights are zero")
    log_ess = 2.0 * special.logsumexp(lw) - special.logsumexp(2.0 * lw)
    ratio = var_z_check / var_z_hat if var_z_hat > 0 else 1.0
    return float(math.exp(log_ess) * ratio)


@dataclass(frozen=True)
class UncertaintyReport:
    """Variance, c.o.v. and effective sample size of one SuS run."""

    var_z_hat: float
    cov_z_hat: float
    var_z_check: float
    n_ess: float
    level_stats: Tuple[LevelStats, ...]
    log_var_z_hat: float
    weight_ess: float
    n_ess_ratio: float

    def to_dict(self) -> dict:
        return {
            "var_z_hat": _finite_or_none(self.var_z_hat),
            "log_var_z_hat": _finite_or_none(self.log_var_z_hat),
            "cov_z_hat": self.cov_z_hat,
            "var_z_check": _finite_or_none(self.var_z_check),
            "n_ess": self.n_ess,
            "weight_ess": self.weight_ess,
            "n_ess_over_n_cal": self.n_ess_ratio,
            "levels": [s.to_dict() for s in self.level_stats],
        }


def _finite_or_none(x: float) -> Optional[float]:
    return float(x) if np.isfinite(x) else None


def run_level_stats(run: SusRun) -> Tuple[LevelStats, ...]:
    last = run.n_levels - 1
    return tuple(level_stats(lv, lv.log_ell_next, final=(k == last))
                 for k, lv in enumerate(run.levels))


def log_posterior_weights(run: SusRun) -> np.ndarray:
    return np.concatenate([lv.log_p + lv.log_lik for lv in run.levels])


def uncertainty_report(run: SusRun, log_weights: Optional[np.ndarray] = None) -> UncertaintyReport:
    """Full single-run uncertainty summary of a SuS run."""
    stats = run_level_stats(run)
    rel_hat, rel_check = evidence_variance(run.levels, stats, log_scale=run.log_evidence)
    if log_weights is None:
        log_weights = log_posterior_weights(run)
    lw = np.asarray(log_weights, dtype=float)
    finite = lw[lw > -math.inf]
    if finite.size == 0:
        raise DegenerateWeightsError("all posterior weights are zero")
    weight_ess = float(math.exp(2.0 * special.logsumexp(finite) - special.logsumexp(2.0 * finite)))
    n_ess = effective_sample_size(lw, rel_check, rel_hat)
    total = sum(lv.n_samples for lv in run.levels)
    if n_ess > total:
        n_ess = float(total)
    log_var = (math.log(rel_hat) + 2.0 * run.log_evidence) if rel_hat > 0 else -math.inf
    report = UncertaintyReport(
        var_z_hat=math.exp(log_var) if log_var < 709 else math.inf,
        cov_z_hat=math.sqrt(rel_hat),
        var_z_check=(rel_check * math.exp(2.0 * run.log_evidence)
                     if 2.0 * run.log_evidence < 709 else math.inf),
        n_ess=n_ess,
        level_stats=stats,
        log_var_z_hat=log_var,
        weight_ess=weight_ess,
        n_ess_ratio=n_ess / run.n_likelihood_calls if run.n_likelihood_calls else math.nan,
    )
    logger.info(f"uncertainty: c.o.v.={report.cov_z_hat:.4g}, N_ess={report.n_ess:.1f}")
    return report


@dataclass(frozen=True)
class BusMetrics:
    cov_z: float
    n_ess: float
    deltas: Tuple[float, ...]
    gammas: Tuple[float, ...]

    def to_dict(self) -> dict:
        return {"cov_z": self.cov_z, "n_ess": self.n_ess,
                "delta_p": list(self.deltas), "gamma_p": list(self.gammas)}


def bus_metrics(bus_run: BusRun) -> BusMetrics:
    """c.o.v. of the BUS evidence (c^-1 treated as exact) and its N_ess.

    N_ess uses the last level only: N * VAR[independent] / VAR[chains].
    """
    per_level = [indicator_cov(lv.indicator, lv.n_chains, lv.n_steps) for lv in bus_run.levels]
    deltas = tuple(s.delta for s in per_level)
    cov_z = math.sqrt(sum(d ** 2 for d in deltas))
    last = bus_run.levels[-1]
    stats_last = per_level[-1]
    if stats_last.p_hat > 0:
        independent = indicator_cov(last.indicator, last.n_chains, last.n_steps, independent=True)
        if stats_last.delta > 0:
            n_ess = last.n_samples * independent.delta ** 2 / stats_last.delta ** 2
        else:
            n_ess = float(last.n_samples)
    else:
        n_ess = 0.0
    return BusMetrics(cov_z=cov_z, n_ess=float(n_ess), deltas=deltas,
                      gammas=tuple(s.gamma for s in per_level))
