"""
Posterior samples from a SuS run.

Every sample of every level carries the weight w = p_i * L(theta) / z
(the uniform prior cancels). The weighted pool gives posterior
expectations directly; resampling turns it into equally weighted
samples, optionally refreshed with a few posterior MCMC steps.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import special

from .csmh import INITIAL_LAMBDA, propose
from .errors import DegenerateWeightsError
from .model import BayesProblem, LikelihoodCounter, PriorSpec, phi_inv, to_physical
from .streams import RandomStreams
from .sus import SusRun

logger = logging.getLogger(__name__)

RESAMPLING_METHODS = ("multinomial", "systematic", "residual")


@dataclass(frozen=True, eq=False)
class WeightedPool:
    """All samples of a run with their unnormalized log posterior weights."""

    u: Optional[np.ndarray]
    theta: np.ndarray
    log_lik: np.ndarray
    level: np.ndarray
    chain_id: np.ndarray
    step: np.ndarray
    log_weight: np.ndarray
    log_weight_total: float

    def __len__(self) -> int:
        return int(self.log_weight.shape[0])

    @property
    def weights(self) -> np.ndarray:
        """Normalized weights."""
        return np.exp(self.log_weight - self.log_weight_total)

    def subset(self, mask: np.ndarray) -> "WeightedPool":
        lw = self.log_weight[mask]
        return WeightedPool(
            u=None if self.u is None else self.u[mask],
            theta=self.theta[mask],
            log_lik=self.log_lik[mask],
            level=self.level[mask],
            chain_id=self.chain_id[mask],
            step=self.step[mask],
            log_weight=lw,
            log_weight_total=float(special.logsumexp(lw)),
        )

    def __repr__(self) -> str:
        return f"WeightedPool(entries={len(self)}, levels={int(self.level.max()) + 1})"


def _level_log_p(level: np.ndarray, p_c: float,
                 level_log_p: Optional[Sequence[float]] = None) -> np.ndarray:
    """ln P of each entry's level: recorded values when given, else level * ln p_c."""
    if level_log_p is None:
        return level * math.log(p_c)
    table = np.asarray(level_log_p, dtype=float)
    if level.size and level.max() >= table.shape[0]:
        raise ValueError(f"samples reach level {int(level.max())} but only "
                         f"{table.shape[0]} level probabilities are known")
    return table[level]


def _make_pool(u, theta, log_lik, level, chain_id, step, log_p: np.ndarray) -> WeightedPool:
    log_weight = log_p + log_lik
    total = float(special.logsumexp(log_weight))
    if not np.isfinite(total):
        raise DegenerateWeightsError("all posterior weights are zero")
    return WeightedPool(u=u, theta=theta, log_lik=log_lik, level=level, chain_id=chain_id,
                        step=step, log_weight=log_weight, log_weight_total=total)


def build_pool(run: SusRun, p_c: Optional[float] = None) -> WeightedPool:
    """Weighted pool over every sample of every level of ``run``.

    Levels are weighted by their recorded ln P unless ``p_c`` is given.
    """
    u = np.concatenate([lv.u for lv in run.levels])
    level = np.concatenate([np.full(lv.n_samples, lv.level_index) for lv in run.levels])
    if p_c is None:
        log_p = np.concatenate([np.full(lv.n_samples, lv.log_p) for lv in run.levels])
    else:
        log_p = _level_log_p(level, p_c)
    return _make_pool(
        u=u,
        theta=to_physical(u, run.prior),
        log_lik=np.concatenate([lv.log_lik for lv in run.levels]),
        level=level,
        chain_id=np.concatenate([lv.chain_id for lv in run.levels]),
        step=np.concatenate([lv.step for lv in run.levels]),
        log_p=log_p,
    )


def pool_from_frame(frame: pd.DataFrame, p_c: float,
                    prior: Optional[PriorSpec] = None,
                    level_log_p: Optional[Sequence[float]] = None) -> WeightedPool:
    """Rebuild a pool from a samples table (level, chain, step, log_lik, theta_*).

    ``level_log_p`` overrides the level probabilities p_c^i, e.g. with the
    values recorded in the run manifest.
    """
    missing = {"level", "chain", "step", "log_lik"} - set(frame.columns)
    if missing:
        raise ValueError(f"samples table lacks column(s): {', '.join(sorted(missing))}")
    theta_cols = [c for c in frame.columns if c.startswith("theta_")]
    if not theta_cols:
        raise ValueError("samples table has no theta_* columns")
    theta_cols.sort(key=lambda c: int(c.split("_")[1]))
    theta = frame[theta_cols].to_numpy(dtype=float)
    u = None
    if prior is not None:
        frac = np.clip((theta - prior.lower) / prior.width, 1e-300, np.nextafter(1.0, 0.0))
        u = phi_inv(frac)
    level = frame["level"].to_numpy(dtype=int)
    return _make_pool(
        u=u,
        theta=theta,
        log_lik=frame["log_lik"].to_numpy(dtype=float),
        level=level,
        chain_id=frame["chain"].to_numpy(dtype=int),
        step=frame["step"].to_numpy(dtype=int),
        log_p=_level_log_p(level, p_c, level_log_p),
    )


def expectation(pool: WeightedPool, g_values) -> float:
    """Self-normalized weighted mean of ``g_values`` (aligned with the pool)."""
    g = np.asarray(g_values, dtype=float)
    if g.shape[0] != len(pool):
        raise ValueError(f"expected {len(pool)} values, got {g.shape[0]}")
    w = pool.weights
    keep = w > 0
    out = np.tensordot(w[keep], g[keep], axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def resample_equal(pool: WeightedPool, count: int, rng: np.random.Generator,
                   method: str = "multinomial") -> np.ndarray:
    """Indices of ``count`` equally weighted posterior draws from the pool."""
    if count < 1:
        raise ValueError("resample count must be at least 1")
    w = pool.weights
    w = w / w.sum()
    n = w.shape[0]
    if method == "multinomial":
        return rng.choice(n, size=count, p=w)
    if method == "systematic":
        positions = (rng.random() + np.arange(count)) / count
        cumulative = np.cumsum(w)
        cumulative[-1] = 1.0
        return np.searchsorted(cumulative, positions, side="right")
    if method == "residual":
        expected = w * count
        copies = np.floor(expected).astype(int)
        residual = expected - copies
        remaining = count - int(copies.sum())
        if remaining > 0:
            copies = copies + rng.multinomial(remaining, residual / residual.sum())
        ids = np.repeat(np.arange(n), copies)
        return rng.permutation(ids)
    raise ValueError(f"unknown resampling method '{method}' "
                     f"(choose from {', '.join(RESAMPLING_METHODS)})")


def ancestor_diversity(indices: np.ndarray) -> float:
    """Fraction of distinct ancestors among resampled indices."""
    indices = np.asarray(indices)
    return float(np.unique(indices).size / indices.size) if indices.size else 0.0


def last_level_pool(pool: WeightedPool) -> WeightedPool:
    """Only the samples of the final level, reweighted among themselves."""
    return pool.subset(pool.level == pool.level.max())


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values)
    cdf = np.cumsum(weights[order])
    cdf /= cdf[-1]
    k = int(np.searchsorted(cdf, q, side="left"))
    return float(values[order][min(k, values.size - 1)])


def posterior_summary(pool: WeightedPool, names: Optional[Sequence[str]] = None,
                      interval: float = 0.9) -> pd.DataFrame:
    """Weighted mean, c.o.v. and central credible interval per coordinate."""
    d = pool.theta.shape[1]
    names = list(names) if names is not None else [f"theta_{j + 1}" for j in range(d)]
    w = pool.weights
    lo_q, hi_q = 0.5 * (1.0 - interval), 0.5 * (1.0 + interval)
    rows = []
    for j, name in enumerate(names):
        x = pool.theta[:, j]
        mean = float(np.sum(w * x))
        std = float(np.sqrt(max(np.sum(w * (x - mean) ** 2), 0.0)))
        rows.append({
            "parameter": name,
            "mean": mean,
            "std": std,
            "cov": std / abs(mean) if mean != 0 else math.nan,
            "lower": _weighted_quantile(x, w, lo_q),
            "upper": _weighted_quantile(x, w, hi_q),
        })
    return pd.DataFrame(rows)


@dataclass(frozen=True, eq=False)
class RejuvenatedSamples:
    u: np.ndarray
    theta: np.ndarray
    log_lik: np.ndarray
    acceptance_rate: float

    def __len__(self) -> int:
        return int(self.log_lik.shape[0])


def mcmc_rejuvenate(pool: WeightedPool, seeds: np.ndarray, problem: BayesProblem,
                    steps: int, seed: int, sigma: Optional[np.ndarray] = None) -> RejuvenatedSamples:
    """Move each resampled seed ``steps`` times with a posterior-invariant CS kernel.

    The candidate v ~ N(rho*u, diag(sigma^2)) is accepted with probability
    min(1, L(v)/L(u)). ``sigma`` defaults to the componentwise seed spread
    scaled by the initial CS lambda.
    """
    if pool.u is None:
        raise ValueError("rejuvenation needs u coordinates in the pool")
    seeds = np.asarray(seeds, dtype=int)
    u = pool.u[seeds].copy()
    ll = pool.log_lik[seeds].copy()
    if steps <= 0:
        return RejuvenatedSamples(u=u, theta=to_physical(u, problem.prior), log_lik=ll,
                                  acceptance_rate=0.0)

    if sigma is None:
        spread = np.std(u, axis=0, ddof=1) if u.shape[0] > 1 else np.ones(u.shape[1])
        spread = np.where(np.isfinite(spread) & (spread > 0), spread, 1.0)
        sigma = np.minimum(INITIAL_LAMBDA * spread, 1.0)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (u.shape[1],))
    rho = np.sqrt(1.0 - sigma ** 2)

    streams = RandomStreams(seed)
    rngs = [streams.rejuvenation(c) for c in range(u.shape[0])]
    counter = LikelihoodCounter(problem)
    accepted = 0
    for _ in range(steps):
        v = np.stack([propose(u_k, rho, rng) for u_k, rng in zip(u, rngs)])
        log_uniform = np.log(np.array([rng.random() for rng in rngs]))
        ll_v = counter.evaluate(v)
        with np.errstate(invalid="ignore"):
            ok = log_uniform < (ll_v - ll)
        ok &= ll_v > -math.inf
        u[ok] = v[ok]
        ll[ok] = ll_v[ok]
        accepted += int(ok.sum())

    rate = accepted / (steps * u.shape[0])
    logger.info(f"rejuvenated {u.shape[0]} samples over {steps} step(s), acceptance {rate:.3f}")
    return RejuvenatedSamples(u=u, theta=to_physical(u, problem.prior), log_lik=ll,
                              acceptance_rate=rate)
