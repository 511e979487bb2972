"""
Adaptive conditional-sampling Metropolis-Hastings.

Generates states from the standard normal restricted to {L(u) > ell}.
The proposal v ~ N(rho*u, diag(1 - rho^2)) leaves the standard normal
invariant, so a candidate is accepted iff it clears the threshold.
The scaling lambda is tuned between batches of chains towards an
average acceptance rate of 0.44.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np

from .errors import ContractViolationError
from .model import LikelihoodCounter
from .streams import RandomStreams

logger = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.44
INITIAL_LAMBDA = 0.6


@dataclass(frozen=True)
class AdaptState:
    """Scaling state of the adaptive proposal within one level."""

    lam: float
    sigma0: np.ndarray
    batch_size: int
    iteration: int = 0
    acceptance_history: Tuple[float, ...] = ()
    lambda_history: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if np.any(np.asarray(self.sigma0) < 0):
            raise ValueError("sigma0 must be componentwise non-negative")
        if self.batch_size < 1:
            raise ValueError("adaptation batch size must be at least 1")
        if not self.lambda_history:
            object.__setattr__(self, "lambda_history", (float(self.lam),))

    @classmethod
    def from_seeds(cls, seeds_u: np.ndarray, lam: float, batch_size: int) -> "AdaptState":
        """Start a level: sigma0 is the componentwise std of the seeds.

        Components with zero (or undefined) spread get 1.
        """
        seeds_u = np.atleast_2d(seeds_u)
        if seeds_u.shape[0] > 1:
            sigma0 = np.std(seeds_u, axis=0, ddof=1)
        else:
            sigma0 = np.ones(seeds_u.shape[1])
        sigma0 = np.where(np.isfinite(sigma0) & (sigma0 > 0), sigma0, 1.0)
        return cls(lam=float(lam), sigma0=sigma0, batch_size=int(batch_size))

    @property
    def sigma(self) -> np.ndarray:
        return np.minimum(self.lam * self.sigma0, 1.0)

    @property
    def rho(self) -> np.ndarray:
        return np.sqrt(1.0 - self.sigma ** 2)

    def updated(self, a_hat: float) -> "AdaptState":
        """State after one batch with average acceptance ``a_hat``."""
        it = self.iteration + 1
        lam = adapt_lambda(self.lam, a_hat, it)
        return replace(
            self,
            lam=lam,
            iteration=it,
            acceptance_history=self.acceptance_history + (float(a_hat),),
            lambda_history=self.lambda_history + (lam,),
        )


@dataclass(frozen=True)
class LevelSamples:
    """States emitted by one level of parallel chains, chain-major."""

    u: np.ndarray
    log_lik: np.ndarray
    chain_id: np.ndarray
    step: np.ndarray
    accepted: np.ndarray
    state: AdaptState
    n_chains: int
    n_steps: int

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if self.accepted.size else 0.0

    @property
    def acceptance_trace(self) -> Tuple[float, ...]:
        return self.state.acceptance_history

    @property
    def lambda_trace(self) -> Tuple[float, ...]:
        return self.state.lambda_history

    def __repr__(self) -> str:
        return (f"LevelSamples(chains={self.n_chains}, steps={self.n_steps}, "
                f"acceptance={self.acceptance_rate:.3f})")


def propose(u: np.ndarray, rho: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw v ~ N(rho*u, diag(1 - rho^2))."""
    u = np.asarray(u, dtype=float)
    rho = np.asarray(rho, dtype=float)
    return rho * u + np.sqrt(1.0 - rho ** 2) * rng.standard_normal(u.shape)


def adapt_lambda(lam: float, a_hat: float, iteration: int) -> float:
    """log lambda <- log lambda + (a_hat - 0.44) / sqrt(iteration)."""
    if iteration < 1:
        raise ValueError("adaptation iteration counts from 1")
    return float(math.exp(math.log(lam) + (a_hat - TARGET_ACCEPTANCE) / math.sqrt(iteration)))


def batch_bounds(n_chains: int, batch_size: int):
    """(start, stop) of each adaptation batch; the last one takes the remainder."""
    n_batches = max(n_chains // batch_size, 1)
    bounds = []
    for b in range(n_batches):
        start = b * batch_size
        stop = n_chains if b == n_batches - 1 else start + batch_size
        bounds.append((start, stop))
    return bounds


def run_level(
    seeds_u: np.ndarray,
    seeds_ll: np.ndarray,
    ell: float,
    evaluator: LikelihoodCounter,
    adapt: AdaptState,
    n_steps: int,
    streams: RandomStreams,
    level: int,
) -> LevelSamples:
    """Advance one chain per seed for ``n_steps`` states above ``ell``.

    Seeds themselves are not emitted. A rejected candidate repeats the
    current state.
    """
    seeds_u = np.atleast_2d(np.asarray(seeds_u, dtype=float))
    seeds_ll = np.asarray(seeds_ll, dtype=float)
    n_chains, d = seeds_u.shape
    if seeds_ll.shape != (n_chains,):
        raise ContractViolationError("one log-likelihood per seed is required")
    if n_steps < 1:
        raise ContractViolationError("each chain must emit at least one state")
    below = ~(seeds_ll > ell)
    if np.any(below):
        k = int(np.argmax(below))
        raise ContractViolationError(
            f"seed {k} has log-likelihood {seeds_ll[k]} which does not exceed "
            f"the level threshold {ell}"
        )

    order = streams.level(level).permutation(n_chains)
    seeds_u = seeds_u[order]
    seeds_ll = seeds_ll[order]

    u_out = np.empty((n_chains, n_steps, d))
    ll_out = np.empty((n_chains, n_steps))
    acc_out = np.zeros((n_chains, n_steps), dtype=bool)

    state = adapt
    for start, stop in batch_bounds(n_chains, state.batch_size):
        chains = range(start, stop)
        rngs = [streams.chain(level, c) for c in chains]
        rho = state.rho

        u_cur = seeds_u[start:stop].copy()
        ll_cur = seeds_ll[start:stop].copy()
        for t in range(n_steps):
            v = np.stack([propose(u_k, rho, rng) for u_k, rng in zip(u_cur, rngs)])
            ll_v = evaluator.evaluate(v)
            ok = ll_v > ell
            u_cur[ok] = v[ok]
            ll_cur[ok] = ll_v[ok]
            u_out[start:stop, t] = u_cur
            ll_out[start:stop, t] = ll_cur
            acc_out[start:stop, t] = ok

        n_batch = stop - start
        a_hat = float(acc_out[start:stop].sum()) / (n_batch * n_steps)
        state = state.updated(a_hat)
        logger.debug(f"level {level} chains {start}-{stop - 1}: "
                     f"acceptance {a_hat:.3f}, lambda {state.lam:.4f}")

    chain_id = np.repeat(np.arange(n_chains), n_steps)
    step = np.tile(np.arange(n_steps), n_chains)
    return LevelSamples(
        u=u_out.reshape(n_chains * n_steps, d),
        log_lik=ll_out.reshape(n_chains * n_steps),
        chain_id=chain_id,
        step=step,
        accepted=acc_out.reshape(n_chains * n_steps),
        state=state,
        n_chains=n_chains,
        n_steps=n_steps,
    )
