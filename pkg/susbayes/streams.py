"""
Deterministic random streams.

Every level and every chain draws from its own generator, keyed by the
run seed, so results do not depend on how work is scheduled.
"""

import numpy as np

LEVEL_KEY = 0
CHAIN_KEY = 1
REJUVENATE_KEY = 2
RESAMPLE_KEY = 3
# level slot of posterior-stage streams, beyond any SuS level index
POSTERIOR_SLOT = 2 ** 32 - 1


class RandomStreams:
    """Factory of numpy generators keyed by (seed, level, chain)."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("rng seed must be non-negative")
        self.seed = int(seed)

    def level(self, level: int) -> np.random.Generator:
        """Stream used for level-wide draws (direct MC, seed permutation)."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, level, LEVEL_KEY]))

    def chain(self, level: int, chain_id: int) -> np.random.Generator:
        """Stream owned by one Markov chain of one level."""
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, level, CHAIN_KEY, chain_id])
        )

    def rejuvenation(self, chain_id: int) -> np.random.Generator:
        """Stream for a posterior rejuvenation chain."""
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, POSTERIOR_SLOT, REJUVENATE_KEY, chain_id])
        )

    def resampling(self) -> np.random.Generator:
        """Stream for drawing equally weighted posterior samples."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, POSTERIOR_SLOT, RESAMPLE_KEY]))

    def __repr__(self) -> str:
        return f"RandomStreams(seed={self.seed})"
