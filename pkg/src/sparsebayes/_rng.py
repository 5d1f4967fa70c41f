"""Derived random streams: every Monte Carlo replicate draws from an
independent generator determined by (seed, replicate index), so results are
identical no matter how replicates are scheduled across workers."""

from __future__ import annotations

import numpy as np


def replicate_rng(seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
    return np.random.default_rng(ss)
