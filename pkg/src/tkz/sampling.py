"""Row orderings for one Kaczmarz epoch: incremental, shuffle-once, reshuffling.

All randomness comes from a counter-based Philox generator keyed by the run
seed, so a ``(kind, m, seed)`` triple always produces the same stream of
permutations.  Indices are 0-based here; the CLI prints them 1-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

STRATEGIES = ("is", "so", "rr")

# Stream tags keep the permutation stream independent of any other stream
# derived from the same user seed (problem generation, block sampling, ...).
STREAM_PERMUTATION = 0x5EED_0001


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator for ``seed`` split by the integer ``stream`` path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFF_FFFF_FFFF_FFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(ss))


def fisher_yates(m: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation of ``range(m)`` by the Durstenfeld shuffle."""
    order = np.arange(m)
    for i in range(m - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


@dataclass
class StrategyState:
    """Single-owner permutation source for one solver run."""

    kind: str
    m: int
    seed: int = 0
    epoch: int = 0
    _cached: Optional[np.ndarray] = field(default=None, repr=False)
    _rng: Optional[np.random.Generator] = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.m < 1:
            raise ValueError("need at least one row")
        self._rng = make_rng(self.seed, STREAM_PERMUTATION)

    @property
    def fixed(self) -> bool:
        """True when every epoch uses the same permutation (IS and SO)."""
        return self.kind != "rr"


def next_permutation(state: StrategyState) -> np.ndarray:
    """Permutation for the current epoch; advances the epoch counter."""
    if state.kind == "is":
        order = np.arange(state.m)
    elif state.kind == "so":
        if state._cached is None:
            state._cached = fisher_yates(state.m, state._rng)
        order = state._cached.copy()
    else:
        order = fisher_yates(state.m, state._rng)
    state.epoch += 1
    return order
