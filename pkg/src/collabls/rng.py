"""Counter-based random streams.

Every draw in the package comes from a Philox4x64 generator (numpy's
``Philox`` bit generator).  A stream is identified by a 64-bit ``seed`` and a
64-bit ``stream`` index, packed into the 128-bit Philox key as
``seed | stream << 64``.  Distinct ``(seed, stream)`` pairs give distinct keys
and therefore non-overlapping streams, independent of how many threads run or
in which order streams are consumed.

Stream layout used by the experiment runner::

    stream = (trial + 1) << 40 | n_index << 20 | role

with ``role = 0`` reserved, ``role = 1 + agent`` for an agent's training data,
and roles at :data:`ROLE_FRESH` and above for auxiliary draws.  Run-level
draws (ground-truth model, masks) use ``trial = -1`` so they never collide with
per-trial streams.
"""

from dataclasses import dataclass

import numpy as np

__all__ = ["RngSeed", "substream", "as_generator", "ROLE_MODEL", "ROLE_MASKS", "ROLE_FRESH", "ROLE_UNLABELED", "ROLE_SPLIT"]

_MASK64 = (1 << 64) - 1

ROLE_MODEL = 1
ROLE_MASKS = 2
ROLE_FRESH = (1 << 20) - 1
ROLE_UNLABELED = (1 << 20) - 2
ROLE_SPLIT = (1 << 20) - 3


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) <= _MASK64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v}")
            object.__setattr__(self, name, int(v))

    def generator(self):
        """A fresh ``numpy.random.Generator`` positioned at the start of this stream."""
        return np.random.Generator(np.random.Philox(key=self.seed | (self.stream << 64)))

    def child(self, stream):
        return RngSeed(self.seed, stream)


def substream(trial, n_index, role):
    """Stream index for ``(trial, n_index, role)``; see the module docstring."""
    if not 0 <= role < (1 << 20) or not 0 <= n_index < (1 << 20):
        raise ValueError("role and n_index must fit in 20 bits")
    if trial < -1 or trial + 1 >= (1 << 24):
        raise ValueError(f"trial index out of range: {trial}")
    return ((trial + 1) << 40) | (n_index << 20) | role


def as_generator(seed):
    """Accept an :class:`RngSeed`, a ``Generator`` or an int and return a ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, RngSeed):
        return seed.generator()
    return RngSeed(int(seed)).generator()
