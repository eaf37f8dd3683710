"""Seeded random streams.

Every random draw in the package goes through :func:`make_rng`, which builds a
``numpy.random.Generator`` on top of the Philox-4x64 counter-based bit
generator.  Philox output depends only on (key, counter), so a given seed
produces the same stream on every platform and numpy build that ships
Philox.  Independent sub-streams are derived by mixing extra integers (fold
index, trial index, layer index, ...) into the seed through
``numpy.random.SeedSequence``.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed, *stream):
    """Return a Philox-backed generator for ``seed`` and optional sub-stream ids.

    ``seed`` and every stream id must be non-negative integers; they are
    reduced modulo 2**64.
    """
    words = [int(seed) & _MASK64] + [int(s) & _MASK64 for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
