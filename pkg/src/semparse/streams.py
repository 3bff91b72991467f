"""Named deterministic random substreams.

Every run draws all randomness from one integer seed; independent concerns
(parameter init, grammar sampling, shuffling, world generation) get their own
named substream so toggling one does not perturb the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed, name):
    """An independent numpy Generator derived from (seed, name)."""
    tag = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))
