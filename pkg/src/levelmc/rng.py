"""Counter-based random streams.

Every stochastic routine in the package derives its generator from a single
64-bit seed plus small integer stream labels, so results are reproducible and
independent of how work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1

# stream label namespaces, so different subsystems never collide
CHAIN = 1
TRIAL = 2
SEARCH = 3
ORACLE = 4
INIT = 5


def stream(seed: int, kind: int = 0, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream (kind, index) of a master seed.

    Uses the Philox counter-based bit generator keyed on
    (seed, kind << 32 | index); distinct labels give statistically
    independent streams regardless of draw order elsewhere.
    """
    if index < 0 or index >= (1 << 32):
        raise ValueError("stream index out of range")
    key = np.array([seed & _MASK64, ((kind << 32) | index) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
