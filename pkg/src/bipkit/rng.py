"""Counter-based random substreams.

Every stochastic routine draws from ``substream(seed, index)``, a Philox4x64
generator keyed by the 64-bit ``seed`` whose counter starts at
``[0, 0, index, 0]``. Two indices never share counter space for any
realistic draw count (2**128 blocks per index), so work split by index can run
in any order or on any number of workers and still produce the same numbers.
"""

import numpy as np

# Stream index offsets used by different consumers of the same seed.
STREAM_ALLOCATOR = 0
STREAM_SYNTH = 1 << 40
STREAM_MC = 2 << 40
STREAM_PLANT = 3 << 40


def substream(seed, index):
    seed = int(seed) & ((1 << 64) - 1)
    index = int(index)
    if index < 0 or index >= 1 << 64:
        raise ValueError(f"substream index out of range: {index}")
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, 0]))
