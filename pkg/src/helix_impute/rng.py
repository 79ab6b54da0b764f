"""Named, counter-based random streams.

Every stochastic site draws from its own Philox stream keyed by
``(seed, stream name)``, so adding draws in one place never shifts another.
"""

import zlib

import numpy as np

STREAMS = ("init", "dropout", "masking", "data", "corrupt", "shuffle")


def stream(seed, name, *extra):
    """Return an independent ``np.random.Generator`` for ``(seed, name, *extra)``.

    ``extra`` integers (e.g. an epoch or batch index) give sub-streams that are
    reproducible regardless of call order.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    entropy.extend(int(e) for e in extra)
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(ss))


class Streams:
    """Convenience bundle of named streams for one run."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._cache = {}

    def __getitem__(self, name):
        if name not in self._cache:
            self._cache[name] = stream(self.seed, name)
        return self._cache[name]

    def sub(self, name, *extra):
        return stream(self.seed, name, *extra)
