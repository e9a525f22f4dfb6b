from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RngStream:
    """A (seed, stream) pair naming an independent, reproducible substream.

    Chunked samplers ask for ``generator(chunk=k)``; chunk generators are
    independent of each other and of the unchunked generator.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if int(self.stream) < 0:
            raise ValueError("stream index must be non-negative")

    def generator(self, chunk=None) -> np.random.Generator:
        key = (int(self.stream),) if chunk is None else (int(self.stream), int(chunk))
        ss = np.random.SeedSequence(int(self.seed), spawn_key=key)
        return np.random.Generator(np.random.PCG64(ss))
