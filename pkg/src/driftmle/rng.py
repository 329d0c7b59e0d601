"""Counter-based normal streams.

Every replicate draws from its own Philox4x64 stream keyed by
``(base_seed, stream)``. Normal number ``i`` of a stream is produced by
Box-Muller from uniforms ``2*(i//2)`` and ``2*(i//2)+1`` of that stream, so
its value depends only on ``(base_seed, stream, i)``. Neither the thread
count nor the order in which replicates run can change it.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class SeedSpec:
    base_seed: int
    stream: int = 0

    def with_stream(self, stream: int) -> "SeedSpec":
        return SeedSpec(self.base_seed, stream)


def _generator(base_seed: int, stream: int) -> np.random.Generator:
    key = np.array([base_seed & _MASK64, stream & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def standard_normals(base_seed: int, stream: int, n: int, out=None) -> np.ndarray:
    """First ``n`` standard normals of stream ``(base_seed, stream)``."""
    if out is None:
        out = np.empty(n)
    if n == 0:
        return out
    u = _generator(base_seed, stream).random(2 * ((n + 1) // 2))
    kernels.box_muller(u, out)
    return out


def normal_block(base_seed: int, streams, n: int) -> np.ndarray:
    """Rows of standard normals, one row per stream id."""
    streams = list(streams)
    z = np.empty((len(streams), n))
    for row, s in enumerate(streams):
        standard_normals(base_seed, s, n, out=z[row])
    return z
