"""Counter-based random streams built on SplitMix64.

Every stream is identified by a 64-bit key. Its ``n``-th output is the
``n``-th output of SplitMix64 seeded with that key::

    draw(key, n) = mix64(key + (n + 1) * GOLDEN)

so any draw can be computed directly from ``(key, n)`` without advancing
state. This lets the simulation evaluate thousands of per-life streams in
one vectorised step and still get exactly what a scalar, one-life-at-a-time
loop would get.

Child keys (replication from master seed, life from replication) come from
:func:`derive_seed`, which is the ``index``-th output of a SplitMix64 stream
seeded with ``mix64(parent)``.

Uniform doubles use the top 53 bits: ``(x >> 11) * 2**-53`` in ``[0, 1)``.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_TWO_M53 = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 finaliser on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def draw_u64(key: int, counter: int) -> int:
    return mix64(key + (counter + 1) * GOLDEN)


def draw_u64_array(keys: np.ndarray, counter: int) -> np.ndarray:
    offset = np.uint64(((counter + 1) * GOLDEN) & MASK64)
    with np.errstate(over="ignore"):
        return mix64_array(np.asarray(keys, dtype=np.uint64) + offset)


def derive_seed(parent: int, index: int) -> int:
    return draw_u64(mix64(parent), index)


def derive_seeds(parent: int, count: int) -> np.ndarray:
    """``derive_seed(parent, i)`` for ``i in range(count)``, as ``uint64``."""
    base = np.uint64(mix64(parent))
    steps = (np.arange(1, count + 1, dtype=np.uint64)) * np.uint64(GOLDEN)
    with np.errstate(over="ignore"):
        return mix64_array(base + steps)


def to_unit(x):
    """Map 64-bit outputs to doubles in ``[0, 1)``."""
    if isinstance(x, np.ndarray):
        return (x >> np.uint64(11)).astype(np.float64) * _TWO_M53
    return (x >> 11) * _TWO_M53


def uniforms(keys: np.ndarray, counter: int) -> np.ndarray:
    """Draw number ``counter`` of every stream in ``keys``."""
    return to_unit(draw_u64_array(keys, counter))


def index_from_unit(u, n):
    """Map uniforms in ``[0, 1)`` to integers in ``[0, n)`` by ``floor(u * n)``."""
    if isinstance(u, np.ndarray):
        n = np.asarray(n)
        return np.minimum((u * n).astype(np.int64), n - 1)
    return min(int(u * n), n - 1)


class Stream:
    """Sequential view of one counter-based stream.

    ``Stream(key)`` yields ``draw(key, 0)``, ``draw(key, 1)``, ... Each call to
    :meth:`random` or :meth:`integers` consumes exactly one counter value;
    the ``size=`` forms consume ``size`` consecutive values.
    """

    def __init__(self, key: int, counter: int = 0):
        self.key = int(key) & MASK64
        self.counter = int(counter)

    def __repr__(self):
        return f"Stream(key={self.key:#018x}, counter={self.counter})"

    def next_u64(self) -> int:
        x = draw_u64(self.key, self.counter)
        self.counter += 1
        return x

    def random(self, size: int | None = None):
        if size is None:
            return to_unit(self.next_u64())
        keys = np.full(size, self.key, dtype=np.uint64)
        offsets = (np.arange(self.counter + 1, self.counter + size + 1, dtype=np.uint64)) * np.uint64(GOLDEN)
        with np.errstate(over="ignore"):
            out = to_unit(mix64_array(keys + offsets))
        self.counter += size
        return out

    def integers(self, n: int, size: int | None = None):
        if n < 1:
            raise ValueError("n must be positive")
        return index_from_unit(self.random(size), n)

    def spawn(self, index: int) -> Stream:
        return Stream(derive_seed(self.key, index))
