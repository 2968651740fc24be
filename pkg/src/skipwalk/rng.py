"""SplitMix64 streams shared by the Python and compiled walk kernels.

The walk kernels must produce bit-identical corpora whichever backend is
active, so they do not use numpy's generators. Every start entity gets its
own stream keyed by ``(seed, entity)``; uniforms take the top 53 bits.
"""

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN = 0x9E3779B97F4A7C15
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_state(seed: int, key: int) -> int:
    return mix64((seed & MASK64) ^ mix64((key + GOLDEN) & MASK64))


class SplitMix64:
    __slots__ = ("state",)

    def __init__(self, seed: int, key: int = 0):
        self.state = stream_state(seed, key)

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK64
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * INV_2_53


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic child seed, e.g. one per epoch or per retry."""
    s = seed & MASK64
    for k in keys:
        s = stream_state(s, k)
    return s >> 1  # fits in a signed int64 for numpy
