"""Deterministic pseudo-random streams.

Every random quantity in the package (synthetic features, weight
initialization, dataset splits, mini-batch shuffles) comes from
:class:`Rng`, so results depend only on integer seeds and not on the
numpy or Python version installed.

Generator: xoshiro256** (Blackman & Vigna), state seeded with four
consecutive outputs of SplitMix64 started at the 64-bit seed.

Uniform doubles: ``(next_u64() >> 11) * 2**-53``, in ``[0, 1)``.

Normal variates: Marsaglia's polar form of Box-Muller. A pair ``(u, v)`` is
drawn as ``2 * uniform() - 1`` (u first), rejected unless
``0 < s = u*u + v*v < 1``; with ``f = sqrt(-2 ln s / s)`` the call returns
``u * f`` and caches ``v * f`` for the next normal draw. Integer and uniform
draws do not touch the cached spare.
"""

import math

MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 1.0 / 9007199254740992.0


def splitmix64(state):
    """Advance a SplitMix64 state. Returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Rng:
    """xoshiro256** stream with uniform, integer and normal draws."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed must be unsigned, got {seed}")
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s
        self._spare = None

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * _TWO_POW_M53

    def below(self, n: int) -> int:
        """Unbiased integer in ``[0, n)`` by rejection on the top of the u64 range."""
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, walking i from the end down to 1."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def permutation(self, n: int) -> list:
        idx = list(range(n))
        self.shuffle(idx)
        return idx

    def standard_normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        while True:
            u = 2.0 * self.uniform() - 1.0
            v = 2.0 * self.uniform() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * f
        return u * f


def gaussian_sample(rng: Rng, mean: float, std: float) -> float:
    """Draw ``mean + std * z`` with ``z`` from ``rng.standard_normal()``.

    A zero ``std`` still consumes a normal variate, so the stream position
    does not depend on the parameters.
    """
    if not std >= 0.0:
        raise ValueError(f"std must be non-negative, got {std}")
    z = rng.standard_normal()
    if std == 0.0:
        return float(mean)
    return mean + std * z
