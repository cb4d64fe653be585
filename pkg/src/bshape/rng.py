"""xoshiro256** streams usable from inside numba kernels.

Each chain owns a 4-word ``uint64`` state array.  Seeds are expanded with
:class:`numpy.random.SeedSequence`, so streams for different chains are
independent and reproducible on every platform.
"""

import math

import numpy as np

from ._jit import njit

_MASK_ROT = np.uint64(64)
_U5 = np.uint64(5)
_U9 = np.uint64(9)
_U7 = np.uint64(7)
_U17 = np.uint64(17)
_U45 = np.uint64(45)
_U11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit
def _rotl(x, k):
    return (x << k) | (x >> (_MASK_ROT - k))


@njit
def next_u64(state):
    s0 = state[0]
    s1 = state[1]
    s2 = state[2]
    s3 = state[3]
    result = _rotl(s1 * _U5, _U7) * _U9
    t = s1 << _U17
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, _U45)
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
    return result


@njit
def next_double(state):
    """Uniform on [0, 1) with 53 random bits."""
    return float(next_u64(state) >> _U11) * _INV53


@njit
def next_open_double(state):
    """Uniform on (0, 1)."""
    while True:
        u = next_double(state)
        if u > 0.0:
            return u


@njit
def next_normal(state):
    # Marsaglia polar method; the second variate is discarded to keep the
    # state-consumption pattern independent of call history.
    while True:
        u = 2.0 * next_double(state) - 1.0
        v = 2.0 * next_double(state) - 1.0
        s = u * u + v * v
        if 0.0 < s < 1.0:
            return u * math.sqrt(-2.0 * math.log(s) / s)


@njit
def next_gamma(state, shape):
    """Gamma(shape, 1) by Marsaglia-Tsang, boosted for shape < 1."""
    boosted = shape < 1.0
    a = shape + 1.0 if boosted else shape
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = next_normal(state)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = next_open_double(state)
        if u < 1.0 - 0.0331 * x * x * x * x or math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            break
    g = d * v
    if boosted:
        g *= next_open_double(state) ** (1.0 / shape)
    return g


@njit
def next_beta(state, a, b):
    """Beta(a, b) as X / (X + Y) with independent gamma variates."""
    x = next_gamma(state, a)
    y = next_gamma(state, b)
    return x / (x + y)


def seed_state(seed):
    """Expand an integer seed or a ``SeedSequence`` into a xoshiro state."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    state = ss.generate_state(4, np.uint64)
    if not state.any():
        state[0] = np.uint64(0x9E3779B97F4A7C15)
    return state


class Xoshiro256:
    """Python handle around a kernel RNG state.

    The same ``state`` array can be passed straight into numba kernels, which
    advance it in place.
    """

    def __init__(self, seed=0, state=None):
        if state is not None:
            self.state = np.array(state, dtype=np.uint64).copy()
            if self.state.shape != (4,):
                raise ValueError("xoshiro256 state must have 4 words")
        else:
            self.state = seed_state(seed)

    def random(self):
        with np.errstate(over="ignore"):
            return next_double(self.state)

    def uniform(self, low=0.0, high=1.0):
        return low + (high - low) * self.random()

    def normal(self):
        with np.errstate(over="ignore"):
            return next_normal(self.state)

    def gamma(self, shape):
        with np.errstate(over="ignore"):
            return next_gamma(self.state, float(shape))

    def beta(self, a, b):
        with np.errstate(over="ignore"):
            return next_beta(self.state, float(a), float(b))

    def copy(self):
        return Xoshiro256(state=self.state)
