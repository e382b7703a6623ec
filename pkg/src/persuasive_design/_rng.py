"""Counter-based normal variates keyed by (seed, stream, step).

Each draw is a pure function of its coordinates, so results do not depend on
the order in which paths or trials are processed. The mixer is splitmix64's
finalizer; uniforms feed a Box-Muller transform (cosine branch only).
"""
import numpy as np
import numba

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 2.0 * np.pi
_INV53 = 1.0 / 9007199254740992.0
_INV53P1 = 1.0 / 9007199254740993.0


@numba.njit(cache=True)
def mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True)
def stream_key(seed, stream):
    return mix(np.uint64(seed) ^ mix(np.uint64(stream)))


@numba.njit(cache=True)
def normal_at(key, k):
    a = mix(key + np.uint64(2 * k))
    b = mix(key + np.uint64(2 * k + 1))
    u1 = ((a >> np.uint64(11)) + np.uint64(1)) * _INV53P1
    u2 = (b >> np.uint64(11)) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


@numba.njit(cache=True)
def uniform_at(key, k):
    a = mix(key + np.uint64(2 * k))
    return ((a >> np.uint64(11)) + np.uint64(1)) * _INV53P1


# Vectorized twins for numpy callers. uint64 array arithmetic wraps modulo 2^64.

def mix_np(z):
    with np.errstate(over="ignore"):  # scalar uint64 ops warn on the intended wrap
        z = np.asarray(z, dtype=np.uint64) + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def stream_keys_np(seed, streams):
    s = np.asarray(streams, dtype=np.uint64)
    return mix_np(np.uint64(seed) ^ mix_np(s))


def normal_at_np(keys, k):
    keys = np.asarray(keys, dtype=np.uint64)
    k = np.asarray(k, dtype=np.uint64)
    with np.errstate(over="ignore"):
        a = mix_np(keys + np.uint64(2) * k)
        b = mix_np(keys + np.uint64(2) * k + np.uint64(1))
    u1 = ((a >> np.uint64(11)) + np.uint64(1)) * _INV53P1
    u2 = (b >> np.uint64(11)) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def uniform_at_np(keys, k):
    keys = np.asarray(keys, dtype=np.uint64)
    with np.errstate(over="ignore"):
        a = mix_np(keys + np.uint64(2) * np.asarray(k, dtype=np.uint64))
    return ((a >> np.uint64(11)) + np.uint64(1)) * _INV53P1
