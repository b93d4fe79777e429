"""Counter-based 64-bit hashing used for shared-node ownership and forcing vectors.

Both uses need every rank to derive the same value for a global node id with
no communication, so the functions are pure in ``(id, seed)``.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# salts separating the ownership stream from the forcing stream
OWNER_SALT = 0
FORCING_SALT = 1


def mix64(x):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.array(x, dtype=np.uint64, copy=True, ndmin=1)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def hash_ids(ids, seed, salt=0):
    """Avalanche hash of global ids under ``seed``; returns uint64 array."""
    ids = np.asarray(ids, dtype=np.uint64)
    key = mix64(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64)
                + np.uint64(salt) * _GOLDEN)
    return mix64(ids * _GOLDEN ^ key[0])


def hash_to_uniform(ids, seed):
    """Map global ids to reals in the open interval (-1, 1), deterministically."""
    h = hash_ids(ids, seed, FORCING_SALT)
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return 2.0 * u - 1.0
