"""Counter-based deterministic random numbers.

Every random value used anywhere in the package is a pure function of
(seed, stream, counter row).  There is no sequential generator state, so a
value attached to a lattice block, a Monte Carlo sample, or a transfer-matrix
step does not depend on the order in which values are requested.  Parallel
and serial evaluation therefore produce bit-identical results, and the
counting-lemma exactness tests are meaningful.

The mixing function is the splitmix64 finalizer (xor-shift-multiply
avalanche), applied once per key component.  It is implemented with plain
uint64 arithmetic so the streams are stable across platforms and numpy
versions.
"""

from __future__ import annotations

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SEED_SALT = np.uint64(0x5851F42D4C957F2D)


def _mix(z):
    """splitmix64 finalizer; operates elementwise on uint64 scalars/arrays."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def key_uniform(seed: int, stream: int, counters) -> np.ndarray:
    """Uniforms in [0, 1), one per counter row.

    Parameters
    ----------
    seed, stream : int
        Global seed and sub-stream label (e.g. Monte Carlo sample index).
    counters : array_like of int
        Shape (n,) or (n, k); each row is an independent counter (e.g. a
        lattice block multi-index).  Negative entries are allowed.

    Returns
    -------
    ndarray of float64, shape (n,), values in [0, 1).
    """
    counters = np.asarray(counters, dtype=np.int64)
    if counters.ndim == 1:
        counters = counters[:, None]
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & _MASK) ^ _SEED_SALT)
        h = _mix(h ^ (np.uint64(stream & _MASK) + _GAMMA))
        acc = np.full(counters.shape[0], h, dtype=np.uint64)
        for j in range(counters.shape[1]):
            col = counters[:, j].astype(np.uint64)
            acc = _mix(acc ^ (col + np.uint64(j + 1) * _GAMMA))
    # 53 high-quality bits -> double in [0, 1)
    return (acc >> np.uint64(11)).astype(np.float64) * 2.0**-53


def fold_key(parts) -> int:
    """Fold an integer sequence into one signed 64-bit key (for tree-vertex paths)."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(len(parts) & _MASK) + _GAMMA)
        for p in parts:
            h = _mix(h ^ (np.uint64(p & _MASK) + _GAMMA))
    h = int(h)
    return h - (1 << 64) if h >= (1 << 63) else h
