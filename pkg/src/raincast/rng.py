"""Seed derivation and Gamma variates.

Every random stream in the package is derived from one root seed plus an
integer key path, ``stream(seed, 3, 17)``, through ``numpy.random.SeedSequence``
spawn keys. Streams are independent of call order and thread scheduling, so
a parallel map over keys reproduces the sequential result exactly.

Key namespaces used across the package:

* ``(SYNTH, i)``           generation of dataset sample ``i``
* ``(SPLIT,)``             train/validation permutation
* ``(INIT, head)``         reserved for random parameter initialisation (heads start at zero)
* ``(SHUFFLE, epoch)``     mini-batch order
* ``(HURDLE, chunk)``      hurdle sampling, one stream per chunk of draws
* ``(CROP, i)``            biased cropping / augmentation
* ``(SELFTEST, check)``    inputs of the built-in self checks
* ``(COVERAGE,)``          offset of the stratified coverage sequence
* ``(EVAL, key)``          root seed of the hurdle draws for the sample whose id hashes to ``key``
"""

from __future__ import annotations

import numpy as np

SYNTH = 1
SPLIT = 2
INIT = 3
SHUFFLE = 4
HURDLE = 5
CROP = 6
SELFTEST = 7
COVERAGE = 8
EVAL = 9


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed for APIs that take a plain seed rather than a generator."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(2, np.uint64)[0] >> np.uint64(1))


def gamma_mt(rng: np.random.Generator, shape, rate=1.0) -> np.ndarray:
    """Marsaglia-Tsang Gamma(shape, rate) variates, one per element of ``shape``.

    Shapes below 1 use the boost ``G(a) = G(a + 1) * U**(1/a)``. Rejected
    candidates are redrawn in place until every element is accepted.
    """
    a = np.asarray(shape, dtype=np.float64)
    rate = np.broadcast_to(np.asarray(rate, dtype=np.float64), a.shape)
    if np.any(~(a > 0)) or np.any(~(rate > 0)):
        raise ValueError("gamma shape and rate must be positive")
    flat = a.ravel()
    small = flat < 1.0
    d = np.where(small, flat + 1.0, flat) - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(flat)
    todo = np.arange(flat.size)
    while todo.size:
        dd, cc = d[todo], c[todo]
        x = rng.standard_normal(todo.size)
        u = rng.random(todo.size)
        v = 1.0 + cc * x
        pos = v > 0
        v3 = np.where(pos, v * v * v, 1.0)
        with np.errstate(divide="ignore"):
            ok = pos & (np.log(u) < 0.5 * x * x + dd - dd * v3 + dd * np.log(v3))
        out[todo[ok]] = dd[ok] * v3[ok]
        todo = todo[~ok]
    if np.any(small):
        idx = np.flatnonzero(small)
        u = rng.random(idx.size)
        out[idx] *= u ** (1.0 / flat[idx])
    return out.reshape(a.shape) / rate
