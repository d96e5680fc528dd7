"""Seedable Brownian increments from a counter-based generator.

Every Gaussian is a pure function of ``(seed, path, step, component)``, so an
ensemble can be split over any number of workers without changing a single
bit of the output. The underlying bits come from Philox4x32-10 (Salmon et al.,
Random123), vectorised over numpy ``uint64`` lanes.

Coarse increments are obtained from fine ones by pairwise (binary-tree)
summation. Tree sums compose exactly: coarsening by 4 is bit-identical to
coarsening by 2 twice.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "philox4x32",
    "uniforms",
    "standard_normals",
    "BrownianGrid",
    "generate",
    "coarsen",
]

_MASK32 = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT32 = np.uint64(32)


def philox4x32(counter, key, rounds=10):
    """Philox4x32 bijection.

    Parameters
    ----------
    counter : sequence of four integer arrays (broadcastable), each < 2**32
    key : pair of integers < 2**32
    rounds : int

    Returns
    -------
    tuple of four ``uint64`` arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK32 for c in counter)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for _ in range(rounds):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT32, p0 & _MASK32
        hi1, lo1 = p1 >> _SHIFT32, p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _seed_key(seed):
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed, paths, start, stop, m):
    """Open-interval uniforms of shape ``(stop - start, len(paths), m)``.

    Slot ``q = step * m + component`` maps to Philox counter
    ``(q // 2 low word, q // 2 high word, path, 0)``; the two 53-bit halves of
    each output block serve even and odd ``q``.
    """
    key = _seed_key(seed)
    paths = np.asarray(paths, dtype=np.uint64)
    q0, q1 = start * m, stop * m
    b0, b1 = q0 // 2, (q1 + 1) // 2
    block = np.arange(b0, b1, dtype=np.uint64)[:, None]
    x0, x1, x2, x3 = philox4x32(
        (block & _MASK32, block >> _SHIFT32, paths[None, :], np.uint64(0)), key
    )
    hi = np.stack([x0, x2], axis=1) >> np.uint64(5)
    lo = np.stack([x1, x3], axis=1) >> np.uint64(6)
    # 53 random bits, offset by half an ulp so 0 and 1 are never produced
    u = (hi.astype(np.float64) * 67108864.0 + lo.astype(np.float64) + 0.5) / 9007199254740992.0
    u = u.reshape(-1, paths.size)[q0 - 2 * b0 : q1 - 2 * b0]
    return u.reshape(stop - start, m, paths.size).transpose(0, 2, 1)


def standard_normals(seed, paths, start, stop, m):
    """N(0, 1) variates by inverse-CDF transform of :func:`uniforms`."""
    return ndtri(uniforms(seed, paths, start, stop, m))


def _check_power_of_two(factor):
    factor = int(factor)
    if factor < 1 or factor & (factor - 1):
        raise ValueError(f"coarsening factor must be a power of two, got {factor}")
    return factor


def tree_sum(increments, factor):
    """Pairwise block sums along axis 0 for a power-of-two ``factor``."""
    factor = _check_power_of_two(factor)
    if increments.shape[0] % factor:
        raise ValueError(
            f"factor {factor} does not divide {increments.shape[0]} increments"
        )
    out = increments
    while factor > 1:
        out = out[0::2] + out[1::2]
        factor //= 2
    return out


@dataclass(frozen=True)
class BrownianGrid:
    """Fine-grid Brownian increments for a set of trajectory indices.

    Increments are generated on demand from counters, so a grid costs nothing
    until :meth:`block` or :attr:`increments` is accessed.
    """

    seed: int
    m: int
    T: float
    h_fine: float
    n_steps: int
    paths: np.ndarray

    @property
    def sqrt_h(self):
        return float(np.sqrt(self.h_fine))

    def block(self, start, stop):
        """Fine increments for steps ``start..stop-1``, shape ``(stop-start, P, m)``."""
        if not 0 <= start <= stop <= self.n_steps:
            raise IndexError(f"step range [{start}, {stop}) outside [0, {self.n_steps})")
        z = standard_normals(self.seed, self.paths, start, stop, self.m)
        return z * self.sqrt_h

    @property
    def increments(self):
        """All fine increments, shape ``(n_steps, P, m)``."""
        return self.block(0, self.n_steps)

    def blocks(self, block_steps):
        """Yield consecutive fine blocks of ``block_steps`` steps (streaming mode)."""
        if self.n_steps % block_steps:
            raise ValueError("block size must divide the number of fine steps")
        for start in range(0, self.n_steps, block_steps):
            yield self.block(start, start + block_steps)


def _steps_for(T, h):
    n = T / h
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-9 * max(1.0, n):
        raise ValueError(f"T/h must be a positive integer, got T={T}, h={h}")
    return n_int


def generate(seed, m, T, h_fine, paths=(0,)):
    """Build a :class:`BrownianGrid` with ``T / h_fine`` fine steps."""
    if m < 1:
        raise ValueError("noise dimension must be at least 1")
    n_steps = _steps_for(T, h_fine)
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    if np.any(paths < 0):
        raise ValueError("trajectory indices must be non-negative")
    return BrownianGrid(int(seed), int(m), float(T), float(h_fine), n_steps, paths)


def coarsen(grid, factor):
    """Increments at step ``h_fine * factor``, shape ``(n_steps // factor, P, m)``.

    ``grid`` may be a :class:`BrownianGrid` or an increment array with time on
    axis 0.
    """
    increments = grid.increments if isinstance(grid, BrownianGrid) else np.asarray(grid)
    return tree_sum(increments, factor)
