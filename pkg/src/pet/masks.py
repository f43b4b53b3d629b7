"""Blue-noise dither masks via void-and-cluster."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np


@dataclass(frozen=True, eq=False)
class DitherMask:
    """Rank image; ``thresholds`` are the ranks mapped to ``(rank + 0.5) / N``."""

    ranks: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.ranks, dtype=np.int64)
        if r.ndim != 2:
            raise ValueError("mask ranks must be 2D")
        if not np.array_equal(np.sort(r.ravel()), np.arange(r.size)):
            raise ValueError("mask ranks must be a permutation of 0..N-1")
        r.setflags(write=False)
        object.__setattr__(self, "ranks", r)

    def __eq__(self, other):
        if not isinstance(other, DitherMask):
            return NotImplemented
        return np.array_equal(self.ranks, other.ranks)

    @property
    def height(self) -> int:
        return self.ranks.shape[0]

    @property
    def width(self) -> int:
        return self.ranks.shape[1]

    @property
    def thresholds(self) -> np.ndarray:
        return (self.ranks + 0.5) / self.ranks.size

    def tiled(self, shape) -> np.ndarray:
        """Thresholds tiled toroidally over an image of ``shape = (H, W)``."""
        h, w = shape[:2]
        t = self.thresholds
        ys = np.arange(h) % self.height
        xs = np.arange(w) % self.width
        return t[ys[:, None], xs[None, :]]


def white_noise_mask(width: int, height: int, seed: int = 0) -> DitherMask:
    """Uniformly random rank permutation, the white-noise counterpart of a mask."""
    rng = np.random.default_rng(seed)
    return DitherMask(rng.permutation(width * height).reshape(height, width))


def _gauss_lut(h: int, w: int, sigma: float) -> np.ndarray:
    # toroidal offsets, truncated where the Gaussian is negligible
    ry = min(math.ceil(6 * sigma), (h - 1) // 2)
    rx = min(math.ceil(6 * sigma), (w - 1) // 2)
    dy = np.arange(-ry, ry + 1)[:, None]
    dx = np.arange(-rx, rx + 1)[None, :]
    return np.exp(-(dy**2 + dx**2) / (2.0 * sigma**2))


@nb.njit(cache=True)
def _splat(E, lut, y, x, sign):
    h, w = E.shape
    ry = (lut.shape[0] - 1) // 2
    rx = (lut.shape[1] - 1) // 2
    for dy in range(-ry, ry + 1):
        yy = (y + dy) % h
        for dx in range(-rx, rx + 1):
            xx = (x + dx) % w
            E[yy, xx] += sign * lut[dy + ry, dx + rx]


@nb.njit(cache=True)
def _extreme(E, pat, want, largest):
    """Index of the max (``largest``) or min energy among pixels with ``pat == want``."""
    best = -1
    bv = 0.0
    h, w = E.shape
    for i in range(h * w):
        y = i // w
        x = i - y * w
        if pat[y, x] != want:
            continue
        v = E[y, x]
        if best < 0 or (largest and v > bv) or ((not largest) and v < bv):
            best = i
            bv = v
    return best


@nb.njit(cache=True)
def _void_and_cluster(pat, lut, max_relax):
    h, w = pat.shape
    n = h * w
    E = np.zeros((h, w))
    for i in range(n):
        if pat[i // w, i % w]:
            _splat(E, lut, i // w, i % w, 1.0)
    # relax the initial pattern until the tightest cluster is the largest void
    for _ in range(max_relax):
        c = _extreme(E, pat, True, True)
        pat[c // w, c % w] = False
        _splat(E, lut, c // w, c % w, -1.0)
        v = _extreme(E, pat, False, False)
        pat[v // w, v % w] = True
        _splat(E, lut, v // w, v % w, 1.0)
        if v == c:
            break
    ranks = np.empty((h, w), np.int64)
    ones = 0
    for i in range(n):
        if pat[i // w, i % w]:
            ones += 1
    # phase 1: peel the prototype's ones off, tightest cluster first
    p1 = pat.copy()
    E1 = E.copy()
    for r in range(ones - 1, -1, -1):
        c = _extreme(E1, p1, True, True)
        p1[c // w, c % w] = False
        _splat(E1, lut, c // w, c % w, -1.0)
        ranks[c // w, c % w] = r
    # phases 2 and 3: fill the largest void; the zeros' tightest cluster is
    # the ones' largest void because the two energies sum to a constant
    for r in range(ones, n):
        v = _extreme(E, pat, False, False)
        pat[v // w, v % w] = True
        _splat(E, lut, v // w, v % w, 1.0)
        ranks[v // w, v % w] = r
    return ranks


def void_and_cluster(width: int, height: int, sigma: float = 1.5, seed: int = 0,
                     initial_density: float = 0.1) -> DitherMask:
    """Blue-noise rank mask with a toroidal Gaussian energy of std. dev. ``sigma``."""
    if width * height < 4:
        raise ValueError("mask needs at least 4 pixels")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    n = width * height
    rng = np.random.default_rng(seed)
    ones = max(1, int(round(initial_density * n)))
    pat = np.zeros(n, dtype=np.bool_)
    pat[rng.choice(n, ones, replace=False)] = True
    pat = pat.reshape(height, width)
    lut = _gauss_lut(height, width, sigma)
    ranks = _void_and_cluster(pat, lut, 10 * n)
    return DitherMask(ranks)
