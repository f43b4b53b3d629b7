"""Pixel-assignment permutations: greedy swap search, the tile-sorting
baseline, kernel-shaped noise and the offline multi-integrand optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .imagecore import REC709, Kernel, from_chw, to_chw
from .incremental import (
    IMPROVE_TOL,
    N_MAX,
    TONEMAP_CODES,
    IncrementalState,
    _horizontal_sweep,
    _pair_sweep,
    make_state,
)
from .masks import DitherMask
from .model import AuxPlanes, PerceptualModel, demodulate, tonemap
from .vertical import ORDERS, traversal_order


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on flat pixel indices; ``mapping[origin] = destination``."""

    mapping: np.ndarray
    shape: tuple

    def __post_init__(self):
        m = np.asarray(self.mapping, dtype=np.int64).ravel()
        if m.size != int(np.prod(self.shape)):
            raise ValueError("mapping size does not match the image shape")
        if not np.array_equal(np.sort(m), np.arange(m.size)):
            raise ValueError("mapping is not a bijection")
        m.setflags(write=False)
        object.__setattr__(self, "mapping", m)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __eq__(self, other):
        if not isinstance(other, Permutation):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.mapping, other.mapping)

    @classmethod
    def identity(cls, shape) -> "Permutation":
        return cls(np.arange(int(np.prod(shape))), shape)

    @classmethod
    def from_sources(cls, src: np.ndarray) -> "Permutation":
        """Build from ``src[destination] = origin``."""
        src = np.asarray(src, dtype=np.int64)
        fwd = np.empty(src.size, dtype=np.int64)
        fwd[src.ravel()] = np.arange(src.size)
        return cls(fwd, src.shape)

    @property
    def sources(self) -> np.ndarray:
        """``sources[destination] = origin`` as an image-shaped array."""
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.mapping.size)
        return inv.reshape(self.shape)

    def inverse(self) -> "Permutation":
        return Permutation(self.sources.ravel(), self.shape)

    def compose(self, other: "Permutation") -> "Permutation":
        """Apply ``self`` first and then ``other``."""
        if other.shape != self.shape:
            raise ValueError("cannot compose permutations of different shapes")
        return Permutation(other.mapping[self.mapping], self.shape)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.mapping, np.arange(self.mapping.size)))

    def apply(self, img: np.ndarray) -> np.ndarray:
        """Move the content of each origin pixel to its destination."""
        a = np.asarray(img)
        if a.shape[:2] != self.shape:
            raise ValueError("image does not match the permutation shape")
        src = self.sources
        return a.reshape((-1,) + a.shape[2:])[src.ravel()].reshape(a.shape)

    def displacements(self) -> np.ndarray:
        """Euclidean travel distance of every origin pixel."""
        w = self.shape[1]
        o = np.arange(self.mapping.size)
        dy = self.mapping // w - o // w
        dx = self.mapping % w - o % w
        return np.hypot(dy, dx).reshape(self.shape)


@dataclass(frozen=True, eq=False)
class Dissimilarity:
    """Cost of moving content by an offset; ``cost`` is ``(2r+1, 2r+1)`` with ``inf`` for forbidden moves."""

    cost: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.cost, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] % 2 != 1:
            raise ValueError("cost map must be square with odd size")
        r = c.shape[0] // 2
        if c[r, r] != 0.0:
            raise ValueError("staying in place must cost 0")
        if not np.array_equal(c, c[::-1, ::-1]):
            raise ValueError("cost map must be symmetric")
        if np.any(c < 0) or np.any(np.isnan(c)):
            raise ValueError("costs must be non-negative")
        c = np.ascontiguousarray(c)
        c.setflags(write=False)
        object.__setattr__(self, "cost", c)

    def __eq__(self, other):
        if not isinstance(other, Dissimilarity):
            return NotImplemented
        return self.weight == other.weight and np.array_equal(self.cost, other.cost)

    @property
    def radius(self) -> int:
        return self.cost.shape[0] // 2

    @classmethod
    def disk(cls, r: float, metric: str = "chebyshev") -> "Dissimilarity":
        """Free moves within distance ``r``, forbidden beyond.

        The default Chebyshev metric makes ``r = R`` cover the whole
        ``(2R+1)^2`` search window; ``"euclidean"`` gives a round disk.
        """
        if r < 0:
            raise ValueError("radius must be non-negative")
        n = int(math.floor(r))
        ax = np.arange(-n, n + 1)
        if metric == "chebyshev":
            d = np.maximum(np.abs(ax)[:, None], np.abs(ax)[None, :]).astype(np.float64)
        elif metric == "euclidean":
            d = np.hypot(ax[:, None], ax[None, :])
        else:
            raise ValueError(f"unknown distance metric {metric!r}")
        return cls(np.where(d <= r + 1e-12, 0.0, np.inf))

    def travel_cost(self, perm: Permutation) -> float:
        w = perm.shape[1]
        o = np.arange(perm.mapping.size)
        dy = perm.mapping // w - o // w
        dx = perm.mapping % w - o % w
        r = self.radius
        if np.any(np.abs(dy) > r) or np.any(np.abs(dx) > r):
            return math.inf
        return float(self.cost[dy + r, dx + r].sum())


@dataclass
class HorizontalResult:
    permutation: Permutation
    image: np.ndarray
    trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def _cost_at(cost, r, o, p, W):
    vy = p // W - o // W
    vx = p % W - o % W
    if abs(vy) > r or abs(vx) > r:
        return math.inf
    return cost[vy + r, vx + r]


def _horizontal_sweep_direct(state, Qd, alpha, beta, tmk_name, src, R, cost, wdis, order, tol):
    # Python twin of the numba sweep for states without O(1) deltas
    C, H, W = state.X.shape
    r = cost.shape[0] // 2
    accepted = 0

    def val(p, s):
        py, px = divmod(p, W)
        sy, sx = divmod(s, W)
        return tonemap(alpha[:, py, px] * Qd[:, sy, sx] + beta[:, py, px], tmk_name)

    for p in order:
        i = int(p)
        iy, ix = divmod(i, W)
        si = int(src[iy, ix])
        thr = -tol * abs(state.energy)
        best, bestcrit, bestd = -1, 0.0, 0.0
        for jy in range(max(iy - R, 0), min(iy + R + 1, H)):
            for jx in range(max(ix - R, 0), min(ix + R + 1, W)):
                j = jy * W + jx
                if j == i:
                    continue
                sj = int(src[jy, jx])
                cij = _cost_at(cost, r, si, j, W)
                cji = _cost_at(cost, r, sj, i, W)
                if not (math.isfinite(cij) and math.isfinite(cji)):
                    continue
                dcost = cij + cji - _cost_at(cost, r, si, i, W) - _cost_at(cost, r, sj, j, W)
                da = val(i, sj) - state.X[:, iy, ix]
                db = val(j, si) - state.X[:, jy, jx]
                d = state.trial_delta_update([((iy, ix), da), ((jy, jx), db)])
                crit = d + (wdis * dcost if dcost != 0.0 else 0.0)
                if best < 0 or crit < bestcrit:
                    best, bestcrit, bestd = j, crit, d
        if best >= 0 and bestcrit < thr:
            jy, jx = divmod(best, W)
            sj = int(src[jy, jx])
            vi, vj = val(i, sj), val(best, si)
            state.accept([((iy, ix), vi - state.X[:, iy, ix]), ((jy, jx), vj - state.X[:, jy, jx])], bestd)
            state.X[:, iy, ix] = vi
            state.X[:, jy, jx] = vj
            src[iy, ix] = sj
            src[jy, jx] = si
            accepted += 1
    return accepted


def _aux_chw(aux: AuxPlanes | None, est_chw: np.ndarray):
    if aux is None:
        return np.ones_like(est_chw), np.zeros_like(est_chw)
    a = to_chw(aux.alpha)
    b = to_chw(aux.beta)
    if a.shape != est_chw.shape:
        raise ValueError("aux planes must match the estimate image")
    return np.ascontiguousarray(a), np.ascontiguousarray(b)


def horizontal_minimize(est: np.ndarray, surrogate: np.ndarray, m: PerceptualModel,
                        d: Dissimilarity | None = None, R: int = 1, T: int = 10,
                        order: str = "serpentine", aux: AuxPlanes | None = None,
                        seed: int = 0, n_max: int = N_MAX,
                        tol: float = IMPROVE_TOL) -> HorizontalResult:
    """Greedy best-swap search over the ``(2R+1)^2`` neighbourhood of every pixel.

    With ``aux`` the estimates are demodulated first and content moved to
    pixel ``i`` is remodulated with ``alpha_i`` and ``beta_i``. The returned
    image is the prediction built from the permuted estimates.
    """
    if R < 1:
        raise ValueError("search radius R must be >= 1")
    if T < 1:
        raise ValueError("T must be >= 1")
    if order not in ORDERS:
        raise ValueError(f"unknown traversal order {order!r}")
    if d is None:
        d = Dissimilarity.disk(R)
    if d.radius < R:
        raise ValueError("dissimilarity radius must be at least the search radius R")
    if m.confidence != 1.0:
        raise ValueError("confidence weighting is only supported by the vertical optimizer")
    e = to_chw(est)
    s = np.asarray(surrogate, dtype=np.float64)
    if s.shape != np.shape(est):
        raise ValueError("surrogate does not match the estimate image")
    alpha, beta = _aux_chw(aux, e)
    Qd = np.ascontiguousarray(to_chw(demodulate(est, aux)) if aux is not None else e)
    X0 = tonemap(alpha * Qd + beta, m.tonemap)
    state = make_state(X0, s, m, n_max)
    C, H, W = e.shape
    src = np.arange(H * W, dtype=np.int64).reshape(H, W)
    cost = np.ascontiguousarray(d.cost)
    wdis = float(d.weight) * m.g_l1() ** 2
    rng = np.random.default_rng(seed)

    def objective():
        extra = 0.0
        if wdis and np.any(cost[np.isfinite(cost)] != 0):
            extra = wdis * d.travel_cost(Permutation.from_sources(src))
        return state.energy + extra

    trace = [objective()]
    accepted = []
    for _ in range(T):
        ordr = traversal_order(order, H, W, rng)
        if isinstance(state, IncrementalState):
            acc = _horizontal_sweep(*state.args(), Qd, alpha, beta, TONEMAP_CODES[m.tonemap],
                                    src, R, cost, wdis, ordr, tol)
        else:
            acc = _horizontal_sweep_direct(state, Qd, alpha, beta, m.tonemap, src, R, cost, wdis, ordr, tol)
        state.rebuild()
        accepted.append(int(acc))
        trace.append(objective())
        if acc == 0:
            break
    perm = Permutation.from_sources(src)
    pred = alpha * Qd[:, src // W, src % W] + beta
    return HorizontalResult(perm, from_chw(pred, like=est), trace, accepted)


def _gray_chw(chw: np.ndarray) -> np.ndarray:
    if chw.shape[0] == 1:
        return chw[0]
    if chw.shape[0] == 3:
        return np.tensordot(REC709, chw, axes=([0], [0]))
    raise ValueError("luminance needs 1 or 3 channels")


def permutation_baseline(est: np.ndarray, mask: DitherMask, tile: int = 8,
                         aux: AuxPlanes | None = None) -> tuple[Permutation, np.ndarray]:
    """Within each tile, give the k-th darkest pixel's content to the k-th lowest mask threshold.

    Edge tiles may be partial; the mask is tiled toroidally. With ``aux``
    the sorting uses demodulated values and the result is remodulated.
    """
    if tile < 1:
        raise ValueError("tile must be >= 1")
    e = to_chw(est)
    C, H, W = e.shape
    Qd = to_chw(demodulate(est, aux)) if aux is not None else e
    lum = _gray_chw(Qd)
    thr = mask.tiled((H, W))
    src = np.empty((H, W), dtype=np.int64)
    flat = np.arange(H * W).reshape(H, W)
    for y0 in range(0, H, tile):
        for x0 in range(0, W, tile):
            idx = flat[y0:y0 + tile, x0:x0 + tile].ravel()
            by_lum = idx[np.argsort(lum.ravel()[idx], kind="stable")]
            by_thr = idx[np.argsort(thr.ravel()[idx], kind="stable")]
            src.ravel()[by_thr] = by_lum
    perm = Permutation.from_sources(src)
    alpha, beta = _aux_chw(aux, e)
    pred = alpha * Qd[:, src // W, src % W] + beta
    return perm, from_chw(pred, like=est)


@dataclass
class ShapedNoiseResult:
    image: np.ndarray
    permutation: Permutation
    trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def _random_pairs(rng: np.random.Generator, n: int, count: int):
    pa = rng.integers(0, n, size=count)
    pb = rng.integers(0, n, size=count)
    return pa, pb


def shaped_noise(img: np.ndarray, target: Kernel, T: int = 10, seed: int = 0,
                 pairs_per_sweep: int | None = None, n_max: int = N_MAX) -> ShapedNoiseResult:
    """Rearrange pixels so the image's spectrum is shaped by ``target``.

    Minimizes the leaky ``||target * (img - mean)||^2`` over arbitrary pixel
    swaps, trying ``pairs_per_sweep`` (default: pixel count) random pairs per
    sweep. Only the arrangement changes; the multiset of values is kept.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    e = to_chw(img)
    C, H, W = e.shape
    if target.varying and target.weights.shape[:2] != (H, W):
        raise ValueError("spatially varying target does not match the image size")
    X0 = e - e.mean(axis=(1, 2), keepdims=True)
    m = PerceptualModel(g=target)
    state = IncrementalState.from_tonemapped(
        np.ascontiguousarray(X0), np.zeros((H, W, C)), m, n_max)
    vals = np.ascontiguousarray(X0.reshape(C, -1))
    src = np.arange(H * W, dtype=np.int64).reshape(H, W)
    rng = np.random.default_rng(seed)
    npairs = H * W if pairs_per_sweep is None else int(pairs_per_sweep)
    trace = [state.energy]
    accepted = []
    for _ in range(T):
        pa, pb = _random_pairs(rng, H * W, npairs)
        acc = _pair_sweep(*state.args(), vals, src, pa, pb, IMPROVE_TOL)
        state.rebuild()
        accepted.append(int(acc))
        trace.append(state.energy)
    perm = Permutation.from_sources(src)
    return ShapedNoiseResult(perm.apply(np.asarray(img, dtype=np.float64)), perm, trace, accepted)


@dataclass
class AprioriResult:
    permutation: Permutation
    trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)


def prefix_channels(integrands: Sequence[Callable], samples: np.ndarray) -> np.ndarray:
    """Per-pixel prefix means ``(T * S, H, W)`` of every integrand over the sample sets.

    Channel ``t * S + k`` is the mean of integrand ``t`` over the first
    ``k + 1`` samples of each pixel's set.
    """
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 3:
        raise ValueError("samples must be (H, W, S)")
    H, W, S = s.shape
    out = np.empty((len(integrands) * S, H, W))
    counts = np.arange(1, S + 1)
    for t, f in enumerate(integrands):
        v = np.asarray(f(s), dtype=np.float64)
        if v.shape != s.shape:
            raise ValueError("integrand must map samples elementwise")
        pm = np.cumsum(v, axis=2) / counts
        out[t * S:(t + 1) * S] = np.moveaxis(pm, 2, 0)
    return out


def apriori_optimize(integrands: Sequence[Callable], references: Sequence[float],
                     samples: np.ndarray, m: PerceptualModel, weights: np.ndarray,
                     T: int = 10, seed: int = 0, pairs_per_sweep: int | None = None,
                     n_max: int = N_MAX) -> AprioriResult:
    """Assign sample sets to pixels for a bank of known integrands.

    Every (integrand ``t``, sample count ``k``) pair is a channel of weight
    ``weights[t, k]`` whose value is the running mean of ``f_t`` over the
    first ``k + 1`` samples; random full-image swaps of whole sample sets
    minimize the weighted sum of perceptual energies.
    """
    if len(integrands) != len(references) or len(integrands) == 0:
        raise ValueError("need one reference per integrand")
    s = np.asarray(samples, dtype=np.float64)
    if s.ndim != 3:
        raise ValueError("samples must be (H, W, S)")
    H, W, S = s.shape
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(integrands), S):
        raise ValueError(f"weights must be ({len(integrands)}, {S})")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    X0 = np.ascontiguousarray(prefix_channels(integrands, s))
    C = X0.shape[0]
    ref = np.repeat(np.asarray(references, dtype=np.float64), S)[:, None, None] * np.ones((C, H, W))
    mm = PerceptualModel(g=m.g, h=m.h, channel_weights=w.ravel())
    state = IncrementalState.from_tonemapped(X0, np.moveaxis(ref, 0, 2), mm, n_max)
    vals = np.ascontiguousarray(X0.reshape(C, -1))
    src = np.arange(H * W, dtype=np.int64).reshape(H, W)
    rng = np.random.default_rng(seed)
    npairs = H * W if pairs_per_sweep is None else int(pairs_per_sweep)
    trace = [state.energy]
    accepted = []
    for _ in range(T):
        pa, pb = _random_pairs(rng, H * W, npairs)
        acc = _pair_sweep(*state.args(), vals, src, pa, pb, IMPROVE_TOL)
        state.rebuild()
        accepted.append(int(acc))
        trace.append(state.energy)
        if acc == 0 and not np.any(w):
            break
    return AprioriResult(Permutation.from_sources(src), trace, accepted)
