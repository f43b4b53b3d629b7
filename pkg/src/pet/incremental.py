"""Constant-time energy deltas for pixel updates and swaps.

For an image ``X`` and filtered residual ``F = g * X - h * T(ref)`` (leaky,
summed over the image support grown by the kernel radius) changing pixel
``a`` by ``delta`` changes the energy by

    2 * delta * C_ge(a) + delta**2 * C_gg(a, a)

with ``C_ge(x) = sum_i F_i g_{i,x}`` and ``C_gg(x, y) = sum_i g_{i,x} g_{i,y}``.
Several simultaneous updates add the pairwise ``C_gg(a_j, a_k)`` cross terms.
``C_gg`` is zero once ``|x - y|_inf > 2K``, so every query is O(1).

Accepted updates are folded into ``C_ge`` straight away (O(K^2) per update)
and the table is rebuilt from scratch after ``n_max`` accepted updates to
stop round-off from accumulating.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numba as nb
import numpy as np

from .imagecore import LEAKY, Kernel, convolve_full, to_chw
from .model import PerceptualModel, filtered_error, tonemap

N_MAX = 64
# guard on the per-pixel pairwise table of spatially varying kernels
PAIR_TABLE_LIMIT_BYTES = 1 << 30
TONEMAP_CODES = {"identity": 0, "clamp01": 1, "aces": 2}
# relative threshold an energy drop must exceed to count as an improvement
IMPROVE_TOL = 1e-12


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, inline="always")
def _tm(v, kind):
    if kind == 0:
        return v
    if kind == 1:
        return min(max(v, 0.0), 1.0)
    u = max(v, 0.0)
    y = (u * (2.51 * u + 0.03)) / (u * (2.43 * u + 0.59) + 0.14)
    return min(max(y, 0.0), 1.0)


@nb.njit(cache=True, inline="always")
def _pv(pair, ay, ax, by, bx):
    k2 = (pair.shape[2] - 1) // 2
    vy = by - ay
    vx = bx - ax
    if vy > k2 or vy < -k2 or vx > k2 or vx < -k2:
        return 0.0
    if pair.shape[0] == 1 and pair.shape[1] == 1:
        return pair[0, 0, vy + k2, vx + k2]
    return pair[ay, ax, vy + k2, vx + k2]


@nb.njit(cache=True)
def _pair_table(tab):
    K = (tab.shape[2] - 1) // 2
    K2 = 2 * K
    S = 2 * K2 + 1
    if tab.shape[0] == 1 and tab.shape[1] == 1:
        out = np.zeros((1, 1, S, S))
        for vy in range(-K2, K2 + 1):
            for vx in range(-K2, K2 + 1):
                s = 0.0
                for uy in range(-K, K + 1):
                    ey = uy - vy
                    if ey < -K or ey > K:
                        continue
                    for ux in range(-K, K + 1):
                        ex = ux - vx
                        if ex < -K or ex > K:
                            continue
                        s += tab[0, 0, uy + K, ux + K] * tab[0, 0, ey + K, ex + K]
                out[0, 0, vy + K2, vx + K2] = s
        return out
    H, W = tab.shape[0], tab.shape[1]
    out = np.zeros((H, W, S, S))
    for ay in range(H):
        for ax in range(W):
            for dy in range(-K, K + 1):
                ty = min(max(ay + dy, 0), H - 1)
                for dx in range(-K, K + 1):
                    tx = min(max(ax + dx, 0), W - 1)
                    gia = tab[ty, tx, dy + K, dx + K]
                    if gia == 0.0:
                        continue
                    # output i = a + d; other pixel b = a + v with i - b = d - v
                    for ey in range(-K, K + 1):
                        vy = dy - ey
                        for ex in range(-K, K + 1):
                            vx = dx - ex
                            out[ay, ax, vy + K2, vx + K2] += gia * tab[ty, tx, ey + K, ex + K]
    return out


@nb.njit(cache=True)
def _rebuild(X, target, tab, lam, P, F, xcorr):
    C, H, W = X.shape
    K = (tab.shape[2] - 1) // 2
    vary = tab.shape[0] > 1 or tab.shape[1] > 1
    HD = H + 2 * P
    WD = W + 2 * P
    E = 0.0
    for c in range(C):
        for oy in range(HD):
            ty = min(max(oy - P, 0), H - 1) if vary else 0
            for ox in range(WD):
                tx = min(max(ox - P, 0), W - 1) if vary else 0
                s = 0.0
                for dy in range(-K, K + 1):
                    ay = oy - P - dy
                    if ay < 0 or ay >= H:
                        continue
                    for dx in range(-K, K + 1):
                        ax = ox - P - dx
                        if ax < 0 or ax >= W:
                            continue
                        s += tab[ty, tx, dy + K, dx + K] * X[c, ay, ax]
                f = s - target[c, oy, ox]
                F[c, oy, ox] = f
                E += lam[c] * f * f
        for ay in range(H):
            for ax in range(W):
                s = 0.0
                for dy in range(-K, K + 1):
                    oy = ay + P + dy
                    ty = min(max(ay + dy, 0), H - 1) if vary else 0
                    for dx in range(-K, K + 1):
                        ox = ax + P + dx
                        tx = min(max(ax + dx, 0), W - 1) if vary else 0
                        s += F[c, oy, ox] * tab[ty, tx, dy + K, dx + K]
                xcorr[c, ay, ax] = s
    return E


@nb.njit(cache=True)
def _delta(xcorr, pair, lam, ys, xs, dl):
    n = ys.shape[0]
    C = xcorr.shape[0]
    d = 0.0
    for c in range(C):
        lc = lam[c]
        if lc == 0.0:
            continue
        s = 0.0
        for j in range(n):
            dj = dl[j, c]
            if dj == 0.0:
                continue
            s += 2.0 * dj * xcorr[c, ys[j], xs[j]]
            for k in range(n):
                s += dj * dl[k, c] * _pv(pair, ys[j], xs[j], ys[k], xs[k])
        d += lc * s
    return d


@nb.njit(cache=True)
def _apply(X, target, tab, pair, lam, P, F, xcorr, en, meta, ys, xs, dl, newv, delta):
    """Write ``newv`` into ``X``, fold ``dl`` into ``xcorr`` and bump the energy."""
    C, H, W = X.shape
    k2 = (pair.shape[2] - 1) // 2
    for j in range(ys.shape[0]):
        ay = ys[j]
        ax = xs[j]
        for c in range(C):
            X[c, ay, ax] = newv[j, c]
            dj = dl[j, c]
            if dj == 0.0:
                continue
            for ny in range(max(ay - k2, 0), min(ay + k2 + 1, H)):
                for nx in range(max(ax - k2, 0), min(ax + k2 + 1, W)):
                    xcorr[c, ny, nx] += dj * _pv(pair, ay, ax, ny, nx)
    en[0] += delta
    meta[0] += ys.shape[0]
    if meta[0] > meta[2]:
        en[0] = _rebuild(X, target, tab, lam, P, F, xcorr)
        meta[0] = 0
        meta[1] += 1


@nb.njit(cache=True)
def _vertical_sweep(X, target, tab, pair, lam, P, F, xcorr, en, meta,
                    cand, counts, sel, order, Xinit, conf, g1, d2, tol):
    C, H, W = X.shape
    ys = np.empty(1, np.int64)
    xs = np.empty(1, np.int64)
    dl = np.empty((1, C))
    nv = np.empty((1, C))
    accepted = 0
    for t in range(order.shape[0]):
        p = order[t]
        y = p // W
        x = p - y * W
        cur = sel[y, x]
        E = en[0]
        D2 = d2[0]
        if conf < 1.0:
            curobj = (1.0 - conf) * g1 * np.sqrt(max(D2, 0.0)) + conf * np.sqrt(max(E, 0.0))
            thr = -tol * curobj
        else:
            curobj = 0.0
            thr = -tol * abs(E)
        best = -1
        bestcrit = 0.0
        bestd = 0.0
        bestdd2 = 0.0
        for j in range(counts[y, x]):
            if j == cur:
                continue
            d = 0.0
            dd2 = 0.0
            for c in range(C):
                lc = lam[c]
                if lc == 0.0:
                    continue
                dc = cand[j, c, y, x] - X[c, y, x]
                d += lc * (2.0 * dc * xcorr[c, y, x] + dc * dc * _pv(pair, y, x, y, x))
                if conf < 1.0:
                    a = cand[j, c, y, x] - Xinit[c, y, x]
                    b = X[c, y, x] - Xinit[c, y, x]
                    dd2 += lc * (a * a - b * b)
            if conf < 1.0:
                crit = (1.0 - conf) * g1 * np.sqrt(max(D2 + dd2, 0.0)) + conf * np.sqrt(max(E + d, 0.0)) - curobj
            else:
                crit = d
            if best < 0 or crit < bestcrit:
                best = j
                bestcrit = crit
                bestd = d
                bestdd2 = dd2
        if best >= 0 and bestcrit < thr:
            ys[0] = y
            xs[0] = x
            for c in range(C):
                nv[0, c] = cand[best, c, y, x]
                dl[0, c] = nv[0, c] - X[c, y, x]
            _apply(X, target, tab, pair, lam, P, F, xcorr, en, meta, ys, xs, dl, nv, bestd)
            sel[y, x] = best
            d2[0] += bestdd2
            accepted += 1
    return accepted


@nb.njit(cache=True, inline="always")
def _cost(cost, r, oy, ox, py, px):
    vy = py - oy
    vx = px - ox
    if vy > r or vy < -r or vx > r or vx < -r:
        return np.inf
    return cost[vy + r, vx + r]


@nb.njit(cache=True)
def _horizontal_sweep(X, target, tab, pair, lam, P, F, xcorr, en, meta,
                      Qd, alpha, beta, tmk, src, R, cost, wdis, order, tol):
    C, H, W = X.shape
    r = (cost.shape[0] - 1) // 2
    ys = np.empty(2, np.int64)
    xs = np.empty(2, np.int64)
    dl = np.empty((2, C))
    nv = np.empty((2, C))
    ni = np.empty(C)
    nj = np.empty(C)
    accepted = 0
    for t in range(order.shape[0]):
        p = order[t]
        iy = p // W
        ix = p - iy * W
        si = src[iy, ix]
        siy = si // W
        six = si - siy * W
        ci = _cost(cost, r, siy, six, iy, ix)
        E = en[0]
        thr = -tol * abs(E)
        best = -1
        bestcrit = 0.0
        bestd = 0.0
        for jy in range(max(iy - R, 0), min(iy + R + 1, H)):
            for jx in range(max(ix - R, 0), min(ix + R + 1, W)):
                if jy == iy and jx == ix:
                    continue
                sj = src[jy, jx]
                sjy = sj // W
                sjx = sj - sjy * W
                cij = _cost(cost, r, siy, six, jy, jx)
                cji = _cost(cost, r, sjy, sjx, iy, ix)
                if not (np.isfinite(cij) and np.isfinite(cji)):
                    continue
                dcost = cij + cji - ci - _cost(cost, r, sjy, sjx, jy, jx)
                d = 0.0
                for c in range(C):
                    lc = lam[c]
                    if lc == 0.0:
                        continue
                    vi = _tm(alpha[c, iy, ix] * Qd[c, sjy, sjx] + beta[c, iy, ix], tmk)
                    vj = _tm(alpha[c, jy, jx] * Qd[c, siy, six] + beta[c, jy, jx], tmk)
                    da = vi - X[c, iy, ix]
                    db = vj - X[c, jy, jx]
                    d += lc * (2.0 * da * xcorr[c, iy, ix] + 2.0 * db * xcorr[c, jy, jx]
                               + da * da * _pv(pair, iy, ix, iy, ix)
                               + db * db * _pv(pair, jy, jx, jy, jx)
                               + 2.0 * da * db * _pv(pair, iy, ix, jy, jx))
                crit = d
                if dcost != 0.0:
                    crit += wdis * dcost
                if best < 0 or crit < bestcrit:
                    best = jy * W + jx
                    bestcrit = crit
                    bestd = d
        if best >= 0 and bestcrit < thr:
            jy = best // W
            jx = best - jy * W
            sj = src[jy, jx]
            sjy = sj // W
            sjx = sj - sjy * W
            for c in range(C):
                ni[c] = _tm(alpha[c, iy, ix] * Qd[c, sjy, sjx] + beta[c, iy, ix], tmk)
                nj[c] = _tm(alpha[c, jy, jx] * Qd[c, siy, six] + beta[c, jy, jx], tmk)
            ys[0] = iy
            xs[0] = ix
            ys[1] = jy
            xs[1] = jx
            for c in range(C):
                nv[0, c] = ni[c]
                nv[1, c] = nj[c]
                dl[0, c] = ni[c] - X[c, iy, ix]
                dl[1, c] = nj[c] - X[c, jy, jx]
            _apply(X, target, tab, pair, lam, P, F, xcorr, en, meta, ys, xs, dl, nv, bestd)
            src[iy, ix] = sj
            src[jy, jx] = si
            accepted += 1
    return accepted


@nb.njit(cache=True)
def _pair_sweep(X, target, tab, pair, lam, P, F, xcorr, en, meta, vals, src, pa, pb, tol):
    """Try swapping the contents of pixel pairs ``(pa[t], pb[t])``; ``vals[:, s]`` is the value of origin ``s``."""
    C, H, W = X.shape
    ys = np.empty(2, np.int64)
    xs = np.empty(2, np.int64)
    dl = np.empty((2, C))
    nv = np.empty((2, C))
    accepted = 0
    for t in range(pa.shape[0]):
        i = pa[t]
        j = pb[t]
        if i == j:
            continue
        iy = i // W
        ix = i - iy * W
        jy = j // W
        jx = j - jy * W
        si = src[iy, ix]
        sj = src[jy, jx]
        d = 0.0
        for c in range(C):
            lc = lam[c]
            if lc == 0.0:
                continue
            da = vals[c, sj] - X[c, iy, ix]
            db = vals[c, si] - X[c, jy, jx]
            d += lc * (2.0 * da * xcorr[c, iy, ix] + 2.0 * db * xcorr[c, jy, jx]
                       + da * da * _pv(pair, iy, ix, iy, ix)
                       + db * db * _pv(pair, jy, jx, jy, jx)
                       + 2.0 * da * db * _pv(pair, iy, ix, jy, jx))
        if d < -tol * abs(en[0]):
            ys[0] = iy
            xs[0] = ix
            ys[1] = jy
            xs[1] = jx
            for c in range(C):
                nv[0, c] = vals[c, sj]
                nv[1, c] = vals[c, si]
                dl[0, c] = nv[0, c] - X[c, iy, ix]
                dl[1, c] = nv[1, c] - X[c, jy, jx]
            _apply(X, target, tab, pair, lam, P, F, xcorr, en, meta, ys, xs, dl, nv, d)
            src[iy, ix] = sj
            src[jy, jx] = si
            accepted += 1
    return accepted


# ---------------------------------------------------------------------------
# Python interface


@dataclass(frozen=True)
class AutoCorr:
    """Kernel autocorrelation.

    ``table`` has shape ``(1, 1, 4K+1, 4K+1)`` for a uniform kernel, where
    ``table[0, 0, v + 2K]`` is ``sum_u g(u) g(u - v)``, or ``(H, W, 4K+1, 4K+1)``
    for a spatially varying one, where ``table[a][v] = sum_i g_{i,a} g_{i,a+v}``.
    Only offsets inside the ``2K`` support are stored, so the pairwise table
    is sparse in the sense that matters.
    """

    table: np.ndarray

    @property
    def varying(self) -> bool:
        return self.table.shape[0] > 1 or self.table.shape[1] > 1

    @property
    def radius(self) -> int:
        return (self.table.shape[2] - 1) // 4

    def at(self, a, b) -> float:
        return float(_pv(self.table, int(a[0]), int(a[1]), int(b[0]), int(b[1])))

    def center(self) -> np.ndarray:
        k2 = 2 * self.radius
        return self.table[:, :, k2, k2]


def precompute_autocorr(k: Kernel) -> AutoCorr:
    """Autocorrelation table of a uniform kernel, or pairwise tables of a varying one."""
    tab = np.ascontiguousarray(k.table4())
    if k.varying:
        nbytes = tab.shape[0] * tab.shape[1] * (4 * k.radius + 1) ** 2 * 8
        if nbytes > PAIR_TABLE_LIMIT_BYTES:
            raise MemoryError(f"pairwise kernel table would need {nbytes / 2**20:.0f} MiB")
    return AutoCorr(_pair_table(tab))


def _normalize_updates(updates, channels: int):
    items = list(updates)
    n = len(items)
    ys = np.empty(n, np.int64)
    xs = np.empty(n, np.int64)
    dl = np.zeros((n, channels))
    seen = set()
    for j, (pix, delta) in enumerate(items):
        y, x = int(pix[0]), int(pix[1])
        if (y, x) in seen:
            raise ValueError(f"duplicate pixel {(y, x)} in update set")
        seen.add((y, x))
        ys[j] = y
        xs[j] = x
        dl[j] = np.broadcast_to(np.asarray(delta, dtype=np.float64), (channels,))
    return ys, xs, dl


class IncrementalState:
    """Leaky-energy state supporting O(1) trial deltas and cheap acceptance.

    ``X`` holds the current (tone-mapped) image as ``(C, H, W)``. Trial
    methods never mutate anything; :meth:`accept` is the only mutator.
    """

    def __init__(self, X: np.ndarray, target: np.ndarray, kernel: Kernel, lam: np.ndarray,
                 pad: int, n_max: int = N_MAX, autocorr: AutoCorr | None = None):
        if n_max < 1:
            raise ValueError("n_max must be >= 1")
        self.X = np.ascontiguousarray(X, dtype=np.float64).copy()
        C, H, W = self.X.shape
        if kernel.varying and kernel.weights.shape[:2] != (H, W):
            raise ValueError("spatially varying kernel table does not match the image size")
        if pad < kernel.radius:
            raise ValueError("pad must be at least the kernel radius")
        self.kernel = kernel
        self.tab = np.ascontiguousarray(kernel.table4())
        self.autocorr = autocorr if autocorr is not None else precompute_autocorr(kernel)
        self.pair = self.autocorr.table
        self.lam = np.ascontiguousarray(lam, dtype=np.float64)
        self.P = int(pad)
        self.target = np.ascontiguousarray(target, dtype=np.float64)
        if self.target.shape != (C, H + 2 * pad, W + 2 * pad):
            raise ValueError("target must cover the padded domain")
        self.F = np.zeros_like(self.target)
        self.xcorr = np.zeros_like(self.X)
        self.en = np.zeros(1)
        # pending updates since the last rebuild, rebuild count, n_max
        self.meta = np.array([0, 0, n_max], dtype=np.int64)
        self.rebuild()
        self.meta[1] = 0

    @classmethod
    def from_images(cls, est: np.ndarray, ref: np.ndarray, m: PerceptualModel,
                    n_max: int = N_MAX) -> "IncrementalState":
        e = tonemap(to_chw(est), m.tonemap)
        return cls.from_tonemapped(e, ref, m, n_max)

    @classmethod
    def from_tonemapped(cls, X: np.ndarray, ref: np.ndarray, m: PerceptualModel,
                        n_max: int = N_MAX) -> "IncrementalState":
        """State for an already tone-mapped ``(C, H, W)`` image and a raw reference."""
        if m.boundary != LEAKY:
            raise ValueError("the incremental engine only supports the leaky boundary mode")
        if not isinstance(m.g, Kernel):
            raise ValueError("the incremental engine needs a single estimate kernel")
        r = tonemap(to_chw(ref), m.tonemap)
        if X.shape != r.shape:
            raise ValueError(f"dimension mismatch: {X.shape} vs {r.shape}")
        hr = m.h.radius if isinstance(m.h, Kernel) else max(k.radius for k in m.h)
        pad = max(m.g.radius, hr)
        target = convolve_full(r, m.h, pad)
        return cls(X, target, m.g, m.weights(X.shape[0]), pad, n_max)

    # -- bookkeeping
    @property
    def energy(self) -> float:
        return float(self.en[0])

    @property
    def log_length(self) -> int:
        return int(self.meta[0])

    @property
    def rebuilds(self) -> int:
        return int(self.meta[1])

    @property
    def n_max(self) -> int:
        return int(self.meta[2])

    def args(self):
        """Positional state arrays in the order the numba kernels expect."""
        return (self.X, self.target, self.tab, self.pair, self.lam, self.P, self.F,
                self.xcorr, self.en, self.meta)

    def rebuild(self) -> None:
        self.en[0] = _rebuild(self.X, self.target, self.tab, self.lam, self.P, self.F, self.xcorr)
        self.meta[0] = 0
        self.meta[1] += 1

    def brute_energy(self) -> float:
        f = convolve_full(self.X, self.kernel, self.P) - self.target
        return float(np.einsum("c,chw->", self.lam, f * f))

    # -- trials
    def trial_delta_update(self, updates: Iterable) -> float:
        ys, xs, dl = _normalize_updates(updates, self.X.shape[0])
        if ys.size == 0:
            return 0.0
        return float(_delta(self.xcorr, self.pair, self.lam, ys, xs, dl))

    def trial_delta_swap(self, a, b, da, db) -> float:
        if tuple(a) == tuple(b):
            raise ValueError("swap needs two distinct pixels")
        return self.trial_delta_update([(a, da), (b, db)])

    def varying_delta_update(self, updates: Iterable) -> float:
        if not self.autocorr.varying:
            raise ValueError("state has no pairwise table for a spatially varying kernel")
        return self.trial_delta_update(updates)

    def accept(self, updates: Iterable, delta: float | None = None) -> None:
        items = list(updates)
        ys, xs, dl = _normalize_updates(items, self.X.shape[0])
        if ys.size == 0:
            return
        if delta is None:
            delta = float(_delta(self.xcorr, self.pair, self.lam, ys, xs, dl))
        newv = self.X[:, ys, xs].T + dl
        _apply(*self.args(), ys, xs, dl, np.ascontiguousarray(newv), float(delta))


def init_state(k: Kernel, est: np.ndarray, ref: np.ndarray, m: PerceptualModel | None = None,
               n_max: int = N_MAX) -> IncrementalState:
    """Build an :class:`IncrementalState` for estimate kernel ``k``.

    ``m`` supplies the reference kernel, tone map and channel weights; by
    default the reference is used unfiltered with an identity tone map.
    """
    if m is None:
        m = PerceptualModel(g=k)
    else:
        m = PerceptualModel(g=k, h=m.h, tonemap=m.tonemap, channel_weights=m.channel_weights,
                            confidence=m.confidence, boundary=m.boundary)
    return IncrementalState.from_images(est, ref, m, n_max)


class DirectState:
    """Full-recompute stand-in for :class:`IncrementalState`.

    Used for the reflect boundary mode and per-channel kernels. Every trial
    costs a full convolution, so this is only meant for small images.
    """

    def __init__(self, X: np.ndarray, ref: np.ndarray, m: PerceptualModel):
        self.X = np.array(X, dtype=np.float64)
        self.R = tonemap(to_chw(ref), m.tonemap)
        if self.X.shape != self.R.shape:
            raise ValueError(f"dimension mismatch: {self.X.shape} vs {self.R.shape}")
        self.m = PerceptualModel(g=m.g, h=m.h, tonemap="identity",
                                 channel_weights=m.channel_weights, boundary=m.boundary)
        self.lam = m.weights(self.X.shape[0])
        self.en = np.array([self._energy(self.X)])

    @classmethod
    def from_images(cls, est: np.ndarray, ref: np.ndarray, m: PerceptualModel) -> "DirectState":
        return cls(tonemap(to_chw(est), m.tonemap), ref, m)

    def rebuild(self) -> None:
        self.en[0] = self._energy(self.X)

    def _energy(self, X) -> float:
        f = filtered_error(np.moveaxis(X, 0, 2), np.moveaxis(self.R, 0, 2), self.m)
        return float(np.einsum("c,chw->", self.lam, f * f))

    @property
    def energy(self) -> float:
        return float(self.en[0])

    def brute_energy(self) -> float:
        return self._energy(self.X)

    def _applied(self, updates):
        ys, xs, dl = _normalize_updates(updates, self.X.shape[0])
        X = self.X.copy()
        X[:, ys, xs] += dl.T
        return X

    def trial_delta_update(self, updates: Sequence) -> float:
        return self._energy(self._applied(updates)) - self.en[0]

    def trial_delta_swap(self, a, b, da, db) -> float:
        return self.trial_delta_update([(a, da), (b, db)])

    def accept(self, updates: Sequence, delta: float | None = None) -> None:
        self.X = self._applied(updates)
        self.en[0] = self._energy(self.X)


def make_state(X: np.ndarray, ref: np.ndarray, m: PerceptualModel, n_max: int = N_MAX):
    """Incremental state when the model allows it, the direct one otherwise."""
    if m.boundary == LEAKY and isinstance(m.g, Kernel):
        return IncrementalState.from_tonemapped(X, ref, m, n_max)
    return DirectState(X, ref, m)
