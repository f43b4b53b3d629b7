"""Per-pixel estimate selection: iterative minimization, error diffusion,
dithering, power-set expansion and the histogram baseline."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .imagecore import REC709, to_chw
from .incremental import IMPROVE_TOL, N_MAX, IncrementalState, _vertical_sweep, make_state
from .masks import DitherMask
from .model import AuxPlanes, PerceptualModel, confidence_objective, tonemap

ORDERS = ("serpentine", "raster", "random")
POWER_SET_MAX_M = 20


@dataclass
class EstimateStack:
    """``M`` candidate estimates per pixel.

    ``values`` is ``(M, H, W)`` or ``(M, H, W, C)``. With ``counts`` given the
    stack is ragged: pixel ``(y, x)`` only owns its first ``counts[y, x]``
    entries and the rest is padding.
    """

    values: np.ndarray
    counts: np.ndarray | None = None
    aux: AuxPlanes | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim not in (3, 4) or v.shape[0] < 1:
            raise ValueError(f"stack values must be (M, H, W[, C]) with M >= 1, got {v.shape}")
        if v.size == 0:
            raise ValueError("empty estimate stack")
        self.values = v
        if self.counts is not None:
            c = np.asarray(self.counts, dtype=np.int64)
            if c.shape != v.shape[1:3]:
                raise ValueError("counts must be (H, W)")
            if c.min() < 1 or c.max() > v.shape[0]:
                raise ValueError("per-pixel counts must lie in [1, M]")
            self.counts = c
        if self.aux is not None and self.aux.alpha.shape != v.shape[1:]:
            raise ValueError("aux planes must match the image shape")

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def channels(self) -> int:
        return 1 if self.values.ndim == 3 else self.values.shape[3]

    @property
    def ragged(self) -> bool:
        return self.counts is not None

    def pixel_counts(self) -> np.ndarray:
        if self.counts is None:
            return np.full((self.height, self.width), self.M, dtype=np.int64)
        return self.counts

    def chw(self) -> np.ndarray:
        """Values as ``(M, C, H, W)``."""
        return np.ascontiguousarray(np.stack([to_chw(v) for v in self.values]))

    def select(self, indices: np.ndarray) -> np.ndarray:
        """Image built from per-pixel indices, in the stack's own layout."""
        idx = np.asarray(indices, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.pixel_counts()):
            raise ValueError("selection index out of range")
        ys, xs = np.indices(idx.shape)
        return self.values[idx, ys, xs].copy()

    def mean(self) -> np.ndarray:
        if self.counts is None:
            return self.values.mean(axis=0)
        mask = np.arange(self.M)[:, None, None] < self.counts[None]
        if self.values.ndim == 4:
            mask = mask[..., None]
        return (self.values * mask).sum(axis=0) / (self.counts if self.values.ndim == 3 else self.counts[..., None])


@dataclass
class VerticalResult:
    indices: np.ndarray
    image: np.ndarray
    trace: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    subsets: list | None = None


def traversal_order(kind: str, height: int, width: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Flat pixel indices visiting every pixel once."""
    idx = np.arange(height * width).reshape(height, width)
    if kind == "raster":
        return idx.ravel()
    if kind == "serpentine":
        idx = idx.copy()
        idx[1::2] = idx[1::2, ::-1]
        return idx.ravel()
    if kind == "random":
        if rng is None:
            raise ValueError("random traversal needs a generator")
        return rng.permutation(height * width)
    raise ValueError(f"unknown traversal order {kind!r}")


def _lum(chw: np.ndarray) -> np.ndarray:
    """Luminance of ``(..., C, H, W)`` arrays."""
    if chw.shape[-3] == 1:
        return chw[..., 0, :, :]
    if chw.shape[-3] != 3:
        raise ValueError("luminance needs 1 or 3 channels")
    return np.tensordot(REC709, chw, axes=([0], [chw.ndim - 3]))


def _check_surrogate(stack: EstimateStack, surrogate: np.ndarray) -> np.ndarray:
    s = np.asarray(surrogate, dtype=np.float64)
    if s.shape != stack.shape:
        raise ValueError(f"surrogate shape {s.shape} does not match stack {stack.shape}")
    return s


def random_selection(stack: EstimateStack, seed: int = 0) -> np.ndarray:
    """Seeded uniformly random estimate index per pixel."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, stack.pixel_counts())


def _vertical_sweep_direct(state, cand, counts, sel, order, Xinit, conf, g1, d2, tol):
    # Python twin of the numba sweep for states without O(1) deltas
    C, H, W = state.X.shape
    accepted = 0
    for p in order:
        y, x = divmod(int(p), W)
        cur = sel[y, x]
        E = state.energy
        if conf < 1.0:
            curobj = confidence_objective(E, d2[0], conf, g1)
            thr = -tol * curobj
        else:
            thr = -tol * abs(E)
        best, bestcrit, bestd, bestdd2 = -1, 0.0, 0.0, 0.0
        for j in range(counts[y, x]):
            if j == cur:
                continue
            dv = cand[j, :, y, x] - state.X[:, y, x]
            d = state.trial_delta_update([((y, x), dv)])
            dd2 = 0.0
            if conf < 1.0:
                a = cand[j, :, y, x] - Xinit[:, y, x]
                b = state.X[:, y, x] - Xinit[:, y, x]
                dd2 = float(np.sum(state.lam * (a * a - b * b)))
                crit = confidence_objective(E + d, d2[0] + dd2, conf, g1) - curobj
            else:
                crit = d
            if best < 0 or crit < bestcrit:
                best, bestcrit, bestd, bestdd2 = j, crit, d, dd2
        if best >= 0 and bestcrit < thr:
            state.accept([((y, x), cand[best, :, y, x] - state.X[:, y, x])], bestd)
            state.X[:, y, x] = cand[best, :, y, x]
            sel[y, x] = best
            d2[0] += bestdd2
            accepted += 1
    return accepted


def iterative_minimize(stack: EstimateStack, surrogate: np.ndarray, m: PerceptualModel,
                       T: int = 10, order: str = "serpentine", seed: int = 0,
                       init: np.ndarray | None = None, n_max: int = N_MAX,
                       tol: float = IMPROVE_TOL) -> VerticalResult:
    """Greedy per-pixel selection of the candidate that lowers the energy most.

    Starts from a seeded random selection (or ``init``), sweeps the image up
    to ``T`` times and stops early once a sweep changes nothing. With a
    confidence below one the objective is the confidence-weighted energy,
    anchored at the initial selection. ``trace`` holds the energy before the
    first sweep and after each sweep.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if order not in ORDERS:
        raise ValueError(f"unknown traversal order {order!r}")
    s = _check_surrogate(stack, surrogate)
    rng = np.random.default_rng(seed)
    counts = stack.pixel_counts()
    if init is None:
        sel = rng.integers(0, counts)
    else:
        sel = np.array(init, dtype=np.int64)
        if sel.shape != counts.shape or np.any(sel < 0) or np.any(sel >= counts):
            raise ValueError("initial selection out of range")
    cand = tonemap(stack.chw(), m.tonemap)
    H, W = counts.shape
    ys, xs = np.indices((H, W))
    X0 = np.ascontiguousarray(np.moveaxis(cand[sel, :, ys, xs], 2, 0))
    Xinit = X0.copy()
    state = make_state(X0, s, m, n_max)
    conf = float(m.confidence)
    g1 = m.g_l1()
    d2 = np.zeros(1)

    def objective():
        if conf == 1.0:
            return state.energy
        diff = state.X - Xinit
        d2[0] = float(np.einsum("c,chw->", state.lam, diff * diff))
        return confidence_objective(state.energy, d2[0], conf, g1) ** 2

    trace = [objective()]
    accepted = []
    for _ in range(T):
        ordr = traversal_order(order, H, W, rng)
        if isinstance(state, IncrementalState):
            acc = _vertical_sweep(*state.args(), cand, counts, sel, ordr, Xinit, conf, g1, d2, tol)
        else:
            acc = _vertical_sweep_direct(state, cand, counts, sel, ordr, Xinit, conf, g1, d2, tol)
        state.rebuild()
        accepted.append(int(acc))
        trace.append(objective())
        if acc == 0:
            break
    return VerticalResult(sel, stack.select(sel), trace, accepted)


@nb.njit(cache=True)
def _error_diffusion(target, cand, counts, serpentine):
    C, H, W = target.shape
    sel = np.zeros((H, W), np.int64)
    for y in range(H):
        rev = serpentine and (y % 2 == 1)
        s = -1 if rev else 1
        for t in range(W):
            x = W - 1 - t if rev else t
            best = 0
            bestd = np.inf
            for j in range(counts[y, x]):
                d = 0.0
                for c in range(C):
                    e = target[c, y, x] - cand[j, c, y, x]
                    d += e * e
                if d < bestd:
                    bestd = d
                    best = j
            sel[y, x] = best
            for c in range(C):
                e = target[c, y, x] - cand[best, c, y, x]
                if 0 <= x + s < W:
                    target[c, y, x + s] += e * (7.0 / 16.0)
                if y + 1 < H:
                    if 0 <= x - s < W:
                        target[c, y + 1, x - s] += e * (3.0 / 16.0)
                    target[c, y + 1, x] += e * (5.0 / 16.0)
                    if 0 <= x + s < W:
                        target[c, y + 1, x + s] += e * (1.0 / 16.0)
    return sel


def error_diffusion(stack: EstimateStack, surrogate: np.ndarray, m: PerceptualModel,
                    order: str = "serpentine") -> VerticalResult:
    """Floyd-Steinberg diffusion of the tone-mapped selection residual.

    Each pixel takes the candidate closest to its running target; the
    residual goes to the unvisited neighbours with weights 7/16, 3/16, 5/16
    and 1/16, mirrored on right-to-left rows. Running targets are not clamped.
    """
    if order not in ("serpentine", "raster"):
        raise ValueError("error diffusion supports serpentine or raster order")
    s = _check_surrogate(stack, surrogate)
    target = np.ascontiguousarray(tonemap(to_chw(s), m.tonemap))
    cand = np.ascontiguousarray(tonemap(stack.chw(), m.tonemap))
    sel = _error_diffusion(target, cand, stack.pixel_counts(), order == "serpentine")
    return VerticalResult(sel, stack.select(sel))


def _bracket_select(lum_i, lum_c, counts, thr):
    H, W = lum_i.shape
    sel = np.zeros((H, W), dtype=np.int64)
    for y in range(H):
        for x in range(W):
            n = counts[y, x]
            lc = lum_c[:n, y, x]
            L = lum_i[y, x]
            below = np.flatnonzero(lc <= L)
            above = np.flatnonzero(lc >= L)
            if above.size == 0:
                sel[y, x] = below[np.argmax(lc[below])]
                continue
            if below.size == 0:
                sel[y, x] = above[np.argmin(lc[above])]
                continue
            lo = below[np.argmax(lc[below])]
            hi = above[np.argmin(lc[above])]
            span = lc[hi] - lc[lo]
            if span == 0.0 or L - lc[lo] < thr[y, x] * span:
                sel[y, x] = lo
            else:
                sel[y, x] = hi
    return sel


def dither(stack: EstimateStack, surrogate: np.ndarray, m: PerceptualModel,
           mask: DitherMask) -> VerticalResult:
    """Threshold between the two candidates whose luminance brackets the surrogate's.

    The lower one is kept when ``lum(I) - lum(lo) < B * (lum(hi) - lum(lo))``.
    A surrogate outside the candidate range takes the nearest extreme.
    """
    s = _check_surrogate(stack, surrogate)
    lum_i = _lum(tonemap(to_chw(s), m.tonemap))
    lum_c = _lum(tonemap(stack.chw(), m.tonemap))
    thr = mask.tiled((stack.height, stack.width))
    sel = _bracket_select(lum_i, lum_c, stack.pixel_counts(), thr)
    return VerticalResult(sel, stack.select(sel))


def histogram_baseline(stack: EstimateStack, mask: DitherMask) -> VerticalResult:
    """Pick the ``floor(B * M)``-th estimate in luminance order."""
    lum_c = _lum(stack.chw())
    counts = stack.pixel_counts()
    thr = mask.tiled((stack.height, stack.width))
    H, W = counts.shape
    sel = np.zeros((H, W), dtype=np.int64)
    for y in range(H):
        for x in range(W):
            n = counts[y, x]
            rank = min(int(math.floor(thr[y, x] * n)), n - 1)
            sel[y, x] = np.argsort(lum_c[:n, y, x], kind="stable")[rank]
    return VerticalResult(sel, stack.select(sel))


def power_set_subsets(M: int, limit: int | None = None) -> list[tuple[int, ...]]:
    """Subsets used by :func:`expand_power_set`, in emission order.

    All ``2^M - 1`` non-empty subsets ordered by size and then
    lexicographically if they fit in ``limit``; otherwise the singletons, the
    pairs and the full set, cut at ``limit``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if M > POWER_SET_MAX_M:
        raise ValueError(f"power-set expansion is limited to M <= {POWER_SET_MAX_M}")
    if limit is not None and limit < M:
        raise ValueError("limit must be at least M")
    full = 2**M - 1
    if limit is None or full <= limit:
        return [c for k in range(1, M + 1) for c in itertools.combinations(range(M), k)]
    subs = [(i,) for i in range(M)] + list(itertools.combinations(range(M), 2))
    if M > 2:
        subs.append(tuple(range(M)))
    return subs[:limit]


def expand_power_set(stack: EstimateStack, limit: int | None = None) -> tuple[EstimateStack, dict]:
    """Replace each pixel's estimates by the averages of their subsets.

    Returns the expanded stack and a map from per-pixel count to the subset
    list that produced each entry.
    """
    counts = stack.pixel_counts()
    subsets = {int(n): power_set_subsets(int(n), limit) for n in np.unique(counts)}
    Mx = max(len(v) for v in subsets.values())
    out = np.zeros((Mx,) + stack.values.shape[1:])
    new_counts = np.zeros_like(counts)
    for n, subs in subsets.items():
        where = counts == n
        new_counts[where] = len(subs)
        for j, sub in enumerate(subs):
            acc = stack.values[sub[0]][where].copy()
            for i in sub[1:]:
                acc = acc + stack.values[i][where]
            out[j][where] = acc / len(sub)
    # pad ragged tails with the pixel's first entry so every plane stays finite
    for j in range(Mx):
        pad = new_counts <= j
        out[j][pad] = out[0][pad]
    ragged = stack.ragged and len(subsets) > 1
    return EstimateStack(out, new_counts if ragged else None, stack.aux), subsets


__all__ = [
    "EstimateStack",
    "VerticalResult",
    "traversal_order",
    "random_selection",
    "iterative_minimize",
    "error_diffusion",
    "dither",
    "histogram_baseline",
    "power_set_subsets",
    "expand_power_set",
]
