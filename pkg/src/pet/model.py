"""Perceptual error energies and the model that parameterizes them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imagecore import (
    BOUNDARY_MODES,
    LEAKY,
    Kernel,
    KernelLike,
    binomial_kernel,
    convolve,
    convolve_full,
    to_chw,
)

TONEMAPS = ("identity", "clamp01", "aces")
ALPHA_FLOOR = 1e-3


def tonemap(x: np.ndarray, kind: str = "identity") -> np.ndarray:
    """Apply a per-channel tone curve."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "identity":
        return x
    if kind == "clamp01":
        return np.clip(x, 0.0, 1.0)
    if kind == "aces":
        # Narkowicz's fit of the ACES filmic curve
        v = np.maximum(x, 0.0)
        y = (v * (2.51 * v + 0.03)) / (v * (2.43 * v + 0.59) + 0.14)
        return np.clip(y, 0.0, 1.0)
    raise ValueError(f"unknown tone map {kind!r}")


@dataclass
class PerceptualModel:
    """Estimate kernel ``g``, reference kernel ``h`` and the remaining knobs of the energy."""

    g: KernelLike = field(default_factory=binomial_kernel)
    h: KernelLike = field(default_factory=Kernel.delta)
    tonemap: str = "identity"
    channel_weights: Sequence[float] | None = None
    confidence: float = 1.0
    boundary: str = LEAKY

    def __post_init__(self):
        if self.tonemap not in TONEMAPS:
            raise ValueError(f"unknown tone map {self.tonemap!r}")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"unknown boundary mode {self.boundary!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        if self.channel_weights is not None and any(w < 0 for w in self.channel_weights):
            raise ValueError("channel weights must be non-negative")

    def weights(self, channels: int) -> np.ndarray:
        if self.channel_weights is None:
            return np.ones(channels)
        w = np.asarray(self.channel_weights, dtype=np.float64)
        if w.shape != (channels,):
            raise ValueError(f"{w.size} channel weights for a {channels}-channel image")
        return w

    def g_l1(self) -> float:
        if isinstance(self.g, Kernel):
            return self.g.l1_norm()
        return max(k.l1_norm() for k in self.g)


@dataclass
class AuxPlanes:
    """Multiplicative (``alpha``) and additive (``beta``) screen-space factors."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        self.alpha = np.maximum(np.asarray(self.alpha, dtype=np.float64), ALPHA_FLOOR)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.shape != self.beta.shape:
            raise ValueError("alpha and beta planes must have the same shape")

    @classmethod
    def neutral(cls, shape) -> "AuxPlanes":
        return cls(np.ones(shape), np.zeros(shape))


def demodulate(img: np.ndarray, aux: AuxPlanes) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) - aux.beta) / aux.alpha


def remodulate(img: np.ndarray, aux: AuxPlanes) -> np.ndarray:
    return aux.alpha * np.asarray(img, dtype=np.float64) + aux.beta


def _pair(est, ref):
    e = to_chw(est)
    r = to_chw(ref)
    if e.shape != r.shape:
        raise ValueError(f"dimension mismatch: {e.shape} vs {r.shape}")
    return e, r


def _radius(k: KernelLike) -> int:
    if isinstance(k, Kernel):
        return k.radius
    return max(kk.radius for kk in k)


def filtered_error(est: np.ndarray, ref: np.ndarray, m: PerceptualModel) -> np.ndarray:
    """``g * T(est) - h * T(ref)`` as a ``(C, H', W')`` array.

    In leaky mode the domain is the image grown by the larger kernel radius,
    in reflect mode it is the image itself.
    """
    e, r = _pair(est, ref)
    te = tonemap(e, m.tonemap)
    tr = tonemap(r, m.tonemap)
    if m.boundary == LEAKY:
        pad = max(_radius(m.g), _radius(m.h))
        return convolve_full(te, m.g, pad) - convolve_full(tr, m.h, pad)
    ge = to_chw(convolve(np.moveaxis(te, 0, 2), m.g, m.boundary))
    hr = to_chw(convolve(np.moveaxis(tr, 0, 2), m.h, m.boundary))
    return ge - hr


def perceptual_energy(est: np.ndarray, ref: np.ndarray, m: PerceptualModel) -> float:
    """Channel-weighted squared norm of the filtered, tone-mapped error."""
    f = filtered_error(est, ref, m)
    lam = m.weights(f.shape[0])
    return float(np.einsum("c,chw->", lam, f * f))


def pmse(est: np.ndarray, ref: np.ndarray, m: PerceptualModel) -> float:
    """Perceptual energy per pixel and channel."""
    e = to_chw(est)
    return perceptual_energy(est, ref, m) / e.size


def mse(est: np.ndarray, ref: np.ndarray) -> float:
    e, r = _pair(est, ref)
    return float(np.mean((e - r) ** 2))


def init_distance_sq(est: np.ndarray, est_init: np.ndarray, m: PerceptualModel) -> float:
    """Channel-weighted ``||T(est) - T(est_init)||^2``."""
    e, r = _pair(est, est_init)
    d = tonemap(e, m.tonemap) - tonemap(r, m.tonemap)
    lam = m.weights(d.shape[0])
    return float(np.einsum("c,chw->", lam, d * d))


def confidence_objective(energy: float, dist_sq: float, confidence: float, g_l1: float) -> float:
    """Square root of the confidence-weighted energy from its two ingredients."""
    return (1.0 - confidence) * g_l1 * math.sqrt(max(dist_sq, 0.0)) + confidence * math.sqrt(
        max(energy, 0.0)
    )


def confidence_energy(
    est: np.ndarray, est_init: np.ndarray, surrogate: np.ndarray, m: PerceptualModel
) -> float:
    """Energy that blends the surrogate fit with staying close to ``est_init``.

    ``sqrt(E_C) = (1 - C) ||g||_1 ||est - est_init|| + C sqrt(E(est, surrogate))``;
    the squared value is returned. With ``C = 1`` this is exactly
    :func:`perceptual_energy`.
    """
    c = m.confidence
    e = perceptual_energy(est, surrogate, m)
    if c == 1.0:
        return e
    d2 = init_distance_sq(est, est_init, m)
    return confidence_objective(e, d2, c, m.g_l1()) ** 2


def apriori_energy(terms: Sequence[tuple[np.ndarray, np.ndarray, float]], m: PerceptualModel) -> float:
    """Weighted sum of perceptual energies over several estimators/integrands."""
    terms = list(terms)
    if not terms:
        raise ValueError("apriori_energy needs at least one term")
    total = 0.0
    for est, ref, w in terms:
        if w < 0:
            raise ValueError("term weights must be non-negative")
        if w:
            total += w * perceptual_energy(est, ref, m)
    return total


def prefix_means(estimates: np.ndarray) -> np.ndarray:
    """Running means along axis 0: entry ``k`` averages the first ``k + 1`` estimates."""
    a = np.asarray(estimates, dtype=np.float64)
    counts = np.arange(1, a.shape[0] + 1).reshape((-1,) + (1,) * (a.ndim - 1))
    return np.cumsum(a, axis=0) / counts


def progressive_apriori_energy(
    prefix_images: Sequence[Sequence[np.ndarray]],
    refs: Sequence[np.ndarray],
    weights: np.ndarray,
    m: PerceptualModel,
) -> float:
    """Sum over integrands ``t`` and sample counts ``k`` of ``w[t, k] * E(prefix[t][k], ref[t])``."""
    w = np.asarray(weights, dtype=np.float64)
    if len(prefix_images) != len(refs) or w.shape[0] != len(refs):
        raise ValueError("prefix images, references and weights disagree on integrand count")
    lengths = {len(p) for p in prefix_images}
    if len(lengths) != 1 or w.shape[1] != lengths.pop():
        raise ValueError("inconsistent prefix lengths")
    total = 0.0
    for t, prefixes in enumerate(prefix_images):
        for k, img in enumerate(prefixes):
            if w[t, k]:
                total += w[t, k] * perceptual_energy(img, refs[t], m)
    return total
