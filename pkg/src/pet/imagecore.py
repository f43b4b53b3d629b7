"""Image arrays, convolution kernels and viewing-distance conversions.

Images are plain numpy arrays of shape ``(H, W)`` or ``(H, W, C)`` holding
linear radiance. Internally most code works on ``(C, H, W)`` float64 copies,
see :func:`to_chw` / :func:`from_chw`.

Convolution follows the textbook definition ``out[i] = sum_d w[d] * x[i - d]``
where ``d`` ranges over ``[-K, K]^2`` and ``w`` is indexed with the centre at
``[K, K]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

LEAKY = "leaky"
REFLECT = "reflect"
BOUNDARY_MODES = (LEAKY, REFLECT)

REC709 = np.array([0.2126, 0.7152, 0.0722])

# visual-angle constant of the Gaussian PSF fit (degrees)
_PSF_DEG = 0.00954


@dataclass(frozen=True, eq=False)
class Kernel:
    """Square convolution kernel of radius K.

    ``weights`` is ``(2K+1, 2K+1)`` for a uniform kernel, or
    ``(H, W, 2K+1, 2K+1)`` for a spatially varying one where ``weights[y, x]``
    is the table used to produce output pixel ``(y, x)``. Output pixels that
    fall outside the image (leaky energy) use the table of the nearest image
    pixel.
    """

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim not in (2, 4):
            raise ValueError(f"kernel weights must be 2D or 4D, got shape {w.shape}")
        kh, kw = w.shape[-2:]
        if kh != kw or kh % 2 != 1:
            raise ValueError(f"kernel tables must be square with odd size, got {kh}x{kw}")
        if not np.all(np.isfinite(w)):
            raise ValueError("kernel weights must be finite")
        w = np.ascontiguousarray(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __eq__(self, other):
        if not isinstance(other, Kernel):
            return NotImplemented
        return np.array_equal(self.weights, other.weights)

    @property
    def radius(self) -> int:
        return (self.weights.shape[-1] - 1) // 2

    @property
    def varying(self) -> bool:
        return self.weights.ndim == 4

    def table4(self) -> np.ndarray:
        """Weights as a 4D per-pixel table (a 1x1 grid for uniform kernels)."""
        if self.varying:
            return self.weights
        return self.weights[None, None]

    def l1_norm(self) -> float:
        """``||g||_1``; for varying kernels the largest per-pixel norm."""
        if self.varying:
            return float(np.abs(self.weights).sum(axis=(2, 3)).max())
        return float(np.abs(self.weights).sum())

    @classmethod
    def delta(cls) -> "Kernel":
        return cls(np.ones((1, 1)))


KernelLike = Union[Kernel, Sequence[Kernel]]


def binomial_kernel() -> Kernel:
    """3x3 tensor-product binomial ``[1,2,1] x [1,2,1] / 16``.

    Its per-axis standard deviation is sqrt(0.5); it is the usual small
    binomial stand-in for a Gaussian of sigma ~ sqrt(2/pi).
    """
    row = np.array([1.0, 2.0, 1.0]) / 4.0
    return Kernel(np.outer(row, row))


def gaussian_kernel(sigma: float, radius: int | None = None) -> Kernel:
    """Sampled Gaussian truncated at ``radius`` (default ceil(3 sigma)), sums to 1."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = max(1, math.ceil(3 * sigma))
    if radius < 1:
        raise ValueError("radius must be >= 1")
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    # normalize the 1D factor first so tiny sigmas do not underflow to 0/0
    g1 = np.exp(-(ax**2) / (2 * sigma**2))
    g1 /= g1.sum()
    w = np.outer(g1, g1)
    return Kernel(w / w.sum())


def sigma_from_distance(dpi: float, distance: float) -> float:
    """Gaussian PSF std. dev. in pixels for a screen of ``dpi`` viewed from ``distance`` inches."""
    if dpi <= 0 or distance <= 0:
        raise ValueError("dpi and distance must be positive")
    tau = (180.0 / math.pi) * 2.0 * math.atan(1.0 / (2.0 * dpi * distance))
    return _PSF_DEG / tau


def distance_from_sigma(sigma: float, dpi: float) -> float:
    """Inverse of :func:`sigma_from_distance`: viewing distance in inches."""
    if sigma <= 0 or dpi <= 0:
        raise ValueError("sigma and dpi must be positive")
    return 1.0 / (2.0 * dpi * math.tan((math.pi / 180.0) * _PSF_DEG / (2.0 * sigma)))


def to_chw(img: np.ndarray) -> np.ndarray:
    """Copy an ``(H, W)`` or ``(H, W, C)`` image into a ``(C, H, W)`` float64 array."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a[None].copy()
    if a.ndim == 3:
        return np.moveaxis(a, 2, 0).copy()
    raise ValueError(f"expected a 2D or 3D image, got shape {a.shape}")


def from_chw(a: np.ndarray, like: np.ndarray | None = None) -> np.ndarray:
    """Inverse of :func:`to_chw`; drops the channel axis when ``like`` is 2D."""
    if like is not None and np.ndim(like) == 2:
        return a[0].copy()
    if like is None and a.shape[0] == 1:
        return a[0].copy()
    return np.ascontiguousarray(np.moveaxis(a, 0, 2))


def check_image(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim not in (2, 3) or (a.ndim == 3 and a.shape[2] not in (1, 3)):
        raise ValueError(f"images must be (H, W) or (H, W, 1|3), got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return a


def _kernels_for(k: KernelLike, channels: int) -> list[Kernel]:
    if isinstance(k, Kernel):
        return [k] * channels
    ks = list(k)
    if len(ks) != channels:
        raise ValueError(f"{len(ks)} per-channel kernels given for a {channels}-channel image")
    return ks


def _conv_plane_full(x: np.ndarray, k: Kernel, pad: int) -> np.ndarray:
    """Zero-padded convolution of one plane onto a domain grown by ``pad`` on every side."""
    h, w = x.shape
    K = k.radius
    if pad < K:
        raise ValueError("pad must be at least the kernel radius")
    out = np.zeros((h + 2 * pad, w + 2 * pad))
    if not k.varying:
        for dy in range(-K, K + 1):
            for dx in range(-K, K + 1):
                wt = k.weights[dy + K, dx + K]
                if wt != 0.0:
                    out[pad + dy:pad + dy + h, pad + dx:pad + dx + w] += wt * x
        return out
    tab = k.weights
    if tab.shape[:2] != (h, w):
        raise ValueError("spatially varying kernel table does not match the image size")
    # output pixel o uses the table of the nearest image pixel
    ys = np.clip(np.arange(h + 2 * pad) - pad, 0, h - 1)
    xs = np.clip(np.arange(w + 2 * pad) - pad, 0, w - 1)
    wt_full = tab[ys[:, None], xs[None, :]]
    xp = np.zeros((h + 2 * pad + 2 * K, w + 2 * pad + 2 * K))
    xp[pad + K:pad + K + h, pad + K:pad + K + w] = x
    H2, W2 = out.shape
    for dy in range(-K, K + 1):
        for dx in range(-K, K + 1):
            src = xp[K - dy:K - dy + H2, K - dx:K - dx + W2]
            out += wt_full[:, :, dy + K, dx + K] * src
    return out


def _conv_plane_reflect(x: np.ndarray, k: Kernel) -> np.ndarray:
    h, w = x.shape
    K = k.radius
    xp = np.pad(x, K, mode="symmetric")
    out = np.zeros((h, w))
    tab = k.table4()
    if k.varying and tab.shape[:2] != (h, w):
        raise ValueError("spatially varying kernel table does not match the image size")
    for dy in range(-K, K + 1):
        for dx in range(-K, K + 1):
            wt = tab[:, :, dy + K, dx + K]
            out += wt * xp[K - dy:K - dy + h, K - dx:K - dx + w]
    return out


def convolve_full(img: np.ndarray, k: KernelLike, pad: int | None = None) -> np.ndarray:
    """Leaky (zero-padded) convolution over the image support grown by ``pad`` pixels.

    Works on ``(C, H, W)`` arrays and returns ``(C, H + 2 pad, W + 2 pad)``.
    This is the domain over which leaky energies are summed.
    """
    x = np.asarray(img, dtype=np.float64)
    ks = _kernels_for(k, x.shape[0])
    if pad is None:
        pad = max(kk.radius for kk in ks)
    return np.stack([_conv_plane_full(x[c], ks[c], pad) for c in range(x.shape[0])])


def convolve(img: np.ndarray, k: KernelLike, mode: str = LEAKY) -> np.ndarray:
    """Convolve an image with ``k`` (one kernel or one per channel).

    The result always has the input's shape. In leaky mode pixels outside
    the image are zero; in reflect mode the image is mirrored at its border.
    """
    if mode not in BOUNDARY_MODES:
        raise ValueError(f"unknown boundary mode {mode!r}")
    x = to_chw(img)
    ks = _kernels_for(k, x.shape[0])
    out = []
    for c in range(x.shape[0]):
        if mode == LEAKY:
            K = ks[c].radius
            out.append(_conv_plane_full(x[c], ks[c], K)[K:K + x.shape[1], K:K + x.shape[2]])
        else:
            out.append(_conv_plane_reflect(x[c], ks[c]))
    return from_chw(np.stack(out), like=img)


def luminance(img: np.ndarray) -> np.ndarray:
    """Rec.709 luminance of an ``(H, W, 3)`` image."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"luminance needs an (H, W, 3) image, got {a.shape}")
    return a @ REC709


def gray(img: np.ndarray) -> np.ndarray:
    """Luminance for colour images, the single plane otherwise."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        return a
    if a.shape[2] == 1:
        return a[:, :, 0]
    return luminance(a)
