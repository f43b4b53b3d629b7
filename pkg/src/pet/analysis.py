"""Power spectra, band-power ratios and error metric reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imagecore import gray
from .model import PerceptualModel, mse, perceptual_energy, pmse

# frequency bands in cycles per pixel (Nyquist is 0.5)
LOW_OCTAVE = (0.0, 0.125)
HIGH_OCTAVE = (0.25, np.inf)


@dataclass(frozen=True)
class Spectrum:
    """Centred power spectrum (DC at ``(H // 2, W // 2)``)."""

    power: np.ndarray

    @property
    def height(self) -> int:
        return self.power.shape[0]

    @property
    def width(self) -> int:
        return self.power.shape[1]

    def radius(self) -> np.ndarray:
        return radius_grid(self.height, self.width)


def radius_grid(h: int, w: int) -> np.ndarray:
    """Centred frequency radius in cycles per pixel (axis Nyquist is 0.5)."""
    fy = np.fft.fftshift(np.fft.fftfreq(h))
    fx = np.fft.fftshift(np.fft.fftfreq(w))
    return np.hypot(fy[:, None], fx[None, :])


def power_spectrum(img: np.ndarray) -> Spectrum:
    """``|DFT|^2`` of the mean-subtracted (luminance of the) image, DC centred."""
    a = gray(img)
    a = a - a.mean()
    return Spectrum(np.fft.fftshift(np.abs(np.fft.fft2(a)) ** 2))


def band_power(img: np.ndarray, band: tuple[float, float]) -> float:
    """Total power at radius ``lo < r <= hi`` cycles per pixel (DC never included)."""
    s = power_spectrum(img)
    r = s.radius()
    lo, hi = band
    sel = (r > lo) & (r <= hi) & (r > 0)
    return float(s.power[sel].sum())


def low_freq_ratio(err: np.ndarray, cutoff: float = 0.125) -> float:
    """Share of the (DC-free) power at radius ``<= cutoff`` cycles per pixel; 0 for flat images."""
    if not 0.0 < cutoff <= 0.5:
        raise ValueError("cutoff must be in (0, 0.5]")
    s = power_spectrum(err)
    r = s.radius()
    total = float(s.power[r > 0].sum())
    if total <= 0.0:
        return 0.0
    return float(s.power[(r > 0) & (r <= cutoff)].sum()) / total


def radial_average(s: Spectrum, bins: int = 32):
    """Annular means of the power; returns ``(radius, mean_power, count)`` arrays.

    Bins split ``(0, r_max]`` evenly; the DC sample is left out.
    """
    if bins < 2:
        raise ValueError("need at least 2 bins")
    r = s.radius()
    sel = r > 0
    rv = r[sel]
    pv = s.power[sel]
    edges = np.linspace(0.0, rv.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, rv, side="left") - 1, 0, bins - 1)
    count = np.bincount(idx, minlength=bins)
    total = np.bincount(idx, weights=pv, minlength=bins)
    mean = np.divide(total, count, out=np.zeros(bins), where=count > 0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, mean, count


def tiled_spectrum(err: np.ndarray, tile: int = 32) -> np.ndarray:
    """Per-tile ``c * ln(1 + |DFT|)`` images with ``c`` scaling each tile's maximum to 1.

    Tiles are composited in place; a partial remainder at the right and
    bottom is dropped.
    """
    a = gray(err)
    h, w = a.shape
    if h < tile or w < tile:
        raise ValueError(f"image {w}x{h} is smaller than one {tile}x{tile} tile")
    ny, nx = h // tile, w // tile
    out = np.zeros((ny * tile, nx * tile))
    for ty in range(ny):
        for tx in range(nx):
            t = a[ty * tile:(ty + 1) * tile, tx * tile:(tx + 1) * tile]
            v = np.log1p(np.abs(np.fft.fftshift(np.fft.fft2(t - t.mean()))))
            mx = v.max()
            if mx > 0:
                v = v / mx
            out[ty * tile:(ty + 1) * tile, tx * tile:(tx + 1) * tile] = v
    return out


def metrics(est: np.ndarray, ref: np.ndarray, m: PerceptualModel) -> dict:
    e = np.asarray(est, dtype=np.float64) - np.asarray(ref, dtype=np.float64)
    return {
        "mse": mse(est, ref),
        "pmse": pmse(est, ref, m),
        "low_freq_ratio": low_freq_ratio(e),
        "energy": perceptual_energy(est, ref, m),
    }


def compare_report(entries: Sequence[tuple[str, np.ndarray]], ref: np.ndarray,
                   m: PerceptualModel) -> list[dict]:
    """One metrics row per entry, sorted by pMSE (then name)."""
    rows = []
    for name, est in entries:
        if np.shape(est) != np.shape(ref):
            raise ValueError(f"entry {name!r} does not match the reference shape")
        rows.append({"name": name, **metrics(est, ref, m)})
    rows.sort(key=lambda r: (r["pmse"], r["name"]))
    return rows


def format_table(rows: Sequence[dict]) -> str:
    cols = ["name", "mse", "pmse", "low_freq_ratio", "energy"]
    cells = [cols] + [[r["name"]] + [f"{r[c]:.6g}" for c in cols[1:]] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(widths[i]) if i == 0 else v.rjust(widths[i]) for i, v in enumerate(row))
             for row in cells]
    return "\n".join(lines) + "\n"


def report_json(rows: Sequence[dict]) -> str:
    return json.dumps(list(rows), indent=2, sort_keys=True) + "\n"
