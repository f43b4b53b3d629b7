import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pet.analysis import (
    Spectrum,
    band_power,
    compare_report,
    format_table,
    low_freq_ratio,
    power_spectrum,
    radial_average,
    radius_grid,
    report_json,
    tiled_spectrum,
)
from pet.imagecore import binomial_kernel
from pet.masks import void_and_cluster
from pet.model import PerceptualModel

from oracles import dft2_direct


def test_constant_image_has_zero_spectrum():
    s = power_spectrum(np.full((8, 8), 0.7))
    np.testing.assert_allclose(s.power, 0.0, atol=1e-25)


def test_impulse_has_flat_spectrum():
    a = np.zeros((8, 8))
    a[3, 5] = 1.0
    p = np.fft.ifftshift(power_spectrum(a).power)
    # the mean-subtracted impulse is flat away from DC
    off = p.ravel()[1:]
    np.testing.assert_allclose(off, 1.0, rtol=1e-12)


def test_spectrum_matches_direct_dft():
    rng = np.random.default_rng(0)
    a = rng.random((8, 8))
    expect = np.abs(dft2_direct(a - a.mean())) ** 2
    np.testing.assert_allclose(np.fft.ifftshift(power_spectrum(a).power), expect, atol=1e-10)
    b = rng.random((6, 10))
    expect = np.abs(dft2_direct(b - b.mean())) ** 2
    np.testing.assert_allclose(np.fft.ifftshift(power_spectrum(b).power), expect, atol=1e-10)


def test_radius_grid_units():
    r = radius_grid(8, 8)
    assert r[4, 4] == 0.0
    assert r[4, 0] == pytest.approx(0.5)
    assert r.max() == pytest.approx(math.sqrt(0.5))


def test_white_noise_low_freq_ratio_area():
    rng = np.random.default_rng(1)
    vals = [low_freq_ratio(rng.random((128, 128)), 0.125) for _ in range(8)]
    assert np.mean(vals) == pytest.approx(math.pi * 0.125**2, rel=0.1)


def test_blue_noise_ratio_is_small():
    m = void_and_cluster(64, 64)
    rng = np.random.default_rng(2)
    white = rng.random((64, 64))
    assert low_freq_ratio(m.thresholds) < 0.3 * low_freq_ratio(white)


def test_flat_image_ratio_is_zero():
    assert low_freq_ratio(np.ones((8, 8))) == 0.0
    with pytest.raises(ValueError):
        low_freq_ratio(np.ones((8, 8)), 0.6)


def test_tiled_spectrum():
    assert np.all(tiled_spectrum(np.zeros((64, 64)), 32) == 0)
    rng = np.random.default_rng(3)
    t = tiled_spectrum(rng.random((64, 96)), 32)
    assert t.shape == (64, 96)
    assert t.max() <= 1.0
    # white noise tiles have similar mean brightness
    means = [t[y:y + 32, x:x + 32].mean() for y in (0, 32) for x in (0, 32, 64)]
    assert max(means) - min(means) < 0.1
    # blue-noise tiles have dark centres
    b = tiled_spectrum(void_and_cluster(64, 64).thresholds - 0.5, 32)
    tile = b[:32, :32]
    r = radius_grid(32, 32)
    assert tile[r <= 0.125].mean() < 0.5 * tile[r > 0.25].mean()
    assert tiled_spectrum(rng.random((70, 70)), 32).shape == (64, 64)
    with pytest.raises(ValueError):
        tiled_spectrum(np.zeros((8, 8)), 32)


def test_radial_average():
    s = Spectrum(np.ones((16, 16)))
    c, mean, count = radial_average(s, 8)
    np.testing.assert_allclose(mean[count > 0], 1.0)
    assert count.sum() == 16 * 16 - 1
    r = radius_grid(32, 32)
    g = Spectrum(np.exp(-(r**2) / (2 * 0.1**2)))
    _, mg, cg = radial_average(g, 10)
    assert np.all(np.diff(mg[cg > 0]) < 0)


def test_compare_report():
    rng = np.random.default_rng(4)
    ref = rng.random((16, 16))
    noisy = ref + rng.normal(0, 0.2, ref.shape)
    mild = ref + rng.normal(0, 0.02, ref.shape)
    g = binomial_kernel()
    m = PerceptualModel(g=g, h=g)
    rows = compare_report([("noisy", noisy), ("exact", ref), ("mild", mild)], ref, m)
    assert len(rows) == 3
    assert [r["name"] for r in rows] == ["exact", "mild", "noisy"]
    exact = rows[0]
    assert exact["mse"] == exact["pmse"] == exact["energy"] == exact["low_freq_ratio"] == 0.0
    assert json.loads(report_json(rows))[0]["name"] == "exact"
    assert format_table(rows).count("\n") == 4
    with pytest.raises(ValueError):
        compare_report([("bad", np.zeros((4, 4)))], ref, m)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (8, 8), elements=st.floats(-1, 1)), st.floats(0.01, 0.5))
def test_band_partition(a, c):
    total = band_power(a, (0.0, np.inf))
    lo = band_power(a, (0.0, c))
    hi = band_power(a, (c, np.inf))
    assert lo + hi == pytest.approx(total, rel=1e-9, abs=1e-12)
    # Parseval on the mean-free image
    b = a - a.mean()
    assert total == pytest.approx(a.size * float(np.sum(b * b)), rel=1e-9, abs=1e-9)
