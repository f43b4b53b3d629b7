import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pet.imagecore import REFLECT, Kernel, binomial_kernel, convolve_full, gaussian_kernel
from pet.incremental import (
    DirectState,
    IncrementalState,
    init_state,
    make_state,
    precompute_autocorr,
)
from pet.model import PerceptualModel, perceptual_energy


def brute_delta(state, updates):
    X = state.X.copy()
    for (y, x), d in updates:
        X[:, y, x] += d
    f = convolve_full(X, state.kernel, state.P) - state.target
    after = float(np.einsum("c,chw->", state.lam, f * f))
    return after - state.brute_energy()


def autocorr_oracle(w, v):
    """sum_u w(u) w(u - v) for a square table centred at its middle."""
    K = (w.shape[0] - 1) // 2
    s = 0.0
    for uy in range(-K, K + 1):
        for ux in range(-K, K + 1):
            py, px = uy - v[0], ux - v[1]
            if abs(py) <= K and abs(px) <= K:
                s += w[uy + K, ux + K] * w[py + K, px + K]
    return s


def test_autocorr_delta():
    ac = precompute_autocorr(Kernel.delta())
    assert ac.at((0, 0), (0, 0)) == 1.0
    assert ac.at((0, 0), (0, 1)) == 0.0


def test_autocorr_binomial_center():
    ac = precompute_autocorr(binomial_kernel())
    assert ac.at((3, 3), (3, 3)) == pytest.approx(36 / 256)
    assert float(ac.center()[0, 0]) == pytest.approx(36 / 256)


def test_autocorr_random_kernel_symmetry_and_oracle():
    rng = np.random.default_rng(0)
    w = rng.random((5, 5))
    ac = precompute_autocorr(Kernel(w))
    for v in [(0, 0), (1, 0), (0, 2), (-3, 1), (4, 4), (2, -4)]:
        a = (10, 10)
        b = (10 + v[0], 10 + v[1])
        assert ac.at(a, b) == pytest.approx(autocorr_oracle(w, v), rel=1e-12)
        assert ac.at(a, b) == pytest.approx(ac.at(b, a), rel=1e-12)
    assert ac.at((0, 0), (5, 0)) == 0.0


def test_zero_error_state():
    img = np.full((6, 6), 0.3)
    g = binomial_kernel()
    s = init_state(g, img, img, PerceptualModel(g=g, h=g))
    assert s.energy == pytest.approx(0.0, abs=1e-28)
    np.testing.assert_allclose(s.xcorr, 0.0, atol=1e-15)


def test_xcorr_single_error_pixel():
    # a filtered error with one nonzero sample e at p correlates as e * g(p - x)
    rng = np.random.default_rng(1)
    w = rng.random((3, 3))
    g = Kernel(w)
    H = W = 6
    P = 1
    e, p = 0.7, (2, 3)
    target = np.zeros((1, H + 2 * P, W + 2 * P))
    target[0, p[0] + P, p[1] + P] = -e
    s = IncrementalState(np.zeros((1, H, W)), target, g, np.ones(1), P)
    for y in range(H):
        for x in range(W):
            dy, dx = p[0] - y, p[1] - x
            expect = e * w[dy + 1, dx + 1] if abs(dy) <= 1 and abs(dx) <= 1 else 0.0
            assert s.xcorr[0, y, x] == pytest.approx(expect, abs=1e-15)


def test_xcorr_random_vs_brute_force():
    rng = np.random.default_rng(2)
    g = gaussian_kernel(0.8, 2)
    est, ref = rng.random((8, 8)), rng.random((8, 8))
    s = init_state(g, est, ref)
    F = s.F[0]
    K = 2
    for y in range(8):
        for x in range(8):
            tot = 0.0
            for dy in range(-K, K + 1):
                for dx in range(-K, K + 1):
                    tot += F[y + dy + s.P, x + dx + s.P] * g.weights[dy + K, dx + K]
            assert s.xcorr[0, y, x] == pytest.approx(tot, abs=1e-12)
    assert s.energy == pytest.approx(perceptual_energy(est, ref, PerceptualModel(g=g)), rel=1e-12)


def test_trial_delta_update_examples():
    rng = np.random.default_rng(3)
    g = binomial_kernel()
    s = init_state(g, rng.random((8, 8, 3)), rng.random((8, 8, 3)))
    assert s.trial_delta_update([]) == 0.0
    upd = [((3, 4), rng.normal(size=3))]
    assert s.trial_delta_update(upd) == pytest.approx(brute_delta(s, upd), rel=1e-9)
    a, b = (2, 2), (3, 3)
    da, db = rng.normal(size=3), rng.normal(size=3)
    assert s.trial_delta_swap(a, b, da, db) == pytest.approx(
        s.trial_delta_update([(a, da), (b, db)]), rel=1e-14)
    assert s.trial_delta_swap(a, b, np.zeros(3), np.zeros(3)) == 0.0
    with pytest.raises(ValueError):
        s.trial_delta_update([((1, 1), 0.1), ((1, 1), 0.2)])
    with pytest.raises(ValueError):
        s.trial_delta_swap(a, a, da, db)


def test_far_swap_has_no_cross_term():
    rng = np.random.default_rng(4)
    s = init_state(binomial_kernel(), rng.random((10, 10)), rng.random((10, 10)))
    a, b = (1, 1), (7, 8)
    da, db = 0.3, -0.4
    assert s.trial_delta_swap(a, b, da, db) == pytest.approx(
        s.trial_delta_update([(a, da)]) + s.trial_delta_update([(b, db)]), rel=1e-13)


def test_accept_tracks_brute_force_and_rebuilds():
    rng = np.random.default_rng(5)
    s = init_state(binomial_kernel(), rng.random((8, 8)), rng.random((8, 8)), n_max=64)
    e0 = s.energy
    s.accept([((0, 0), 0.0)])
    assert s.energy == pytest.approx(e0, rel=1e-14)
    for i in range(64 - 1):
        y, x = divmod(int(rng.integers(64)), 8)
        s.accept([((y, x), rng.normal(scale=0.1))])
        assert s.energy == pytest.approx(s.brute_energy(), rel=1e-7)
    assert s.rebuilds == 0
    assert s.log_length == 64
    s.accept([((4, 4), 0.05)])
    assert s.rebuilds == 1
    assert s.log_length == 0
    assert s.energy == pytest.approx(s.brute_energy(), rel=1e-12)


def test_accept_updates_image():
    s = init_state(binomial_kernel(), np.zeros((4, 4)), np.zeros((4, 4)))
    s.accept([((1, 2), 0.5), ((3, 0), -0.25)])
    assert s.X[0, 1, 2] == 0.5 and s.X[0, 3, 0] == -0.25


def test_varying_kernel_delta():
    rng = np.random.default_rng(6)
    H, W = 6, 6
    w = rng.random((H, W, 3, 3))
    s = IncrementalState.from_tonemapped(rng.random((1, H, W)), rng.random((H, W)),
                                         PerceptualModel(g=Kernel(w)))
    for _ in range(20):
        n = int(rng.integers(1, 4))
        pix = rng.choice(H * W, n, replace=False)
        upd = [((int(p) // W, int(p) % W), rng.normal()) for p in pix]
        assert s.varying_delta_update(upd) == pytest.approx(brute_delta(s, upd), rel=1e-9, abs=1e-12)
    assert s.varying_delta_update([((0, 0), 0.0)]) == 0.0


def test_spatially_constant_table_reduces_to_uniform():
    rng = np.random.default_rng(7)
    w = rng.random((3, 3))
    H, W = 5, 7
    X, ref = rng.random((1, H, W)), rng.random((H, W))
    su = IncrementalState.from_tonemapped(X, ref, PerceptualModel(g=Kernel(w)))
    sv = IncrementalState.from_tonemapped(X, ref, PerceptualModel(g=Kernel(np.broadcast_to(w, (H, W, 3, 3)))))
    upd = [((2, 3), 0.4), ((2, 4), -0.2)]
    assert sv.varying_delta_update(upd) == pytest.approx(su.trial_delta_update(upd), rel=1e-12)
    with pytest.raises(ValueError):
        su.varying_delta_update(upd)


def test_reflect_mode_goes_direct():
    rng = np.random.default_rng(8)
    m = PerceptualModel(boundary=REFLECT)
    X = rng.random((1, 6, 6))
    ref = rng.random((6, 6))
    s = make_state(X, ref, m)
    assert isinstance(s, DirectState)
    upd = [((2, 2), 0.3)]
    X2 = X.copy()
    X2[0, 2, 2] += 0.3
    expect = perceptual_energy(X2[0], ref, m) - perceptual_energy(X[0], ref, m)
    assert s.trial_delta_update(upd) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        init_state(binomial_kernel(), X[0], ref, m)


def test_memory_guard():
    from pet import incremental

    old = incremental.PAIR_TABLE_LIMIT_BYTES
    try:
        incremental.PAIR_TABLE_LIMIT_BYTES = 1000
        with pytest.raises(MemoryError):
            precompute_autocorr(Kernel(np.ones((8, 8, 3, 3))))
    finally:
        incremental.PAIR_TABLE_LIMIT_BYTES = old


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(1, 12), st.integers(0, 2),
       st.integers(1, 4), st.booleans(), st.integers(1, 3))
def test_delta_matches_brute_force_property(seed, H, W, K, n, varying, C):
    rng = np.random.default_rng(seed)
    n = min(n, H * W)
    if varying:
        w = rng.normal(size=(H, W, 2 * K + 1, 2 * K + 1))
    else:
        w = rng.normal(size=(2 * K + 1, 2 * K + 1))
    lam = rng.random(C)
    m = PerceptualModel(g=Kernel(w), h=gaussian_kernel(1.0, 1), channel_weights=lam)
    s = IncrementalState.from_tonemapped(rng.normal(size=(C, H, W)), rng.normal(size=(H, W, C)), m)
    pix = rng.choice(H * W, n, replace=False)
    upd = [((int(p) // W, int(p) % W), rng.normal(size=C)) for p in pix]
    d = s.trial_delta_update(upd)
    ref = brute_delta(s, upd)
    assert d == pytest.approx(ref, rel=1e-9, abs=1e-12 * max(1.0, s.energy))
    s.accept(upd, d)
    assert s.energy == pytest.approx(s.brute_energy(), rel=1e-9, abs=1e-12)
