import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pet.synth import Linear, SceneSpec, Step, generate


def test_constant_zero_noise():
    sc = generate(SceneSpec("constant", 8, 8, M=3, amplitude=0.0))
    assert np.all(sc.stack.values == 0.5)
    assert np.all(sc.reference == 0.5)


def test_binary_mean():
    sc = generate(SceneSpec("binary", 64, 64, M=1, density=0.5, seed=3))
    assert set(np.unique(sc.stack.values)) <= {0.0, 1.0}
    assert abs(sc.stack.values.mean() - 0.5) <= 0.02


def test_heaviside_reference():
    assert Step(0.3).reference == pytest.approx(0.7)
    sc = generate(SceneSpec("heaviside_bank", 4, 4, M=8, count=3, seed=1))
    assert sc.stack.values.shape == (8, 4, 4, 3)
    for t, f in enumerate(sc.integrands):
        assert np.all(sc.reference[:, :, t] == 1.0 - f.a)
        np.testing.assert_array_equal(sc.stack.values[:, :, :, t], np.moveaxis(f(sc.samples), 2, 0))


def test_sine_scenes():
    sc = generate(SceneSpec("sine_mul", 16, 16, M=2, seed=2))
    y, x = np.indices((16, 16))
    alpha = 0.5 * (1 + np.sin(x + y))
    np.testing.assert_allclose(sc.reference, alpha)
    np.testing.assert_allclose(sc.aux.alpha, np.maximum(alpha, 1e-3))
    w = sc.stack.values / np.maximum(alpha, 1e-300)
    assert w[:, alpha > 0.01].min() >= 0 and w[:, alpha > 0.01].max() <= 2
    sa = generate(SceneSpec("sine_add", 16, 16, M=2, seed=2))
    np.testing.assert_allclose(sa.reference, alpha)
    np.testing.assert_allclose(sa.aux.beta, alpha)


@pytest.mark.parametrize("kind,noise", [("constant", "uniform"), ("constant", "gaussian"),
                                        ("sine_mul", "uniform"), ("sine_add", "gaussian"),
                                        ("ramp", "uniform"), ("binary", "uniform"),
                                        ("linear_integrand", "uniform")])
def test_unbiased_means(kind, noise):
    M = 256
    sc = generate(SceneSpec(kind, 8, 8, M=M, noise=noise, seed=5))
    v = sc.stack.values
    sd = v.std(axis=0, ddof=1)
    err = np.abs(v.mean(axis=0) - sc.reference)
    # 3 sigma per pixel plus a small allowance for the 64 simultaneous tests
    assert np.all(err <= 4 * sd / np.sqrt(M) + 1e-12)


def test_linear_integrand():
    assert Linear().reference == 0.5
    sc = generate(SceneSpec("linear_integrand", 4, 4, M=5))
    np.testing.assert_array_equal(np.moveaxis(sc.stack.values, 0, 2), sc.samples)


def test_spec_validation():
    with pytest.raises(ValueError):
        SceneSpec("teapot")
    with pytest.raises(ValueError):
        SceneSpec("constant", noise="pink")
    with pytest.raises(ValueError):
        SceneSpec("constant", width=0)
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"kind": "constant", "colour": 1})
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"width": 3})
    with pytest.raises(ValueError):
        generate(SceneSpec("sine_add", noise="binary"))


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["constant", "sine_mul", "sine_add", "ramp", "binary", "heaviside_bank"]),
       st.integers(0, 2**32 - 1))
def test_regeneration_is_bit_identical(kind, seed):
    a = generate(SceneSpec(kind, 6, 5, M=3, seed=seed))
    b = generate(SceneSpec(kind, 6, 5, M=3, seed=seed))
    np.testing.assert_array_equal(a.stack.values, b.stack.values)
    np.testing.assert_array_equal(a.reference, b.reference)
    assert SceneSpec.from_dict(SceneSpec(kind, seed=seed).to_dict()) == SceneSpec(kind, seed=seed)
