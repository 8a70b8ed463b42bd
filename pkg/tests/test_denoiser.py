import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from narmsr.denoiser import DenoiserSpec, denoise, nonlocal_means
from narmsr.imagecore import InvalidInputError

from oracles import mirror


def test_identity_is_bitwise(rng):
    x = rng.random((9, 9))
    out = denoise(DenoiserSpec("identity", 0.5), x)
    assert np.array_equal(out, x) and out is not x


@pytest.mark.parametrize("kind", ["identity", "gaussian", "nlm"])
def test_constant_images_are_preserved(kind):
    x = np.full((12, 12), 0.37)
    np.testing.assert_allclose(denoise(DenoiserSpec(kind, 0.8), x), 0.37, atol=1e-14)


def test_nlm_reduces_variance_of_noisy_flat_image():
    rng = np.random.default_rng(5)
    x = 0.5 + 0.05 * rng.standard_normal((32, 32))
    out = denoise(DenoiserSpec("nlm", 0.1), x)
    assert out.var() < x.var()


def test_nlm_matches_pixel_loop(rng):
    x = rng.random((9, 10))
    h, p, w = 0.2, 3, 5
    expected = np.zeros_like(x)
    for i in range(9):
        for j in range(10):
            num = den = 0.0
            for a in range(i - 2, i + 3):
                for b in range(j - 2, j + 3):
                    d = np.mean([(x[mirror(i + u, 9), mirror(j + v, 10)] - x[mirror(a + u, 9), mirror(b + v, 10)]) ** 2
                                 for u in (-1, 0, 1) for v in (-1, 0, 1)])
                    wt = np.exp(-d / h**2)
                    num += wt * x[mirror(a, 9), mirror(b, 10)]
                    den += wt
            expected[i, j] = num / den
    np.testing.assert_allclose(nonlocal_means(x, h, p, w), expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.floats(0.01, 1.0))
def test_nlm_output_is_convex_combination(seed, h):
    x = np.random.default_rng(seed).random((10, 10))
    out = nonlocal_means(x, h)
    assert out.min() >= x.min() - 1e-12 and out.max() <= x.max() + 1e-12


def test_gaussian_is_linear(rng):
    x, z = rng.random((2, 12, 12))
    spec = DenoiserSpec("gaussian", 1.2)
    np.testing.assert_allclose(denoise(spec, 2 * x - z), 2 * denoise(spec, x) - denoise(spec, z), atol=1e-13)


@pytest.mark.parametrize("kind", ["gaussian", "nlm"])
def test_vanishing_strength_is_continuous(kind, rng):
    x = rng.random((12, 12))
    assert np.max(np.abs(denoise(DenoiserSpec(kind, 1e-6), x) - x)) < 1e-3


def test_schedule():
    spec = DenoiserSpec("nlm", 0.04)
    assert spec.at_stage(0, 0.5).strength == 0.04
    assert spec.at_stage(3, 0.5).strength == pytest.approx(0.005)


@pytest.mark.parametrize("kind, strength", [("bm3d", 0.1), ("nlm", -0.1)])
def test_invalid_spec(kind, strength):
    with pytest.raises(InvalidInputError):
        DenoiserSpec(kind, strength)


def test_rejects_colour():
    with pytest.raises(InvalidInputError):
        denoise(DenoiserSpec(), np.zeros((8, 8, 3)))
