import math

import numpy as np
import pytest

from narmsr.degradation import (
    MODES,
    ConfigurationError,
    DegradationOp,
    GaussianKernel,
    KernelCodebook,
    bicubic_downsample,
    blur,
    direct_downsample,
    kernel_stretch,
    make_gaussian_kernel,
    materialize,
    pca_fit,
    read_codebook,
    read_kernel,
    sample_kernel_widths,
    write_codebook,
    write_kernel,
)
from narmsr.imagecore import InvalidInputError

from oracles import bicubic_matrix_1d, blur_matrix_2d, decimation_matrix, dense_operator


def make_op(mode, scale, width=1.3):
    return DegradationOp(mode, scale, make_gaussian_kernel(width) if mode == "blur_direct" else None)


# -- kernels ----------------------------------------------------------------

def test_kernel_delta_limit():
    k = make_gaussian_kernel(1e-3, 21)
    assert k.taps[10, 10] == pytest.approx(1.0, abs=1e-15)
    assert k.taps.sum() - k.taps[10, 10] < 1e-15


def test_kernel_mass_near_centre():
    k = make_gaussian_kernel(0.5, 21)
    # analytic oracle: separable sampled Gaussian, mass of |i|,|j| <= 1
    g = np.array([math.exp(-(t * t) / (2 * 0.25)) for t in range(-10, 11)])
    central = (g[9:12].sum() / g.sum()) ** 2
    assert k.taps[9:12, 9:12].sum() == pytest.approx(central, rel=1e-12)
    assert central > 0.98


@pytest.mark.parametrize("width", [0.2, 0.5, 1.3, 2.6, 4.0])
def test_kernel_symmetries(width):
    k = make_gaussian_kernel(width)
    assert k.taps.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(k.taps >= 0)
    np.testing.assert_allclose(k.taps, np.rot90(k.taps, 2), atol=1e-17)
    np.testing.assert_allclose(k.taps, np.rot90(k.taps, 1), atol=1e-17)


@pytest.mark.parametrize("width, size", [(0.0, 21), (-1.0, 21), (1.0, 20)])
def test_kernel_errors(width, size):
    with pytest.raises(InvalidInputError):
        make_gaussian_kernel(width, size)


# -- downsampling -----------------------------------------------------------

@pytest.mark.parametrize("s", [2, 3, 4])
def test_bicubic_constant(s):
    out = bicubic_downsample(np.full((24, 24), 0.37), s)
    assert out.shape == (24 // s, 24 // s)
    np.testing.assert_allclose(out, 0.37, atol=1e-14)


def test_bicubic_stripes_attenuated():
    stripes = np.tile(np.array([0.0, 1.0] * 8), (16, 1))
    out = bicubic_downsample(stripes, 2)
    expected_row = bicubic_matrix_1d(16, 2) @ stripes[0]
    np.testing.assert_allclose(out[0], expected_row, atol=1e-14)
    assert out.mean() == pytest.approx(0.5, abs=0.05)
    assert np.ptp(out) < 1.0


def test_bicubic_operator_rows_sum_to_one():
    A = materialize(lambda z: bicubic_downsample(z, 2), (8, 8))
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-14)
    np.testing.assert_allclose(A, dense_operator(make_op("bicubic", 2), 8, 8), atol=1e-14)


def test_direct_identity_and_checkerboard():
    img = np.random.default_rng(0).random((6, 6))
    np.testing.assert_array_equal(direct_downsample(img, 1), img)
    checker = np.indices((8, 8)).sum(axis=0) % 2 * 1.0
    out = direct_downsample(checker, 2)
    assert np.all(out == out[0, 0])


def test_direct_ramp_scale3():
    ramp = np.arange(36, dtype=float).reshape(6, 6)
    np.testing.assert_array_equal(direct_downsample(ramp, 3), [[0, 3], [18, 21]])


@pytest.mark.parametrize("scale", [1.5, 0, -2])
def test_bad_scale(scale):
    with pytest.raises(InvalidInputError):
        direct_downsample(np.zeros((8, 8)), scale)


# -- operator ---------------------------------------------------------------

def test_missing_kernel_is_configuration_error():
    with pytest.raises(ConfigurationError):
        DegradationOp("blur_direct", 2)
    with pytest.raises(ConfigurationError):
        DegradationOp("nearest", 2)


def test_direct_scale1_identity(rng):
    x = rng.random((5, 7))
    np.testing.assert_array_equal(DegradationOp("direct", 1).apply(x), x)


def test_delta_kernel_blur_equals_direct(rng):
    x = rng.random((12, 12))
    delta = GaussianKernel(np.pad([[1.0]], 10), 0.0)
    np.testing.assert_array_equal(
        DegradationOp("blur_direct", 2, delta).apply(x), DegradationOp("direct", 2).apply(x)
    )


def test_blur_direct_matches_dense_composition():
    k = make_gaussian_kernel(1.3, 5)
    op = DegradationOp("blur_direct", 2, k)
    A = materialize(op.apply, (12, 12))
    D = np.kron(decimation_matrix(12, 2), decimation_matrix(12, 2))
    np.testing.assert_allclose(A, D @ blur_matrix_2d(12, 12, k.taps), atol=1e-14)


def test_direct_adjoint_of_single_pixel():
    out = DegradationOp("direct", 2).adjoint(np.array([[1.0]]))
    np.testing.assert_array_equal(out, [[1, 0], [0, 0]])


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("scale", [2, 3, 4])
def test_adjoint_matches_dense_transpose(mode, scale):
    op = make_op(mode, scale)
    n = 12 if scale == 3 else 8
    A = dense_operator(op, n, n)
    y = np.random.default_rng(scale).random(op.lr_shape((n, n)))
    np.testing.assert_allclose(op.adjoint(y, (n, n)).reshape(-1), A.T @ y.reshape(-1), atol=1e-13)
    np.testing.assert_allclose(materialize(op.apply, (n, n)), A, atol=1e-14)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("scale", [2, 3, 4])
def test_dot_product_identity(mode, scale, rng):
    op = make_op(mode, scale)
    for _ in range(10):
        x = rng.standard_normal((16, 16))
        y = rng.standard_normal(op.lr_shape(x.shape))
        lhs = np.vdot(op.apply(x), y)
        rhs = np.vdot(x, op.adjoint(y, x.shape))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(x) * np.linalg.norm(y)


@pytest.mark.parametrize("mode", MODES)
def test_linearity(mode, rng):
    op = make_op(mode, 2)
    x, z = rng.standard_normal((2, 16, 16))
    a, b = 0.7, -1.9
    np.testing.assert_allclose(op.apply(a * x + b * z), a * op.apply(x) + b * op.apply(z), atol=1e-12)


def test_adjoint_shape_mismatch():
    with pytest.raises(InvalidInputError):
        DegradationOp("direct", 2).adjoint(np.zeros((4, 4)), (10, 8))


def test_blur_preserves_constant_level():
    k = make_gaussian_kernel(2.6)
    out = blur(np.full((16, 16), 0.42), k.taps)
    assert abs(out.mean() - 0.42) < 1e-12


def test_colour_images_are_processed_per_channel(rng):
    op = make_op("blur_direct", 2)
    x = rng.random((16, 16, 3))
    out = op.apply(x)
    assert out.shape == (8, 8, 3)
    np.testing.assert_allclose(out[..., 1], op.apply(x[..., 1]))


@pytest.mark.parametrize("mode", MODES)
def test_interpolation_is_consistent_with_sampling(mode):
    op = make_op(mode, 2)
    y = np.full((6, 6), 0.3)
    np.testing.assert_allclose(op.interpolate(y), 0.3, atol=1e-14)
    if mode == "direct":
        ramp = np.add.outer(np.arange(6.0), 2 * np.arange(6.0)) / 20
        # cubic interpolation passes through the samples on the decimation grid
        np.testing.assert_allclose(op.apply(op.interpolate(ramp)), ramp, atol=1e-14)


# -- PCA codebook -----------------------------------------------------------

def test_pca_identical_kernels_reconstruct_from_mean():
    kernels = [make_gaussian_kernel(1.0, 7)] * 5
    cb = pca_fit(kernels, 3)
    for k in kernels:
        np.testing.assert_allclose(cb.reconstruct(cb.project(k)), k.vector(), atol=1e-15)


def test_pca_orthonormal_ordered_signed():
    kernels = [make_gaussian_kernel(w) for w in sample_kernel_widths(200, 0.2, 3.0, seed=1)]
    cb = pca_fit(kernels, 6)
    np.testing.assert_allclose(cb.basis @ cb.basis.T, np.eye(6), atol=1e-8)
    assert np.all(np.diff(cb.eigenvalues) <= 0)
    for row in cb.basis:
        assert row[np.argmax(np.abs(row))] > 0
    # projection energy is non-increasing in component index
    coeffs = np.stack([cb.project(k) for k in kernels])
    energy = (coeffs**2).sum(axis=0)
    assert np.all(np.diff(energy) <= 1e-15)


def test_pca_errors():
    kernels = [make_gaussian_kernel(1.0, 3)] * 4
    with pytest.raises(InvalidInputError):
        pca_fit(kernels, 9)
    with pytest.raises(InvalidInputError):
        pca_fit(kernels[:2], 3)
    with pytest.raises(InvalidInputError):
        pca_fit(kernels + [make_gaussian_kernel(1.0, 5)], 2)


def test_stretch_of_mean_kernel_is_zero():
    kernels = [make_gaussian_kernel(w, 9) for w in (0.5, 1.0, 1.5, 2.0)]
    cb = pca_fit(kernels, 2)
    mean_kernel = GaussianKernel(cb.mean.reshape(9, 9), 0.0)
    assert np.all(kernel_stretch(mean_kernel, cb, 4, 5) == 0)


def test_stretch_broadcast_and_roundtrip():
    kernels = [make_gaussian_kernel(w, 21) for w in sample_kernel_widths(100, 0.2, 3.0, seed=3)]
    cb = pca_fit(kernels, 10)
    k = make_gaussian_kernel(1.1)
    stretched = kernel_stretch(k, cb, 6, 7)
    coeffs = cb.project(k)
    assert stretched.shape == (10, 6, 7)
    for j in range(10):
        assert np.all(stretched[j] == coeffs[j])
    recon = cb.reconstruct(stretched[:, 0, 0])
    assert np.linalg.norm(recon - k.vector()) / np.linalg.norm(k.vector()) < 1e-3
    with pytest.raises(InvalidInputError):
        kernel_stretch(make_gaussian_kernel(1.0, 5), cb, 2, 2)


def test_kernel_file_roundtrip(tmp_path):
    k = make_gaussian_kernel(1.3)
    path = tmp_path / "k.txt"
    write_kernel(path, k)
    assert path.read_text().splitlines()[0] == "21 1.3"
    back = read_kernel(path)
    np.testing.assert_array_equal(back.taps, k.taps)
    assert back.width == 1.3


def test_codebook_file_roundtrip(tmp_path):
    kernels = [make_gaussian_kernel(w, 5) for w in (0.3, 0.7, 1.1, 1.9)]
    cb = pca_fit(kernels, 2)
    path = tmp_path / "cb.txt"
    write_codebook(path, cb)
    assert path.read_text().splitlines()[0] == "25 2"
    back = read_codebook(path)
    assert isinstance(back, KernelCodebook)
    np.testing.assert_array_equal(back.basis, cb.basis)
    np.testing.assert_array_equal(back.mean, cb.mean)


def test_malformed_kernel_file(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("3 1.0\n1 2 3\n")
    with pytest.raises(InvalidInputError):
        read_kernel(path)
