"""Degradation operators ``A`` (blur + downsampling), their adjoints, blur
kernel synthesis and PCA dimensionality stretching of kernels.

Three operator modes are supported:

``bicubic``
    antialiased Keys cubic filter (a = -0.5) followed by decimation, the
    usual "bicubic downsampling" of SR benchmarks;
``direct``
    plain decimation ``out[r, c] = in[s*r, s*c]`` without prefiltering;
``blur_direct``
    convolution with a Gaussian kernel then direct decimation.

All boundaries use whole-sample symmetric extension. Every operator is an
explicit linear map, so ``adjoint`` is the exact transpose.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .imagecore import InvalidInputError, reflect_indices

MODES = ("bicubic", "direct", "blur_direct")
DEFAULT_KERNEL_SIZE = 21
# PCA dimension used for each scale factor in the multi-kernel setting
PCA_DIMS = {2: 6, 3: 8, 4: 10}


class ConfigurationError(ValueError):
    """Raised when an operator is assembled from inconsistent parts."""


def cubic(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel."""
    t = np.abs(np.asarray(t, dtype=np.float64))
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def _check_scale(scale) -> int:
    if isinstance(scale, bool) or not float(scale).is_integer() or int(scale) < 1:
        raise InvalidInputError(f"scale must be a positive integer, got {scale!r}")
    return int(scale)


@functools.lru_cache(maxsize=64)
def bicubic_matrix(n: int, scale: int) -> np.ndarray:
    """Dense ``(n // scale, n)`` matrix of 1-D antialiased bicubic downsampling.

    Output sample ``o`` is centred on input coordinate ``(o + 0.5) * s - 0.5``;
    the cubic kernel is stretched by ``s`` and taps falling outside the signal
    are folded back by symmetric reflection. Rows sum to one.
    """
    m = n // scale
    mat = np.zeros((m, n))
    for o in range(m):
        u = (o + 0.5) * scale - 0.5
        taps = np.arange(int(np.floor(u - 2 * scale)), int(np.ceil(u + 2 * scale)) + 1)
        w = cubic((u - taps) / scale)
        w /= w.sum()
        np.add.at(mat[o], reflect_indices(taps, n), w)
    mat.setflags(write=False)
    return mat


@functools.lru_cache(maxsize=64)
def interpolation_matrix(m: int, scale: int, offset: float) -> np.ndarray:
    """Dense ``(m * scale, m)`` Keys cubic interpolation matrix.

    Low-resolution sample ``r`` sits at high-resolution coordinate
    ``scale * r + offset``.
    """
    n = m * scale
    mat = np.zeros((n, m))
    for p in range(n):
        t = (p - offset) / scale
        base = int(np.floor(t))
        taps = np.arange(base - 1, base + 3)
        w = cubic(t - taps)
        w /= w.sum()
        np.add.at(mat[p], reflect_indices(taps, m), w)
    mat.setflags(write=False)
    return mat


def _per_channel(fn, img: np.ndarray) -> np.ndarray:
    if img.ndim == 3:
        return np.stack([fn(img[..., c]) for c in range(img.shape[2])], axis=-1)
    return fn(img)


def bicubic_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Antialiased bicubic downsampling to ``floor(H/s) x floor(W/s)``."""
    s = _check_scale(scale)
    img = np.asarray(img, dtype=np.float64)
    rows = bicubic_matrix(img.shape[0], s)
    cols = bicubic_matrix(img.shape[1], s)
    return _per_channel(lambda p: rows @ p @ cols.T, img)


def direct_downsample(img: np.ndarray, scale: int) -> np.ndarray:
    """Decimate with the top-left anchor: ``out[r, c] = img[s*r, s*c]``."""
    s = _check_scale(scale)
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[0] // s, img.shape[1] // s
    return img[: h * s : s, : w * s : s].copy()


def _direct_adjoint(y: np.ndarray, scale: int, hr_shape: tuple[int, ...]) -> np.ndarray:
    out = np.zeros(hr_shape)
    h, w = y.shape[:2]
    out[: h * scale : scale, : w * scale : scale] = y
    return out


# -- kernels --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GaussianKernel:
    """Normalized square blur kernel; ``width`` is the Gaussian standard deviation."""

    taps: np.ndarray
    width: float

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
            raise InvalidInputError(f"kernel taps must be an odd square array, got {taps.shape}")
        taps = taps.copy()
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def size(self) -> int:
        return self.taps.shape[0]

    def vector(self) -> np.ndarray:
        return self.taps.reshape(-1)


def make_gaussian_kernel(width: float, size: int = DEFAULT_KERNEL_SIZE) -> GaussianKernel:
    """Isotropic Gaussian ``exp(-r^2 / (2 width^2))`` on a ``size x size`` grid, summing to 1."""
    if not width > 0:
        raise InvalidInputError(f"kernel width must be positive, got {width}")
    if size < 1 or size % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd, got {size}")
    c = (size - 1) / 2
    r2 = (np.arange(size) - c) ** 2
    # log-domain so tiny widths still give a clean delta
    logk = -(r2[:, None] + r2[None, :]) / (2.0 * width * width)
    taps = np.exp(logk - logk.max())
    return GaussianKernel(taps / taps.sum(), float(width))


def blur(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Convolve with ``taps`` under whole-sample symmetric boundary extension."""
    img = np.asarray(img, dtype=np.float64)
    m = taps.shape[0] // 2
    rows = reflect_indices(np.arange(-m, img.shape[0] + m), img.shape[0])
    cols = reflect_indices(np.arange(-m, img.shape[1] + m), img.shape[1])

    def one(plane):
        return signal.convolve(plane[np.ix_(rows, cols)], taps, mode="valid", method="direct")

    return _per_channel(one, img)


def blur_adjoint(img: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Exact transpose of :func:`blur` (correlation, then folding of the padding)."""
    img = np.asarray(img, dtype=np.float64)
    m = taps.shape[0] // 2
    h, w = img.shape[:2]
    rows = reflect_indices(np.arange(-m, h + m), h)
    cols = reflect_indices(np.arange(-m, w + m), w)

    def one(plane):
        full = signal.correlate(plane, taps, mode="full", method="direct")
        out = np.zeros((h, w))
        np.add.at(out, (rows[:, None], cols[None, :]), full)
        return out

    return _per_channel(one, img)


# -- operator -------------------------------------------------------------

@dataclass(frozen=True)
class DegradationOp:
    """The linear degradation ``y = A x`` for one experimental setting."""

    mode: str
    scale: int
    kernel: GaussianKernel | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown degradation mode {self.mode!r}; expected one of {MODES}")
        object.__setattr__(self, "scale", _check_scale(self.scale))
        if self.mode == "blur_direct" and self.kernel is None:
            raise ConfigurationError("blur_direct mode requires a blur kernel")

    def lr_shape(self, hr_shape) -> tuple[int, ...]:
        return (hr_shape[0] // self.scale, hr_shape[1] // self.scale) + tuple(hr_shape[2:])

    def hr_shape(self, lr_shape) -> tuple[int, ...]:
        return (lr_shape[0] * self.scale, lr_shape[1] * self.scale) + tuple(lr_shape[2:])

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.mode == "bicubic":
            return bicubic_downsample(x, self.scale)
        if self.mode == "blur_direct":
            x = blur(x, self.kernel.taps)
        return direct_downsample(x, self.scale)

    def adjoint(self, y: np.ndarray, hr_shape=None) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        shape = tuple(hr_shape) if hr_shape is not None else self.hr_shape(y.shape)
        if self.lr_shape(shape) != y.shape:
            raise InvalidInputError(
                f"observation shape {y.shape} does not match high-resolution shape {shape}"
            )
        s = self.scale
        if self.mode == "bicubic":
            rows = bicubic_matrix(shape[0], s)
            cols = bicubic_matrix(shape[1], s)
            return _per_channel(lambda p: rows.T @ p @ cols, y)
        out = _direct_adjoint(y, s, shape)
        if self.mode == "blur_direct":
            out = blur_adjoint(out, self.kernel.taps)
        return out

    def normal(self, x: np.ndarray) -> np.ndarray:
        """``A^T A x``."""
        return self.adjoint(self.apply(x), x.shape)

    @property
    def sample_offset(self) -> float:
        """High-resolution coordinate of low-resolution sample 0."""
        return (self.scale - 1) / 2 if self.mode == "bicubic" else 0.0

    def interpolate(self, y: np.ndarray, centered: bool = False) -> np.ndarray:
        """Bicubic upsampling of ``y`` aligned with this operator's sampling grid.

        ``centered=True`` instead uses the pixel-centre convention of common
        image resizers, which is misregistered by ``(scale-1)/2`` HR pixels for
        the decimating modes.
        """
        y = np.asarray(y, dtype=np.float64)
        offset = (self.scale - 1) / 2 if centered else self.sample_offset
        rows = interpolation_matrix(y.shape[0], self.scale, offset)
        cols = interpolation_matrix(y.shape[1], self.scale, offset)
        return _per_channel(lambda p: rows @ p @ cols.T, y)

    def is_dihedral_equivariant(self, hr_shape) -> bool:
        """Whether flips/rotations of the HR grid commute with this operator."""
        if hr_shape[0] % self.scale or hr_shape[1] % self.scale:
            return False
        if hr_shape[0] != hr_shape[1]:
            return False
        if self.mode == "bicubic":
            return True
        # top-left decimation is only flip-symmetric when s divides (n - 1)
        return self.scale == 1


def apply(op: DegradationOp, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def apply_adjoint(op: DegradationOp, y: np.ndarray, hr_shape=None) -> np.ndarray:
    return op.adjoint(y, hr_shape)


def materialize(fn, shape) -> np.ndarray:
    """Dense matrix of a linear map on arrays of ``shape`` (column j = fn(e_j))."""
    n = int(np.prod(shape))
    cols = []
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        cols.append(np.asarray(fn(e.reshape(shape))).reshape(-1))
    return np.stack(cols, axis=1)


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Additive white Gaussian noise; ``sigma = 0`` returns an unchanged copy."""
    img = np.asarray(img, dtype=np.float64)
    if sigma < 0:
        raise InvalidInputError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    return img + sigma * rng.standard_normal(img.shape)


# -- PCA codebook ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelCodebook:
    """PCA basis of vectorized ``k x k`` kernels. ``basis`` has shape ``(d, k^2)``."""

    mean: np.ndarray
    basis: np.ndarray
    eigenvalues: np.ndarray | None = None

    @property
    def d(self) -> int:
        return self.basis.shape[0]

    @property
    def k2(self) -> int:
        return self.basis.shape[1]

    def project(self, kernel: GaussianKernel) -> np.ndarray:
        vec = kernel.vector()
        if vec.size != self.k2:
            raise InvalidInputError(f"kernel has {vec.size} taps, codebook expects {self.k2}")
        return self.basis @ (vec - self.mean)

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        return self.basis.T @ coeffs + self.mean


def pca_fit(kernels, d: int) -> KernelCodebook:
    """Fit a ``d``-dimensional PCA codebook to a list of equally sized kernels.

    Rows of the basis are ordered by decreasing eigenvalue of the sample
    covariance; each row is signed so that its largest-magnitude entry is
    positive.
    """
    kernels = list(kernels)
    if not kernels:
        raise InvalidInputError("need at least one kernel")
    k2 = kernels[0].taps.size
    if any(k.taps.size != k2 for k in kernels):
        raise InvalidInputError("all kernels must have the same size")
    if not 1 <= d < k2:
        raise InvalidInputError(f"d must satisfy 1 <= d < k^2 = {k2}, got {d}")
    if len(kernels) < d:
        raise InvalidInputError(f"need at least d={d} kernels, got {len(kernels)}")
    data = np.stack([k.vector() for k in kernels])
    mean = data.mean(axis=0)
    centred = data - mean
    cov = centred.T @ centred / len(kernels)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:d]
    basis = evecs[:, order].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1
    return KernelCodebook(mean, basis, evals[order])


def kernel_stretch(kernel: GaussianKernel, codebook: KernelCodebook, height: int, width: int) -> np.ndarray:
    """Project ``kernel`` on the codebook and broadcast to a ``(d, H, W)`` map."""
    coeffs = codebook.project(kernel)
    return np.broadcast_to(coeffs[:, None, None], (codebook.d, height, width)).copy()


def sample_kernel_widths(n: int, low: float, high: float, seed: int) -> np.ndarray:
    """``n`` widths drawn uniformly from ``[low, high]``."""
    if not 0 < low <= high:
        raise InvalidInputError(f"invalid width range [{low}, {high}]")
    if n < 1:
        raise InvalidInputError(f"need a positive kernel count, got {n}")
    return np.random.default_rng(seed).uniform(low, high, size=n)


# -- text formats ---------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_kernel(path, kernel: GaussianKernel) -> None:
    """Header ``"size width"`` followed by ``size`` rows of taps."""
    lines = [f"{kernel.size} {float(kernel.width)!r}"]
    lines += [_fmt(row) for row in kernel.taps]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kernel(path) -> GaussianKernel:
    lines = Path(path).read_text().split("\n")
    try:
        size_s, width_s = lines[0].split()
        size = int(size_s)
        taps = np.array([[float(v) for v in line.split()] for line in lines[1 : 1 + size]])
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"malformed kernel file {path}: {exc}") from None
    if taps.shape != (size, size):
        raise InvalidInputError(f"kernel file {path} declares size {size} but holds {taps.shape}")
    return GaussianKernel(taps, float(width_s))


def write_codebook(path, codebook: KernelCodebook) -> None:
    """Header ``"k2 d"``, the mean on one line, then ``d`` basis rows."""
    lines = [f"{codebook.k2} {codebook.d}", _fmt(codebook.mean)]
    lines += [_fmt(row) for row in codebook.basis]
    Path(path).write_text("\n".join(lines) + "\n")


def read_codebook(path) -> KernelCodebook:
    lines = [ln for ln in Path(path).read_text().split("\n") if ln.strip()]
    try:
        k2, d = (int(v) for v in lines[0].split())
        mean = np.array([float(v) for v in lines[1].split()])
        basis = np.array([[float(v) for v in ln.split()] for ln in lines[2 : 2 + d]])
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"malformed codebook file {path}: {exc}") from None
    if mean.shape != (k2,) or basis.shape != (d, k2):
        raise InvalidInputError(f"codebook file {path} is inconsistent with its header")
    return KernelCodebook(mean, basis)
