"""Image containers, padding, patch access and file I/O.

Images are plain ``numpy.ndarray`` objects of dtype float64 with samples in
[0, 1]. A single-channel image has shape ``(H, W)``; a color image has shape
``(H, W, 3)`` (channel-interleaved, row-major). 8-bit values only exist at the
file boundary.
"""
from __future__ import annotations

from pathlib import Path
from typing import NamedTuple

import numpy as np
from PIL import Image

# BT.601 full-range luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
# full-range (JPEG) RGB -> YCbCr, chroma centred on 0.5
_YCBCR = np.array([
    LUMA_WEIGHTS,
    [-0.168735891647856, -0.331264108352144, 0.5],
    [0.5, -0.418687589158345, -0.081312410841655],
])
_YCBCR_INV = np.linalg.inv(_YCBCR)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


class InvalidInputError(ValueError):
    """Raised when an image operation receives arguments it cannot handle."""


class PatchRef(NamedTuple):
    """A square patch addressed by its center pixel."""

    center_row: int
    center_col: int
    size: int

    @property
    def radius(self) -> int:
        return self.size // 2


def as_image(data, copy: bool = False) -> np.ndarray:
    """Validate ``data`` as an image array and return it as float64."""
    img = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise InvalidInputError(f"image must be 2-D or 3-D, got shape {img.shape}")
    if img.ndim == 3 and img.shape[2] not in (1, 3):
        raise InvalidInputError(f"image must have 1 or 3 channels, got {img.shape[2]}")
    if not np.all(np.isfinite(img)):
        raise InvalidInputError("image contains non-finite samples")
    return img


def rgb_to_luminance(img: np.ndarray) -> np.ndarray:
    """Return the BT.601 full-range luma ``Y = 0.299R + 0.587G + 0.114B``."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {img.shape}")
    return img @ LUMA_WEIGHTS


def to_luminance(img: np.ndarray) -> np.ndarray:
    """Single-channel view of ``img``: luma for RGB, the plane itself otherwise."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 3:
        return rgb_to_luminance(img)
    if img.ndim == 3:
        return img[..., 0]
    return img


def rgb_to_ycbcr(img: np.ndarray) -> np.ndarray:
    """Full-range YCbCr with ``Cb``/``Cr`` offset by 0.5 so all planes lie in [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {img.shape}")
    out = img @ _YCBCR.T
    out[..., 1:] += 0.5
    return out


def ycbcr_to_rgb(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`rgb_to_ycbcr`."""
    img = np.array(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InvalidInputError(f"expected a 3-channel image, got shape {img.shape}")
    img[..., 1:] -= 0.5
    return img @ _YCBCR_INV.T


def reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Map arbitrary integer indices into ``[0, n)`` by whole-sample symmetric reflection.

    The extension has period ``2n - 2``, so this also works for offsets larger
    than the signal (repeated mirroring).
    """
    idx = np.asarray(idx)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def pad_symmetric(img: np.ndarray, margin: int) -> np.ndarray:
    """Pad the two spatial axes by ``margin`` using whole-sample symmetric reflection.

    ``[a, b, c]`` with ``margin=1`` becomes ``[b, a, b, c, b]``; the edge sample
    is never duplicated.
    """
    img = np.asarray(img, dtype=np.float64)
    if margin < 0:
        raise InvalidInputError(f"margin must be non-negative, got {margin}")
    if margin >= min(img.shape[:2]):
        raise InvalidInputError(
            f"margin {margin} must be smaller than the image side {min(img.shape[:2])}"
        )
    if margin == 0:
        return img.copy()
    pad = [(margin, margin), (margin, margin)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode="reflect")


def crop_border(img: np.ndarray, margin: int) -> np.ndarray:
    """Return the central ``(H - 2m) x (W - 2m)`` region."""
    img = np.asarray(img)
    if margin < 0 or 2 * margin >= min(img.shape[:2]):
        raise InvalidInputError(f"cannot crop {margin} pixels from an image of shape {img.shape}")
    if margin == 0:
        return img
    return img[margin:-margin, margin:-margin]


def extract_patch(img: np.ndarray, p: PatchRef, padded: bool = False) -> np.ndarray:
    """Vectorize the patch ``p`` in row-major order (channels innermost).

    With ``padded=True`` the image is first extended by symmetric padding so
    patches may overhang the border; otherwise an overhanging patch is an
    error. The row-major order here fixes the layout of patch vectors used by
    the NARM weight solve.
    """
    img = np.asarray(img, dtype=np.float64)
    if p.size < 3 or p.size % 2 == 0:
        raise InvalidInputError(f"patch size must be odd and >= 3, got {p.size}")
    r = p.radius
    h, w = img.shape[:2]
    if padded:
        rows = reflect_indices(np.arange(p.center_row - r, p.center_row + r + 1), h)
        cols = reflect_indices(np.arange(p.center_col - r, p.center_col + r + 1), w)
        if not (0 <= p.center_row < h and 0 <= p.center_col < w) or r >= min(h, w):
            raise InvalidInputError(f"patch {p} cannot be resolved in a {h}x{w} image")
        return img[np.ix_(rows, cols)].reshape(-1)
    top, left = p.center_row - r, p.center_col - r
    if top < 0 or left < 0 or top + p.size > h or left + p.size > w:
        raise InvalidInputError(f"patch {p} lies outside a {h}x{w} image")
    return img[top:top + p.size, left:left + p.size].reshape(-1)


# -- file I/O -------------------------------------------------------------

def to_uint8(img: np.ndarray) -> np.ndarray:
    """Scale to [0, 255], round half away from zero and clamp."""
    scaled = np.asarray(img, dtype=np.float64) * 255.0
    rounded = np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG/PGM/PPM file as float64 samples ``byte / 255``."""
    path = Path(path)
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
        data = np.asarray(im, dtype=np.uint8)
    return data.astype(np.float64) / 255.0


def write_image(path, img: np.ndarray) -> None:
    """Write ``img`` as 8-bit; the format follows the file suffix."""
    path = Path(path)
    data = to_uint8(img)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    Image.fromarray(data).save(path)


def list_images(directory) -> list[Path]:
    """Image files in ``directory`` sorted by name."""
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
