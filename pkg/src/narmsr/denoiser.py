"""Plug-in denoisers used for the auxiliary-variable update ``v = Denoise(x)``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import InvalidInputError

KINDS = ("identity", "gaussian", "nlm")

NLM_PATCH = 5
NLM_WINDOW = 11


@dataclass(frozen=True)
class DenoiserSpec:
    """Denoiser kind and strength.

    ``strength`` is the Gaussian standard deviation in pixels for
    ``gaussian`` and the filtering parameter ``h`` for ``nlm``. A strength of
    zero turns every kind into the identity.
    """

    kind: str = "nlm"
    strength: float = 0.03

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown denoiser {self.kind!r}; expected one of {KINDS}")
        if not self.strength >= 0:
            raise InvalidInputError(f"denoiser strength must be non-negative, got {self.strength}")

    def at_stage(self, stage: int, decay: float) -> "DenoiserSpec":
        """Geometric schedule ``strength * decay**stage``."""
        return DenoiserSpec(self.kind, self.strength * decay**stage)


def gaussian_smooth(x: np.ndarray, sigma: float) -> np.ndarray:
    # scipy "mirror" is whole-sample symmetric extension
    return ndimage.gaussian_filter(x, sigma, mode="mirror")


def nonlocal_means(x: np.ndarray, h: float, patch: int = NLM_PATCH, window: int = NLM_WINDOW) -> np.ndarray:
    """Classical NL-means with a ``patch x patch`` similarity window and a
    ``window x window`` search area.

    ``w_ij = exp(-d_ij / h^2)`` where ``d_ij`` is the mean squared difference of
    the patches around ``i`` and ``j``; the output is the normalized weighted
    average, so each pixel is a convex combination of input pixels.
    """
    x = np.asarray(x, dtype=np.float64)
    rows, cols = x.shape
    prad, wrad = patch // 2, window // 2
    margin = prad + wrad
    # numpy's "reflect" is whole-sample symmetric and repeats for large margins
    padded = np.pad(x, margin, mode="reflect")
    core = padded[wrad:wrad + rows + 2 * prad, wrad:wrad + cols + 2 * prad]
    num = np.zeros_like(x)
    den = np.zeros_like(x)
    for dr in range(-wrad, wrad + 1):
        for dc in range(-wrad, wrad + 1):
            shifted = padded[wrad + dr:wrad + dr + rows + 2 * prad, wrad + dc:wrad + dc + cols + 2 * prad]
            dist = ndimage.uniform_filter((core - shifted) ** 2, patch, mode="nearest")
            dist = dist[prad:prad + rows, prad:prad + cols]
            wgt = np.exp(-np.maximum(dist, 0.0) / (h * h))
            num += wgt * shifted[prad:prad + rows, prad:prad + cols]
            den += wgt
    return num / den


def denoise(spec: DenoiserSpec, x: np.ndarray) -> np.ndarray:
    """Apply the denoiser described by ``spec`` to a single-channel image."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"denoisers expect a single-channel image, got shape {x.shape}")
    if spec.kind == "identity" or spec.strength == 0:
        return x.copy()
    if spec.kind == "gaussian":
        return gaussian_smooth(x, spec.strength)
    return nonlocal_means(x, spec.strength)
