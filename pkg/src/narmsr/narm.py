"""Nonlocal autoregressive model (NARM).

Every pixel ``i`` is approximated as a weighted sum of the centre pixels of
its ``J`` most similar patches inside a search window. The ridge-regressed
weights fill row ``i`` of a sparse matrix ``S`` so that ``x ~ S x``.

Two backends produce ``S``:

* :func:`build_narm_matrix` -- explicit patch search and closed-form ridge
  weights ``w = (X^T X + gamma I)^{-1} X^T x_i``;
* :func:`attention_as_S` -- softmax attention over a ``q x q`` block with
  embedded-Gaussian similarity, the fast nonlocal operation.

Patch vectors are row-major over the patch (see :func:`imagecore.extract_patch`),
patches overhanging the border are completed by symmetric padding, and
candidate neighbour centres are restricted to the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import InvalidInputError, PatchRef, extract_patch, pad_symmetric

# ridge systems above this condition number are treated as singular when gamma_reg == 0
MAX_CONDITION = 1e12
# cap on (offsets x pixels) held at once during the batched search
_SEARCH_CHUNK = 4_000_000


class IllConditionedError(np.linalg.LinAlgError):
    """The unregularized AR system is singular; use ``gamma_reg > 0``."""


class UnsupportedConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class NarmParams:
    """Patch search and AR regression settings."""

    patch_size: int = 5
    J: int = 10
    search_window: int = 31
    gamma_reg: float = 0.01
    q: int = 15

    def __post_init__(self):
        for name in ("patch_size", "search_window", "q"):
            value = getattr(self, name)
            if value < 1 or value % 2 == 0:
                raise InvalidInputError(f"{name} must be a positive odd integer, got {value}")
        if self.patch_size < 3:
            raise InvalidInputError(f"patch_size must be >= 3, got {self.patch_size}")
        if self.J < 1:
            raise InvalidInputError(f"J must be >= 1, got {self.J}")
        if self.gamma_reg < 0:
            raise InvalidInputError(f"gamma_reg must be >= 0, got {self.gamma_reg}")


class Neighbor(NamedTuple):
    patch: PatchRef
    distance: float


class NeighborSet(NamedTuple):
    center: PatchRef
    neighbors: list[Neighbor]


@dataclass(frozen=True, eq=False)
class NarmMatrix:
    """Sparse ``n x n`` matrix ``S`` over the pixels of an ``H x W`` image (row-major)."""

    matrix: sp.csr_matrix
    shape: tuple[int, int]

    @property
    def n(self) -> int:
        return self.shape[0] * self.shape[1]

    def row(self, i: int) -> list[tuple[int, float]]:
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return list(zip(self.matrix.indices[start:stop].tolist(), self.matrix.data[start:stop].tolist()))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @classmethod
    def from_entries(cls, shape, rows, cols, values) -> "NarmMatrix":
        n = shape[0] * shape[1]
        mat = sp.csr_matrix((np.asarray(values, float), (np.asarray(rows), np.asarray(cols))), shape=(n, n))
        mat.sum_duplicates()
        mat.sort_indices()
        return cls(mat, tuple(shape))


def apply_narm(S: NarmMatrix, x: np.ndarray) -> np.ndarray:
    """``S x`` for a single-channel image ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != S.shape:
        raise InvalidInputError(f"image shape {x.shape} does not match NARM matrix shape {S.shape}")
    return (S.matrix @ x.reshape(-1)).reshape(S.shape)


def apply_narm_transpose(S: NarmMatrix, x: np.ndarray) -> np.ndarray:
    """``S^T x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != S.shape:
        raise InvalidInputError(f"image shape {x.shape} does not match NARM matrix shape {S.shape}")
    return (S.matrix.T @ x.reshape(-1)).reshape(S.shape)


def _require_gray(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if img.ndim != 2:
        raise InvalidInputError(f"expected a single-channel image, got shape {img.shape}")
    return img


# -- neighbour search -----------------------------------------------------

def find_nonlocal_neighbors(img: np.ndarray, center: PatchRef, params: NarmParams) -> NeighborSet:
    """The ``J`` patches in the search window closest to ``center`` (self excluded).

    Distances are squared Euclidean between patch vectors; ties go to the
    candidate met first in a row-major scan of the window.
    """
    img = _require_gray(img)
    h, w = img.shape
    size = params.patch_size
    ref = extract_patch(img, PatchRef(center.center_row, center.center_col, size), padded=True)
    half = params.search_window // 2
    found = []
    for r in range(max(0, center.center_row - half), min(h, center.center_row + half + 1)):
        for c in range(max(0, center.center_col - half), min(w, center.center_col + half + 1)):
            if r == center.center_row and c == center.center_col:
                continue
            cand = extract_patch(img, PatchRef(r, c, size), padded=True)
            found.append(Neighbor(PatchRef(r, c, size), float(_patch_distance(ref, cand))))
    if params.J > len(found):
        raise InvalidInputError(f"J={params.J} exceeds the {len(found)} available candidates")
    # stable sort keeps scan order among equal distances
    found.sort(key=lambda nb: nb.distance)
    return NeighborSet(PatchRef(center.center_row, center.center_col, size), found[: params.J])


def _patch_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared distance summed down each patch column, then across columns.

    The summation order is the one used by :func:`search_all_neighbors`, so
    both paths produce bit-identical distances.
    """
    size = int(round(np.sqrt(a.size)))
    d2 = ((a - b) ** 2).reshape(size, size)
    cols = d2[0].copy()
    for row in d2[1:]:
        cols += row
    total = cols[0]
    for v in cols[1:]:
        total += v
    return float(total)


def _select_smallest(dist: np.ndarray, J: int) -> tuple[np.ndarray, np.ndarray]:
    """Per row, the ``J`` smallest entries ordered by (value, column index)."""
    kth = np.partition(dist, J - 1, axis=1)[:, J - 1 : J]
    below = dist < kth
    equal = dist == kth
    room = J - below.sum(axis=1, keepdims=True)
    take = below | (equal & (np.cumsum(equal, axis=1) <= room))
    cols = np.nonzero(take)[1].reshape(-1, J)
    vals = np.take_along_axis(dist, cols, axis=1)
    order = np.argsort(vals, axis=1, kind="stable")
    return np.take_along_axis(cols, order, axis=1), np.take_along_axis(vals, order, axis=1)


def search_all_neighbors(img: np.ndarray, params: NarmParams) -> tuple[np.ndarray, np.ndarray]:
    """Batched neighbour search for every pixel.

    Returns ``(indices, distances)`` of shape ``(H*W, J)``; indices are flat
    row-major pixel positions. Equivalent to calling
    :func:`find_nonlocal_neighbors` on each pixel.
    """
    img = _require_gray(img)
    h, w = img.shape
    p = params.patch_size
    rad, half, J = p // 2, params.search_window // 2, params.J
    margin = rad + half
    # whole-sample symmetric extension; numpy repeats the reflection for wide margins
    big = np.pad(img, margin, mode="reflect")
    n_side = 2 * half + 1
    offsets = np.stack(np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij"), -1)
    offsets = offsets.reshape(-1, 2)
    self_k = (n_side * n_side) // 2
    idx_out = np.empty((h * w, J), dtype=np.int64)
    dist_out = np.empty((h * w, J))
    rows_per_chunk = max(1, _SEARCH_CHUNK // (n_side * n_side * w))
    cols = np.arange(w)

    for r0 in range(0, h, rows_per_chunk):
        r1 = min(h, r0 + rows_per_chunk)
        nr = r1 - r0
        ref = big[margin - rad + r0 : margin + rad + r1, margin - rad : margin + rad + w]
        dist = np.empty((n_side, n_side, nr, w))
        for a, dr in enumerate(range(-half, half + 1)):
            band = big[margin - rad + r0 + dr : margin + rad + r1 + dr]
            windows = sliding_window_view(band, w + 2 * rad, axis=1)[:, margin - rad - half : margin - rad + half + 1]
            d2 = (ref[:, None, :] - windows) ** 2          # (nr+2rad, n_side, w+2rad)
            colsum = d2[0:nr].copy()
            for t in range(1, p):
                colsum += d2[t : t + nr]
            total = colsum[..., 0:w].copy()
            for t in range(1, p):
                total += colsum[..., t : t + w]
            dist[a] = total.transpose(1, 0, 2)
            rows_ok = (np.arange(r0, r1) + dr >= 0) & (np.arange(r0, r1) + dr < h)
            cols_ok = (cols[None, :] + np.arange(-half, half + 1)[:, None] >= 0) & (
                cols[None, :] + np.arange(-half, half + 1)[:, None] < w)
            dist[a] = np.where(rows_ok[None, :, None] & cols_ok[:, None, :], dist[a], np.inf)
        dist = dist.reshape(n_side * n_side, nr * w)
        dist[self_k] = np.inf
        dist = np.ascontiguousarray(dist.T)
        order, best = _select_smallest(dist, J)
        if not np.all(np.isfinite(best)):
            raise InvalidInputError(f"J={J} exceeds the candidates available near the image border")
        rr = np.repeat(np.arange(r0, r1), w)[:, None] + offsets[order, 0]
        cc = np.tile(cols, nr)[:, None] + offsets[order, 1]
        idx_out[r0 * w : r1 * w] = rr * w + cc
        dist_out[r0 * w : r1 * w] = best
    return idx_out, dist_out


# -- AR weights -----------------------------------------------------------

def solve_ar_weights(center_patch: np.ndarray, neighbor_patches, gamma_reg: float) -> np.ndarray:
    """Ridge weights ``(X^T X + gamma I)^{-1} X^T x`` with neighbour patches as columns of ``X``."""
    x = np.asarray(center_patch, dtype=np.float64).reshape(-1)
    X = np.column_stack([np.asarray(p, dtype=np.float64).reshape(-1) for p in neighbor_patches])
    if X.shape[0] != x.size:
        raise InvalidInputError("neighbour patches and centre patch differ in length")
    if gamma_reg < 0:
        raise InvalidInputError(f"gamma_reg must be >= 0, got {gamma_reg}")
    G = X.T @ X + gamma_reg * np.eye(X.shape[1])
    rhs = X.T @ x
    if gamma_reg == 0 and np.linalg.cond(G) > MAX_CONDITION:
        raise IllConditionedError("X^T X is singular; use gamma_reg > 0")
    try:
        return scipy.linalg.solve(G, rhs, assume_a="pos")
    except np.linalg.LinAlgError:
        raise IllConditionedError("X^T X is singular; use gamma_reg > 0") from None


def patch_matrix(img: np.ndarray, patch_size: int) -> np.ndarray:
    """``(H*W, patch_size**2)`` array of every pixel's symmetric-padded patch."""
    rad = patch_size // 2
    padded = pad_symmetric(img, rad)
    win = sliding_window_view(padded, (patch_size, patch_size))
    return win.reshape(img.shape[0] * img.shape[1], patch_size * patch_size)


def build_narm_matrix(img: np.ndarray, params: NarmParams = NarmParams()) -> NarmMatrix:
    """Assemble ``S`` from patch search and ridge AR weights on ``img``."""
    img = _require_gray(img)
    idx, _ = search_all_neighbors(img, params)
    patches = patch_matrix(img, params.patch_size)
    X = patches[idx]                      # (n, J, p)
    x = patches[:, :, None]               # (n, p, 1)
    G = X @ X.transpose(0, 2, 1)
    G += params.gamma_reg * np.eye(params.J)
    rhs = X @ x
    if params.gamma_reg == 0 and np.max(np.linalg.cond(G)) > MAX_CONDITION:
        raise IllConditionedError("singular AR system at gamma_reg = 0; use gamma_reg > 0")
    weights = np.linalg.solve(G, rhs)[..., 0]
    n = img.size
    rows = np.repeat(np.arange(n), params.J)
    return NarmMatrix.from_entries(img.shape, rows, idx.reshape(-1), weights.reshape(-1))


# -- fast nonlocal operation ---------------------------------------------

@dataclass(frozen=True, eq=False)
class EmbeddingWeights:
    """Linear embeddings of the nonlocal block.

    ``theta``, ``phi`` and ``g`` map ``c_in -> c_out`` (shape ``(c_in, c_out)``,
    applied as ``feature @ W``); ``omega`` maps back ``c_out -> c_in``.
    """

    theta: np.ndarray
    phi: np.ndarray
    g: np.ndarray
    omega: np.ndarray
    c_in: int = field(init=False)
    c_out: int = field(init=False)

    def __post_init__(self):
        mats = {k: np.atleast_2d(np.asarray(getattr(self, k), dtype=np.float64)) for k in ("theta", "phi", "g", "omega")}
        c_in, c_out = mats["theta"].shape
        for k in ("phi", "g"):
            if mats[k].shape != (c_in, c_out):
                raise InvalidInputError(f"{k} has shape {mats[k].shape}, expected {(c_in, c_out)}")
        if mats["omega"].shape != (c_out, c_in):
            raise InvalidInputError(f"omega has shape {mats['omega'].shape}, expected {(c_out, c_in)}")
        for k, v in mats.items():
            if not np.all(np.isfinite(v)):
                raise InvalidInputError(f"{k} has non-finite entries")
            object.__setattr__(self, k, v)
        object.__setattr__(self, "c_in", c_in)
        object.__setattr__(self, "c_out", c_out)

    @classmethod
    def default(cls, channels: int = 1) -> "EmbeddingWeights":
        """Zero similarity embeddings (uniform averaging) and identity ``g``/``omega``."""
        zero = np.zeros((channels, channels))
        eye = np.eye(channels)
        return cls(zero, zero, eye, eye)


def _features(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[..., None] if x.ndim == 2 else x


def attention_probabilities(x: np.ndarray, w: EmbeddingWeights, q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Softmax weights over the ``q x q`` block around every pixel.

    Returns ``(probs, offsets, valid)`` with ``probs`` and ``valid`` of shape
    ``(q*q, H, W)``; positions outside the image get probability 0.
    """
    if q < 1 or q % 2 == 0:
        raise InvalidInputError(f"block size q must be a positive odd integer, got {q}")
    feats = _features(x)
    if feats.shape[2] != w.c_in:
        raise InvalidInputError(f"image has {feats.shape[2]} channels, embeddings expect {w.c_in}")
    h, wd = feats.shape[:2]
    theta = feats @ w.theta
    phi = feats @ w.phi
    half = q // 2
    dr, dc = np.meshgrid(np.arange(-half, half + 1), np.arange(-half, half + 1), indexing="ij")
    offsets = np.stack([dr.ravel(), dc.ravel()], axis=1)
    logits = np.full((len(offsets), h, wd), -np.inf)
    valid = np.zeros((len(offsets), h, wd), dtype=bool)
    for k, (a, b) in enumerate(offsets):
        i0, i1 = max(0, -a), min(h, h - a)
        j0, j1 = max(0, -b), min(wd, wd - b)
        if i0 >= i1 or j0 >= j1:
            continue
        logits[k, i0:i1, j0:j1] = np.einsum(
            "ijc,ijc->ij", theta[i0:i1, j0:j1], phi[i0 + a : i1 + a, j0 + b : j1 + b]
        )
        valid[k, i0:i1, j0:j1] = True
    logits -= logits.max(axis=0, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=0, keepdims=True)
    return probs, offsets, valid


def nonlocal_attention(x: np.ndarray, w: EmbeddingWeights, q: int = 15) -> np.ndarray:
    """Residual nonlocal block ``W_omega y_i + x_i`` with ``y_i`` the softmax-weighted sum of ``g(x_j)``."""
    feats = _features(x)
    probs, offsets, _ = attention_probabilities(x, w, q)
    g = feats @ w.g
    h, wd = feats.shape[:2]
    y = np.zeros((h, wd, w.c_out))
    for k, (a, b) in enumerate(offsets):
        i0, i1 = max(0, -a), min(h, h - a)
        j0, j1 = max(0, -b), min(wd, wd - b)
        if i0 >= i1 or j0 >= j1:
            continue
        y[i0:i1, j0:j1] += probs[k, i0:i1, j0:j1, None] * g[i0 + a : i1 + a, j0 + b : j1 + b]
    out = y @ w.omega + feats
    return out[..., 0] if np.ndim(x) == 2 else out


def attention_as_S(x: np.ndarray, w: EmbeddingWeights, q: int = 15) -> NarmMatrix:
    """Attention weights of a scalar nonlocal block as a sparse ``S``.

    Satisfies ``apply_narm(S, x) == nonlocal_attention(x, w, q) - x``.
    """
    if w.c_in != 1 or w.c_out != 1:
        raise UnsupportedConfigurationError("attention_as_S needs scalar (1x1) embeddings")
    img = _require_gray(x)
    probs, offsets, valid = attention_probabilities(img, w, q)
    h, wd = img.shape
    scale = float(w.g[0, 0] * w.omega[0, 0])
    k, r, c = np.nonzero(valid)
    rows = r * wd + c
    cols = (r + offsets[k, 0]) * wd + (c + offsets[k, 1])
    return NarmMatrix.from_entries((h, wd), rows, cols, scale * probs[k, r, c])


def write_embedding(path, w: EmbeddingWeights) -> None:
    """Header ``"c_in c_out"`` then row-major ``theta``, ``phi``, ``g``, ``omega`` rows."""
    lines = [f"{w.c_in} {w.c_out}"]
    for mat in (w.theta, w.phi, w.g, w.omega):
        lines += [" ".join(repr(float(v)) for v in row) for row in mat]
    Path(path).write_text("\n".join(lines) + "\n")


def read_embedding(path) -> EmbeddingWeights:
    lines = [ln for ln in Path(path).read_text().split("\n") if ln.strip()]
    try:
        c_in, c_out = (int(v) for v in lines[0].split())
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
    except (ValueError, IndexError) as exc:
        raise InvalidInputError(f"malformed embedding file {path}: {exc}") from None
    widths = [c_out] * (3 * c_in) + [c_in] * c_out
    if [len(r) for r in rows] != widths:
        raise InvalidInputError(f"embedding file {path} is inconsistent with its header")
    theta, phi, g = (np.array(rows[i * c_in : (i + 1) * c_in]) for i in range(3))
    omega = np.array(rows[3 * c_in :])
    return EmbeddingWeights(theta, phi, g, omega)
