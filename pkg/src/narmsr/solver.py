"""Unfolded NARM half-quadratic-splitting super-resolution.

Each stage alternates four updates on the high-resolution estimate ``x``,
the auxiliary (denoised) image ``v`` and the AR modelling error ``e``::

    v <- Denoise(x)
    S <- NARM matrix of x
    e <- e - delta  * [mu A^T(A(x+e) - y) + gamma (x+e - Sx)]
    x <- x - delta' * [A^T(Ax - y) + mu A^T(A(x+e) - y) + gamma (I-S)^T(x+e - Sx) + eta (x - v)]

The brackets are half the gradients of

    F(x, e) = ||y - Ax||^2 + mu ||y - A(x+e)||^2 + gamma ||Sx - (x+e)||^2 + eta ||x - v||^2

with ``S`` held fixed inside a stage. ``mode="dpdnn"`` drops the NARM terms
and reduces the x-step to ``x - delta' [A^T(Ax - y) + eta (x - v)]``.
"""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .degradation import DegradationOp
from .denoiser import DenoiserSpec, denoise
from .imagecore import InvalidInputError
from .metrics import psnr
from .narm import (
    EmbeddingWeights,
    NarmMatrix,
    NarmParams,
    apply_narm,
    apply_narm_transpose,
    attention_as_S,
    build_narm_matrix,
)

log = logging.getLogger(__name__)

SOLVER_MODES = ("mog", "dpdnn")
NARM_BACKENDS = ("ar", "attention")
NARM_GRADIENTS = ("exact", "printed")
INIT_ALIGNMENTS = ("operator", "centered")


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of the unfolded solver.

    ``delta``/``delta_prime`` of ``None`` select ``step_scale / L`` where ``L``
    is a power-iteration estimate of the largest eigenvalue of the e- or
    x-subproblem's (half) Hessian, recomputed after every S update.

    ``x_narm_gradient="printed"`` uses ``gamma (x+e - Sx)`` in the x-step
    instead of ``gamma (I-S)^T (x+e - Sx)``; ``eq19_printed_sign`` replaces
    ``A(x+e)`` by ``A(x-e)`` in the x-step's second fidelity term. Both exist
    to reproduce the update exactly as typeset; the defaults follow the
    objective ``F``.

    ``init_alignment="centered"`` starts from pixel-centre bicubic upsampling
    rather than interpolation on the operator's own sampling grid.
    """

    mu: float = 0.2
    gamma_narm: float = 0.1
    eta: float = 0.25
    delta: float | None = None
    delta_prime: float | None = None
    stages: int = 4
    inner_x_steps: int = 1
    inner_e_steps: int = 1
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    denoiser_decay: float = 0.6
    narm: NarmParams = field(default_factory=NarmParams)
    narm_backend: str = "ar"
    embedding: EmbeddingWeights | None = None
    mode: str = "mog"
    step_scale: float = 0.8
    power_iterations: int = 20
    eq19_printed_sign: bool = False
    x_narm_gradient: str = "exact"
    init_alignment: str = "operator"

    def __post_init__(self):
        for name in ("mu", "gamma_narm", "eta", "denoiser_decay"):
            if not getattr(self, name) >= 0:
                raise InvalidInputError(f"{name} must be non-negative, got {getattr(self, name)}")
        for name in ("delta", "delta_prime"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidInputError(f"{name} must be positive, got {value}")
        if not self.step_scale > 0:
            raise InvalidInputError(f"step_scale must be positive, got {self.step_scale}")
        for name in ("stages", "inner_x_steps", "inner_e_steps"):
            if getattr(self, name) < 0:
                raise InvalidInputError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.power_iterations < 1:
            raise InvalidInputError("power_iterations must be >= 1")
        if self.mode not in SOLVER_MODES:
            raise InvalidInputError(f"mode must be one of {SOLVER_MODES}, got {self.mode!r}")
        if self.narm_backend not in NARM_BACKENDS:
            raise InvalidInputError(f"narm_backend must be one of {NARM_BACKENDS}, got {self.narm_backend!r}")
        if self.x_narm_gradient not in NARM_GRADIENTS:
            raise InvalidInputError(f"x_narm_gradient must be one of {NARM_GRADIENTS}")
        if self.init_alignment not in INIT_ALIGNMENTS:
            raise InvalidInputError(f"init_alignment must be one of {INIT_ALIGNMENTS}")

    @property
    def uses_narm(self) -> bool:
        return self.mode == "mog"


@dataclass
class StageState:
    x: np.ndarray
    v: np.ndarray
    e: np.ndarray
    S: NarmMatrix | None
    stage_index: int = 0
    delta: float | None = None
    delta_prime: float | None = None
    # S was built from the current x
    s_current: bool = False


# -- operators ------------------------------------------------------------

def build_S(x: np.ndarray, cfg: SolverConfig) -> NarmMatrix:
    if cfg.narm_backend == "attention":
        return attention_as_S(x, cfg.embedding or EmbeddingWeights.default(1), cfg.narm.q)
    return build_narm_matrix(x, cfg.narm)


def _narm_residual(S: NarmMatrix | None, x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """``x + e - S x``."""
    sx = apply_narm(S, x) if S is not None else 0.0
    return x + e - sx


def _i_minus_s_transpose(S: NarmMatrix | None, r: np.ndarray) -> np.ndarray:
    return r - apply_narm_transpose(S, r) if S is not None else r


def power_iteration(apply_fn, shape, iterations: int) -> float:
    """Largest eigenvalue estimate of a symmetric PSD linear map.

    The start vector is fixed so the estimate is deterministic.
    """
    n = int(np.prod(shape))
    vec = np.cos(0.7 * np.arange(n) + 0.3).reshape(shape) + 1.0
    vec /= np.linalg.norm(vec)
    lam = 0.0
    for _ in range(iterations):
        w = apply_fn(vec)
        lam = float(np.vdot(vec, w))
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        vec = w / norm
    return lam


def x_hessian(op: DegradationOp, S: NarmMatrix | None, cfg: SolverConfig):
    """Half Hessian of ``F`` in ``x``: ``(1+mu) A^T A + gamma (I-S)^T(I-S) + eta I``."""
    mu, gamma = (cfg.mu, cfg.gamma_narm) if cfg.uses_narm else (0.0, 0.0)

    def apply_fn(z):
        out = (1.0 + mu) * op.normal(z) + cfg.eta * z
        if gamma > 0:
            out = out + gamma * _i_minus_s_transpose(S, z - apply_narm(S, z))
        return out

    return apply_fn


def e_hessian(op: DegradationOp, cfg: SolverConfig):
    """Half Hessian of ``F`` in ``e``: ``mu A^T A + gamma I``."""
    return lambda z: cfg.mu * op.normal(z) + cfg.gamma_narm * z


def step_sizes(state: StageState, op: DegradationOp, cfg: SolverConfig) -> tuple[float, float]:
    """Resolve ``(delta, delta_prime)``, estimating Lipschitz constants when not configured."""
    shape = state.x.shape
    delta = cfg.delta
    if delta is None:
        lip_e = power_iteration(e_hessian(op, cfg), shape, cfg.power_iterations) if cfg.uses_narm else 0.0
        delta = cfg.step_scale / lip_e if lip_e > 0 else 0.0
    delta_prime = cfg.delta_prime
    if delta_prime is None:
        lip_x = power_iteration(x_hessian(op, state.S, cfg), shape, cfg.power_iterations)
        delta_prime = cfg.step_scale / lip_x
    return delta, delta_prime


# -- updates --------------------------------------------------------------

def _steps(state: StageState, op, cfg) -> tuple[float, float]:
    if state.delta is None or state.delta_prime is None:
        state.delta, state.delta_prime = step_sizes(state, op, cfg)
    return state.delta, state.delta_prime


def e_gradient(x, e, S, y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Bracket of the e-step: ``mu A^T(A(x+e) - y) + gamma (x+e - Sx)``."""
    grad = np.zeros_like(x)
    if cfg.mu:
        grad = grad + cfg.mu * op.adjoint(op.apply(x + e) - y, x.shape)
    if cfg.gamma_narm:
        grad = grad + cfg.gamma_narm * _narm_residual(S, x, e)
    return grad


def x_gradient(x, e, v, S, y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Bracket of the x-step (half gradient of ``F`` in ``x``)."""
    grad = op.adjoint(op.apply(x) - y, x.shape)
    if cfg.uses_narm and cfg.mu:
        shifted = x - e if cfg.eq19_printed_sign else x + e
        grad = grad + cfg.mu * op.adjoint(op.apply(shifted) - y, x.shape)
    if cfg.uses_narm and cfg.gamma_narm:
        r = _narm_residual(S, x, e)
        if cfg.x_narm_gradient == "exact":
            r = _i_minus_s_transpose(S, r)
        grad = grad + cfg.gamma_narm * r
    return grad + cfg.eta * (x - v)


def update_e(state: StageState, y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Gradient step(s) on the AR error ``e`` with ``x`` and ``S`` fixed."""
    delta, _ = _steps(state, op, cfg)
    e = state.e
    for _ in range(cfg.inner_e_steps):
        e = e - delta * e_gradient(state.x, e, state.S, y, op, cfg)
    return e


def update_x(state: StageState, y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Gradient step(s) on ``x`` with ``v``, ``e`` and ``S`` fixed."""
    _, delta_prime = _steps(state, op, cfg)
    x = state.x
    for _ in range(cfg.inner_x_steps):
        x = x - delta_prime * x_gradient(x, state.e, state.v, state.S, y, op, cfg)
    return x


def update_x_dpdnn(state: StageState, y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Single gradient step without NARM terms:
    ``x - delta' [A^T(Ax - y) + eta (x - v)]``.
    """
    _, delta_prime = _steps(state, op, cfg)
    x = state.x
    return x - delta_prime * (op.adjoint(op.apply(x) - y, x.shape) + cfg.eta * (x - state.v))


def objective_value(state: StageState, y, op: DegradationOp, cfg: SolverConfig) -> float:
    """``F(x, e)`` at the state (the prior term on ``v`` is not included)."""
    x, e, v = state.x, state.e, state.v
    total = np.sum((y - op.apply(x)) ** 2)
    total += cfg.mu * np.sum((y - op.apply(x + e)) ** 2)
    if cfg.gamma_narm:
        total += cfg.gamma_narm * np.sum(_narm_residual(state.S, x, e) ** 2)
    total += cfg.eta * np.sum((x - v) ** 2)
    return float(total)


# -- stage loop -----------------------------------------------------------

def init_state(y: np.ndarray, op: DegradationOp, cfg: SolverConfig) -> StageState:
    """Bicubic upsampling of ``y`` as ``x0 = v0``, ``e0 = 0``, ``S`` from ``x0``."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise InvalidInputError(f"the solver works on single-channel images, got shape {y.shape}")
    x0 = op.interpolate(y, centered=cfg.init_alignment == "centered")
    if op.lr_shape(x0.shape) != y.shape:
        raise InvalidInputError(f"observation {y.shape} is not compatible with scale {op.scale}")
    S = build_S(x0, cfg) if cfg.uses_narm else None
    return StageState(x=x0, v=x0.copy(), e=np.zeros_like(x0), S=S, stage_index=0, s_current=S is not None)


def run_stage(state: StageState, y, op: DegradationOp, cfg: SolverConfig) -> StageState:
    """One unfolded stage: v, then S, then e, then x."""
    spec = cfg.denoiser.at_stage(state.stage_index, cfg.denoiser_decay)
    v = denoise(spec, state.x)
    S = None
    if cfg.uses_narm:
        S = state.S if state.s_current else build_S(state.x, cfg)
    nxt = StageState(x=state.x, v=v, e=state.e, S=S, stage_index=state.stage_index)
    nxt.delta, nxt.delta_prime = step_sizes(nxt, op, cfg)
    if cfg.uses_narm:
        nxt.e = update_e(nxt, y, op, cfg)
        nxt.x = update_x(nxt, y, op, cfg)
    else:
        nxt.x = update_x_dpdnn(nxt, y, op, cfg)
    nxt.s_current = False
    nxt.stage_index += 1
    return nxt


@dataclass
class SolveResult:
    x: np.ndarray
    history: list[dict]
    final_state: StageState


def solve(y, op: DegradationOp, cfg: SolverConfig, reference: np.ndarray | None = None) -> SolveResult:
    """Run ``cfg.stages`` stages and record per-stage diagnostics.

    With a ground-truth ``reference`` each history entry also carries the
    PSNR of the (clamped) estimate.
    """
    t0 = time.perf_counter()
    state = init_state(y, op, cfg)
    history = [_record(state, y, op, cfg, reference, time.perf_counter() - t0)]
    for _ in range(cfg.stages):
        t0 = time.perf_counter()
        state = run_stage(state, y, op, cfg)
        if not np.all(np.isfinite(state.x)):
            raise FloatingPointError(f"non-finite estimate after stage {state.stage_index}")
        history.append(_record(state, y, op, cfg, reference, time.perf_counter() - t0))
    over = max(0.0, float(state.x.max()) - 1.0, -float(state.x.min()))
    if over > 0:
        log.debug("clamping final estimate; overshoot %.4g", over)
    return SolveResult(np.clip(state.x, 0.0, 1.0), history, state)


def _record(state, y, op, cfg, reference, seconds) -> dict:
    entry = {
        "stage": state.stage_index,
        "objective": objective_value(state, y, op, cfg) if state.stage_index else None,
        "seconds": seconds,
    }
    if state.delta is not None:
        entry["delta"], entry["delta_prime"] = state.delta, state.delta_prime
    if reference is not None:
        entry["psnr_db"] = psnr(np.clip(state.x, 0.0, 1.0), reference, crop=op.scale)
    return entry


def superresolve(y, op: DegradationOp, cfg: SolverConfig) -> np.ndarray:
    """Bicubic initialization followed by ``cfg.stages`` stages, clamped to [0, 1]."""
    return solve(y, op, cfg).x


# -- self-ensemble --------------------------------------------------------

DIHEDRAL = tuple((k, flip) for flip in (False, True) for k in range(4))


def dihedral(img: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = np.rot90(img, k)
    return np.ascontiguousarray(out[:, ::-1] if flip else out)


def dihedral_inverse(img: np.ndarray, k: int, flip: bool) -> np.ndarray:
    out = img[:, ::-1] if flip else img
    return np.ascontiguousarray(np.rot90(out, -k))


@dataclass(frozen=True)
class TransformedOp:
    """``T A T^{-1}`` for a dihedral transform ``T`` of the image grid."""

    base: DegradationOp
    k: int
    flip: bool

    @property
    def scale(self) -> int:
        return self.base.scale

    def _fwd(self, img):
        return dihedral(img, self.k, self.flip)

    def _inv(self, img):
        return dihedral_inverse(img, self.k, self.flip)

    def _swap(self, shape):
        return (shape[1], shape[0]) + tuple(shape[2:]) if self.k % 2 else tuple(shape)

    def lr_shape(self, hr_shape):
        return self._swap(self.base.lr_shape(self._swap(hr_shape)))

    def hr_shape(self, lr_shape):
        return self._swap(self.base.hr_shape(self._swap(lr_shape)))

    def apply(self, x):
        return self._fwd(self.base.apply(self._inv(x)))

    def adjoint(self, y, hr_shape=None):
        shape = self._swap(hr_shape) if hr_shape is not None else None
        return self._fwd(self.base.adjoint(self._inv(y), shape))

    def normal(self, x):
        return self.adjoint(self.apply(x), x.shape)

    def interpolate(self, y, centered=False):
        return self._fwd(self.base.interpolate(self._inv(y), centered))


def self_ensemble(y, op: DegradationOp, cfg: SolverConfig, conjugate: bool = True,
                  workers: int = 1, return_branches: bool = False):
    """Average of the solver run on the 8 dihedral transforms of ``y``.

    With ``conjugate=True`` each branch solves against ``T A T^{-1}`` so the
    decimation grid stays consistent for non-symmetric operators. With
    ``conjugate=False`` the original operator is reused for every branch,
    which is only exact for dihedral-equivariant operators; a warning is
    issued otherwise.
    """
    y = np.asarray(y, dtype=np.float64)
    if not conjugate and not op.is_dihedral_equivariant(op.hr_shape(y.shape)):
        warnings.warn("degradation operator is not dihedral-equivariant; self-ensemble branches are inconsistent",
                      RuntimeWarning, stacklevel=2)

    def branch(t):
        k, flip = t
        branch_op = TransformedOp(op, k, flip) if conjugate else op
        out = superresolve(dihedral(y, k, flip), branch_op, cfg)
        return dihedral_inverse(out, k, flip)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outputs = list(pool.map(branch, DIHEDRAL))
    else:
        outputs = [branch(t) for t in DIHEDRAL]
    total = np.zeros_like(outputs[0])
    for out in outputs:
        total += out
    mean = total / len(outputs)
    return (mean, outputs) if return_branches else mean


def with_overrides(cfg: SolverConfig, **changes) -> SolverConfig:
    return replace(cfg, **changes)
