"""Iterative solvers: conjugate gradient, Tikhonov least squares, TV
reconstruction, and the measurement-consistency proximal map.

All solvers run in float64 on flattened vectors and accept any operator
exposing forward/adjoint/shape over flat arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DimensionError, Image, NumericalError, ParameterError, SeededRng, Sinogram
from .tomography import Geometry, TomoOperator


@dataclass
class CgReport:
    iterations: int
    final_residual_norm: float
    converged: bool


@dataclass(frozen=True)
class ProxConfig:
    """Weight and solver budget for the data-consistency proximal step.

    gamma_schedule, when set, overrides the constant gamma per reverse step
    (step index counts down the sampling chain); the default is a constant
    weight for every step.
    """

    gamma: float
    cg_tol: float = 1e-8
    cg_max_iter: int = 100
    gamma_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if not (self.gamma > 0.0 and np.isfinite(self.gamma)):
            raise ParameterError("gamma must be positive and finite")
        if not (self.cg_tol > 0.0):
            raise ParameterError("cg_tol must be positive")
        if self.cg_max_iter < 1:
            raise ParameterError("cg_max_iter must be >= 1")

    def gamma_for_step(self, step: int) -> float:
        if self.gamma_schedule is None:
            return self.gamma
        value = float(self.gamma_schedule(step))
        if not (value > 0.0 and np.isfinite(value)):
            raise ParameterError(f"gamma schedule produced invalid weight {value}")
        return value


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense matrix as a forward/adjoint pair."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.ndim != 2:
            raise DimensionError("operator matrix must be 2-D")
        mat = mat.copy()
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def shape(self):
        return self.matrix.shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=np.float64).ravel()

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ np.asarray(y, dtype=np.float64).ravel()


def conjugate_gradient(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    x0: Optional[np.ndarray] = None,
    tol: float = 1e-8,
    max_iter: int = 500,
):
    """Solve apply_op(x) = rhs for a symmetric positive semi-definite operator.

    Stops when ||apply_op(x) - rhs|| <= tol * ||rhs||, otherwise reports
    converged=False after max_iter steps.  Returns (x, CgReport).
    """
    rhs = np.asarray(rhs, dtype=np.float64).ravel()
    if x0 is None:
        x = np.zeros_like(rhs)
    else:
        x = np.asarray(x0, dtype=np.float64).ravel().copy()
        if x.shape != rhs.shape:
            raise DimensionError(f"x0 has size {x.size}, rhs has size {rhs.size}")
    if max_iter < 0:
        raise ParameterError("max_iter must be >= 0")

    def apply_checked(v):
        out = np.asarray(apply_op(v), dtype=np.float64).ravel()
        if out.shape != rhs.shape:
            raise DimensionError(
                f"operator returned size {out.size}, expected {rhs.size}"
            )
        if not np.all(np.isfinite(out)):
            raise NumericalError("operator produced non-finite values")
        return out

    target = tol * float(np.linalg.norm(rhs))
    r = rhs - apply_checked(x)
    res_norm = float(np.linalg.norm(r))
    if res_norm <= target:
        return x, CgReport(0, res_norm, True)

    p = r.copy()
    rs = res_norm**2
    iterations = 0
    converged = False
    for _ in range(max_iter):
        iterations += 1
        ap = apply_checked(p)
        p_ap = float(p @ ap)
        if not np.isfinite(p_ap) or p_ap <= 0.0:
            raise NumericalError(
                f"conjugate gradient breakdown (p^T A p = {p_ap:g}); operator is not SPD"
            )
        alpha = rs / p_ap
        x += alpha * p
        r -= alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise NumericalError("conjugate gradient residual became non-finite")
        res_norm = rs_new**0.5
        if res_norm <= target:
            converged = True
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, CgReport(iterations, res_norm, converged)


def operator_norm_sq(op, iters: int = 50, seed: int = 0) -> float:
    """Largest eigenvalue of A^T A estimated with power iteration."""
    n = op.shape[1]
    v = SeededRng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = op.adjoint(op.forward(v))
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        lam = norm_w
        v = w / norm_w
    return lam


_GEOM_NORM_CACHE: dict = {}


def _tomo_norm_sq(geom: Geometry) -> float:
    key = geom.digest()
    if key not in _GEOM_NORM_CACHE:
        _GEOM_NORM_CACHE[key] = operator_norm_sq(TomoOperator(geom))
    return _GEOM_NORM_CACHE[key]


def default_rls_tau(geom: Geometry) -> float:
    """Default Tikhonov weight, scaled to the operator: 0.05 * ||A^T A||_2."""
    return 0.05 * _tomo_norm_sq(geom)


def rls_reconstruct(
    sino: Sinogram,
    geom: Geometry,
    tau: Optional[float] = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> Image:
    """Minimize ||Ax - y||^2 + tau * ||x||^2 via CG on the normal equations."""
    geom.matches_sinogram(sino)
    if tau is None:
        tau = default_rls_tau(geom)
    if tau < 0.0 or not np.isfinite(tau):
        raise ParameterError(f"tau must be >= 0, got {tau}")
    op = TomoOperator(geom)
    y = sino.as_f64().ravel()
    rhs = op.adjoint(y)

    def normal_apply(v):
        return op.adjoint(op.forward(v)) + tau * v

    x, _ = conjugate_gradient(normal_apply, rhs, None, tol, max_iter)
    return Image(geom.image_rows, geom.image_cols, x.reshape(geom.image_rows, geom.image_cols))


def _grad2d(u: np.ndarray):
    gx = np.zeros_like(u)
    gy = np.zeros_like(u)
    gx[:-1, :] = u[1:, :] - u[:-1, :]
    gy[:, :-1] = u[:, 1:] - u[:, :-1]
    return gx, gy


def _div2d(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    # negative adjoint of _grad2d: <grad u, p> = -<u, div p>
    div = np.zeros_like(px)
    div[0, :] = px[0, :]
    div[1:-1, :] = px[1:-1, :] - px[:-2, :]
    div[-1, :] = -px[-2, :]
    div[:, 0] += py[:, 0]
    div[:, 1:-1] += py[:, 1:-1] - py[:, :-2]
    div[:, -1] += -py[:, -2]
    return div


def total_variation(u: np.ndarray) -> float:
    """Isotropic discrete TV with forward differences."""
    gx, gy = _grad2d(np.asarray(u, dtype=np.float64))
    return float(np.sqrt(gx**2 + gy**2).sum())


def tv_prox(g: np.ndarray, weight: float, iters: int = 20) -> np.ndarray:
    """argmin_u 0.5*||u - g||^2 + weight*TV(u) by dual projection iterations."""
    if weight <= 0.0 or iters < 1:
        return np.asarray(g, dtype=np.float64).copy()
    g = np.asarray(g, dtype=np.float64)
    tau = 0.25
    px = np.zeros_like(g)
    py = np.zeros_like(g)
    for _ in range(iters):
        gx, gy = _grad2d(_div2d(px, py) - g / weight)
        denom = 1.0 + tau * np.sqrt(gx**2 + gy**2)
        px = (px + tau * gx) / denom
        py = (py + tau * gy) / denom
    return g - weight * _div2d(px, py)


def tv_reconstruct(
    sino: Sinogram,
    geom: Geometry,
    lam: float,
    outer_iters: int = 50,
    prox_iters: int = 20,
) -> Image:
    """Approximately minimize 0.5*||Ax - y||^2 + lam*TV(x).

    Accelerated proximal gradient with a monotone safeguard: the candidate
    from the momentum point is kept only when it does not increase the
    composite objective, so the objective is non-increasing across outer
    iterations even with the fixed inner prox budget.  The gradient step is
    1/L with L from power iteration (safety factor 1.05).
    """
    geom.matches_sinogram(sino)
    if lam < 0.0 or not np.isfinite(lam):
        raise ParameterError(f"lam must be >= 0, got {lam}")
    if outer_iters < 1:
        raise ParameterError("outer_iters must be >= 1")
    op = TomoOperator(geom)
    y = sino.as_f64().ravel()
    rows, cols = geom.image_rows, geom.image_cols
    lipschitz = 1.05 * _tomo_norm_sq(geom)
    if lipschitz <= 0.0:
        lipschitz = 1.0
    step = 1.0 / lipschitz

    def objective(x_flat):
        res = op.forward(x_flat) - y
        val = 0.5 * float(res @ res)
        if lam > 0.0:
            val += lam * total_variation(x_flat.reshape(rows, cols))
        return val

    x = np.zeros(rows * cols)
    z_momentum = x.copy()
    f_x = objective(x)
    t_k = 1.0
    for _ in range(outer_iters):
        grad = op.adjoint(op.forward(z_momentum) - y)
        if not np.all(np.isfinite(grad)):
            raise NumericalError("TV solver produced non-finite gradient")
        cand = z_momentum - step * grad
        if lam > 0.0:
            cand = tv_prox(cand.reshape(rows, cols), lam * step, prox_iters).ravel()
        f_cand = objective(cand)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k**2))
        if f_cand <= f_x:
            x_next, f_next = cand, f_cand
        else:
            x_next, f_next = x, f_x
        z_momentum = x_next + (t_k / t_next) * (cand - x_next) + ((t_k - 1.0) / t_next) * (
            x_next - x
        )
        x, f_x = x_next, f_next
        t_k = t_next
    return Image(rows, cols, x.reshape(rows, cols))


def prox_consistency(
    x_tilde: np.ndarray, y: np.ndarray, op, cfg: ProxConfig, gamma: Optional[float] = None
):
    """argmin_z ||z - x_tilde||^2 + gamma * ||op(z) - y||^2 on flat arrays.

    Solved by CG on (I + gamma A^T A) z = x_tilde + gamma A^T y, warm-started
    at x_tilde.  Every CG iterate keeps the prox objective at or below its
    value at x_tilde, so the measurement residual never increases even when
    the iteration budget runs out (reported via converged=False).
    """
    x_tilde = np.asarray(x_tilde, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x_tilde.size != op.shape[1] or y.size != op.shape[0]:
        raise DimensionError(
            f"prox inputs {x_tilde.size}/{y.size} do not match operator {op.shape}"
        )
    g = cfg.gamma if gamma is None else gamma

    def apply(v):
        return v + g * op.adjoint(op.forward(v))

    rhs = x_tilde + g * op.adjoint(y)
    return conjugate_gradient(apply, rhs, x_tilde, cfg.cg_tol, cfg.cg_max_iter)


def data_consistency_prox(x_tilde: Image, sino: Sinogram, geom: Geometry, cfg: ProxConfig):
    """Proximal data-consistency step on rasters; returns (Image, CgReport)."""
    geom.matches_image(x_tilde)
    geom.matches_sinogram(sino)
    z, report = prox_consistency(
        x_tilde.as_f64().ravel(), sino.as_f64().ravel(), TomoOperator(geom), cfg
    )
    rows, cols = geom.image_rows, geom.image_cols
    return Image(rows, cols, z.reshape(rows, cols)), report
