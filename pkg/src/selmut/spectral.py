"""Principal eigenpairs and the quantities built from them.

``lambda(theta, rho)`` is the smallest eigenvalue of
``sigma_x(-d_xx + L) - (R(., theta) - kappa rho)``; ``mu_eps`` the smallest
eigenvalue of the joint operator with mutation ``eps^2 (-d_thth)`` and no
competition. Eigenfunctions are positive with unit weighted L2 norm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, ModelError
from .model import QuadraticSpace, QuadraticTrait
from .operators import (
    LinOp2D,
    assemble_1d,
    assemble_2d,
    check_rho,
    from_symmetric_coords,
    neumann_laplacian,
    to_symmetric_coords,
)

logger = logging.getLogger(__name__)

DENSE_MAX = 400


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    function: np.ndarray
    residual_norm: float
    iterations: int
    method: str = "power"


def _iterate(
    step: Callable[[np.ndarray], np.ndarray],
    apply_sym: Callable[[np.ndarray], np.ndarray],
    v0: np.ndarray,
    *,
    tol: float,
    residual_tol: float,
    maxiter: int,
    label: str,
) -> tuple[float, np.ndarray, float, int]:
    """Normalised iteration ``v <- step(v)`` with Rayleigh-quotient monitoring.

    Stops once the Rayleigh quotient moves by less than ``tol * max(1, |lam|)``
    and the residual ``||M v - lam v||`` is below ``residual_tol``.
    """
    v = v0 / np.linalg.norm(v0)
    Mv = apply_sym(v)
    lam = float(np.dot(v, Mv))
    res = float(np.linalg.norm(Mv - lam * v))
    if res <= residual_tol:
        return lam, v, res, 0
    for it in range(1, maxiter + 1):
        w = step(v)
        nrm = np.linalg.norm(w)
        if not np.isfinite(nrm) or nrm == 0:
            raise ConvergenceError(f"{label}: iteration broke down", residual=res, iterations=it)
        v = w / nrm
        Mv = apply_sym(v)
        lam_new = float(np.dot(v, Mv))
        res = float(np.linalg.norm(Mv - lam_new * v))
        done = abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)) and res <= residual_tol
        lam = lam_new
        if done:
            return lam, v, res, it
    raise ConvergenceError(
        f"{label}: no convergence after {maxiter} iterations (residual {res:.3g})",
        residual=res,
        iterations=maxiter,
    )


def _finish(lam, v_sym, res, its, weights, method, label) -> EigenPair:
    if v_sym.sum() < 0:
        v_sym = -v_sym
    if not np.all(v_sym > 0):
        # nonnegative irreducible iteration matrices cannot produce this
        raise RuntimeError(f"{label}: principal eigenvector lost positivity")
    psi = from_symmetric_coords(v_sym, weights)
    return EigenPair(value=lam, function=psi, residual_norm=res, iterations=its, method=method)


def power_iteration_symmetric(
    mat: np.ndarray,
    v0: Optional[np.ndarray] = None,
    *,
    tol: float = 1e-12,
    residual_tol: float = 1e-10,
    maxiter: int = 50_000,
) -> tuple[float, np.ndarray, float, int]:
    """Smallest eigenpair of a symmetric Z-matrix via power iteration on ``sigma I - M``.

    ``sigma`` is the Gershgorin upper bound, so ``sigma I - M`` is entrywise
    nonnegative and the iterate stays positive.
    """
    diag = np.diag(mat)
    sigma = float(np.max(diag + np.abs(mat).sum(axis=1) - np.abs(diag)))
    shifted = sigma * np.eye(mat.shape[0]) - mat
    v0 = np.ones(mat.shape[0]) if v0 is None else np.asarray(v0, dtype=float)
    return _iterate(
        lambda v: shifted @ v,
        lambda v: mat @ v,
        v0,
        tol=tol,
        residual_tol=residual_tol,
        maxiter=maxiter,
        label="power iteration",
    )


def principal_eigenpair_1d(
    cfg,
    theta: float,
    rho,
    *,
    init: Optional[np.ndarray] = None,
    method: str = "power",
) -> EigenPair:
    """Principal eigenpair of the spatial problem at trait ``theta``.

    ``method="power"`` runs shifted power iteration from the constant vector
    (or ``init``); ``method="dense"`` uses a full symmetric eigendecomposition.
    ``method="auto"`` is dense up to ``DENSE_MAX`` nodes, falling back to power
    iteration (seeded with the dense vector) if roundoff spoils positivity.
    """
    op = assemble_1d(cfg, theta, rho)
    Ms = op.symmetric()
    w = op.weights
    solver = cfg.solver
    if method == "auto":
        if op.size > DENSE_MAX:
            method = "power"
        else:
            vals, vecs = np.linalg.eigh(Ms)
            v = vecs[:, 0] * np.sign(vecs[:, 0].sum())
            if np.all(v > 0):
                res = float(np.linalg.norm(Ms @ v - vals[0] * v))
                return _finish(float(vals[0]), v, res, 0, w, "dense", "eigh")
            method, init = "power", from_symmetric_coords(np.abs(v) + 1e-300, w)
    if method == "dense":
        vals, vecs = np.linalg.eigh(Ms)
        v = vecs[:, 0]
        res = float(np.linalg.norm(Ms @ v - vals[0] * v))
        return _finish(float(vals[0]), v, res, 0, w, "dense", "eigh")
    if method != "power":
        raise ValueError(f"unknown eigen method {method!r}")
    v0 = to_symmetric_coords(np.ones(op.size) if init is None else np.abs(init), w)
    lam, v, res, its = power_iteration_symmetric(
        Ms, v0, tol=solver.eig_tol, residual_tol=solver.eig_residual, maxiter=solver.eig_maxiter
    )
    return _finish(lam, v, res, its, w, "power", "principal_eigenpair_1d")


def _eigen_2d(op: LinOp2D, solver, method: str, init: Optional[np.ndarray]) -> EigenPair:
    shape = op.shape
    w = op.weights
    v0 = np.ones(shape) if init is None else np.abs(np.asarray(init, float).reshape(shape))
    v0 = to_symmetric_coords(v0, w).ravel()
    lower, upper = op.gershgorin()

    def apply_sym(v):
        return op.apply_symmetric(v).ravel()

    if method == "power":
        lam, v, res, its = _iterate(
            lambda v: upper * v - apply_sym(v),
            apply_sym,
            v0,
            tol=solver.eig_tol,
            residual_tol=solver.eig_residual,
            maxiter=solver.eig_maxiter,
            label="2-D power iteration",
        )
    elif method == "inverse":
        lam, v, res, its = _shift_invert(op, v0, solver, lower)
    elif method == "dense":
        dense = op.to_dense()
        s = np.sqrt(np.repeat(w, shape[1]))
        Ms = dense * s[:, None] / s[None, :]
        Ms = 0.5 * (Ms + Ms.T)
        vals, vecs = np.linalg.eigh(Ms)
        v = vecs[:, 0]
        lam, res, its = float(vals[0]), float(np.linalg.norm(Ms @ v - vals[0] * v)), 0
    else:
        raise ValueError(f"unknown eigen method {method!r}")
    pair = _finish(lam, v.reshape(shape), res, its, w, method, "principal_eigenvalue_2d")
    # unit norm with the cell areas w_j * h_theta
    return replace(pair, function=pair.function / np.sqrt(op.h_theta))


def _shift_invert(op: LinOp2D, v0: np.ndarray, solver, lower: float):
    """Iterate with ``(M - sI)^-1`` for a shift ``s`` kept strictly below ``lambda_1``.

    ``M - sI`` is then a Stieltjes matrix with an entrywise positive inverse,
    so this is still power iteration on a positive operator. The shift starts
    at the Gershgorin bound and is raised to the Collatz-Wielandt bound
    ``min_i (Mv)_i / v_i <= lambda_1`` as the iterate improves.
    """
    nx, nt = op.shape

    def factor(shift):
        return sla.cholesky_banded(op.banded_upper(diag_shift=-shift), lower=False, check_finite=False)

    shift = lower - 1e-3 * max(1.0, abs(lower))
    cb = factor(shift)
    v = v0 / np.linalg.norm(v0)
    Mv = op.apply_symmetric(v).ravel()
    lam = float(v @ Mv)
    res = float(np.linalg.norm(Mv - lam * v))
    if res <= solver.eig_residual:
        return lam, v, res, 0
    for it in range(1, solver.eig_maxiter + 1):
        rhs = v.reshape(nx, nt).T.ravel()  # theta-major
        w = sla.cho_solve_banded((cb, False), rhs, check_finite=False).reshape(nt, nx).T.ravel()
        v = w / np.linalg.norm(w)
        Mv = op.apply_symmetric(v).ravel()
        lam_new = float(v @ Mv)
        res = float(np.linalg.norm(Mv - lam_new * v))
        done = abs(lam_new - lam) <= solver.eig_tol * max(1.0, abs(lam_new)) and res <= solver.eig_residual
        lam = lam_new
        if done:
            return lam, v, res, it
        if it % 4 == 0 and np.all(v > 0):
            cw = float(np.min(Mv / v))
            cand = cw - max(1e-3 * (lam - cw), 1e-9 * max(1.0, abs(lam)))
            if lam - cand < 0.5 * (lam - shift):
                try:
                    cb, shift = factor(cand), cand
                except np.linalg.LinAlgError:
                    pass
    raise ConvergenceError(
        f"2-D shift-invert iteration: no convergence (residual {res:.3g})",
        residual=res,
        iterations=solver.eig_maxiter,
    )


def principal_eigenvalue_2d(
    cfg,
    epsilon: Optional[float] = None,
    *,
    rho=None,
    method: str = "inverse",
    init: Optional[np.ndarray] = None,
) -> EigenPair:
    """``mu_eps`` and the positive eigenfunction ``xi_eps`` (shape ``(N_x, N_theta)``).

    The default ``method="inverse"`` iterates with ``(M - sI)^-1`` for a
    Gershgorin shift ``s`` below the spectrum. ``"power"`` is the plain shifted
    power iteration; its rate degrades like ``1 - gap / ||M||`` and it is only
    practical on small grids.
    """
    op = assemble_2d(cfg, epsilon, rho)
    return _eigen_2d(op, cfg.solver, method, init)


def principal_lambda(cfg, theta: float, rho, **kw) -> float:
    return principal_eigenpair_1d(cfg, theta, rho, **kw).value


def rayleigh_quotient(cfg, theta: float, rho, phi) -> float:
    grid = cfg.x_grid
    phi = np.asarray(phi, dtype=float)
    rho = check_rho(rho, grid.size)
    w = grid.weights
    norm2 = float(np.sum(w * phi**2))
    if norm2 == 0:
        raise ValueError("phi must not vanish identically")
    grad = float(np.sum(w * phi * (-(neumann_laplacian(grid) @ phi))))
    K = cfg.kernel_matrix.values
    diff2 = (phi[:, None] - phi[None, :]) ** 2
    nonlocal_term = 0.5 * float(np.sum(diff2 * K * w[:, None] * w[None, :]))
    R = cfg.growth.evaluate(grid.nodes, float(theta))
    potential = float(np.sum((R - cfg.kappa * rho) * phi**2 * w))
    return (cfg.sigma_x * (grad + nonlocal_term) - potential) / norm2


def dlambda_dtheta(cfg, theta: float, rho, pair: Optional[EigenPair] = None) -> float:
    """``-int d_theta R(x, theta) psi(x)^2 dx`` with the normalised eigenfunction."""
    pair = pair or principal_eigenpair_1d(cfg, theta, rho)
    grid = cfg.x_grid
    dR = np.asarray(cfg.growth.dtheta(grid.nodes, float(theta)), dtype=float)
    return -float(np.sum(dR * pair.function**2 * grid.weights))


def _require_quadratic_space(cfg):
    if not isinstance(cfg.growth, QuadraticSpace):
        raise ModelError("chi is only defined for R(x, theta) = r - g (b x - theta)^2")
    return cfg.growth


def chi(cfg, theta: float, rho, pair: Optional[EigenPair] = None) -> float:
    """``b int x psi^theta(x)^2 dx``; emergent traits are fixed points of this map."""
    spec = _require_quadratic_space(cfg)
    if spec.b == 0:
        return 0.0
    pair = pair or principal_eigenpair_1d(cfg, theta, rho)
    grid = cfg.x_grid
    return spec.b * float(np.sum(grid.nodes * pair.function**2 * grid.weights))


def chi_fixed_point(cfg, theta_init: float, rho, tol: float = 1e-10, maxiter: int = 10_000) -> dict:
    """Picard iteration ``theta <- chi(theta)``.

    Non-convergence is reported, not raised, since contraction is only
    expected for small selection pressure.
    """
    if _require_quadratic_space(cfg).b == 0:
        # chi vanishes identically: the first image is the fixed point
        return {"theta_star": 0.0, "contraction_estimate": 0.0, "converged": True, "iterations": 1}
    theta = float(theta_init)
    prev_step = None
    contraction = 0.0
    psi = None
    for it in range(1, maxiter + 1):
        pair = principal_eigenpair_1d(cfg, theta, rho, init=psi)
        psi = pair.function
        new = chi(cfg, theta, rho, pair)
        if not np.isfinite(new):
            raise ConvergenceError("chi iteration produced NaN", iterations=it)
        step = new - theta
        if prev_step is not None and prev_step != 0:
            contraction = max(contraction, abs(step / prev_step))
        theta = new
        if abs(step) < tol:
            return {"theta_star": theta, "contraction_estimate": contraction, "converged": True, "iterations": it}
        prev_step = step
    return {"theta_star": theta, "contraction_estimate": contraction, "converged": False, "iterations": maxiter}


def lambda_curve(cfg, rho, theta_samples, *, warm_start: bool = True, method: str = "auto") -> np.ndarray:
    """Table of ``(theta, lambda(theta, rho))`` rows."""
    rho = check_rho(rho, cfg.x_grid.size)
    thetas = np.asarray(theta_samples, dtype=float)
    out = np.empty((thetas.size, 2))
    psi = None
    for i, th in enumerate(thetas):
        pair = principal_eigenpair_1d(cfg, th, rho, init=psi if warm_start else None, method=method)
        psi = pair.function
        out[i] = th, pair.value
    return out


def g_monotonicity_scan(cfg, theta: float, rho, g_values) -> dict:
    """``lambda(theta, rho)`` for each selection pressure ``g``.

    Flags a decrease larger than ``1e-12`` between consecutive increasing ``g``.
    """
    if not isinstance(cfg.growth, (QuadraticSpace, QuadraticTrait)):
        raise ModelError("g scans need a quadratic growth rate")
    gs = np.asarray(g_values, dtype=float)
    order = np.argsort(gs, kind="stable")
    lam = np.empty(gs.size)
    for i, g in enumerate(gs):
        lam[i] = principal_lambda(cfg.replace(growth=cfg.growth.with_g(g)), theta, rho)
    ordered = lam[order]
    drops = ordered[:-1] - ordered[1:]
    worst = float(max(0.0, drops.max())) if drops.size else 0.0
    return {
        "table": np.column_stack([gs, lam]),
        "max_violation": worst,
        "monotone": worst <= 1e-12,
    }


def eigfun_theta_sensitivity(cfg, theta: float, rho, delta: Optional[float] = None) -> float:
    """``int |d_theta psi^theta|^2 dx`` by a centred difference of width ``delta``.

    Default ``delta`` is ``1e-3 * 2A``.
    """
    delta = 1e-3 * 2 * cfg.A if delta is None else float(delta)
    plus = principal_eigenpair_1d(cfg, theta + delta, rho).function
    minus = principal_eigenpair_1d(cfg, theta - delta, rho).function
    d = (plus - minus) / (2 * delta)
    return float(np.sum(d**2 * cfg.x_grid.weights))
