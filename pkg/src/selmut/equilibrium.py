"""Time relaxation of the selection-mutation-dispersal model to a steady state.

Each step solves a linear system ``(I + dt (M + diag(kappa rho - R))) n_new = n``
with ``M = sigma_x(-d_xx + L) + eps^2(-d_thth)``. In the weighted symmetric
coordinates that matrix is a symmetric Z-matrix; when it is positive definite
it is a Stieltjes matrix and its banded Cholesky solve maps positive data to
positive data, tails included.

Two schemes share that solve:

``semi-implicit``
    ``rho`` frozen at the previous step. Cheap, but the mass mode is only
    stable for ``dt * rho < 2``.
``implicit``
    ``rho`` taken at the new step. The spatial vector ``rho_new`` is found by
    Newton's method on ``rho = P N(rho)`` where ``N(rho)`` is the
    frozen-``rho`` solve. Every inner iterate is itself a positivity-preserving
    M-matrix solve.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError, DtTooLargeError, ModelError
from .operators import LinOp2D, assemble_2d, check_rho

logger = logging.getLogger(__name__)


def total_density(n: np.ndarray, h_theta) -> np.ndarray:
    """``rho(x) = int n(x, theta) dtheta`` by the midpoint rule.

    ``h_theta`` may be the trait spacing or a :class:`~selmut.domain.TraitGrid`.
    """
    h = getattr(h_theta, "h_theta", h_theta)
    return np.asarray(n, dtype=float).sum(axis=1) * float(h)


@dataclass(frozen=True, eq=False)
class PopulationState:
    n: np.ndarray
    rho: np.ndarray
    time: float = 0.0
    step_count: int = 0

    @classmethod
    def from_density(cls, n: np.ndarray, cfg, time: float = 0.0, step_count: int = 0) -> "PopulationState":
        n = np.asarray(n, dtype=float).reshape(cfg.grid.shape)
        if not np.all(np.isfinite(n)) or np.any(n < 0):
            raise ModelError("population density must be finite and nonnegative")
        return cls(n=n, rho=total_density(n, cfg.theta_grid), time=time, step_count=step_count)

    def mass(self, cfg) -> float:
        return float(np.sum(self.n * cfg.grid.weights))


@dataclass(frozen=True)
class ConstantInit:
    c: float = 1.0

    def build(self, cfg) -> np.ndarray:
        return np.full(cfg.grid.shape, float(self.c))


@dataclass(frozen=True)
class GaussianInit:
    """Gaussian bump in the trait variable, uniform in space."""

    center: float = 0.0
    width: float = 0.5
    amplitude: float = 1.0

    def build(self, cfg) -> np.ndarray:
        th = cfg.theta_grid.nodes
        prof = self.amplitude * np.exp(-0.5 * ((th - self.center) / self.width) ** 2)
        return np.broadcast_to(prof, cfg.grid.shape).copy()


@dataclass(frozen=True, eq=False)
class LoadedInit:
    n: np.ndarray

    def build(self, cfg) -> np.ndarray:
        return np.asarray(self.n, dtype=float).reshape(cfg.grid.shape).copy()


InitSpec = Union[ConstantInit, GaussianInit, LoadedInit]


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    state: PopulationState
    converged: bool
    residual: float
    mass: float
    dt_summary: dict = field(default_factory=dict)
    positivity_min: float = np.inf
    extinct: bool = False
    wall_time: float = 0.0


# --------------------------------------------------------------------------
# linear algebra helpers


def _to_theta_major(a: np.ndarray) -> np.ndarray:
    # (nx, nt, ...) -> (nt * nx, ...)
    nx, nt = a.shape[:2]
    return np.swapaxes(a, 0, 1).reshape((nt * nx,) + a.shape[2:])


def _from_theta_major(a: np.ndarray, nx: int, nt: int) -> np.ndarray:
    return np.swapaxes(a.reshape((nt, nx) + a.shape[1:]), 0, 1)


class _System:
    """Factorised ``I + dt (M + potential)`` in symmetric theta-major coordinates."""

    def __init__(self, op: LinOp2D, dt: float):
        self.op, self.dt = op, dt
        nx, nt = op.shape
        self.nx, self.nt = nx, nt
        ab = op.banded_upper(diag_shift=1.0, scale=dt)
        if np.any(ab[-1] <= 0):
            raise DtTooLargeError(f"dt={dt:.3g}: nonpositive diagonal in the implicit system")
        try:
            self.cb = sla.cholesky_banded(ab, lower=False, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise DtTooLargeError(f"dt={dt:.3g}: implicit system is not an M-matrix") from exc
        self.s = np.sqrt(op.weights)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for a field (or stack of fields) shaped ``(N_x, N_theta[, k])``."""
        s = self.s.reshape((-1,) + (1,) * (rhs.ndim - 1))
        b = _to_theta_major(rhs * s)
        x = sla.cho_solve_banded((self.cb, False), b, check_finite=False)
        return _from_theta_major(x, self.nx, self.nt) / s


def _operator(cfg, rho, reaction: bool) -> LinOp2D:
    op = assemble_2d(cfg, rho=rho)
    if not reaction:
        op = replace(op, potential=np.zeros_like(op.potential))
    return op


def _checked(n_new: np.ndarray, dt: float) -> np.ndarray:
    if not np.all(np.isfinite(n_new)):
        raise ConvergenceError(f"dt={dt:.3g}: non-finite values after linear solve")
    if np.any(n_new <= 0):
        raise DtTooLargeError(f"dt={dt:.3g}: step lost positivity (min {n_new.min():.3g})")
    return n_new


def step(cfg, state: PopulationState, dt: float, *, reaction: bool = True) -> PopulationState:
    """One semi-implicit step with ``rho`` frozen at the current state.

    ``reaction=False`` drops growth and competition (pure dispersal and
    mutation), which conserves total mass.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    system = _System(_operator(cfg, state.rho, reaction), dt)
    n_new = _checked(system.solve(state.n), dt)
    return PopulationState(
        n=n_new,
        rho=total_density(n_new, cfg.theta_grid),
        time=state.time + dt,
        step_count=state.step_count + 1,
    )


def implicit_step(
    cfg,
    state: PopulationState,
    dt: float,
    *,
    tol: float = 1e-12,
    max_newton: int = 40,
) -> PopulationState:
    """Backward-Euler step with competition evaluated at the new time.

    Solves ``G(r) = P N(r) - r = 0`` for the spatial vector ``r`` by damped
    Newton, where ``N(r) = (I + dt (M + kappa r - R))^-1 n`` and ``P`` integrates
    over traits. The Jacobian ``dN/dr_j = -dt kappa B^-1 (e_j N)`` needs one
    extra solve per spatial node.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    h = cfg.theta_grid.h_theta
    kappa = cfg.kappa
    nx = cfg.x_grid.size

    def evaluate(r):
        system = _System(_operator(cfg, r, True), dt)
        N = system.solve(state.n)
        return system, N, N.sum(axis=1) * h - r

    r = state.rho.copy()
    system, N, G = evaluate(r)
    scale = max(1.0, float(np.abs(r).max()))
    for it in range(max_newton):
        gnorm = float(np.abs(G).max())
        if gnorm <= tol * scale:
            break
        # columns e_j N: the row j of N placed in an otherwise empty field
        E = np.zeros(N.shape + (nx,))
        E[np.arange(nx), :, np.arange(nx)] = N
        Z = system.solve(E)  # (nx, nt, nx)
        J = -dt * kappa * Z.sum(axis=1) * h - np.eye(nx)
        delta = np.linalg.solve(J, -G)
        alpha = 1.0
        while True:
            trial = r + alpha * delta
            try:
                t_sys, t_N, t_G = evaluate(trial)
                if np.all(t_N > 0) and float(np.abs(t_G).max()) < gnorm * (1 - 1e-4 * alpha) + tol * scale:
                    break
            except DtTooLargeError:
                pass
            alpha *= 0.5
            if alpha < 1e-6:
                raise ConvergenceError(
                    f"dt={dt:.3g}: competition solve stalled (|G|={gnorm:.3g})", residual=gnorm, iterations=it
                )
        r, system, N, G = trial, t_sys, t_N, t_G
    else:
        gnorm = float(np.abs(G).max())
        if gnorm > 1e3 * tol * scale:
            raise ConvergenceError(f"dt={dt:.3g}: competition solve did not converge", residual=gnorm)
    n_new = _checked(N, dt)
    return PopulationState(
        n=n_new,
        rho=total_density(n_new, cfg.theta_grid),
        time=state.time + dt,
        step_count=state.step_count + 1,
    )


def elliptic_residual(cfg, state: PopulationState) -> float:
    """``||(M + kappa rho - R) n||_inf / ||n||_inf``: how well ``n`` solves the steady problem."""
    op = assemble_2d(cfg, rho=state.rho)
    return float(np.abs(op.apply(state.n)).max() / np.abs(state.n).max())


def solve_equilibrium(
    cfg,
    init: Optional[InitSpec] = None,
    *,
    callback: Optional[Callable[[PopulationState, float, float], None]] = None,
) -> EquilibriumResult:
    """March to a numerical steady state with an adaptive time step.

    ``dt`` starts at ``solver.dt0``, halves whenever a step is rejected (lost
    M-matrix structure, positivity or inner convergence), and grows by
    ``solver.grow_factor`` after every ``solver.grow_after`` accepted steps, up
    to ``solver.dt_max``. Stops when the relative rate of change
    ``||n_new - n||_inf / (dt ||n||_inf)`` drops below ``solver.steady_tol``,
    when total mass falls below the extinction floor, or at ``solver.max_steps``.
    """
    solver = cfg.solver
    init = init or ConstantInit()
    stepper = implicit_step if solver.scheme == "implicit" else step
    state = PopulationState.from_density(init.build(cfg), cfg)
    if np.any(state.n <= 0):
        raise ModelError("initial density must be strictly positive")
    mass_floor = cfg.detect.mass_floor * cfg.domain.measure * 2 * cfg.A

    t0 = _time.perf_counter()
    dt = solver.dt0
    since_growth = 0
    rejected = 0
    dts = []
    residual = np.inf
    converged = extinct = False
    pos_min = float(state.n.min())
    while state.step_count < solver.max_steps:
        try:
            new = stepper(cfg, state, dt)
        except (DtTooLargeError, ConvergenceError) as exc:
            rejected += 1
            since_growth = 0
            dt *= 0.5
            logger.debug("step rejected (%s); dt -> %.3g", exc, dt)
            if dt < solver.dt_min:
                raise ConvergenceError(f"time step fell below dt_min: {exc}") from exc
            continue
        residual = float(np.abs(new.n - state.n).max() / (dt * np.abs(state.n).max()))
        state = new
        dts.append(dt)
        pos_min = min(pos_min, float(state.n.min()))
        if callback is not None:
            callback(state, dt, residual)
        if residual < solver.steady_tol:
            converged = True
            break
        if state.mass(cfg) < mass_floor:
            converged = extinct = True
            break
        since_growth += 1
        if since_growth >= solver.grow_after:
            dt = min(dt * solver.grow_factor, solver.dt_max)
            since_growth = 0
    if not converged:
        logger.warning("no steady state after %d steps (residual %.3g)", state.step_count, residual)
    dts = np.asarray(dts) if dts else np.asarray([np.nan])
    return EquilibriumResult(
        state=state,
        converged=converged,
        residual=residual,
        mass=state.mass(cfg),
        dt_summary={
            "accepted": int(state.step_count),
            "rejected": rejected,
            "dt_min": float(np.nanmin(dts)),
            "dt_max": float(np.nanmax(dts)),
            "dt_final": float(dts[-1]),
            "final_time": float(state.time),
        },
        positivity_min=pos_min,
        extinct=extinct,
        wall_time=_time.perf_counter() - t0,
    )


def mass_and_bounds(result: EquilibriumResult, cfg) -> dict:
    rho = result.state.rho
    R = cfg.growth_on_grid.values
    tol_bound = 1e-6 * float(np.abs(R).max())
    # shape diagnostic only: increasing then decreasing
    d = np.diff(rho)
    k = int(np.argmax(rho))
    unimodal = bool(np.all(d[:k] >= 0) and np.all(d[k:] <= 0))
    return {
        "mass": result.mass,
        "rho_min": float(rho.min()),
        "rho_max": float(rho.max()),
        "ok_upper": bool(rho.max() <= R.max() + tol_bound),
        "rho_unimodal": unimodal,
    }
