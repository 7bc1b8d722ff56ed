"""Discrete dispersal, mutation and potential operators.

Conventions
-----------
* 1-D fields live on the spatial nodes, 2-D fields are arrays shaped
  ``(N_x, N_theta)`` (x-major, matching :class:`selmut.domain.Grid2D`).
* Every assembled operator is self-adjoint in the weighted product
  ``<u, v>_w``. With ``S = diag(sqrt(w))`` the matrix ``S M S^-1`` is plainly
  symmetric; the ``symmetric`` views below are in those coordinates.
* Off-diagonal entries of ``-d_xx + L`` and ``-d_thth`` are <= 0, so shifted
  systems are Stieltjes matrices (symmetric M-matrices) whenever positive
  definite. Banded Cholesky on such a matrix only ever adds same-sign terms,
  which keeps solutions positive down to the smallest tails.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .domain import Grid1D, KernelMatrix, TraitGrid
from .errors import DomainError, ModelError


def neumann_laplacian(grid) -> sp.csr_matrix:
    """Second-difference matrix with reflected ghost nodes, one block per component.

    Accepts a :class:`Grid1D` (components decoupled) or a :class:`TraitGrid`.
    """
    if isinstance(grid, TraitGrid):
        blocks = [(grid.size, grid.h_theta)]
    elif isinstance(grid, Grid1D):
        blocks = list(zip(grid.counts, grid.spacings))
    else:
        raise TypeError(f"expected Grid1D or TraitGrid, got {type(grid).__name__}")
    mats = []
    for n, h in blocks:
        if n < 2:
            raise DomainError("Neumann stencil needs at least two nodes per component")
        main = np.full(n, -2.0)
        main[0] = main[-1] = -1.0
        off = np.ones(n - 1)
        mats.append(sp.diags([off, main, off], [-1, 0, 1]) / h**2)
    return sp.block_diag(mats, format="csr")


def nonlocal_operator(km: KernelMatrix, grid: Grid1D) -> np.ndarray:
    """Dense midpoint discretisation of ``Lu(x) = int_Omega [u(x) - u(y)] K(x - y) dy``."""
    K = km.values
    if K.shape != (grid.size, grid.size):
        raise ModelError(f"kernel matrix {K.shape} does not match grid of size {grid.size}")
    KW = K * grid.weights[None, :]
    return np.diag(KW.sum(axis=1)) - KW


def _symmetrize(mat: np.ndarray, weights: np.ndarray) -> np.ndarray:
    s = np.sqrt(weights)
    out = mat * s[:, None] / s[None, :]
    # kill roundoff asymmetry; exact symmetry is what the eigen solvers assume
    return 0.5 * (out + out.T)


def dispersal_matrix(cfg) -> np.ndarray:
    """``sigma_x (-d_xx + L)`` on the spatial grid, dense."""
    grid = cfg.x_grid
    lap = neumann_laplacian(grid).toarray()
    return cfg.sigma_x * (-lap + nonlocal_operator(cfg.kernel_matrix, grid))


def check_rho(rho, size: int) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim == 0:
        rho = np.full(size, float(rho))
    if rho.shape != (size,):
        raise ModelError(f"rho has shape {rho.shape}, expected ({size},)")
    if not np.all(np.isfinite(rho)):
        raise ModelError("rho contains NaN or inf")
    return rho


@dataclass(frozen=True, eq=False)
class LinOp1D:
    """``M = D - diag(potential_term)`` acting on spatial fields.

    ``dispersal`` is the banded+dense part ``sigma_x(-d_xx + L)``, ``potential``
    the diagonal ``-(R(., theta) - kappa rho)``.
    """

    dispersal: np.ndarray
    potential: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.potential.size

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.dispersal @ u + self.potential * u

    def to_dense(self) -> np.ndarray:
        return self.dispersal + np.diag(self.potential)

    def symmetric(self) -> np.ndarray:
        """``S M S^-1`` with ``S = diag(sqrt(w))``."""
        return _symmetrize(self.dispersal, self.weights) + np.diag(self.potential)

    def inner(self, u, v) -> float:
        return float(np.sum(self.weights * u * v))


def assemble_1d(cfg, theta: float, rho) -> LinOp1D:
    """Operator of the spatial eigenproblem at trait ``theta`` and competition ``rho``.

    ``R`` is evaluated at the exact ``theta``, not at the nearest trait node.
    """
    grid = cfg.x_grid
    rho = check_rho(rho, grid.size)
    if np.any(rho < 0):
        import warnings

        warnings.warn("rho has negative entries", RuntimeWarning, stacklevel=2)
    R = np.asarray(cfg.growth.evaluate(grid.nodes, float(theta)), dtype=float)
    return LinOp1D(
        dispersal=_cached_dispersal(cfg),
        potential=-(R - cfg.kappa * rho),
        weights=grid.weights,
    )


def _cached_dispersal(cfg) -> np.ndarray:
    # ScenarioConfig is frozen; stash the matrix in its instance dict
    cache = cfg.__dict__.setdefault("_op_cache", {})
    if "dispersal" not in cache:
        cache["dispersal"] = dispersal_matrix(cfg)
        cache["dispersal_sym"] = _symmetrize(cache["dispersal"], cfg.x_grid.weights)
    return cache["dispersal"]


def _cached_dispersal_sym(cfg) -> np.ndarray:
    _cached_dispersal(cfg)
    return cfg.__dict__["_op_cache"]["dispersal_sym"]


def lap_theta_apply(v: np.ndarray, h: float) -> np.ndarray:
    """Neumann second difference along axis 1 of a ``(N_x, N_theta)`` array."""
    out = np.empty_like(v)
    out[:, 1:-1] = v[:, :-2] - 2.0 * v[:, 1:-1] + v[:, 2:]
    out[:, 0] = v[:, 1] - v[:, 0]
    out[:, -1] = v[:, -2] - v[:, -1]
    return out / h**2


@dataclass(frozen=True, eq=False)
class LinOp2D:
    """Kronecker-structured ``D_x (x) I + I (x) (-eps^2 d_thth) + diag(potential)``.

    ``dispersal`` is the spatial part, ``mutation`` the coefficient ``eps^2``,
    ``potential`` an ``(N_x, N_theta)`` array.
    """

    dispersal: np.ndarray
    dispersal_sym: np.ndarray
    mutation: float
    h_theta: float
    potential: np.ndarray
    weights: np.ndarray  # spatial weights; trait weights are uniform

    @property
    def shape(self) -> tuple[int, int]:
        return self.potential.shape

    @property
    def size(self) -> int:
        return self.potential.size

    def apply(self, n: np.ndarray) -> np.ndarray:
        n = n.reshape(self.shape)
        return (
            self.dispersal @ n
            - self.mutation * lap_theta_apply(n, self.h_theta)
            + self.potential * n
        )

    def apply_symmetric(self, v: np.ndarray) -> np.ndarray:
        v = v.reshape(self.shape)
        return (
            self.dispersal_sym @ v
            - self.mutation * lap_theta_apply(v, self.h_theta)
            + self.potential * v
        )

    def theta_matrix(self) -> sp.csr_matrix:
        nt = self.shape[1]
        main = np.full(nt, 2.0)
        main[0] = main[-1] = 1.0
        off = -np.ones(nt - 1)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr") * (self.mutation / self.h_theta**2)

    def to_dense(self) -> np.ndarray:
        nx, nt = self.shape
        return (
            np.kron(self.dispersal, np.eye(nt))
            + np.kron(np.eye(nx), self.theta_matrix().toarray())
            + np.diag(self.potential.ravel())
        )

    def gershgorin(self) -> tuple[float, float]:
        """Lower and upper Gershgorin bounds of the symmetric form."""
        Dx = self.dispersal_sym
        dx_diag = np.diag(Dx)
        dx_off = np.abs(Dx).sum(axis=1) - np.abs(dx_diag)
        nt = self.shape[1]
        c = self.mutation / self.h_theta**2
        th_diag = np.full(nt, 2.0 * c)
        th_diag[0] = th_diag[-1] = c
        diag = dx_diag[:, None] + th_diag[None, :] + self.potential
        off = dx_off[:, None] + th_diag[None, :]
        return float((diag - off).min()), float((diag + off).max())

    def banded_upper(self, diag_shift: float = 0.0, scale: float = 1.0) -> np.ndarray:
        """Upper banded storage of ``diag_shift * I + scale * M_sym`` in theta-major order.

        Unknown ``p = m * N_x + j``; bandwidth ``N_x``. Layout follows
        :func:`scipy.linalg.cholesky_banded` (``ab[u + i - j, j] = a[i, j]``).
        """
        nx, nt = self.shape
        N = nx * nt
        u = nx
        ab = np.zeros((u + 1, N))
        Dx = self.dispersal_sym
        c = self.mutation / self.h_theta**2
        th_diag = np.full(nt, 2.0 * c)
        th_diag[0] = th_diag[-1] = c
        # main diagonal, theta-major
        main = np.diag(Dx)[None, :] + th_diag[:, None] + self.potential.T
        ab[u, :] = diag_shift + scale * main.ravel()
        # within-slice couplings, offset d < nx
        for d in range(1, nx):
            row = np.zeros(nx)
            row[: nx - d] = np.diagonal(Dx, offset=d)
            vals = np.tile(row, nt)  # entry a[p, p + d] for p = (m, j)
            ab[u - d, d:] = scale * vals[: N - d]
        # theta neighbours, offset nx
        ab[0, nx:] = scale * (-c)
        return ab


def assemble_2d(cfg, epsilon: float | None = None, rho=None) -> LinOp2D:
    """Operator of the joint space-trait problem; ``rho=None`` means no competition."""
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    grid = cfg.grid
    R = cfg.growth_on_grid.values
    if rho is None:
        pot = -R
    else:
        rho = check_rho(rho, grid.x.size)
        pot = -(R - cfg.kappa * rho[:, None])
    return LinOp2D(
        dispersal=_cached_dispersal(cfg),
        dispersal_sym=_cached_dispersal_sym(cfg),
        mutation=eps**2,
        h_theta=grid.theta.h_theta,
        potential=np.ascontiguousarray(pot),
        weights=grid.x.weights,
    )


def to_symmetric_coords(field: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Multiply by ``sqrt(w)`` along the spatial axis (axis 0)."""
    s = np.sqrt(weights)
    return field * (s if field.ndim == 1 else s[:, None])


def from_symmetric_coords(field: np.ndarray, weights: np.ndarray) -> np.ndarray:
    s = np.sqrt(weights)
    return field / (s if field.ndim == 1 else s[:, None])
