"""Growth rates, dispersal kernels and the scenario configuration."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np

from .domain import (
    Grid1D,
    Grid2D,
    KernelMatrix,
    SpatialDomain,
    TraitGrid,
    build_spatial_grid,
    build_trait_grid,
    sample_kernel,
)
from .errors import ModelError

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# growth rates


@dataclass(frozen=True)
class QuadraticSpace:
    """``R(x, theta) = r - g (b x - theta)^2``: optimal trait varies linearly in space."""

    r: float
    g: float
    b: float

    variant = "quadratic_space"

    def evaluate(self, x, theta):
        return self.r - self.g * (self.b * np.asarray(x) - np.asarray(theta)) ** 2

    def dtheta(self, x, theta):
        return 2.0 * self.g * (self.b * np.asarray(x) - np.asarray(theta))

    def dx(self, x, theta):
        return -2.0 * self.g * self.b * (self.b * np.asarray(x) - np.asarray(theta))

    def with_g(self, g: float) -> "QuadraticSpace":
        return replace(self, g=float(g))


@dataclass(frozen=True)
class QuadraticTrait:
    """``R(x, theta) = r - g (theta - theta0)^2``, independent of position."""

    r: float
    g: float
    theta0: float = 0.0

    variant = "quadratic_trait"

    def evaluate(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        return self.r - self.g * (theta - self.theta0) ** 2

    def dtheta(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        return -2.0 * self.g * (theta - self.theta0)

    def dx(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        return np.zeros_like(x)

    def with_g(self, g: float) -> "QuadraticTrait":
        return replace(self, g=float(g))


@dataclass(frozen=True)
class Tabulated:
    """Growth rate from a vectorised callable ``f(x, theta)``.

    Use :meth:`from_table` to interpolate a rectangular table. The C1
    regularity required of ``R`` cannot be checked for tabulated input;
    theta-derivatives are central differences with step ``fd_step``.
    """

    function: Callable = field(compare=False)
    fd_step: float = 1e-5
    label: str = "tabulated"

    variant = "tabulated"

    @classmethod
    def from_table(cls, x_nodes, theta_nodes, values, label: str = "table") -> "Tabulated":
        from scipy.interpolate import RegularGridInterpolator

        values = np.asarray(values, dtype=float)
        if values.shape != (len(x_nodes), len(theta_nodes)):
            raise ModelError("table shape must be (len(x_nodes), len(theta_nodes))")
        if not np.all(np.isfinite(values)):
            raise ModelError("growth table has missing or non-finite values")
        interp = RegularGridInterpolator(
            (np.asarray(x_nodes, float), np.asarray(theta_nodes, float)),
            values,
            bounds_error=False,
            fill_value=None,
        )

        def f(x, theta):
            x, theta = np.broadcast_arrays(np.asarray(x, float), np.asarray(theta, float))
            pts = np.stack([x.ravel(), theta.ravel()], axis=-1)
            return interp(pts).reshape(x.shape)

        return cls(function=f, label=label)

    def evaluate(self, x, theta):
        x, theta = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(theta, dtype=float))
        out = np.asarray(self.function(x, theta), dtype=float)
        if out.shape != x.shape:
            out = np.broadcast_to(out, x.shape).copy()
        if not np.all(np.isfinite(out)):
            raise ModelError("tabulated growth rate has missing or non-finite values")
        return out

    def dtheta(self, x, theta):
        h = self.fd_step
        theta = np.asarray(theta, dtype=float)
        return (self.evaluate(x, theta + h) - self.evaluate(x, theta - h)) / (2 * h)

    def dx(self, x, theta):
        h = self.fd_step
        x = np.asarray(x, dtype=float)
        return (self.evaluate(x + h, theta) - self.evaluate(x - h, theta)) / (2 * h)


GrowthSpec = Union[QuadraticSpace, QuadraticTrait, Tabulated]


def growth_bound(spec: GrowthSpec, domain: SpatialDomain, A: float, samples: int = 201) -> float:
    """W^{1,inf} bound ``C_R`` estimated on a dense sample of the closed domain."""
    xs = np.concatenate([np.linspace(a, b, samples) for a, b in domain.components])
    ts = np.linspace(-A, A, samples)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    vals = [np.abs(spec.evaluate(X, T)).max(), np.abs(spec.dtheta(X, T)).max(), np.abs(spec.dx(X, T)).max()]
    return float(max(vals))


@dataclass(frozen=True, eq=False)
class GrowthField:
    """``R`` and ``d_theta R`` sampled on a 2-D grid, shaped ``(N_x, N_theta)``."""

    values: np.ndarray
    dtheta: np.ndarray
    bound: float


def growth_field(spec: GrowthSpec, grid: Grid2D) -> GrowthField:
    X, T = np.meshgrid(grid.x.nodes, grid.theta.nodes, indexing="ij")
    values = np.asarray(spec.evaluate(X, T), dtype=float)
    if values.shape != X.shape or not np.all(np.isfinite(values)):
        raise ModelError("growth rate could not be sampled on the grid")
    d = np.asarray(spec.dtheta(X, T), dtype=float)
    bound = growth_bound(spec, grid.x.domain, grid.theta.A)
    return GrowthField(values=values, dtheta=d, bound=max(bound, float(np.abs(values).max())))


# --------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class ConstantKernel:
    k0: float = 1.0

    variant = "constant"

    def __post_init__(self):
        if not self.k0 > 0:
            raise ModelError("constant kernel must be positive")

    def evaluate(self, z):
        return np.full(np.shape(z), float(self.k0))

    @property
    def lower(self) -> float:
        return float(self.k0)

    @property
    def upper(self) -> float:
        return float(self.k0)

    @property
    def derivative_bound(self) -> float:
        return 0.0


@dataclass(frozen=True)
class GaussianFloorKernel:
    """``K(z) = floor + amplitude * exp(-(z / width)^2)``."""

    floor: float = 0.1
    amplitude: float = 1.0
    width: float = 1.0

    variant = "gaussian_floor"

    def __post_init__(self):
        if not self.floor > 0:
            raise ModelError("kernel floor must be positive so that K > c_K > 0")
        if self.amplitude < 0 or not self.width > 0:
            raise ModelError("kernel amplitude must be >= 0 and width > 0")

    def evaluate(self, z):
        z = np.asarray(z, dtype=float)
        return self.floor + self.amplitude * np.exp(-((z / self.width) ** 2))

    @property
    def lower(self) -> float:
        return float(self.floor)

    @property
    def upper(self) -> float:
        return float(self.floor + self.amplitude)

    @property
    def derivative_bound(self) -> float:
        return float(self.amplitude * np.sqrt(2.0 / np.e) / self.width)


KernelSpec = Union[ConstantKernel, GaussianFloorKernel]


# --------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class SolverConfig:
    dt0: float = 0.1
    dt_max: float = 10.0
    dt_min: float = 1e-8
    grow_factor: float = 1.2
    grow_after: int = 50
    steady_tol: float = 1e-9
    max_steps: int = 200_000
    scheme: str = "implicit"
    eig_tol: float = 1e-12
    eig_residual: float = 1e-10
    eig_maxiter: int = 50_000

    def __post_init__(self):
        if self.scheme not in ("implicit", "semi-implicit"):
            raise ModelError(f"unknown time scheme {self.scheme!r}")
        if not (self.dt0 > 0 and self.dt_max >= self.dt0 and self.grow_factor >= 1):
            raise ModelError("need dt0 > 0, dt_max >= dt0 and grow_factor >= 1")


@dataclass(frozen=True)
class DetectConfig:
    """Thresholds used to turn a finite-epsilon density into emergent traits."""

    peak_floor: float = 1e-3
    cluster_threshold: float = 0.01
    mass_floor: float = 1e-8


@dataclass(frozen=True)
class ScenarioConfig:
    domain: SpatialDomain
    A: float
    epsilon: float
    growth: GrowthSpec
    kernel: KernelSpec = field(default_factory=ConstantKernel)
    kappa: float = 1.0
    sigma_x: float = 1.0
    hx: float = 0.1
    htheta: float = 0.02
    solver: SolverConfig = field(default_factory=SolverConfig)
    detect: DetectConfig = field(default_factory=DetectConfig)

    def __post_init__(self):
        for name in ("A", "epsilon", "kappa", "sigma_x", "hx", "htheta"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ModelError(f"{name} must be positive, got {v}")

    @property
    def sigma_theta(self) -> float:
        return self.epsilon**2

    def replace(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @cached_property
    def x_grid(self) -> Grid1D:
        return build_spatial_grid(self.domain, self.hx)

    @cached_property
    def theta_grid(self) -> TraitGrid:
        return build_trait_grid(self.A, self.htheta)

    @cached_property
    def grid(self) -> Grid2D:
        return Grid2D(self.x_grid, self.theta_grid)

    @cached_property
    def kernel_matrix(self) -> KernelMatrix:
        return sample_kernel(self.x_grid, self.kernel)

    @cached_property
    def growth_on_grid(self) -> GrowthField:
        return growth_field(self.growth, self.grid)

    def to_dict(self) -> dict:
        """Flat ``section.key -> value`` mapping (the scenario-file vocabulary)."""
        out = {
            "domain.components": [list(c) for c in self.domain.components],
            "grid.hx": self.hx,
            "grid.htheta": self.htheta,
            "trait.A": self.A,
            "model.epsilon": self.epsilon,
            "model.kappa": self.kappa,
            "model.sigma_x": self.sigma_x,
            "growth.variant": self.growth.variant,
        }
        if isinstance(self.growth, Tabulated):
            out["growth.label"] = self.growth.label
        else:
            for f in fields(self.growth):
                out[f"growth.{f.name}"] = getattr(self.growth, f.name)
        out["kernel.variant"] = self.kernel.variant
        for f in fields(self.kernel):
            out[f"kernel.{f.name}"] = getattr(self.kernel, f.name)
        for f in fields(self.solver):
            out[f"solver.{f.name}"] = getattr(self.solver, f.name)
        for f in fields(self.detect):
            out[f"detect.{f.name}"] = getattr(self.detect, f.name)
        return out

    def scenario_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def validate_survival_assumption(cfg: ScenarioConfig) -> dict:
    """Scan ``lambda(theta, 0)`` over the trait grid.

    Returns the minimising trait, the minimum, and whether it is negative
    (a trait viable without competition exists).
    """
    from .spectral import lambda_curve

    table = lambda_curve(cfg, np.zeros(cfg.x_grid.size), cfg.theta_grid.nodes)
    k = int(np.argmin(table[:, 1]))
    theta0_hat, lam_min = float(table[k, 0]), float(table[k, 1])
    satisfied = lam_min < 0
    if not satisfied:
        logger.warning("survival assumption fails: min lambda(theta, 0) = %.4g >= 0", lam_min)
    return {"theta0_hat": theta0_hat, "lambda_min": lam_min, "satisfied": bool(satisfied)}
