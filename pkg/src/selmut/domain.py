"""Cell-centred grids over fragmented 1-D habitats and the trait interval.

Every grid carries midpoint quadrature weights, so the discrete inner product
``<u, v>_w = sum_j w_j u_j v_j`` approximates the L2 product over the domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ModelError


def _nearest_int(value: float) -> int:
    # round-half-up; Python's round() is banker's rounding
    return int(np.floor(value + 0.5))


@dataclass(frozen=True)
class SpatialDomain:
    """Union of disjoint open intervals ``]a_1,b_1[ u ... u ]a_m,b_m[``."""

    components: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        comps = tuple((float(a), float(b)) for a, b in self.components)
        if not comps:
            raise DomainError("spatial domain needs at least one component")
        prev = -np.inf
        for a, b in comps:
            if not (np.isfinite(a) and np.isfinite(b)):
                raise DomainError(f"component ({a}, {b}) has non-finite endpoints")
            if not b > a:
                raise DomainError(f"component ({a}, {b}) has non-positive length")
            if not a > prev:
                raise DomainError("components must be strictly increasing and disjoint")
            prev = b
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Sequence[float]]) -> "SpatialDomain":
        try:
            comps = tuple((p[0], p[1]) for p in pairs)
        except (TypeError, IndexError) as exc:
            raise DomainError(f"cannot read domain components from {pairs!r}") from exc
        for p in pairs:
            if len(p) != 2:
                raise DomainError(f"component {p!r} is not an [a, b] pair")
        return cls(comps)

    @property
    def measure(self) -> float:
        return float(sum(b - a for a, b in self.components))

    @property
    def n_components(self) -> int:
        return len(self.components)

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        mirrored = sorted((-b, -a) for a, b in self.components)
        return all(
            abs(a - c) <= tol and abs(b - d) <= tol
            for (a, b), (c, d) in zip(self.components, mirrored)
        )


@dataclass(frozen=True, eq=False)
class Grid1D:
    """Cell-centred grid of a :class:`SpatialDomain`, one spacing per component."""

    domain: SpatialDomain
    nodes: np.ndarray
    weights: np.ndarray
    component_of: np.ndarray
    spacings: tuple[float, ...]
    counts: tuple[int, ...]

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def component_slices(self) -> list[slice]:
        out, start = [], 0
        for n in self.counts:
            out.append(slice(start, start + n))
            start += n
        return out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class TraitGrid:
    """Uniform cell-centred grid of the trait interval ``]-A, A[``."""

    A: float
    nodes: np.ndarray
    h_theta: float

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.size, self.h_theta)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Product grid of space and trait; flat index is x-major: ``j * N_theta + m``."""

    x: Grid1D
    theta: TraitGrid

    @property
    def shape(self) -> tuple[int, int]:
        return (self.x.size, self.theta.size)

    @property
    def size(self) -> int:
        return self.x.size * self.theta.size

    def flat_index(self, j, m):
        return np.asarray(j) * self.theta.size + np.asarray(m)

    def unflat_index(self, k):
        return np.divmod(np.asarray(k), self.theta.size)

    @property
    def weights(self) -> np.ndarray:
        """Cell areas ``w_j * h_theta`` shaped ``(N_x, N_theta)``."""
        return np.outer(self.x.weights, self.theta.weights)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Pointwise kernel values ``K(x_j - x_k)`` on the nodes of a grid."""

    values: np.ndarray
    grid: Grid1D = field(repr=False)
    lower: float = 0.0
    upper: float = np.inf


def build_spatial_grid(domain: SpatialDomain, h_target: float) -> Grid1D:
    if not (np.isfinite(h_target) and h_target > 0):
        raise DomainError(f"h_target must be positive, got {h_target}")
    nodes, weights, comp, spacings, counts = [], [], [], [], []
    for i, (a, b) in enumerate(domain.components):
        n = max(2, _nearest_int((b - a) / h_target))
        h = (b - a) / n
        nodes.append(a + (np.arange(n) + 0.5) * h)
        weights.append(np.full(n, h))
        comp.append(np.full(n, i, dtype=int))
        spacings.append(h)
        counts.append(n)
    return Grid1D(
        domain=domain,
        nodes=np.concatenate(nodes),
        weights=np.concatenate(weights),
        component_of=np.concatenate(comp),
        spacings=tuple(spacings),
        counts=tuple(counts),
    )


def build_trait_grid(A: float, h_target: float) -> TraitGrid:
    if not (np.isfinite(A) and A > 0):
        raise DomainError(f"trait half-width A must be positive, got {A}")
    if not (np.isfinite(h_target) and h_target > 0):
        raise DomainError(f"h_target must be positive, got {h_target}")
    n = max(4, _nearest_int(2 * A / h_target))
    h = 2 * A / n
    return TraitGrid(A=float(A), nodes=-A + (np.arange(n) + 0.5) * h, h_theta=h)


def sample_kernel(grid: Grid1D, kernel) -> KernelMatrix:
    """Evaluate an even, positive kernel on all node differences.

    ``kernel`` is any object exposing ``evaluate(z)`` plus declared bounds
    ``lower`` and ``upper`` (see :class:`selmut.model.KernelSpec`).
    """
    diff = grid.nodes[:, None] - grid.nodes[None, :]
    values = np.asarray(kernel.evaluate(diff), dtype=float)
    if values.shape != diff.shape:
        raise ModelError("kernel evaluation returned the wrong shape")
    if not np.all(np.isfinite(values)) or np.any(values <= 0):
        raise ModelError("kernel must be finite and strictly positive on the domain")
    # exact symmetry even if evaluate() is not bitwise even
    values = 0.5 * (values + values.T)
    lo, hi = float(kernel.lower), float(kernel.upper)
    if values.min() < lo or values.max() > hi:
        raise ModelError(
            f"sampled kernel range [{values.min():.6g}, {values.max():.6g}] "
            f"violates declared bounds [{lo}, {hi}]"
        )
    values.setflags(write=False)
    return KernelMatrix(values=values, grid=grid, lower=lo, upper=hi)
