"""Bundled scenarios for the figure reproductions and parameter studies.

Model parameters follow the reference figures. Kernel, grids and time-step
controls are our own choices and are written into every run manifest:

* kernel ``K(z) = 0.1 + 3 exp(-z^2)`` for the figure scenarios,
* spatial step 0.1, trait step 0.0125 (fig1) or 0.01, capped at ``epsilon``
  so every Harnack strip holds at least one trait node,
* implicit time stepping with ``dt`` allowed to grow to 1000 after every two
  accepted steps (the steady state does not depend on the path taken).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from .domain import SpatialDomain
from .io import config_from_dict
from .model import (
    ConstantKernel,
    GaussianFloorKernel,
    QuadraticSpace,
    QuadraticTrait,
    ScenarioConfig,
    SolverConfig,
)

PRESET_KERNEL = GaussianFloorKernel(floor=0.1, amplitude=3.0, width=1.0)
PRESET_SOLVER = SolverConfig(dt_max=1000.0, grow_after=2)

FIG1_EPSILON = 0.1
FIG1_LADDER = (0.2, 0.1, 0.05)
FIG2_EPSILON = 0.01
FIG2_G = (0.01, 1.0, 5.0)
FIG4_EPSILON = 0.01
MU_LADDER = (0.4, 0.2, 0.1, 0.05)
G_SCAN = (0.01, 0.1, 1.0, 5.0)
SENSITIVITY_G = (1.0, 0.1, 0.01, 0.001)
FRAGMENT_A = 1.0
FRAGMENT_D = (0.1, 0.5, 1.0, 1.5)
SMALL_G = 0.01


def apply_overrides(cfg: ScenarioConfig, overrides: Optional[Mapping] = None) -> ScenarioConfig:
    """Rebuild ``cfg`` with flat scenario-file keys replaced."""
    if not overrides:
        return cfg
    return config_from_dict({**cfg.to_dict(), **overrides})


def fig1(epsilon: float = FIG1_EPSILON) -> ScenarioConfig:
    return ScenarioConfig(
        domain=SpatialDomain(((-2.0, 2.0),)),
        A=2.0,
        epsilon=epsilon,
        growth=QuadraticSpace(r=1.0, g=0.1, b=1.0),
        kernel=PRESET_KERNEL,
        hx=0.1,
        htheta=min(0.0125, epsilon),
        solver=PRESET_SOLVER,
    )


def fig2(g: float, epsilon: float = FIG2_EPSILON) -> ScenarioConfig:
    return ScenarioConfig(
        domain=SpatialDomain(((-2.0, 2.0),)),
        A=3.0,
        epsilon=epsilon,
        growth=QuadraticSpace(r=5.0, g=g, b=1.0),
        kernel=PRESET_KERNEL,
        hx=0.1,
        htheta=min(0.01, epsilon),
        solver=PRESET_SOLVER,
    )


def small_g(epsilon: float = 0.05) -> ScenarioConfig:
    """fig2 geometry with weak selection: the monomorphic regime."""
    return fig2(SMALL_G, epsilon)


def fragmented(d: float, a: float = FRAGMENT_A, epsilon: float = FIG4_EPSILON) -> ScenarioConfig:
    """Two patches ``(-d-a, -d) u (d, d+a)`` with ``r = b = g = 1``, ``A = 2``."""
    return ScenarioConfig(
        domain=SpatialDomain(((-d - a, -d), (d, d + a))),
        A=2.0,
        epsilon=epsilon,
        growth=QuadraticSpace(r=1.0, g=1.0, b=1.0),
        kernel=PRESET_KERNEL,
        hx=0.1,
        htheta=min(0.01, epsilon),
        solver=PRESET_SOLVER,
    )


def fig4_near(epsilon: float = FIG4_EPSILON) -> ScenarioConfig:
    return fragmented(0.1, 1.0, epsilon)


def fig4_far(epsilon: float = FIG4_EPSILON) -> ScenarioConfig:
    return fragmented(1.5, 1.0, epsilon)


def example_a(theta0: float = 0.5, epsilon: float = 0.05, nx: int = 64, htheta: float = 0.01) -> ScenarioConfig:
    """Position-independent quadratic growth on ``(-1, 1)`` with ``K = 1``."""
    return ScenarioConfig(
        domain=SpatialDomain(((-1.0, 1.0),)),
        A=1.0,
        epsilon=epsilon,
        growth=QuadraticTrait(r=1.0, g=1.0, theta0=theta0),
        kernel=ConstantKernel(1.0),
        hx=2.0 / nx,
        htheta=htheta,
        solver=PRESET_SOLVER,
    )


@dataclass(frozen=True)
class Preset:
    name: str
    kind: str  # equilibrium | mu-study | g-scan | fragmentation
    description: str
    scenarios: Callable[[Optional[float]], list]


PRESETS = {
    "fig1": Preset(
        "fig1",
        "equilibrium",
        "r=1, b=1, g=0.1, Omega=(-2,2), A=2; concentration at theta=0",
        lambda eps: [(f"eps{e:g}", fig1(e)) for e in ([eps] if eps else [FIG1_EPSILON])],
    ),
    "fig2": Preset(
        "fig2",
        "equilibrium",
        "r=5, b=1, Omega=(-2,2), A=3, g in {0.01, 1, 5}; trait densities",
        lambda eps: [(f"g{g:g}", fig2(g, eps or FIG2_EPSILON)) for g in FIG2_G],
    ),
    "fig3": Preset(
        "fig3",
        "equilibrium",
        "same runs as fig2; spatial densities rho and their shape",
        lambda eps: [(f"g{g:g}", fig2(g, eps or FIG2_EPSILON)) for g in FIG2_G],
    ),
    "fig4-near": Preset(
        "fig4-near",
        "equilibrium",
        "Omega=(-1.1,-0.1) u (0.1,1.1), r=b=g=1, A=2",
        lambda eps: [("near", fig4_near(eps or FIG4_EPSILON))],
    ),
    "fig4-far": Preset(
        "fig4-far",
        "equilibrium",
        "Omega=(-2.5,-1.5) u (1.5,2.5), r=b=g=1, A=2",
        lambda eps: [("far", fig4_far(eps or FIG4_EPSILON))],
    ),
    "exampleA": Preset(
        "exampleA",
        "equilibrium",
        "R = 1 - (theta - 0.5)^2 on (-1,1), K = 1; single trait at 0.5",
        lambda eps: [("theta0_0.5", example_a(0.5, eps or 0.05))],
    ),
    "mu-ladder": Preset(
        "mu-ladder",
        "mu-study",
        "R = 1 - theta^2 on (-1,1), K = 1, N_x = 64; mu_eps against lambda(theta0, 0)",
        lambda eps: [("ladder", example_a(0.0, MU_LADDER[0]))],
    ),
    "g-scan": Preset(
        "g-scan",
        "g-scan",
        "fig2 geometry: lambda(theta, 0) monotone in g; eigenfunction sensitivity vanishing with g",
        lambda eps: [("gscan", fig2(1.0, eps or FIG2_EPSILON))],
    ),
    "fragmentation-scan": Preset(
        "fragmentation-scan",
        "fragmentation",
        "Omega_d = (-d-a,-d) u (d,d+a), a=1, d in {0.1, 0.5, 1, 1.5}",
        lambda eps: [(f"d{d:g}", fragmented(d, FRAGMENT_A, eps or FIG4_EPSILON)) for d in FRAGMENT_D],
    ),
}


def preset_scenarios(name: str, epsilon: Optional[float] = None, overrides: Optional[Mapping] = None) -> list:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return [(label, apply_overrides(cfg, overrides)) for label, cfg in PRESETS[name].scenarios(epsilon)]
