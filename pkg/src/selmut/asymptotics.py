"""Small-mutation diagnostics for computed equilibria.

Everything here is a read-only function of a converged density ``n`` (and the
scenario that produced it): the log transform ``u = eps ln n``, its
constraint and Hamilton-Jacobi residual, emergent-trait detection, and the
uniform-in-eps regularity monitors.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ModelError, PreconditionError
from .operators import check_rho, dispersal_matrix
from .spectral import lambda_curve, principal_eigenvalue_2d, principal_lambda


@dataclass(frozen=True, eq=False)
class HopfColeField:
    u: np.ndarray
    epsilon: float


def hopf_cole(n: np.ndarray, epsilon: float) -> HopfColeField:
    n = np.asarray(n, dtype=float)
    if not np.all(np.isfinite(n)) or np.any(n <= 0):
        raise ModelError("log transform needs a strictly positive density")
    if not epsilon > 0:
        raise ModelError("epsilon must be positive")
    return HopfColeField(u=epsilon * np.log(n), epsilon=float(epsilon))


def tol_eig(cfg) -> float:
    """Slack for discrete eigenvalue comparisons: ``10 (eigen residual + h_x^2)``."""
    hx = max(cfg.x_grid.spacings)
    return 10.0 * (cfg.solver.eig_residual + hx**2)


def constraint_gap(u: HopfColeField) -> dict:
    """``|max_theta max_x u|`` (should vanish as eps -> 0).

    Also returns the global maximum of ``u`` (upper-bound monitor) and the
    variant ``|max_theta min_x u|``.
    """
    umax = float(u.u.max())
    return {
        "gap": abs(umax),
        "u_max": umax,
        "gap_min_x": abs(float(u.u.min(axis=0).max())),
    }


def _upper_envelope(u: HopfColeField) -> np.ndarray:
    return u.u.max(axis=0)


def hj_residual(u: HopfColeField, cfg, rho, lam_table: Optional[np.ndarray] = None) -> dict:
    """Compare ``|d_theta ubar|^2`` with ``lambda(theta, rho)`` near the support.

    ``ubar(theta) = max_x u``. The supremum is taken over the near-support set
    ``{ubar >= -sqrt(eps)}`` measured from zero. ``lam_table`` may pass a
    precomputed ``lambda_curve`` on the trait nodes.
    """
    theta = cfg.theta_grid.nodes
    ubar = _upper_envelope(u)
    du = np.gradient(ubar, cfg.theta_grid.h_theta)
    if lam_table is None:
        lam_table = lambda_curve(cfg, rho, theta)
    lam = lam_table[:, 1]
    r = np.abs(du**2 - lam)
    on = ubar >= -np.sqrt(u.epsilon)
    sup = float(r[on].max()) if on.any() else np.nan
    return {
        "per_theta": np.column_stack([theta, ubar, du**2, lam, r, on.astype(float)]),
        "sup_on_support": sup,
        "support_size": int(on.sum()),
    }


@dataclass(frozen=True, eq=False)
class EmergentTrait:
    theta_hat: float
    mass_fraction: float
    x_profile: np.ndarray
    width: float
    unconcentrated: bool = False


@dataclass(frozen=True, eq=False)
class EmergentTraitReport:
    traits: list
    classification: str  # "Monomorphic" | "Polymorphic" | "Extinct"
    thresholds: dict = field(default_factory=dict)
    total_mass: float = 0.0
    marginal: Optional[np.ndarray] = None

    @property
    def theta_hats(self) -> np.ndarray:
        return np.array([t.theta_hat for t in self.traits])

    def mass_fraction_in(self, lo: float, hi: float, cfg) -> float:
        """Share of the trait marginal carried by nodes with ``lo < theta < hi``."""
        th = cfg.theta_grid.nodes
        m = self.marginal
        total = m.sum()
        return float(m[(th > lo) & (th < hi)].sum() / total) if total > 0 else 0.0

    def is_symmetric(self, tol: float) -> bool:
        th = np.sort(self.theta_hats)
        return th.size > 0 and bool(np.all(np.abs(th + th[::-1]) <= tol))


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open ``(start, stop)`` pairs."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2], edges[1::2]))


def detect_emergent_traits(n: np.ndarray, cfg) -> EmergentTraitReport:
    """Cluster the trait marginal into emergent traits.

    Clusters are maximal runs where the marginal is at least ``peak_floor``
    times its maximum; each is summarised by its mass-weighted centroid and
    kept if it carries at least ``cluster_threshold`` of the mass.
    """
    det = cfg.detect
    n = np.asarray(n, dtype=float)
    w = cfg.x_grid.weights
    h = cfg.theta_grid.h_theta
    theta = cfg.theta_grid.nodes
    thresholds = {
        "peak_floor": det.peak_floor,
        "cluster_threshold": det.cluster_threshold,
        "mass_floor": det.mass_floor * cfg.domain.measure * 2 * cfg.A,
    }
    marginal = w @ n  # N(theta) = sum_j n(x_j, theta) w_j
    total = float(marginal.sum() * h)
    if total < thresholds["mass_floor"]:
        return EmergentTraitReport([], "Extinct", thresholds, total, marginal)
    traits = []
    spread_limit = 10.0 * np.sqrt(cfg.epsilon) * 2 * cfg.A
    for a, b in _runs(marginal >= det.peak_floor * marginal.max()):
        mass = marginal[a:b]
        frac = float(mass.sum() * h / total)
        if frac < det.cluster_threshold:
            continue
        centroid = float(np.dot(mass, theta[a:b]) / mass.sum())
        width = (b - a) * h
        traits.append(
            EmergentTrait(
                theta_hat=centroid,
                mass_fraction=frac,
                x_profile=n[:, a:b].sum(axis=1) * h,
                width=float(width),
                unconcentrated=bool(width > spread_limit),
            )
        )
    cls = "Monomorphic" if len(traits) == 1 else "Polymorphic"
    return EmergentTraitReport(traits, cls, thresholds, total, marginal)


def harnack_ratio(n: np.ndarray, cfg, epsilon: Optional[float] = None) -> dict:
    """Max over trait strips of width eps of ``sup n / inf n`` on ``Omega x strip``.

    Strips tile the trait axis from ``-A``; the last one may be shorter.
    """
    eps = cfg.epsilon if epsilon is None else float(epsilon)
    h = cfg.theta_grid.h_theta
    if h > eps * (1 + 1e-12):
        raise PreconditionError(f"h_theta={h:.4g} exceeds strip width eps={eps:.4g}")
    theta = cfg.theta_grid.nodes
    strip = np.floor((theta + cfg.A) / eps + 1e-12).astype(int)
    rows = []
    for s in np.unique(strip):
        block = n[:, strip == s]
        rows.append((-cfg.A + s * eps, min(cfg.A, -cfg.A + (s + 1) * eps), float(block.max() / block.min())))
    table = np.asarray(rows)
    return {"max_ratio": float(table[:, 2].max()), "per_strip": table}


def lipschitz_norms(u: HopfColeField, cfg) -> dict:
    """``max |d_x u| / eps`` and ``max |d_theta u|`` by finite differences.

    Spatial derivatives are taken inside each component (one-sided at its ends).
    """
    uu = u.u
    grid = cfg.x_grid
    lip_x = 0.0
    for sl, hx in zip(grid.component_slices(), grid.spacings):
        part = uu[sl]
        if part.shape[0] >= 2:
            lip_x = max(lip_x, float(np.abs(np.gradient(part, hx, axis=0)).max()))
    lip_t = float(np.abs(np.gradient(uu, cfg.theta_grid.h_theta, axis=1)).max())
    return {"lip_x_over_eps": lip_x / u.epsilon, "lip_theta": lip_t}


def rho_eigen_residual(rho, theta_bar: float, cfg) -> float:
    """``||D rho - rho (R(., theta_bar) - kappa rho)||_inf / ||rho||_inf`` with ``D`` the dispersal."""
    grid = cfg.x_grid
    rho = check_rho(rho, grid.size)
    R = np.asarray(cfg.growth.evaluate(grid.nodes, float(theta_bar)), dtype=float)
    res = dispersal_matrix(cfg) @ rho - rho * (R - cfg.kappa * rho)
    return float(np.abs(res).max() / np.abs(rho).max())


def refine_minimum(table: np.ndarray) -> tuple[float, int]:
    """Vertex of the parabola through the discrete argmin and its neighbours."""
    th, lam = table[:, 0], table[:, 1]
    k = int(np.argmin(lam))
    if 0 < k < th.size - 1:
        x0, x1, x2 = th[k - 1 : k + 2]
        y0, y1, y2 = lam[k - 1 : k + 2]
        denom = (x0 - x1) * (x0 - x2) * (x1 - x2)
        a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom
        b = (x2**2 * (y0 - y1) + x1**2 * (y2 - y0) + x0**2 * (y1 - y2)) / denom
        if a > 0:
            return float(np.clip(-b / (2 * a), x0, x2)), k
    return float(th[k]), k


def lambda_min_no_competition(cfg) -> tuple[float, float]:
    """``(theta0, lambda(theta0, 0))``: refined minimiser of the competition-free curve."""
    zero = np.zeros(cfg.x_grid.size)
    table = lambda_curve(cfg, zero, cfg.theta_grid.nodes)
    theta0, _ = refine_minimum(table)
    return theta0, min(principal_lambda(cfg, theta0, zero), float(table[:, 1].min()))


def mu_convergence_study(cfg, epsilons: Sequence[float]) -> dict:
    """``mu_eps`` against ``lambda(theta0, 0)`` along a list of eps.

    Returns the reference value, its minimiser, and a table with columns
    ``eps, mu, gap, h5`` where ``h5`` flags ``mu < lambda(theta0, 0) / 2``.
    """
    theta0, lam0 = lambda_min_no_competition(cfg)
    if not lam0 < 0:
        raise PreconditionError(f"survival assumption fails: lambda(theta0, 0) = {lam0:.4g} >= 0")
    rows = []
    init = None
    for eps in epsilons:
        pair = principal_eigenvalue_2d(cfg, epsilon=eps, init=init)
        init = pair.function
        mu = pair.value
        rows.append((float(eps), mu, abs(mu - lam0), float(mu < lam0 / 2)))
    return {"theta0": theta0, "lambda0": lam0, "table": np.asarray(rows)}


@dataclass(frozen=True)
class AsymptoticsReport:
    epsilon: float
    constraint_gap: float
    u_max: float
    hj_residual: float
    harnack_max_ratio: float
    lipschitz_x: float
    lipschitz_theta: float
    lambda_min_at_rho: float
    theta_min_at_rho: float
    tol_eig: float
    classification: str
    traits: tuple
    support_ok: bool
    rho_min: float
    rho_max: float
    rho_eigen_residual: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def support_inclusion(report: EmergentTraitReport, u: HopfColeField, cfg, rho, lam_table) -> list[dict]:
    """Check each detected trait sits near ``max ubar`` and near ``min lambda``."""
    theta = cfg.theta_grid.nodes
    ubar = _upper_envelope(u)
    lam_min = float(lam_table[:, 1].min())
    slack = tol_eig(cfg)
    out = []
    for t in report.traits:
        u_at = float(np.interp(t.theta_hat, theta, ubar))
        lam_at = principal_lambda(cfg, t.theta_hat, rho)
        out.append(
            {
                "theta_hat": t.theta_hat,
                "u_ok": bool(u_at >= ubar.max() - np.sqrt(u.epsilon)),
                "lambda_ok": bool(lam_at <= lam_min + slack),
                "x_positive": bool(np.all(t.x_profile > 0)),
            }
        )
    return out


def analyze(cfg, n: np.ndarray) -> tuple[AsymptoticsReport, dict]:
    """Run every diagnostic on an equilibrium density; returns the report and per-theta tables."""
    n = np.asarray(n, dtype=float).reshape(cfg.grid.shape)
    rho = n.sum(axis=1) * cfg.theta_grid.h_theta
    u = hopf_cole(n, cfg.epsilon)
    gap = constraint_gap(u)
    lam_table = lambda_curve(cfg, rho, cfg.theta_grid.nodes)
    hj = hj_residual(u, cfg, rho, lam_table)
    traits = detect_emergent_traits(n, cfg)
    try:
        harnack = harnack_ratio(n, cfg)
    except PreconditionError:
        harnack = {"max_ratio": float("nan"), "per_strip": np.empty((0, 3))}
    lip = lipschitz_norms(u, cfg)
    theta_min, _ = refine_minimum(lam_table)
    lam_min = min(principal_lambda(cfg, theta_min, rho), float(lam_table[:, 1].min()))
    support = support_inclusion(traits, u, cfg, rho, lam_table)
    rho_res = (
        rho_eigen_residual(rho, traits.traits[0].theta_hat, cfg)
        if traits.classification == "Monomorphic"
        else float("nan")
    )
    report = AsymptoticsReport(
        epsilon=cfg.epsilon,
        constraint_gap=gap["gap"],
        u_max=gap["u_max"],
        hj_residual=hj["sup_on_support"],
        harnack_max_ratio=harnack["max_ratio"],
        lipschitz_x=lip["lip_x_over_eps"],
        lipschitz_theta=lip["lip_theta"],
        lambda_min_at_rho=lam_min,
        theta_min_at_rho=theta_min,
        tol_eig=tol_eig(cfg),
        classification=traits.classification,
        traits=tuple(round(t.theta_hat, 12) for t in traits.traits),
        support_ok=all(s["u_ok"] and s["lambda_ok"] and s["x_positive"] for s in support),
        rho_min=float(rho.min()),
        rho_max=float(rho.max()),
        rho_eigen_residual=rho_res,
    )
    tables = {
        "hj": hj["per_theta"],
        "harnack": harnack["per_strip"],
        "marginal": np.column_stack([cfg.theta_grid.nodes, traits.marginal]),
    }
    return report, tables
