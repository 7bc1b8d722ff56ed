"""Command-line entry point: ``selmut <subcommand> [options] [--section.key value ...]``.

Subcommands: equilibrium, eigen, mu-study, verify, chi, sweep, preset.
Scenario keys come from ``--config FILE`` and can be overridden by flags named
after the keys (``--model.epsilon 0.05``); ``--epsilon``, ``--hx`` and
``--htheta`` are shorthands. Every run writes a ``manifest.json`` listing its
outputs.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import asymptotics as asy
from .equilibrium import (
    ConstantInit,
    GaussianInit,
    LoadedInit,
    elliptic_residual,
    mass_and_bounds,
    solve_equilibrium,
)
from .errors import ConfigError, SelmutError
from .io import (
    RunManifest,
    config_from_dict,
    load_config_file,
    parse_value,
    read_checkpoint,
    write_checkpoint,
    write_report,
    write_table,
)
from .model import validate_survival_assumption
from .presets import (
    G_SCAN,
    MU_LADDER,
    PRESETS,
    SENSITIVITY_G,
    preset_scenarios,
)
from .spectral import (
    chi_fixed_point,
    eigfun_theta_sensitivity,
    g_monotonicity_scan,
    lambda_curve,
    principal_eigenpair_1d,
    principal_eigenvalue_2d,
)

logger = logging.getLogger("selmut")

SHORTHANDS = {"epsilon": "model.epsilon", "hx": "grid.hx", "htheta": "grid.htheta"}


# --------------------------------------------------------------------------
# argument handling


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in str(text).replace("[", "").replace("]", "").split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_overrides(tokens: Sequence[str]) -> dict:
    """Turn leftover ``--section.key value`` tokens into scenario overrides."""
    out, i = {}, 0
    tokens = list(tokens)
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"flag {tok} needs a value")
            value = tokens[i + 1]
            i += 2
        key = SHORTHANDS.get(key, key)
        if "." not in key:
            raise ConfigError(f"unknown option --{key}")
        out[key] = parse_value(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="selmut", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="scenario file (flat key = value lines)")
        sp.add_argument("--out", type=Path, help="output directory")
        return sp

    eq = common(sub.add_parser("equilibrium", help="relax to a steady state"))
    eq.add_argument("--init", choices=["constant", "gaussian"], default="constant")
    eq.add_argument("--init-c", type=float, default=1.0)
    eq.add_argument("--init-center", type=float, default=0.0)
    eq.add_argument("--init-width", type=float, default=0.5)
    eq.add_argument("--init-checkpoint", type=Path)
    eq.add_argument("--verify", action="store_true", help="also run the small-mutation diagnostics")

    eg = common(sub.add_parser("eigen", help="principal eigenvalues"))
    eg.add_argument("--theta", type=_floats, help="comma-separated traits (default: the trait grid)")
    eg.add_argument("--rho", default="zero", help="'zero', a number, or a checkpoint path")
    eg.add_argument("--two-d", action="store_true", help="joint space-trait eigenvalue mu_eps instead")

    mu = common(sub.add_parser("mu-study", help="mu_eps against lambda(theta0, 0)"))
    mu.add_argument("--epsilons", type=_floats, default=list(MU_LADDER))

    vf = common(sub.add_parser("verify", help="diagnostics on a checkpoint"), config=False)
    vf.add_argument("checkpoint", type=Path)

    ch = common(sub.add_parser("chi", help="fixed point of the trait map"))
    ch.add_argument("--theta-init", type=float, default=0.0)
    ch.add_argument("--rho", default="zero")

    sw = common(sub.add_parser("sweep", help="equilibria over one scenario key"))
    sw.add_argument("--param", required=True, help="scenario key, e.g. model.epsilon")
    sw.add_argument("--values", type=_floats, required=True)
    sw.add_argument("--workers", type=int, help="default: $SELMUT_WORKERS or 1")

    pr = common(sub.add_parser("preset", help="bundled scenarios: " + ", ".join(PRESETS)), config=False)
    pr.add_argument("name", choices=sorted(PRESETS))
    pr.add_argument("--workers", type=int, help="default: $SELMUT_WORKERS or 1")
    return p


def _resolve_config(args, overrides: dict):
    flat = load_config_file(args.config) if getattr(args, "config", None) else {}
    flat.update(overrides)
    if not flat:
        raise ConfigError("no scenario given: pass --config FILE or scenario flags")
    return config_from_dict(flat)


def _resolve_rho(spec: str, cfg) -> np.ndarray:
    if spec == "zero":
        return np.zeros(cfg.x_grid.size)
    try:
        return np.full(cfg.x_grid.size, float(spec))
    except ValueError:
        pass
    ck_cfg, state, _ = read_checkpoint(spec)
    if ck_cfg.grid.shape != cfg.grid.shape or not np.allclose(ck_cfg.x_grid.nodes, cfg.x_grid.nodes):
        raise ConfigError(f"checkpoint {spec} was computed on a different grid")
    return state.rho


def _written(manifest: RunManifest, out: Path) -> RunManifest:
    manifest.wall_clock = time.time() - manifest.started
    manifest.write(out)
    return manifest


def _outdir(args, command: str, key: str) -> Path:
    out = args.out or Path("runs") / f"{command}-{key}"
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# shared run pieces


def write_equilibrium(cfg, result, out: Path, manifest: RunManifest, *, verify: bool = False, prefix: str = "") -> dict:
    """Write checkpoint, tables and report for one equilibrium; return its summary."""
    state = result.state
    bounds = mass_and_bounds(result, cfg)
    traits = asy.detect_emergent_traits(state.n, cfg)
    summary = {
        "converged": result.converged,
        "residual": result.residual,
        "extinct": result.extinct,
        "mass": result.mass,
        "elliptic_residual": elliptic_residual(cfg, state),
        "positivity_min": result.positivity_min,
        "wall_time": result.wall_time,
        **{f"dt_{k}" if not k.startswith("dt") else k: v for k, v in result.dt_summary.items()},
        **bounds,
        "classification": traits.classification,
        "traits": [t.theta_hat for t in traits.traits],
        "trait_mass_fractions": [t.mass_fraction for t in traits.traits],
        "mass_fraction_abs_theta_lt_0.25": traits.mass_fraction_in(-0.25, 0.25, cfg),
    }
    grid_meta = {"scenario_hash": cfg.scenario_hash(), "epsilon": cfg.epsilon}
    manifest.add(write_checkpoint(out / f"{prefix}checkpoint.csv", cfg, state))
    manifest.add(write_table(out / f"{prefix}rho.csv", ["x", "rho"], np.column_stack([cfg.x_grid.nodes, state.rho]), grid_meta))
    manifest.add(
        write_table(out / f"{prefix}marginal.csv", ["theta", "marginal"], np.column_stack([cfg.theta_grid.nodes, traits.marginal]), grid_meta)
    )
    if verify:
        report, tables = asy.analyze(cfg, state.n)
        summary.update({f"asy_{k}": v for k, v in report.to_dict().items()})
        manifest.add(write_table(out / f"{prefix}hj.csv", ["theta", "ubar", "dubar_sq", "lambda", "residual", "near_support"], tables["hj"], grid_meta))
        if tables["harnack"].size:
            manifest.add(write_table(out / f"{prefix}harnack.csv", ["theta_lo", "theta_hi", "ratio"], tables["harnack"], grid_meta))
    manifest.add(write_report(out / f"{prefix}report.txt", summary))
    return summary


def _init_from_args(args):
    if args.init_checkpoint:
        _, state, _ = read_checkpoint(args.init_checkpoint)
        return LoadedInit(state.n)
    if args.init == "gaussian":
        return GaussianInit(args.init_center, args.init_width)
    return ConstantInit(args.init_c)


def equilibrium_job(flat: dict, out: str, label: str, verify: bool) -> dict:
    """One isolated equilibrium run (picklable for process pools)."""
    cfg = config_from_dict(flat)
    manifest = RunManifest("equilibrium", cfg.scenario_hash(), cfg.to_dict())
    result = solve_equilibrium(cfg)
    summary = write_equilibrium(cfg, result, Path(out), manifest, verify=verify, prefix=f"{label}_")
    return {"label": label, "summary": summary, "outputs": manifest.outputs}


def _workers(requested: Optional[int]) -> int:
    if requested:
        return max(1, requested)
    try:
        return max(1, int(os.environ.get("SELMUT_WORKERS", "1")))
    except ValueError as exc:
        raise ConfigError("SELMUT_WORKERS must be an integer") from exc


def _run_jobs(jobs: list, workers: int) -> list:
    if workers == 1 or len(jobs) == 1:
        return [equilibrium_job(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(equilibrium_job, *zip(*jobs)))


# --------------------------------------------------------------------------
# subcommands


def cmd_equilibrium(args, overrides) -> RunManifest:
    cfg = _resolve_config(args, overrides)
    out = _outdir(args, "equilibrium", cfg.scenario_hash())
    manifest = RunManifest("equilibrium", cfg.scenario_hash(), cfg.to_dict())
    survival = validate_survival_assumption(cfg)
    result = solve_equilibrium(cfg, _init_from_args(args))
    summary = write_equilibrium(cfg, result, out, manifest, verify=args.verify)
    manifest.convergence = {"survival": survival, **summary}
    print(f"converged: {result.converged}  residual: {result.residual:.3e}  classification: {summary['classification']}")
    return _written(manifest, out)


def cmd_eigen(args, overrides) -> RunManifest:
    cfg = _resolve_config(args, overrides)
    out = _outdir(args, "eigen", cfg.scenario_hash())
    manifest = RunManifest("eigen", cfg.scenario_hash(), cfg.to_dict())
    meta = {"scenario_hash": cfg.scenario_hash()}
    if args.two_d:
        pair = principal_eigenvalue_2d(cfg)
        print(f"mu_eps = {pair.value:.12g}")
        manifest.convergence = {"mu_eps": pair.value, "residual": pair.residual_norm, "iterations": pair.iterations}
        X, T = np.meshgrid(cfg.x_grid.nodes, cfg.theta_grid.nodes, indexing="ij")
        manifest.add(write_table(out / "eigenfunction_2d.csv", ["x", "theta", "xi"], np.column_stack([X.ravel(), T.ravel(), pair.function.ravel()]), meta))
        return _written(manifest, out)
    rho = _resolve_rho(args.rho, cfg)
    thetas = np.asarray(args.theta if args.theta else cfg.theta_grid.nodes, dtype=float)
    funcs = []
    rows = []
    for th in thetas:
        pair = principal_eigenpair_1d(cfg, th, rho)
        rows.append((th, pair.value, pair.residual_norm))
        funcs.append(pair.function)
        if args.theta:
            print(f"lambda(theta={th:g}) = {pair.value:.12g}")
    manifest.add(write_table(out / "lambda.csv", ["theta", "lambda", "residual"], rows, meta))
    manifest.add(
        write_table(out / "eigenfunctions.csv", ["x"] + [f"psi_{i}" for i in range(len(funcs))], np.column_stack([cfg.x_grid.nodes] + funcs), meta)
    )
    lam = np.asarray(rows)[:, 1]
    manifest.convergence = {"lambda_min": float(lam.min()), "theta_min": float(thetas[int(np.argmin(lam))])}
    return _written(manifest, out)


def cmd_mu_study(args, overrides) -> RunManifest:
    cfg = _resolve_config(args, overrides)
    return _mu_study(cfg, args.epsilons, _outdir(args, "mu-study", cfg.scenario_hash()))


def _mu_study(cfg, epsilons, out: Path) -> RunManifest:
    manifest = RunManifest("mu-study", cfg.scenario_hash(), cfg.to_dict())
    study = asy.mu_convergence_study(cfg, epsilons)
    table = study["table"]
    meta = {"theta0": study["theta0"], "lambda0": study["lambda0"]}
    manifest.add(write_table(out / "mu_study.csv", ["epsilon", "mu", "gap", "h5"], table, meta))
    gaps = table[:, 2]
    manifest.convergence = {
        **meta,
        "gap_strictly_decreasing": bool(np.all(np.diff(gaps) < 0)),
        "h5_all": bool(np.all(table[:, 3] > 0)),
    }
    manifest.add(write_report(out / "report.txt", manifest.convergence))
    for eps, mu, gap, h5 in table:
        print(f"eps={eps:g}  mu={mu:.10f}  gap={gap:.3e}  h5={bool(h5)}")
    return _written(manifest, out)


def cmd_verify(args, overrides) -> RunManifest:
    cfg, state, _ = read_checkpoint(args.checkpoint)
    if overrides:
        raise ConfigError("verify takes its scenario from the checkpoint; no overrides allowed")
    out = _outdir(args, "verify", cfg.scenario_hash())
    manifest = RunManifest("verify", cfg.scenario_hash(), cfg.to_dict())
    report, tables = asy.analyze(cfg, state.n)
    values = report.to_dict()
    manifest.add(write_report(out / "asymptotics.txt", values))
    manifest.add(write_table(out / "hj.csv", ["theta", "ubar", "dubar_sq", "lambda", "residual", "near_support"], tables["hj"]))
    manifest.add(write_table(out / "marginal.csv", ["theta", "marginal"], tables["marginal"]))
    if tables["harnack"].size:
        manifest.add(write_table(out / "harnack.csv", ["theta_lo", "theta_hi", "ratio"], tables["harnack"]))
    manifest.convergence = values
    for k, v in values.items():
        print(f"{k}: {v}")
    return _written(manifest, out)


def cmd_chi(args, overrides) -> RunManifest:
    cfg = _resolve_config(args, overrides)
    out = _outdir(args, "chi", cfg.scenario_hash())
    manifest = RunManifest("chi", cfg.scenario_hash(), cfg.to_dict())
    res = chi_fixed_point(cfg, args.theta_init, _resolve_rho(args.rho, cfg))
    manifest.convergence = res
    manifest.add(write_report(out / "chi.txt", res))
    for k, v in res.items():
        print(f"{k}: {v}")
    return _written(manifest, out)


def cmd_sweep(args, overrides) -> RunManifest:
    base = _resolve_config(args, overrides)
    out = _outdir(args, "sweep", base.scenario_hash())
    manifest = RunManifest("sweep", base.scenario_hash(), base.to_dict(), notes={"param": args.param})
    jobs = []
    for v in args.values:
        flat = {**base.to_dict(), args.param: v}
        config_from_dict(flat)  # fail fast on a bad key or value
        jobs.append((flat, str(out), f"{args.param}={v:g}", False))
    _collect_jobs(manifest, jobs, _workers(args.workers))
    return _written(manifest, out)


def _collect_jobs(manifest: RunManifest, jobs: list, workers: int) -> None:
    for r in _run_jobs(jobs, workers):
        manifest.outputs.extend(r["outputs"])
        manifest.convergence[r["label"]] = r["summary"]
    manifest.notes["workers"] = workers


def run_preset(name: str, out: Optional[Path] = None, overrides: Optional[dict] = None, workers: Optional[int] = None) -> RunManifest:
    """Run a bundled scenario; returns its manifest (already written to ``out``)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    overrides = dict(overrides or {})
    eps = overrides.pop("model.epsilon", None)
    scenarios = preset_scenarios(name, eps, overrides)
    preset = PRESETS[name]
    out = Path(out or Path("runs") / f"preset-{name}")
    out.mkdir(parents=True, exist_ok=True)
    first = scenarios[0][1]
    manifest = RunManifest(
        f"preset {name}",
        first.scenario_hash(),
        first.to_dict(),
        notes={"description": preset.description, "scenarios": {lbl: c.to_dict() for lbl, c in scenarios}},
    )
    if preset.kind in ("equilibrium", "fragmentation"):
        jobs = [(c.to_dict(), str(out), lbl, preset.kind == "equilibrium") for lbl, c in scenarios]
        _collect_jobs(manifest, jobs, _workers(workers))
        if preset.kind == "fragmentation":
            rows = [
                (c.domain.components[1][0], manifest.convergence[lbl]["mass_fraction_abs_theta_lt_0.25"], len(manifest.convergence[lbl]["traits"]))
                for lbl, c in scenarios
            ]
            manifest.add(write_table(out / "fragmentation.csv", ["d", "mass_fraction_abs_theta_lt_0.25", "n_traits"], rows))
        for lbl, s in manifest.convergence.items():
            print(f"{lbl}: {s['classification']} traits={np.round(s['traits'], 4).tolist()} converged={s['converged']}")
        return _written(manifest, out)
    cfg = first
    if preset.kind == "mu-study":
        return _mu_study(cfg, [eps] if eps else MU_LADDER, out)
    # g-scan: competition-free eigenproblems in the fig2 geometry
    zero = np.zeros(cfg.x_grid.size)
    thetas = np.linspace(-cfg.A / 2, cfg.A / 2, 5)
    rows, worst = [], 0.0
    for th in thetas:
        scan = g_monotonicity_scan(cfg, th, zero, G_SCAN)
        worst = max(worst, scan["max_violation"])
        rows.extend((th, g, lam) for g, lam in scan["table"])
    sens = [(g, eigfun_theta_sensitivity(cfg.replace(growth=cfg.growth.with_g(g)), 0.5, zero)) for g in SENSITIVITY_G]
    manifest.add(write_table(out / "g_monotonicity.csv", ["theta", "g", "lambda"], rows))
    manifest.add(write_table(out / "sensitivity.csv", ["g", "sensitivity"], sens))
    vals = [s for _, s in sens]
    manifest.convergence = {"max_violation": worst, "sensitivity_strictly_decreasing": bool(np.all(np.diff(vals) < 0))}
    manifest.add(write_report(out / "report.txt", manifest.convergence))
    print(f"max monotonicity violation: {worst:.3e}")
    for g, s in sens:
        print(f"g={g:g}  sensitivity={s:.6e}")
    return _written(manifest, out)


def cmd_preset(args, overrides) -> RunManifest:
    return run_preset(args.name, args.out, overrides, args.workers)


COMMANDS = {
    "equilibrium": cmd_equilibrium,
    "eigen": cmd_eigen,
    "mu-study": cmd_mu_study,
    "verify": cmd_verify,
    "chi": cmd_chi,
    "sweep": cmd_sweep,
    "preset": cmd_preset,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        overrides = parse_overrides(rest)
        manifest = COMMANDS[args.command](args, overrides)
    except (SelmutError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ConfigError, OSError)) else 1
    missing = manifest.missing_outputs()
    if missing:
        print(f"error: outputs missing after run: {missing}", file=sys.stderr)
        return 1
    logger.info("done in %.1fs", time.perf_counter() - t0)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
