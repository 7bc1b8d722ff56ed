"""Scenario files, checkpoints, tables and run manifests.

Scenario files are flat ``section.key = value`` lines; values are Python
literals (numbers, strings, lists), bare words are read as strings, and ``#``
starts a comment.
"""

from __future__ import annotations

import ast
import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional

import numpy as np

from .domain import SpatialDomain
from .errors import ConfigError
from .model import (
    ConstantKernel,
    DetectConfig,
    GaussianFloorKernel,
    QuadraticSpace,
    QuadraticTrait,
    ScenarioConfig,
    SolverConfig,
)

_GROWTH = {"quadratic_space": QuadraticSpace, "quadratic_trait": QuadraticTrait}
_KERNEL = {"constant": ConstantKernel, "gaussian_floor": GaussianFloorKernel}

_BASE_KEYS = {
    "domain.components",
    "grid.hx",
    "grid.htheta",
    "trait.A",
    "model.epsilon",
    "model.kappa",
    "model.sigma_x",
    "growth.variant",
    "kernel.variant",
}
_GROWTH_KEYS = {f"growth.{k}" for k in ("r", "g", "b", "theta0")}
_KERNEL_KEYS = {f"kernel.{k}" for k in ("k0", "floor", "amplitude", "width")}
_SOLVER_KEYS = {f"solver.{f.name}" for f in fields(SolverConfig)}
_DETECT_KEYS = {f"detect.{f.name}" for f in fields(DetectConfig)}
KNOWN_KEYS = frozenset(_BASE_KEYS | _GROWTH_KEYS | _KERNEL_KEYS | _SOLVER_KEYS | _DETECT_KEYS)
REQUIRED_KEYS = ("domain.components", "trait.A", "model.epsilon", "growth.variant")


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def _section(flat: Mapping, prefix: str) -> dict:
    return {k[len(prefix) + 1 :]: v for k, v in flat.items() if k.startswith(prefix + ".") and k != prefix + ".variant"}


def _build(cls, params: dict, what: str):
    allowed = {f.name for f in fields(cls)}
    extra = sorted(set(params) - allowed)
    if extra:
        raise ConfigError(f"{what} does not take: {', '.join(extra)}")
    try:
        return cls(**{k: _number(v, f"{what}.{k}") for k, v in params.items()})
    except TypeError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def _number(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float, str)):
        raise ConfigError(f"{key}: expected a scalar, got {v!r}")
    return v


def config_from_dict(flat: Mapping[str, Any]) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from flat scenario-file keys."""
    unknown = sorted(set(flat) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in flat]
    if missing:
        raise ConfigError(f"missing config keys: {', '.join(missing)}")
    try:
        domain = SpatialDomain.from_pairs(flat["domain.components"])
    except ValueError as exc:
        raise ConfigError(f"domain.components: {exc}") from exc
    gv = flat["growth.variant"]
    if gv not in _GROWTH:
        raise ConfigError(f"growth.variant must be one of {sorted(_GROWTH)}, got {gv!r}")
    growth = _build(_GROWTH[gv], _section(flat, "growth"), f"growth variant {gv}")
    kv = flat.get("kernel.variant", "constant")
    if kv not in _KERNEL:
        raise ConfigError(f"kernel.variant must be one of {sorted(_KERNEL)}, got {kv!r}")
    kernel = _build(_KERNEL[kv], _section(flat, "kernel"), f"kernel variant {kv}")
    solver = _build(SolverConfig, _section(flat, "solver"), "solver")
    detect = _build(DetectConfig, _section(flat, "detect"), "detect")
    kw = {}
    for key, name in (
        ("grid.hx", "hx"),
        ("grid.htheta", "htheta"),
        ("model.kappa", "kappa"),
        ("model.sigma_x", "sigma_x"),
    ):
        if key in flat:
            kw[name] = float(flat[key])
    try:
        return ScenarioConfig(
            domain=domain,
            A=float(flat["trait.A"]),
            epsilon=float(flat["model.epsilon"]),
            growth=growth,
            kernel=kernel,
            solver=solver,
            detect=detect,
            **kw,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_config(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in cfg.to_dict().items())


# --------------------------------------------------------------------------
# delimited tables and key-value reports


def write_table(path, columns: Iterable[str], data, meta: Optional[Mapping[str, Any]] = None) -> Path:
    """Comma-separated table; ``#`` header lines carry metadata, the last one the column names."""
    path = Path(path)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    lines = [f"{k}: {_fmt(v)}" for k, v in (meta or {}).items()]
    lines.append(",".join(columns))
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header="\n".join(lines), comments="# ")
    return path


def read_table(path) -> tuple[dict, list[str], np.ndarray]:
    meta, columns = {}, []
    header = []
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            header.append(line[1:].strip())
    for h in header[:-1]:
        k, _, v = h.partition(":")
        meta[k.strip()] = v.strip()
    if header:
        columns = header[-1].split(",")
    data = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return meta, columns, data


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, default=_json_default)
    return str(v)


def write_report(path, values: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.write_text("".join(f"{k}: {_fmt(v)}\n" for k, v in values.items()))
    return path


def read_report(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition(":")
            out[k.strip()] = v.strip()
    return out


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def write_checkpoint(path, cfg: ScenarioConfig, state) -> Path:
    """Header with grid descriptors and the full config, then rows ``x, theta, n`` (x-major)."""
    grid = cfg.grid
    X, T = np.meshgrid(grid.x.nodes, grid.theta.nodes, indexing="ij")
    meta = {
        "selmut_checkpoint": CHECKPOINT_VERSION,
        "scenario_hash": cfg.scenario_hash(),
        "epsilon": cfg.epsilon,
        "components": [list(c) for c in cfg.domain.components],
        "counts": list(grid.x.counts),
        "A": cfg.A,
        "ntheta": grid.theta.size,
        "time": float(state.time),
        "step_count": int(state.step_count),
        "order": "x-major, row j*ntheta + m",
        "config": cfg.to_dict(),
    }
    return write_table(path, ["x", "theta", "n"], np.column_stack([X.ravel(), T.ravel(), state.n.ravel()]), meta)


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; returns ``(cfg, state, meta)``."""
    from .equilibrium import PopulationState

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    meta, columns, data = read_table(path)
    if "selmut_checkpoint" not in meta or columns != ["x", "theta", "n"]:
        raise ConfigError(f"{path} is not a checkpoint file")
    cfg = config_from_dict(json.loads(meta["config"]))
    if cfg.scenario_hash() != meta["scenario_hash"]:
        raise ConfigError(f"{path}: scenario hash does not match the stored config")
    shape = cfg.grid.shape
    if data.shape != (shape[0] * shape[1], 3):
        raise ConfigError(f"{path}: expected {shape[0] * shape[1]} rows for grid {shape}")
    if not (np.allclose(data[:, 0], np.repeat(cfg.x_grid.nodes, shape[1]), rtol=0, atol=1e-12)):
        raise ConfigError(f"{path}: spatial nodes do not match the stored grid")
    state = PopulationState.from_density(data[:, 2].reshape(shape), cfg, time=float(meta["time"]), step_count=int(meta["step_count"]))
    return cfg, state, meta


# --------------------------------------------------------------------------
# manifests


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


@dataclass
class RunManifest:
    subcommand: str
    scenario_hash: str = ""
    config: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    wall_clock: float = 0.0
    convergence: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    def add(self, path) -> Path:
        path = Path(path)
        self.outputs.append(str(path))
        return path

    def write(self, directory) -> Path:
        path = Path(directory) / "manifest.json"
        self.outputs.append(str(path))
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default))
        return path

    def missing_outputs(self) -> list[str]:
        return [p for p in self.outputs if not Path(p).exists()]
