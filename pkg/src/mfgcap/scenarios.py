"""Scenario files, the run driver and the bundled reproduction suite.

A scenario is a JSON document::

    {"name": ..., "model": "homogeneous" | "heterogeneous" | "stochastic",
     "method": "shooting" | "semi_explicit" | "ansatz" | "fd",
     "params": {<model parameters with a "units" map>},
     "price": {"kind": "linear", "d1": ..., "d2": ...} | {"kind": "inverse", "p": ...},
     "m0": {...}, "grids": {...}, "solver": {...}, "outputs": {...},
     "targets": [{"metric": ..., "value": ..., "tol": ..., "op": "abs" | "le" | "lt"}]}

Only ``name``, ``model``, ``method``, ``params`` and ``price`` are required;
``m0`` is required for the population models.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .errors import ConvergenceError, MfgCapError, ValidationError
from .homogeneous import semi_explicit_linear, shoot, verify_lemmas
from .mfg import (equilibrium_diagnostics, initial_density_from_dict, make_grids, solve_mfg)
from .model import LinearPrice, load_model
from .numerics import grid_step, uniform_grid
from .stochastic import solve_mfg_stochastic

MODELS = ("homogeneous", "heterogeneous", "stochastic")
METHODS = ("shooting", "semi_explicit", "ansatz", "fd")
METRICS = ("t_star", "horizon_gap", "decay_residual", "peak_rate_time", "b_ratio",
           "mass_drift", "x_star_ratio", "capacity_rel_diff")
SIG = 12


@dataclass(frozen=True)
class GridSpec:
    n_t: int = 2000
    n_x: int = 400
    inflate: float = 1.0


@dataclass(frozen=True)
class SolverSpec:
    outer_tol: float = 1e-6
    omega: float = 0.5
    max_outer: int = 300
    anderson: int = 5
    layer_tol: float = 1e-9
    reduction: bool = False
    initial: str = "frozen"
    fd_left: str = "pde"
    fd_scheme: str = "upwind"


@dataclass(frozen=True)
class OutputSpec:
    dir: str | None = None
    value: bool = False
    density_rows: int = 201


@dataclass(frozen=True)
class Target:
    metric: str
    value: float
    tol: float = 0.0
    op: str = "abs"

    def check(self, got: float) -> bool:
        if not math.isfinite(got):
            return False
        if self.op == "abs":
            return abs(got - self.value) <= self.tol
        if self.op == "le":
            return got <= self.value + self.tol
        return got < self.value

    def describe(self) -> str:
        if self.op == "abs":
            return f"{self.value:g} ± {self.tol:g}"
        return f"{'<=' if self.op == 'le' else '<'} {self.value:g}"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    model: str
    method: str
    params: dict
    price: dict
    m0: dict | None = None
    grids: GridSpec = field(default_factory=GridSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    outputs: OutputSpec = field(default_factory=OutputSpec)
    targets: tuple[Target, ...] = ()
    comment: str = ""

    # ------------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: Mapping[str, Any]) -> "ScenarioConfig":
        """Validate a scenario document; errors name the offending field."""
        if not isinstance(raw, Mapping):
            raise ValidationError("scenario: expected a JSON object")
        for key in ("name", "model", "method", "params", "price"):
            if key not in raw:
                raise ValidationError(f"{key}: missing required field")
        known = {f.name for f in fields(cls)}
        extra = sorted(set(raw) - known)
        if extra:
            raise ValidationError(f"{extra[0]}: unknown field")
        if raw["model"] not in MODELS:
            raise ValidationError(f"model: must be one of {MODELS}, got {raw['model']!r}")
        if raw["method"] not in METHODS:
            raise ValidationError(f"method: must be one of {METHODS}, got {raw['method']!r}")
        for key in ("params", "price"):
            if not isinstance(raw[key], Mapping):
                raise ValidationError(f"{key}: expected an object")
        cfg = cls(
            name=str(raw["name"]), model=raw["model"], method=raw["method"],
            params=dict(raw["params"]), price=dict(raw["price"]),
            m0=None if raw.get("m0") is None else dict(raw["m0"]),
            grids=_sub(GridSpec, raw.get("grids"), "grids"),
            solver=_sub(SolverSpec, raw.get("solver"), "solver"),
            outputs=_sub(OutputSpec, raw.get("outputs"), "outputs"),
            targets=tuple(_target(t, i) for i, t in enumerate(raw.get("targets") or [])),
            comment=str(raw.get("comment", "")))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["targets"] = [asdict(t) for t in self.targets]
        return out

    def with_method(self, method: str) -> "ScenarioConfig":
        raw = self.to_dict()
        raw["method"] = method
        return ScenarioConfig.from_dict(raw)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def validate(self) -> None:
        """Cross-field checks; also parses the model so unit errors surface here."""
        try:
            _, pf = load_model({**self.params, "price": self.price})
        except ValidationError as exc:
            raise ValidationError(f"params: {exc}") from None
        hom = self.model == "homogeneous"
        if hom and self.method not in ("shooting", "semi_explicit"):
            raise ValidationError(f"method: {self.method!r} needs a population model, "
                                  "use shooting or semi_explicit")
        if not hom and self.method in ("shooting", "semi_explicit"):
            raise ValidationError(f"method: {self.method!r} is only for the homogeneous model")
        if self.method in ("semi_explicit", "ansatz") and not isinstance(pf, LinearPrice):
            raise ValidationError(f"method: {self.method!r} requires a linear price")
        if self.model != "stochastic" and float(self.params.get("sigma", 0.0) or 0.0) > 0:
            raise ValidationError("params.sigma: noise needs model 'stochastic'")
        if not hom:
            if self.m0 is None:
                raise ValidationError("m0: missing required field for a population model")
            initial_density_from_dict(self.m0)
        for t in self.targets:
            if t.metric not in METRICS:
                raise ValidationError(f"targets.metric: unknown metric {t.metric!r}")


def _sub(kind, raw, where):
    if raw is None:
        return kind()
    if not isinstance(raw, Mapping):
        raise ValidationError(f"{where}: expected an object")
    names = {f.name: f for f in fields(kind)}
    for key in raw:
        if key not in names:
            raise ValidationError(f"{where}.{key}: unknown field")
    try:
        return kind(**raw)
    except TypeError as exc:
        raise ValidationError(f"{where}: {exc}") from None


def _target(raw, i):
    if not isinstance(raw, Mapping) or "metric" not in raw or "value" not in raw:
        raise ValidationError(f"targets[{i}]: needs 'metric' and 'value'")
    if raw.get("op", "abs") not in ("abs", "le", "lt"):
        raise ValidationError(f"targets[{i}].op: must be abs, le or lt")
    return Target(str(raw["metric"]), float(raw["value"]), float(raw.get("tol", 0.0)),
                  raw.get("op", "abs"))


def load_config(path: str | Path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return ScenarioConfig.from_dict(raw)


# ----------------------------------------------------------------------
# solving

@dataclass
class RunResult:
    """In-memory outcome of a scenario: tables, metrics and convergence info."""

    config: ScenarioConfig
    equilibrium: dict[str, np.ndarray]
    metrics: dict[str, float]
    meta: dict
    density: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None
    value: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray] | None = None


def _homogeneous(cfg: ScenarioConfig, params, pf) -> RunResult:
    grid = uniform_grid(params.T, cfg.grids.n_t)
    if cfg.method == "shooting":
        sol = shoot(params, pf, grid=grid)
    else:
        _, sol = semi_explicit_linear(params, pf, grid=grid)
    n1 = params.N + 1
    eq = {"t": sol.grid, "xbar": sol.X / n1, "nubar": sol.K / n1,
          "x_star": np.full(sol.grid.size, np.nan), "X_total": sol.X, "K_total": sol.K}
    ts = sol.t_star
    # anchor one step past the stopping time so no interpolation enters
    after = sol.grid >= ts + grid_step(sol.grid)
    k0 = int(np.argmax(after)) if np.any(after) else sol.grid.size - 1
    decay = sol.X[k0] * np.exp(-params.delta * (sol.grid[after] - sol.grid[k0]))
    lem = verify_lemmas(sol, params, pf)
    metrics = {"t_star": ts, "horizon_gap": params.T - ts,
               "decay_residual": float(np.max(np.abs(sol.X[after] - decay), initial=0.0)
                                       / np.max(sol.X)),
               "peak_rate_time": float(sol.grid[np.argmax(sol.K)])}
    meta = {"converged": True, "iterations": None, "residual_history": [sol.residual],
            "lemmas": asdict(lem), "restarts": list(sol.restarts)}
    return RunResult(cfg, eq, metrics, meta)


def _population(cfg: ScenarioConfig, params, pf) -> RunResult:
    g = make_grids(params, pf, n_t=cfg.grids.n_t, n_x=cfg.grids.n_x, inflate=cfg.grids.inflate)
    m0 = initial_density_from_dict(cfg.m0)
    kw = asdict(cfg.solver)
    if cfg.model == "stochastic":
        eq = solve_mfg_stochastic(params, pf, m0, g, params.sigma, method=cfg.method, **kw)
    else:
        eq = solve_mfg(params, pf, m0, g, method=cfg.method, **kw)
    diag = equilibrium_diagnostics(eq)
    table = {"t": g.t, "xbar": eq.xbar, "nubar": eq.nubar, "x_star": eq.x_star,
             "X_total": eq.X_total, "K_total": eq.K_total}
    metrics = {"t_star": eq.t_star, "horizon_gap": params.T - eq.t_star,
               "peak_rate_time": float(g.t[np.argmax(eq.K_total)]),
               "mass_drift": diag.mass_drift}
    if eq.coeffs is not None and cfg.method == "ansatz":
        metrics["b_ratio"] = float(np.interp(eq.t_star, g.t, eq.coeffs.b)) / params.alpha
    if cfg.model == "stochastic":
        ref = solve_mfg(params.replace(sigma=0.0), pf, m0, g, method=cfg.method, **kw)
        metrics["x_star_ratio"] = float(np.max(eq.x_star)) / max(float(np.max(ref.x_star)),
                                                                  1e-300)
        metrics["capacity_rel_diff"] = float(np.max(np.abs(eq.X_total - ref.X_total))
                                             / np.max(np.abs(ref.X_total)))
    rows = _snapshot_rows(g.n_t, cfg.outputs.density_rows)
    meta = {"converged": True, "iterations": eq.iterations,
            "residual_history": list(eq.residual_history), "diagnostics": diag.to_dict(),
            "m0": eq.m0_info, "sigma": eq.sigma, "reduction": eq.reduction}
    value = None
    if cfg.outputs.value:
        value = (g.t[rows], g.x, eq.V.V[rows], eq.V.Vx[rows])
    return RunResult(cfg, table, metrics, meta, (g.t[rows], g.x, eq.m.m[rows]), value)


def _snapshot_rows(n_t: int, wanted: int) -> np.ndarray:
    """At most ``wanted`` evenly spread time rows, always keeping the first and last."""
    if wanted <= 1 or wanted >= n_t:
        return np.arange(n_t)
    return np.unique(np.round(np.linspace(0, n_t - 1, wanted)).astype(int))


def solve_scenario(cfg: ScenarioConfig) -> RunResult:
    params, pf = load_model({**cfg.params, "price": cfg.price})
    if cfg.model == "homogeneous":
        return _homogeneous(cfg, params, pf)
    return _population(cfg, params, pf)


# ----------------------------------------------------------------------
# files

def fmt(v) -> str:
    return format(float(v), f".{SIG}g")


def _round(obj):
    """Floats rounded to 12 significant digits, recursively (for JSON output)."""
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _round(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    lines = [",".join(header)]
    lines.extend(",".join(fmt(v) for v in row) for row in data)
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {name: data[:, i] for i, name in enumerate(header)}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_round(obj), indent=2, sort_keys=True) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _long_form(t, x, *fields_):
    tt = np.repeat(t, x.size)
    xx = np.tile(x, t.size)
    return [tt, xx] + [f.ravel() for f in fields_]


@dataclass
class RunManifest:
    name: str
    config_hash: str
    tool_version: str
    wall_seconds: float
    converged: bool
    summary: dict
    files: dict[str, str]
    exit_code: int = 0
    error: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _meta(cfg: ScenarioConfig, res: RunResult | None, extra: dict) -> dict:
    params, _ = load_model({**cfg.params, "price": cfg.price})
    meta = {"name": cfg.name, "model": cfg.model, "method": cfg.method,
            "params": params.to_raw(), "price": cfg.price, "grids": asdict(cfg.grids)}
    if res is not None:
        meta.update(res.meta)
        meta["t_star"] = res.metrics.get("t_star")
        meta["metrics"] = res.metrics
    meta.update(extra)
    return meta


def evaluate_targets(cfg: ScenarioConfig, metrics: Mapping[str, float]) -> list[dict]:
    rows = []
    for tg in cfg.targets:
        got = float(metrics.get(tg.metric, math.nan))
        rows.append({"metric": tg.metric, "target": tg.describe(), "value": got,
                     "pass": tg.check(got)})
    return rows


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> RunManifest:
    """Solve ``cfg`` and write its outputs plus ``manifest.json`` into ``out_dir``.

    On non-convergence the metadata (with the residual history) and the
    manifest are still written and the manifest carries ``exit_code = 3``.
    Validation problems raise :class:`ValidationError`; I/O problems raise
    :class:`OSError`.
    """
    out = Path(out_dir or cfg.outputs.dir or Path("runs") / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    files: dict[str, str] = {}

    def emit(name, writer, *args):
        path = out / name
        writer(path, *args)
        files[name] = sha256_file(path)

    try:
        res = solve_scenario(cfg)
    except ConvergenceError as exc:
        extra = {"converged": False, "error": str(exc),
                 "residual_history": list(exc.residual_history or [])}
        emit("meta.json", write_json, _meta(cfg, None, extra))
        man = RunManifest(cfg.name, cfg.digest(), __version__,
                          time.perf_counter() - start, False, {}, files, 3, str(exc))
        write_json(out / "manifest.json", man.to_dict())
        return man

    cols = ["t", "xbar", "nubar", "x_star", "X_total", "K_total"]
    emit("equilibrium.csv", write_csv, cols, [res.equilibrium[c] for c in cols])
    if res.density is not None:
        emit("density.csv", write_csv, ["t", "x", "m"], _long_form(*res.density))
    if res.value is not None:
        emit("value.csv", write_csv, ["t", "x", "V", "Vx"], _long_form(*res.value))
    checks = evaluate_targets(cfg, res.metrics)
    emit("meta.json", write_json, _meta(cfg, res, {"targets": checks}))
    summary = {"t_star": res.metrics.get("t_star"), "metrics": res.metrics,
               "targets": checks}
    man = RunManifest(cfg.name, cfg.digest(), __version__, time.perf_counter() - start,
                      True, summary, files)
    write_json(out / "manifest.json", man.to_dict())
    return man


# ----------------------------------------------------------------------
# plot data

def emit_plotdata(run_dir: str | Path) -> list[Path]:
    """Plot-ready series from a finished run directory.

    Writes ``plot_capacity.csv`` and ``plot_rate.csv`` for every run, and
    ``plot_threshold.csv`` and ``plot_density.csv`` (snapshots at ``t = 0``
    and ``t = T``) for population runs.
    """
    run = Path(run_dir)
    meta_path, eq_path = run / "meta.json", run / "equilibrium.csv"
    for p in (meta_path, eq_path):
        if not p.exists():
            raise ValidationError(f"missing series: {p.name} not found in {run}")
    meta = json.loads(meta_path.read_text())
    eq = read_csv(eq_path)
    for col in ("t", "X_total", "K_total", "x_star"):
        if col not in eq:
            raise ValidationError(f"missing series: column {col!r} in equilibrium.csv")
    made = []

    def put(name, header, cols):
        path = run / name
        write_csv(path, header, cols)
        made.append(path)

    put("plot_capacity.csv", ["t", "X_total"], [eq["t"], eq["X_total"]])
    put("plot_rate.csv", ["t", "K_total"], [eq["t"], eq["K_total"]])
    if meta.get("model") == "homogeneous":
        return made
    put("plot_threshold.csv", ["t", "x_star"], [eq["t"], eq["x_star"]])
    dens_path = run / "density.csv"
    if not dens_path.exists():
        raise ValidationError(f"missing series: density.csv not found in {run}")
    d = read_csv(dens_path)
    times = np.unique(d["t"])
    first = d["t"] == times[0]
    last = d["t"] == times[-1]
    put("plot_density.csv", ["x", "m_t0", "m_T"], [d["x"][first], d["m"][first], d["m"][last]])
    return made


# ----------------------------------------------------------------------
# bundled suite

def bundled_scenarios() -> list[ScenarioConfig]:
    pkg = resources.files("mfgcap") / "scenarios"
    out = []
    for item in sorted(pkg.iterdir(), key=lambda p: p.name):
        if item.name.endswith(".json"):
            out.append(ScenarioConfig.from_dict(json.loads(item.read_text())))
    return out


def reproduce(out_dir: str | Path, name_filter: str | None = None, echo=print) -> list[dict]:
    """Run the bundled suite; returns one row per target with its pass/fail status."""
    rows = []
    for cfg in bundled_scenarios():
        if name_filter and name_filter not in cfg.name:
            continue
        start = time.perf_counter()
        try:
            man = run_scenario(cfg, Path(out_dir) / cfg.name)
            checks = man.summary.get("targets", []) if man.converged else []
            status = None if man.converged else f"not converged: {man.error}"
        except (MfgCapError, OSError) as exc:
            checks, status = [], f"{type(exc).__name__}: {exc}"
        secs = time.perf_counter() - start
        if status is not None:
            checks = [{"metric": t.metric, "target": t.describe(), "value": math.nan,
                       "pass": False} for t in cfg.targets] or [
                {"metric": "-", "target": "-", "value": math.nan, "pass": False}]
        for c in checks:
            row = {"scenario": cfg.name, **c, "seconds": secs, "status": status}
            rows.append(row)
            if echo:
                echo(format_row(row))
    return rows


def format_row(row: dict) -> str:
    mark = "PASS" if row["pass"] else "FAIL"
    val = "nan" if not math.isfinite(row["value"]) else f"{row['value']:.6g}"
    line = (f"{mark}  {row['scenario']:<32s} {row['metric']:<18s} target {row['target']:<16s} "
            f"got {val:<12s} ({row['seconds']:.1f} s)")
    if row.get("status"):
        line += f"  [{row['status']}]"
    return line
