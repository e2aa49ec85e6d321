"""Config-driven comparison of preconditioner designs on one reference problem.

A config is a YAML mapping::

    task: mnr                  # mnr | unmix | gsr
    seed: 0
    params: {dims: [16, 16, 8], sigma: 0.05, p_s: 0.1}
    designs:
      - {type: ovdp, beta: [0, 1, 2]}
      - {type: sp, gamma1: [0.1]}
      - {type: asp}
      - {type: pdp, tau: [0.1], theta: 0.01}
    max_iters: 10000
    stop_tol: 1.0e-5
    oracle_iters: 20000
    record_every: 1
    out: results/mnr
    oracle_designs: [ovdp, sp, asp]   # optional, default all designs
    fista: {tol: 1.0e-8, max_iters: 1000, warm_start: false}   # optional

Running it writes one convergence CSV per design and ``summary.csv``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .errors import CapacityError, OracleFailure, OVDPError
from .linops import DEFAULT_MATERIALIZE_CAP, adjoint_consistency_check, power_iteration_norm
from .precond import (
    PreconditionerPair,
    design_asp,
    design_ovdp,
    design_pdp,
    design_sp,
    verify_convergence_condition,
)
from .problems import TASKS, GsrConfig, Instance, MnrConfig, UnmixConfig, make_instance
from .solver import FEAS_TOL, MAX_ITERS, ORACLE_ITERS, STOP_TOL, pseudo_oracle, solve

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("design", "iters_to_stop", "seconds_to_stop", "final_metric", "cond_value")
DESIGN_TYPES = ("sp", "asp", "pdp", "ovdp")
_TASK_CONFIGS = {"mnr": MnrConfig, "unmix": UnmixConfig, "gsr": GsrConfig}
_TOP_KEYS = {
    "task", "seed", "params", "designs", "max_iters", "stop_tol", "oracle_iters",
    "record_every", "out", "materialize_cap", "feas_tol", "oracle_designs", "fista",
}
_FISTA_KEYS = {"tol": "fista_tol", "max_iters": "fista_max_iters", "warm_start": "warm_start", "exact": "exact"}


class ConfigError(OVDPError, ValueError):
    """Malformed experiment config; carries the offending field and line if known."""

    def __init__(self, message: str, field: str = "", line: int | None = None):
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class DesignSpec:
    kind: str
    value: float | None = None
    theta: float | None = None

    def build(self, inst: Instance, cap: int) -> PreconditionerPair:
        grid = inst.spec.grid
        if self.kind == "sp":
            return design_sp(grid, self.value, inst.mu_sp)
        if self.kind == "asp":
            return design_asp(grid, cap=cap)
        if self.kind == "pdp":
            return design_pdp(grid, self.value, theta=self.theta, cap=cap)
        return design_ovdp(grid, self.value)

    @property
    def label(self) -> str:
        if self.kind == "sp":
            return f"SP(g1={self.value:g})"
        if self.kind == "asp":
            return "ASP"
        if self.kind == "pdp":
            return f"PDP(tau={self.value:g},theta={self.theta:g})"
        return f"OVDP(beta={self.value:g})"


@dataclass
class ExperimentConfig:
    task: str
    params: Any
    designs: list[DesignSpec]
    max_iters: int = MAX_ITERS
    stop_tol: float = STOP_TOL
    oracle_iters: int = ORACLE_ITERS
    record_every: int = 1
    out: Path = Path("results")
    seed: int = 0
    materialize_cap: int = DEFAULT_MATERIALIZE_CAP
    feas_tol: float = FEAS_TOL
    oracle_designs: list[str] | None = None  # design types or labels; None means all
    fista: dict = field(default_factory=dict)

    def in_oracle(self, d: DesignSpec) -> bool:
        return self.oracle_designs is None or d.kind in self.oracle_designs or d.label in self.oracle_designs


# ---------------------------------------------------------------------------
# config parsing


def _key_lines(node, prefix="") -> dict[str, int]:
    """Map dotted key paths of a composed YAML node to 1-based line numbers."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for n, v in enumerate(node.value):
            path = f"{prefix}[{n}]"
            out[path] = v.start_mark.line + 1
            out.update(_key_lines(v, path))
    return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"not valid YAML ({getattr(exc, 'problem', exc)})", line=mark.line + 1 if mark else None) from None
    lines = _key_lines(node) if node is not None else {}

    def fail(msg, path):
        raise ConfigError(msg, path, lines.get(path))

    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", line=1)
    for k in raw:
        if k not in _TOP_KEYS:
            fail(f"unknown key (expected one of {', '.join(sorted(_TOP_KEYS))})", str(k))
    if "task" not in raw:
        raise ConfigError("missing required key", "task")
    task = raw["task"]
    if task not in TASKS:
        fail(f"unknown task {task!r}; expected one of {', '.join(TASKS)}", "task")

    def integer(key, default, minimum=1):
        v = raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
            fail(f"must be an integer >= {minimum}, got {v!r}", key)
        return v

    def real(key, default):
        v = raw.get(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            fail(f"must be a positive number, got {v!r}", key)
        return float(v)

    seed = integer("seed", 0, minimum=0)
    params = raw.get("params") or {}
    if not isinstance(params, dict):
        fail("must be a mapping of task parameters", "params")
    cfg_type = _TASK_CONFIGS[task]
    names = {f.name for f in dataclasses.fields(cfg_type)}
    for k in params:
        if k not in names:
            fail(f"unknown {task} parameter (expected one of {', '.join(sorted(names))})", f"params.{k}")
    params = dict(params)
    if task == "gsr":
        params.setdefault("graph_seed", seed)
        params.setdefault("signal_seed", seed)
    else:
        params.setdefault("seed", seed)
    try:
        task_cfg = cfg_type(**params)
    except (TypeError, ValueError) as exc:
        fail(str(exc), "params")

    designs_raw = raw.get("designs")
    if not isinstance(designs_raw, list) or not designs_raw:
        fail("must be a non-empty list of designs", "designs")
    designs = []
    for n, d in enumerate(designs_raw):
        path = f"designs[{n}]"
        if isinstance(d, str):
            d = {"type": d}
        if not isinstance(d, dict) or "type" not in d:
            fail("each design needs a 'type'", path)
        kind = str(d["type"]).lower()
        if kind not in DESIGN_TYPES:
            fail(f"unknown design type {d['type']!r}; expected one of {', '.join(DESIGN_TYPES)}", f"{path}.type")
        pname = {"sp": "gamma1", "pdp": "tau", "ovdp": "beta"}.get(kind)
        allowed = {"type"} | ({pname} if pname else set()) | ({"theta"} if kind == "pdp" else set())
        for k in d:
            if k not in allowed:
                fail(f"unexpected key for {kind} design", f"{path}.{k}")
        if pname is None:
            designs.append(DesignSpec(kind))
            continue
        if pname not in d:
            fail(f"{kind} design needs '{pname}'", path)
        theta = float(d.get("theta", 0.01)) if kind == "pdp" else None
        for v in _as_list(d[pname]):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                fail(f"{pname} values must be numbers, got {v!r}", f"{path}.{pname}")
            if kind == "ovdp" and not 0 <= v <= 2:
                fail(f"beta must lie in [0, 2], got {v}", f"{path}.{pname}")
            if kind != "ovdp" and v <= 0:
                fail(f"{pname} must be positive, got {v}", f"{path}.{pname}")
            designs.append(DesignSpec(kind, float(v), theta))

    oracle_designs = raw.get("oracle_designs")
    if oracle_designs is not None:
        oracle_designs = [str(v) for v in _as_list(oracle_designs)]
        known = {d.kind for d in designs} | {d.label for d in designs}
        for v in oracle_designs:
            if v not in known:
                fail(f"{v!r} matches no listed design", "oracle_designs")

    fista_raw = raw.get("fista") or {}
    if not isinstance(fista_raw, dict):
        fail("must be a mapping", "fista")
    fista = {}
    for k, v in fista_raw.items():
        if k not in _FISTA_KEYS:
            fail(f"unknown key (expected one of {', '.join(_FISTA_KEYS)})", f"fista.{k}")
        fista[_FISTA_KEYS[k]] = v

    out = Path(raw.get("out", "results"))
    if base_dir is not None and not out.is_absolute():
        out = base_dir / out
    return ExperimentConfig(
        task=task,
        params=task_cfg,
        designs=designs,
        max_iters=integer("max_iters", MAX_ITERS),
        stop_tol=real("stop_tol", STOP_TOL),
        oracle_iters=integer("oracle_iters", ORACLE_ITERS),
        record_every=integer("record_every", 1),
        out=out,
        seed=seed,
        materialize_cap=integer("materialize_cap", DEFAULT_MATERIALIZE_CAP),
        feas_tol=real("feas_tol", FEAS_TOL),
        oracle_designs=oracle_designs,
        fista=fista,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# running


@dataclass
class SummaryRow:
    design: str
    iters_to_stop: int | None = None
    seconds_to_stop: float | None = None
    final_metric: float | None = None
    cond_value: float | None = None
    status: str = "ok"  # ok | FAILED(...) | SKIPPED(...)

    @property
    def failed(self) -> bool:
        return self.status.startswith("FAILED")

    def cells(self) -> list[str]:
        if self.status != "ok":
            return [self.design, self.status, "", "", ""]
        return [self.design] + [_fmt(v) for v in (self.iters_to_stop, self.seconds_to_stop, self.final_metric, self.cond_value)]


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return ""
    return str(v) if isinstance(v, int) else repr(float(v))


def design_slug(tag: str) -> str:
    return re.sub(r"[^A-Za-z0-9=.-]+", "_", tag).strip("_")


@dataclass
class ExperimentResult:
    rows: list[SummaryRow]
    out: Path
    notes: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.rows) or any(n.startswith("FAILED") for n in self.notes)


def write_summary(rows: list[SummaryRow], path: Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    for r in rows:
        w.writerow(r.cells())
    path.write_text(buf.getvalue())


def _build_designs(cfg: ExperimentConfig, inst: Instance, say: Callable[[str], None]):
    built, rows = [], {}
    for d in cfg.designs:
        try:
            built.append(d.build(inst, cfg.materialize_cap))
        except CapacityError as exc:
            rows[d.label] = SummaryRow(d.label, status=f"SKIPPED({exc})")
            say(f"{d.label}: skipped, {exc}")
        except (OVDPError, ValueError, ArithmeticError, MemoryError) as exc:
            rows[d.label] = SummaryRow(d.label, status=f"FAILED({type(exc).__name__}: {exc})")
            say(f"{d.label}: design failed, {exc}")
    return built, rows


def run_experiment(cfg: ExperimentConfig, quiet: bool = False) -> ExperimentResult:
    """Build the problem, compute the pseudo-oracle, solve with every design, write CSVs."""
    say = (lambda msg: None) if quiet else (lambda msg: print(msg, flush=True))
    cfg.out.mkdir(parents=True, exist_ok=True)
    inst = make_instance(cfg.task, cfg.params)
    built, skipped = _build_designs(cfg, inst, say)
    notes = []

    oracle = None
    labels = {d.label for d in cfg.designs if cfg.in_oracle(d)}
    for_oracle = [P for P in built if P.tag in labels]
    if for_oracle:
        say(f"{cfg.task}: pseudo-oracle over {len(for_oracle)} design(s), {cfg.oracle_iters} iterations each")
        try:
            oracle = pseudo_oracle(inst.spec, for_oracle, long_iters=cfg.oracle_iters, feas_tol=cfg.feas_tol, fista=cfg.fista)
        except OracleFailure as exc:
            notes.append(f"FAILED(pseudo-oracle: {exc})")
            say(f"pseudo-oracle failed: {exc}; logging without rmse/residual")
        except OVDPError as exc:
            notes.append(f"FAILED(pseudo-oracle: {type(exc).__name__}: {exc})")
            say(f"pseudo-oracle failed: {exc}")

    rows = []
    by_label = {P.tag: P for P in built}
    for d in cfg.designs:
        label = d.label
        if label in skipped:
            rows.append(skipped[label])
            continue
        P = by_label[label]
        try:
            res = solve(
                inst.spec,
                P,
                max_iters=cfg.max_iters,
                tol=cfg.stop_tol,
                oracle=oracle,
                metric_hook=inst.metric,
                record_every=cfg.record_every,
                feas_tol=cfg.feas_tol,
                fista=cfg.fista,
                seed=cfg.seed,
            )
        except OVDPError as exc:
            rows.append(SummaryRow(label, status=f"FAILED({type(exc).__name__}: {exc})"))
            say(f"{label}: FAILED, {exc}")
            continue
        res.log.to_csv(cfg.out / f"{design_slug(label)}.csv")
        last = res.log.records[-1]
        row = SummaryRow(label, res.log.stopped_at, last.elapsed_s, last.metric, res.cond_value)
        rows.append(row)
        stop = f"stopped at {row.iters_to_stop}" if row.iters_to_stop else f"no stop in {cfg.max_iters}"
        say(f"{label}: {stop}, metric {last.metric:.4g}, cond {res.cond_value:.6f}")

    write_summary(rows, cfg.out / "summary.csv")
    return ExperimentResult(rows, cfg.out, notes)


# ---------------------------------------------------------------------------
# verification


@dataclass
class Check:
    name: str
    value: float
    limit: float
    passed: bool

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3g} (limit {self.limit:g})"


def verify_experiment(cfg: ExperimentConfig, trials: int = 20, power_iters: int = 200) -> list[Check]:
    """Convergence-condition values of every design plus linear-operator invariants of the grid."""
    inst = make_instance(cfg.task, cfg.params)
    grid = inst.spec.grid
    checks = []
    for j, i, op in grid.present():
        err = adjoint_consistency_check(op, trials=trials, seed=cfg.seed)
        checks.append(Check(f"adjoint L[{j},{i}] {op.name}", err, 1e-10, err <= 1e-10))
        est = power_iteration_norm(op, iters=power_iters, seed=cfg.seed)
        checks.append(Check(f"norm L[{j},{i}] {op.name} (bound {op.norm_bound:.6g})", est, op.norm_bound + 1e-6, est <= op.norm_bound + 1e-6))
    for d in cfg.designs:
        try:
            P = d.build(inst, cfg.materialize_cap)
        except CapacityError:
            continue
        value = verify_convergence_condition(grid, P, iters=500, seed=cfg.seed)
        # Theorem-level guarantee only for OVDP; other designs are reported.
        limit = 1 + 1e-6
        checks.append(Check(f"cond {P.tag}", value, limit, value <= limit or d.kind != "ovdp"))
    return checks

