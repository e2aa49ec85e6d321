"""Preconditioned primal-dual splitting (P-PDS) and its convergence diagnostics.

Solves

    min  sum_i f_i(x_i) + sum_j g_j(z_j)   s.t.  z_j = sum_i L_ji x_i

with the block-diagonal iteration

    x_i <- prox_{G1_i^-1, f_i}(x_i - G1_i sum_j L_ji^* z_j)
    z_j <- prox_{G2_j^-1, g_j^*}(z_j + G2_j sum_i L_ji (2 x_i' - x_i))
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DivergenceError, OracleFailure, StructuralError
from .linops import OpGrid, VarShape, as_shape
from .precond import PreconditionerPair, verify_convergence_condition
from .prox import ProxFn, ScalarMetric, Stacked, prox_conjugate, prox_diag

log = logging.getLogger(__name__)

STOP_TOL = 1e-5
MAX_ITERS = 10000
ORACLE_ITERS = 20000
FEAS_TOL = 1e-6
CSV_HEADER = ("t", "normalized_step", "rmse", "residual", "metric", "elapsed_s")


@dataclass
class ProblemSpec:
    """Primal and dual variables with their functions, linked by an operator grid."""

    primal: list[tuple[VarShape, ProxFn]]
    dual: list[tuple[VarShape, ProxFn]]
    grid: OpGrid
    name: str = ""

    def __post_init__(self):
        self.primal = [(as_shape(s), f) for s, f in self.primal]
        self.dual = [(as_shape(s), g) for s, g in self.dual]
        if not self.primal or not self.dual:
            raise StructuralError("a problem needs at least one primal and one dual variable")
        if (len(self.dual), len(self.primal)) != (self.grid.M, self.grid.N):
            raise StructuralError(
                f"grid is {self.grid.M}x{self.grid.N} but problem has {len(self.dual)} duals and {len(self.primal)} primals"
            )
        for i, (s, _) in enumerate(self.primal):
            if s.size != self.grid.in_shapes[i].size:
                raise StructuralError(f"primal {i} has size {s.size}, grid column expects {self.grid.in_shapes[i].size}")
        for j, (s, _) in enumerate(self.dual):
            if s.size != self.grid.out_shapes[j].size:
                raise StructuralError(f"dual {j} has size {s.size}, grid row expects {self.grid.out_shapes[j].size}")

    @property
    def f(self) -> list[ProxFn]:
        return [f for _, f in self.primal]

    @property
    def g(self) -> list[ProxFn]:
        return [g for _, g in self.dual]

    def zeros(self) -> "IterateState":
        return IterateState([np.zeros(s.size) for s, _ in self.primal], [np.zeros(s.size) for s, _ in self.dual], 0)


@dataclass
class IterateState:
    x: list[np.ndarray]
    z: list[np.ndarray]
    t: int = 0


@dataclass
class LogRecord:
    t: int
    normalized_step: float
    rmse: float | None = None
    residual: float | None = None
    metric: float | None = None
    elapsed_s: float = 0.0


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return repr(v) if math.isfinite(v) else ""


@dataclass
class ConvergenceLog:
    records: list[LogRecord] = field(default_factory=list)
    stopped_at: int | None = None
    tag: str = ""

    def append(self, rec: LogRecord):
        if self.records and rec.t <= self.records[-1].t:
            raise ValueError("log iterations must strictly increase")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self, target=None) -> str:
        """Write ``t,normalized_step,rmse,residual,metric,elapsed_s``; absent or infinite values are empty."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.records:
            w.writerow([_fmt(getattr(r, k)) for k in CSV_HEADER])
        text = buf.getvalue()
        if target is not None:
            with open(target, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "ConvergenceLog":
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CSV_HEADER:
                raise StructuralError(f"unexpected CSV header {reader.fieldnames}")
            for row in reader:
                vals = {k: (float(v) if v != "" else None) for k, v in row.items()}
                out.records.append(
                    LogRecord(int(vals["t"]), vals["normalized_step"], vals["rmse"], vals["residual"], vals["metric"], vals["elapsed_s"] or 0.0)
                )
        return out


# ---------------------------------------------------------------------------
# objective, metrics


def objective(spec: ProblemSpec, x: Sequence[np.ndarray], feas_tol: float = 0.0) -> float:
    """``sum f_i(x_i) + sum g_j(sum_i L_ji x_i)``.

    Indicator terms accept a violation up to ``feas_tol * max(1, ||arg||)``.
    Returns ``inf`` when some constraint is violated beyond that.
    """
    total = 0.0
    for (_, f), xi in zip(spec.primal, x):
        total += f.eval(xi, feas_tol * max(1.0, float(np.linalg.norm(xi))))
    for (_, g), zj in zip(spec.dual, spec.grid.forward(x)):
        total += g.eval(zj, feas_tol * max(1.0, float(np.linalg.norm(zj))))
    return total


def rmse(x: Sequence[np.ndarray], x_star: Sequence[np.ndarray]) -> float:
    if len(x) != len(x_star):
        raise StructuralError("point and reference have different numbers of variables")
    sq, n = 0.0, 0
    for a, b in zip(x, x_star):
        if np.shape(a) != np.shape(b):
            raise StructuralError(f"shape mismatch {np.shape(a)} vs {np.shape(b)}")
        d = np.asarray(a) - b
        sq += float(d @ d)
        n += d.size
    return math.sqrt(sq / n)


def residual(spec: ProblemSpec, x, x_star, feas_tol: float = 0.0, ref_value: float | None = None) -> float:
    """Absolute objective gap to the reference point; ``inf`` flags infeasibility."""
    a = objective(spec, x, feas_tol)
    b = objective(spec, x_star, feas_tol) if ref_value is None else ref_value
    if math.isinf(a) or math.isinf(b):
        return math.inf
    return abs(a - b)


def _normalized_step(x_new, x_old) -> float:
    num = math.sqrt(sum(float((a - b) @ (a - b)) for a, b in zip(x_new, x_old)))
    if num == 0.0:
        return 0.0
    den = math.sqrt(sum(float(b @ b) for b in x_old))
    return num / den if den > 0 else math.inf


# ---------------------------------------------------------------------------
# iteration


class _Stepper:
    """Per-design constants of the iteration, computed once."""

    def __init__(self, spec: ProblemSpec, P: PreconditionerPair, fista: dict | None = None):
        grid = spec.grid
        if len(P.gamma1) != grid.N:
            raise StructuralError(f"{P.tag}: {len(P.gamma1)} primal blocks for {grid.N} primal variables")
        if P.joint_gamma2 is None and len(P.gamma2) != grid.M:
            raise StructuralError(f"{P.tag}: {len(P.gamma2)} dual blocks for {grid.M} dual variables")
        self.spec = spec
        self.P = P
        self.fista = dict(fista or {})
        # Warm starts carry the inner FISTA solution across outer iterations;
        # off by default, so every inner solve starts from zero.
        warm = bool(self.fista.pop("warm_start", False))
        self.warm = [{} if warm else None for _ in range(max(grid.M, 1))]
        self.g1_inv = [b.inverse() for b in P.gamma1]
        if P.joint_gamma2 is not None:
            sizes = [s.size for s, _ in spec.dual]
            self.joint_g = Stacked(spec.g, sizes)
            self.joint_inv = P.joint_gamma2.inverse()
        else:
            self.g2_inv = [b.inverse() for b in P.gamma2]

    def primal(self, i: int, v: np.ndarray) -> np.ndarray:
        f = self.spec.primal[i][1]
        block = self.P.gamma1[i]
        if isinstance(block, ScalarMetric):
            return f.prox(v, block.value)
        return prox_diag(f, v, self.g1_inv[i], **self.fista)

    def __call__(self, state: IterateState) -> IterateState:
        spec, P = self.spec, self.P
        grid = spec.grid
        back = grid.adjoint(state.z)
        x_new = []
        for i, (xi, bi) in enumerate(zip(state.x, back)):
            xn = self.primal(i, xi - P.gamma1[i].apply(bi))
            if not np.all(np.isfinite(xn)):
                raise DivergenceError(state.t + 1, i, "primal")
            x_new.append(xn)
        fwd = grid.forward([2.0 * a - b for a, b in zip(x_new, state.x)])
        if P.joint_gamma2 is not None:
            v = np.concatenate(state.z) + P.joint_gamma2.apply(np.concatenate(fwd))
            z_new = grid.split_out(prox_conjugate(self.joint_g, v, self.joint_inv, warm=self.warm[0], **self.fista))
        else:
            z_new = []
            for j, (zj, fj) in enumerate(zip(state.z, fwd)):
                v = zj + P.gamma2[j].apply(fj)
                z_new.append(prox_conjugate(spec.dual[j][1], v, self.g2_inv[j], warm=self.warm[j], **self.fista))
        for j, zn in enumerate(z_new):
            if not np.all(np.isfinite(zn)):
                raise DivergenceError(state.t + 1, j, "dual")
        return IterateState(x_new, list(z_new), state.t + 1)


def ppds_step(spec: ProblemSpec, P: PreconditionerPair, state: IterateState, fista: dict | None = None) -> IterateState:
    """One primal sweep followed by one dual sweep at the over-relaxed point."""
    return _Stepper(spec, P, fista)(state)


@dataclass
class SolveResult:
    state: IterateState
    log: ConvergenceLog
    cond_value: float | None = None

    def __iter__(self):
        return iter((self.state, self.log))


def solve(
    spec: ProblemSpec,
    P: PreconditionerPair,
    max_iters: int = MAX_ITERS,
    stop_rule: str = "normalized_step",
    tol: float = STOP_TOL,
    oracle: Sequence[np.ndarray] | None = None,
    metric_hook: Callable[[list[np.ndarray]], float] | None = None,
    record_every: int = 1,
    feas_tol: float = FEAS_TOL,
    fista: dict | None = None,
    check_condition: bool = True,
    seed=0,
    state: IterateState | None = None,
) -> SolveResult:
    """Run P-PDS from zero until ``stop_rule`` fires or ``max_iters`` is reached.

    ``stop_rule`` is ``"normalized_step"`` (``||x+ - x|| / ||x|| < tol``),
    ``"rmse"`` (RMSE to ``oracle`` below ``tol``) or ``"max_iters"``.
    Unpacks as ``state, log``.
    """
    if max_iters < 1 or record_every < 1:
        raise ValueError("max_iters and record_every must be >= 1")
    if stop_rule not in ("normalized_step", "rmse", "max_iters"):
        raise ValueError(f"unknown stop rule {stop_rule!r}")
    if stop_rule == "rmse" and oracle is None:
        raise ValueError("the rmse stop rule needs an oracle")
    if oracle is not None:
        oracle = [np.asarray(o, dtype=float) for o in oracle]
        for i, (o, (s, _)) in enumerate(zip(oracle, spec.primal)):
            if o.shape != (s.size,):
                raise StructuralError(f"oracle variable {i} has shape {o.shape}, expected ({s.size},)")
        if len(oracle) != len(spec.primal):
            raise StructuralError("oracle has the wrong number of variables")
        ref_value = objective(spec, oracle, feas_tol)

    cond = None
    if check_condition:
        cond = verify_convergence_condition(spec.grid, P, iters=200, seed=seed)
        if cond >= 1.0 - 1e-9:
            log.warning("%s: ||G2^.5 L G1^.5||^2 estimated at %.9f (not < 1); proceeding", P.tag, cond)

    step = _Stepper(spec, P, fista)
    state = state or spec.zeros()
    clog = ConvergenceLog(tag=P.tag)
    t0 = time.perf_counter()
    for _ in range(max_iters):
        new = step(state)
        nstep = _normalized_step(new.x, state.x)
        # A zero primal step is only a fixed point if the duals stopped too;
        # from the zero start the primal often idles for a step while z moves.
        idle = nstep == 0.0 and any(not np.array_equal(a, b) for a, b in zip(new.z, state.z))
        state = new
        err = rmse(state.x, oracle) if oracle is not None else None
        fired = (stop_rule == "normalized_step" and nstep < tol and not idle) or (stop_rule == "rmse" and err < tol)
        if fired or state.t % record_every == 0 or state.t == max_iters:
            rec = LogRecord(state.t, nstep, err, elapsed_s=time.perf_counter() - t0)
            if oracle is not None:
                rec.residual = residual(spec, state.x, oracle, feas_tol, ref_value=ref_value)
            if metric_hook is not None:
                rec.metric = metric_hook(state.x)
            clog.append(rec)
        if fired:
            clog.stopped_at = state.t
            break
    return SolveResult(state, clog, cond)


def pseudo_oracle(
    spec: ProblemSpec,
    designs: Sequence[PreconditionerPair],
    long_iters: int = ORACLE_ITERS,
    feas_tol: float = FEAS_TOL,
    fista: dict | None = None,
    tie_tol: float = 1e-10,
) -> list[np.ndarray]:
    """Best primal point among long fixed-length runs of every design.

    The winner has the smallest feasible objective; objectives within
    ``tie_tol`` (relative) are broken by the smaller final normalized step,
    then by list order.
    """
    if long_iters < 1:
        raise ValueError("long_iters must be >= 1")
    best = None
    for P in designs:
        res = solve(spec, P, max_iters=long_iters, stop_rule="max_iters", record_every=long_iters, fista=fista, check_condition=False)
        value = objective(spec, res.state.x, feas_tol)
        last_step = res.log.records[-1].normalized_step
        log.info("pseudo-oracle candidate %s: objective %.12g, final step %.3g", P.tag, value, last_step)
        if not math.isfinite(value):
            continue
        cand = (value, last_step, res.state.x)
        if best is None:
            best = cand
            continue
        scale = max(abs(value), abs(best[0]), 1.0)
        if value < best[0] - tie_tol * scale:
            best = cand
        elif abs(value - best[0]) <= tie_tol * scale and last_step < best[1]:
            best = cand
    if best is None:
        raise OracleFailure("every pseudo-oracle candidate is infeasible")
    return [v.copy() for v in best[2]]
