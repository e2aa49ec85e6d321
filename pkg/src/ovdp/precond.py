"""Preconditioner designs for P-PDS and a numerical check of the convergence condition.

Four designs are provided:

* ``design_sp``   scalar stepsizes ``gamma1 I`` and ``1/(mu^2 gamma1) I``,
* ``design_asp``  element-wise row/column absolute sums of the operator matrices,
* ``design_pdp``  ``(1/tau)(L L^T + theta I)^{-1}`` dual blocks,
* ``design_ovdp`` variable-wise scalars computed from operator-norm bounds only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapacityError, DegenerateError, DomainError
from .linops import DEFAULT_MATERIALIZE_CAP, LinOp, OpGrid, VarShape, abs_sums, materialize, power_iteration_norm
from .prox import DenseMetric, DiagMetric, ScalarMetric

log = logging.getLogger(__name__)

PDP_THETA = 0.01


@dataclass(frozen=True)
class PreconditionerPair:
    """Block-diagonal ``Gamma1`` (one block per primal) and ``Gamma2`` (one per dual).

    ``joint_gamma2``, when set, replaces the per-dual blocks by one dense
    block over the stacked dual variables (the full PDP form for ``M > 2``).
    """

    gamma1: tuple
    gamma2: tuple
    tag: str
    joint_gamma2: DenseMetric | None = None
    params: dict = field(default_factory=dict)

    @property
    def has_dense(self) -> bool:
        blocks = list(self.gamma1) + list(self.gamma2) + [self.joint_gamma2]
        return any(isinstance(b, DenseMetric) for b in blocks)


def _check_positive(name, value):
    value = float(value)
    if not (value > 0 and math.isfinite(value)):
        raise DomainError(f"{name} must be positive and finite, got {value}")
    return value


def block_norm_bound(grid: OpGrid) -> float:
    """``sqrt(sum mu_ji^2)`` over present blocks, a bound of ``||L||``."""
    return math.sqrt(sum(op.norm_bound**2 for _, _, op in grid.present()))


def design_sp(grid: OpGrid, gamma1: float, mu_sp: float) -> PreconditionerPair:
    gamma1 = _check_positive("gamma1", gamma1)
    mu_sp = _check_positive("mu_sp", mu_sp)
    gamma2 = 1.0 / (mu_sp**2 * gamma1)
    return PreconditionerPair(
        tuple(ScalarMetric(gamma1) for _ in range(grid.N)),
        tuple(ScalarMetric(gamma2) for _ in range(grid.M)),
        f"SP(g1={gamma1:g})",
        params={"gamma1": gamma1, "gamma2": gamma2, "mu_sp": mu_sp},
    )


def _reciprocal_fill(sums: np.ndarray, what: str) -> DiagMetric:
    # Entries whose abs-sum is zero touch no operator, so their stepsize does
    # not enter the convergence condition; they take the block's smallest one.
    nonzero = sums > 0
    if not nonzero.any():
        raise DegenerateError(f"{what} has all-zero absolute sums")
    filled = np.where(nonzero, sums, sums[nonzero].max())
    return DiagMetric(1.0 / filled)


def design_asp(grid: OpGrid, cap: int = DEFAULT_MATERIALIZE_CAP) -> PreconditionerPair:
    sigma = [np.zeros(s.size) for s in grid.in_shapes]
    tau = [np.zeros(s.size) for s in grid.out_shapes]
    for j, i, op in grid.present():
        cols, rows = abs_sums(op, cap)
        sigma[i] += cols
        tau[j] += rows
    g1 = tuple(_reciprocal_fill(s, f"primal block {i}") for i, s in enumerate(sigma))
    g2 = tuple(_reciprocal_fill(t, f"dual block {j}") for j, t in enumerate(tau))
    return PreconditionerPair(g1, g2, "ASP")


def _gram_plus(blocks: Sequence[np.ndarray], theta: float) -> tuple[np.ndarray, np.ndarray]:
    k = sum(b @ b.T for b in blocks)
    k[np.diag_indices_from(k)] += theta
    return np.linalg.eigh(k)


def design_pdp(grid: OpGrid, tau: float, theta: float = PDP_THETA, cap: int = DEFAULT_MATERIALIZE_CAP) -> PreconditionerPair:
    """Positive-definite preconditioning.

    With two dual variables the block form ``Gamma1 = tau/2 I``,
    ``Gamma2_j = (1/tau)(sum_i L_ji L_ji^T + theta I)^{-1}`` is used; otherwise
    ``Gamma1 = tau I`` with one dense ``Gamma2`` over all duals (for ``M = 1``
    the two coincide).
    """
    tau = _check_positive("tau", tau)
    theta = _check_positive("theta", theta)
    tag = f"PDP(tau={tau:g},theta={theta:g})"
    params = {"tau": tau, "theta": theta}

    def dense(j, i):
        op = grid[j, i]
        return None if op is None else materialize(op, cap)

    if grid.M <= 2:
        g1_value = tau / 2.0 if grid.M == 2 else tau
        g2 = []
        for j in range(grid.M):
            m = grid.out_shapes[j].size
            if m * m > cap:
                raise CapacityError(m * m, cap)
            mats = [a for a in (dense(j, i) for i in range(grid.N)) if a is not None]
            w, v = _gram_plus(mats, theta)
            g2.append(DenseMetric(eigvals=1.0 / (tau * w), eigvecs=v))
        return PreconditionerPair(tuple(ScalarMetric(g1_value) for _ in range(grid.N)), tuple(g2), tag, params=params)

    m_total = sum(s.size for s in grid.out_shapes)
    if m_total * m_total > cap:
        raise CapacityError(m_total * m_total, cap)
    cols = []
    for i in range(grid.N):
        parts = []
        for j in range(grid.M):
            a = dense(j, i)
            parts.append(a if a is not None else np.zeros((grid.out_shapes[j].size, grid.in_shapes[i].size)))
        cols.append(np.vstack(parts))
    w, v = _gram_plus(cols, theta)
    joint = DenseMetric(eigvals=1.0 / (tau * w), eigvecs=v)
    return PreconditionerPair(
        tuple(ScalarMetric(tau) for _ in range(grid.N)),
        tuple(),
        tag,
        joint_gamma2=joint,
        params=params,
    )


def design_ovdp(grid: OpGrid, beta: float) -> PreconditionerPair:
    """Variable-wise preconditioners from the norm bounds ``mu_ji``.

    ``Gamma1_i = 1/sum_j mu_ji^(2-beta)`` and ``Gamma2_j = 1/sum_i mu_ji^beta``
    over present blocks. At ``beta = 0`` every dual block is ``1/N`` and at
    ``beta = 2`` every primal block is ``1/M``, counting zero blocks too.
    """
    beta = float(beta)
    if not 0.0 <= beta <= 2.0:
        raise DomainError(f"beta must lie in [0, 2], got {beta}")
    mu = grid.mu()
    present = ~np.isnan(mu)
    mu0 = np.where(present, mu, 0.0)

    if beta == 2.0:
        primal = np.full(grid.N, float(grid.M))
    else:
        primal = np.where(present, mu0 ** (2.0 - beta), 0.0).sum(axis=0)
    if beta == 0.0:
        dual = np.full(grid.M, float(grid.N))
    else:
        dual = np.where(present, mu0**beta, 0.0).sum(axis=1)

    for name, sums in (("primal", primal), ("dual", dual)):
        bad = np.flatnonzero(sums <= 0)
        if bad.size:
            raise DegenerateError(f"OVDP(beta={beta:g}): zero denominator for {name} variable(s) {bad.tolist()}")
    return PreconditionerPair(
        tuple(ScalarMetric(1.0 / s) for s in primal),
        tuple(ScalarMetric(1.0 / s) for s in dual),
        f"OVDP(beta={beta:g})",
        params={"beta": beta},
    )


def preconditioned_operator(grid: OpGrid, P: PreconditionerPair) -> LinOp:
    """``Gamma2^{1/2} o L o Gamma1^{1/2}`` on stacked vectors."""
    n_in = sum(s.size for s in grid.in_shapes)
    n_out = sum(s.size for s in grid.out_shapes)

    def half1(x):
        return [P.gamma1[i].sqrt_apply(xi) for i, xi in enumerate(grid.split_in(x))]

    def half2(zs):
        if P.joint_gamma2 is not None:
            return P.joint_gamma2.sqrt_apply(np.concatenate(zs))
        return np.concatenate([P.gamma2[j].sqrt_apply(zj) for j, zj in enumerate(zs)])

    def fwd(x):
        return half2(grid.forward(half1(x)))

    def adj(z):
        if P.joint_gamma2 is not None:
            zs = grid.split_out(P.joint_gamma2.sqrt_apply(z))
        else:
            zs = [P.gamma2[j].sqrt_apply(zj) for j, zj in enumerate(grid.split_out(z))]
        xs = grid.adjoint(zs)
        return np.concatenate([P.gamma1[i].sqrt_apply(xi) for i, xi in enumerate(xs)])

    return LinOp(VarShape((n_in,)), VarShape((n_out,)), fwd, adj, 0.0, name="G2^.5 L G1^.5")


def verify_convergence_condition(grid: OpGrid, P: PreconditionerPair, iters: int = 500, seed=0) -> float:
    """Power-iteration estimate of ``||Gamma2^{1/2} L Gamma1^{1/2}||^2``."""
    return power_iteration_norm(preconditioned_operator(grid, P), iters=iters, seed=seed) ** 2
