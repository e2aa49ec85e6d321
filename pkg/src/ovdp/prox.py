"""Proximity operators, projections and skewed proximity under diagonal or dense metrics.

All functions here are pure. ``step`` arguments follow the convention
``prox(x, step) = argmin_y 0.5*||x - y||^2 + step*f(y)``; for functions that
are separable across elements ``step`` may also be an array of per-element
steps, which is exactly the skewed prox under a diagonal metric ``1/step``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import DomainError, StructuralError

FISTA_TOL = 1e-8
FISTA_MAX_ITERS = 1000
_TINY = 1e-300


# ---------------------------------------------------------------------------
# metrics


class ScalarMetric:
    """The metric ``alpha * I``."""

    is_scalar = True

    def __init__(self, value: float):
        value = float(value)
        if not (value > 0 and math.isfinite(value)):
            raise DomainError(f"metric weight must be positive and finite, got {value}")
        self.value = value

    def apply(self, x):
        return self.value * x

    def solve(self, x):
        return x / self.value

    def sqrt_apply(self, x):
        return math.sqrt(self.value) * x

    def inverse(self) -> "ScalarMetric":
        return ScalarMetric(1.0 / self.value)

    @property
    def max_eig(self) -> float:
        return self.value

    def diagonal(self, n: int) -> np.ndarray:
        return np.full(n, self.value)

    def __repr__(self):
        return f"ScalarMetric({self.value:.6g})"


class DiagMetric:
    """A diagonal metric ``diag(d)`` with strictly positive ``d``."""

    is_scalar = False

    def __init__(self, d):
        d = np.asarray(d, dtype=float).ravel()
        if d.size == 0 or not np.all(np.isfinite(d)) or np.any(d <= 0):
            raise DomainError("diagonal metric needs finite, strictly positive weights")
        self.d = d

    def apply(self, x):
        return self.d * x

    def solve(self, x):
        return x / self.d

    def sqrt_apply(self, x):
        return np.sqrt(self.d) * x

    def inverse(self) -> "DiagMetric":
        return DiagMetric(1.0 / self.d)

    @property
    def max_eig(self) -> float:
        return float(self.d.max())

    def diagonal(self, n: int) -> np.ndarray:
        return self.d

    def __repr__(self):
        return f"DiagMetric(n={self.d.size}, min={self.d.min():.4g}, max={self.d.max():.4g})"


class DenseMetric:
    """A symmetric positive definite metric held through its eigendecomposition."""

    is_scalar = False

    def __init__(self, mat=None, *, eigvals=None, eigvecs=None):
        if eigvals is None:
            mat = np.asarray(mat, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise DomainError(f"dense metric must be square, got {mat.shape}")
            if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12 * np.abs(mat).max()):
                raise DomainError("dense metric is not symmetric")
            eigvals, eigvecs = np.linalg.eigh(0.5 * (mat + mat.T))
        eigvals = np.asarray(eigvals, dtype=float)
        if not np.all(np.isfinite(eigvals)) or eigvals.min() <= 0:
            raise DomainError(f"dense metric is not positive definite (min eigenvalue {eigvals.min():.3g})")
        self.eigvals = eigvals
        self.eigvecs = np.asarray(eigvecs, dtype=float)
        self.mat = (self.eigvecs * eigvals) @ self.eigvecs.T

    def _spectral(self, x, fn):
        return self.eigvecs @ (fn * (self.eigvecs.T @ x))

    def apply(self, x):
        return self.mat @ x

    def solve(self, x):
        return self._spectral(x, 1.0 / self.eigvals)

    def sqrt_apply(self, x):
        return self._spectral(x, np.sqrt(self.eigvals))

    def inverse(self) -> "DenseMetric":
        return DenseMetric(eigvals=1.0 / self.eigvals, eigvecs=self.eigvecs)

    @property
    def max_eig(self) -> float:
        return float(self.eigvals.max())

    def diagonal(self, n: int) -> np.ndarray:
        return np.diag(self.mat).copy()

    def __repr__(self):
        return f"DenseMetric(n={self.eigvals.size}, cond={self.eigvals.max() / self.eigvals.min():.3g})"


def as_metric(g):
    """Coerce a positive scalar, a vector, a square matrix or a metric object."""
    if isinstance(g, (ScalarMetric, DiagMetric, DenseMetric)):
        return g
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 0:
        return ScalarMetric(float(arr))
    if arr.ndim == 1:
        return DiagMetric(arr)
    return DenseMetric(arr)


# ---------------------------------------------------------------------------
# elementary operators


def prox_l1(x, w):
    """Soft threshold ``sign(x) * max(|x| - w, 0)``; ``w`` may be per element."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - w, 0.0)


def _group_bounds(n: int, groups) -> np.ndarray:
    if np.ndim(groups) == 0:
        size = int(groups)
        if size < 1 or n % size:
            raise StructuralError(f"length {n} is not a multiple of group size {groups}")
        return np.arange(0, n + 1, size)
    sizes = np.asarray(groups, dtype=int)
    if np.any(sizes < 1) or sizes.sum() != n:
        raise StructuralError(f"group sizes sum to {sizes.sum()}, expected {n}")
    return np.concatenate([[0], np.cumsum(sizes)])


def _group_norms(x, bounds):
    sq = np.add.reduceat(x * x, bounds[:-1]) if x.size else np.zeros(0)
    return np.sqrt(sq)


def prox_group_l12(x, w, groups):
    """Block soft threshold over contiguous groups.

    ``groups`` is a fixed group size or a sequence of group sizes covering
    ``x``. ``w`` is a scalar or one threshold per group.
    """
    x = np.asarray(x, dtype=float)
    bounds = _group_bounds(x.size, groups)
    norms = _group_norms(x, bounds)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, np.maximum(1.0 - w / norms, 0.0), 0.0)
    return x * np.repeat(scale, np.diff(bounds))


def project_l2_ball(x, c, alpha):
    x = np.asarray(x, dtype=float)
    d = x - c
    r = np.linalg.norm(d)
    if r <= alpha:
        return x.copy()
    return c + (alpha / r) * d


def project_l1_ball(x, eta):
    """Euclidean projection onto ``{y : ||y||_1 <= eta}`` by sort and threshold."""
    if eta <= 0:
        raise DomainError(f"l1-ball radius must be positive, got {eta}")
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    if a.sum() <= eta:
        return x.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u) - eta
    k = np.arange(1, u.size + 1)
    rho = np.nonzero(u * k > css)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.sign(x) * np.maximum(a - theta, 0.0)


def project_nonneg(x):
    return np.maximum(np.asarray(x, dtype=float), 0.0)


def project_zero(x):
    return np.zeros_like(np.asarray(x, dtype=float))


# ---------------------------------------------------------------------------
# exact skewed proximity under a diagonal metric
#
# Each reduces to one monotone scalar equation per group (or per vector),
# solved by vectorized bisection.

_BISECT_ITERS = 100


def skewed_group_l12(x, d, w, groups):
    """``argmin 0.5*sum d_k (y_k - x_k)^2 + w * sum_g ||y_g||``.

    Per group ``y = d x / (d + r)`` where ``r = w / ||y||`` is the root of
    ``||r d x / (d + r)|| = w``; the group is zero when ``||d x|| <= w``.
    """
    x = np.asarray(x, dtype=float)
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    bounds = _group_bounds(x.size, groups)
    sizes = np.diff(bounds)
    starts = bounds[:-1]
    dx = d * x
    ndx = _group_norms(dx, bounds)
    nx = _group_norms(x, bounds)
    w = np.broadcast_to(np.asarray(w, dtype=float), ndx.shape)
    live = ndx > w
    if not live.any():
        return np.zeros_like(x)
    dmax = np.maximum.reduceat(d, starts)
    q = np.where(live, w / np.where(live, ndx, 1.0), 0.5)
    lo = np.log(np.where(live, w / np.where(nx > 0, nx, 1.0), 1.0))
    hi = np.log(np.where(live, q * dmax / (1.0 - q), 1.0))
    lo = np.minimum(lo, hi)
    w2 = w * w
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        r = np.repeat(np.exp(mid), sizes)
        val = np.add.reduceat((r * dx / (d + r)) ** 2, starts) - w2
        pos = val > 0
        hi = np.where(pos, mid, hi)
        lo = np.where(pos, lo, mid)
    r = np.repeat(np.exp(0.5 * (lo + hi)), sizes)
    y = dx / (d + r)
    return np.where(np.repeat(live, sizes), y, 0.0)


def _ball_multiplier(u, d, alpha):
    """Root ``mu >= 0`` of ``||d u / (d + mu)|| = alpha`` (requires ``||u|| > alpha``)."""
    lo, hi = 0.0, float(np.max(d) * np.linalg.norm(u) / alpha)
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(d * u / (d + mid)) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-17 * hi:
            break
    return hi


def skewed_l2_ball(x, d, c, alpha):
    """Projection onto ``{||y - c|| <= alpha}`` in the metric ``diag(d)``."""
    x = np.asarray(x, dtype=float)
    u = x - c
    if np.linalg.norm(u) <= alpha:
        return x.copy()
    if alpha == 0:
        return np.broadcast_to(np.asarray(c, dtype=float), x.shape).copy()
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    mu = _ball_multiplier(u, d, alpha)
    y = d * u / (d + mu)
    # the bisection keeps ||y|| <= alpha up to rounding; rescale the last ulp
    n = np.linalg.norm(y)
    if n > alpha:
        y *= alpha / n
    return c + y


def skewed_l1_ball(x, d, eta):
    """Projection onto ``{||y||_1 <= eta}`` in the metric ``diag(d)``.

    ``y = sign(x) max(|x| - mu / d, 0)`` with ``mu`` located by bisection and
    then solved exactly on the resulting active set.
    """
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    if a.sum() <= eta:
        return x.copy()
    d = np.broadcast_to(np.asarray(d, dtype=float), x.shape)
    lo, hi = 0.0, float(np.max(d * a))
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        if np.maximum(a - mid / d, 0.0).sum() > eta:
            lo = mid
        else:
            hi = mid
    active = a - hi / d > 0
    if active.any():
        mu = (a[active].sum() - eta) / (1.0 / d[active]).sum()
        if 0 <= mu and np.all(a[active] - mu / d[active] > 0):
            hi = mu
    return np.sign(x) * np.maximum(a - hi / d, 0.0)


# ---------------------------------------------------------------------------
# function objects


class ProxFn:
    """A proper lsc convex function with a cheap standard prox."""

    kind = "abstract"
    separable = False
    is_indicator = False

    def eval(self, x, tol: float = 0.0) -> float:
        raise NotImplementedError

    def prox(self, x, step):
        raise NotImplementedError

    def distance(self, x) -> float:
        """Distance to the constraint set (indicators only)."""
        return float(np.linalg.norm(x - self.prox(x, 1.0)))

    def _indicator_eval(self, x, tol):
        return 0.0 if self.distance(x) <= tol else math.inf

    def skewed(self, x, d):
        """Exact prox under the metric ``diag(d)`` if known in closed form, else None."""
        if self.separable:
            return self.prox(x, 1.0 / d)
        return None


class ZeroFn(ProxFn):
    kind = "zero"
    separable = True

    def eval(self, x, tol=0.0):
        return 0.0

    def prox(self, x, step):
        return np.array(x, dtype=float)

    def __repr__(self):
        return "ZeroFn()"


class L1(ProxFn):
    kind = "l1"
    separable = True

    def __init__(self, weight: float = 1.0):
        if weight <= 0:
            raise DomainError("l1 weight must be positive")
        self.weight = float(weight)

    def eval(self, x, tol=0.0):
        return self.weight * float(np.abs(x).sum())

    def prox(self, x, step):
        return prox_l1(x, self.weight * step)

    def __repr__(self):
        return f"L1(weight={self.weight:g})"


class GroupL12(ProxFn):
    """Weighted sum of Euclidean norms over contiguous groups."""

    kind = "group_l12"

    def __init__(self, groups, weight: float = 1.0):
        if weight <= 0:
            raise DomainError("group weight must be positive")
        self.groups = groups if np.ndim(groups) == 0 else np.asarray(groups, dtype=int)
        self.weight = float(weight)

    def bounds(self, n: int) -> np.ndarray:
        return _group_bounds(n, self.groups)

    def eval(self, x, tol=0.0):
        return self.weight * float(_group_norms(np.asarray(x, dtype=float), self.bounds(np.size(x))).sum())

    def prox(self, x, step):
        return prox_group_l12(x, self.weight * step, self.groups)

    def skewed(self, x, d):
        return skewed_group_l12(x, d, self.weight, self.groups)

    def groupwise_step(self, step: np.ndarray):
        """One step per group if ``step`` is constant within every group, else None."""
        bounds = self.bounds(step.size)
        first = step[bounds[:-1]]
        if np.array_equal(np.repeat(first, np.diff(bounds)), step):
            return first
        return None

    def __repr__(self):
        return f"GroupL12(groups={self.groups if np.ndim(self.groups) == 0 else len(self.groups)}, weight={self.weight:g})"


class L2Ball(ProxFn):
    """Indicator of ``{x : ||x - c||_2 <= radius}``."""

    kind = "ind_l2ball"
    is_indicator = True

    def __init__(self, center, radius: float):
        if radius < 0:
            raise DomainError("ball radius must be nonnegative")
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def distance(self, x):
        return max(float(np.linalg.norm(x - self.center)) - self.radius, 0.0)

    def eval(self, x, tol=0.0):
        return self._indicator_eval(x, tol)

    def prox(self, x, step):
        return project_l2_ball(x, self.center, self.radius)

    def skewed(self, x, d):
        return skewed_l2_ball(x, d, self.center, self.radius)

    def __repr__(self):
        return f"L2Ball(n={self.center.size}, radius={self.radius:.6g})"


class L1Ball(ProxFn):
    """Indicator of ``{x : ||x||_1 <= radius}``."""

    kind = "ind_l1ball"
    is_indicator = True

    def __init__(self, radius: float):
        if radius <= 0:
            raise DomainError("l1-ball radius must be positive")
        self.radius = float(radius)

    def eval(self, x, tol=0.0):
        return self._indicator_eval(x, tol)

    def prox(self, x, step):
        return project_l1_ball(x, self.radius)

    def skewed(self, x, d):
        return skewed_l1_ball(x, d, self.radius)

    def __repr__(self):
        return f"L1Ball(radius={self.radius:.6g})"


class NonNeg(ProxFn):
    kind = "ind_nonneg"
    separable = True
    is_indicator = True

    def distance(self, x):
        return float(np.linalg.norm(np.minimum(x, 0.0)))

    def eval(self, x, tol=0.0):
        return self._indicator_eval(x, tol)

    def prox(self, x, step):
        return project_nonneg(x)

    def __repr__(self):
        return "NonNeg()"


class ZeroSet(ProxFn):
    """Indicator of ``{0}``; its conjugate is the zero function."""

    kind = "ind_zero"
    separable = True
    is_indicator = True

    def distance(self, x):
        return float(np.linalg.norm(x))

    def eval(self, x, tol=0.0):
        return self._indicator_eval(x, tol)

    def prox(self, x, step):
        return project_zero(x)

    def __repr__(self):
        return "ZeroSet()"


class Stacked(ProxFn):
    """Sum of functions acting on consecutive slices of one vector."""

    kind = "stacked"

    def __init__(self, fns: Sequence[ProxFn], sizes: Sequence[int]):
        if len(fns) != len(sizes):
            raise StructuralError("one size per function is required")
        self.fns = list(fns)
        self.bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.separable = all(f.separable for f in self.fns)

    def _slices(self, x):
        if np.size(x) != self.bounds[-1]:
            raise StructuralError(f"expected length {self.bounds[-1]}, got {np.size(x)}")
        return [slice(a, b) for a, b in zip(self.bounds[:-1], self.bounds[1:])]

    def eval(self, x, tol=0.0):
        return sum(f.eval(x[s], tol) for f, s in zip(self.fns, self._slices(x)))

    def prox(self, x, step):
        out = np.empty(np.size(x))
        for f, s in zip(self.fns, self._slices(x)):
            out[s] = f.prox(x[s], step if np.ndim(step) == 0 else step[s])
        return out

    def skewed(self, x, d):
        out = np.empty(np.size(x))
        for f, s in zip(self.fns, self._slices(x)):
            part = f.skewed(x[s], d[s])
            if part is None:
                return None
            out[s] = part
        return out


# ---------------------------------------------------------------------------
# skewed proximity


def skewed_prox_fista(f: ProxFn, x, G, tol: float = FISTA_TOL, max_iters: int = FISTA_MAX_ITERS, y0=None):
    """``argmin_y 0.5*<x - y, G(x - y)> + f(y)`` by FISTA, from zero unless ``y0`` is given.

    The smooth part has gradient ``G(y - x)`` and Lipschitz constant
    ``max eig(G)``. Momentum is reset whenever it points uphill. Stops when
    the relative change of the iterate drops below ``tol``.
    """
    G = as_metric(G)
    x = np.asarray(x, dtype=float)
    lip = G.max_eig
    step = 1.0 / lip
    y = np.zeros_like(x) if y0 is None else np.array(y0, dtype=float)
    w = y
    t = 1.0
    for _ in range(max_iters):
        y_new = f.prox(w - step * G.apply(w - x), step)
        diff = y_new - y
        if np.linalg.norm(diff) <= tol * max(np.linalg.norm(y_new), _TINY):
            return y_new
        if float((w - y_new) @ diff) > 0:
            t = 1.0
            w = y_new
        else:
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
            w = y_new + ((t - 1.0) / t_new) * diff
            t = t_new
        y = y_new
    return y


def prox_diag(
    f: ProxFn,
    x,
    metric,
    fista_tol: float = FISTA_TOL,
    fista_max_iters: int = FISTA_MAX_ITERS,
    exact: bool = True,
    fista_y0=None,
):
    """``prox_{G,f}(x)``, in closed form whenever the metric allows it.

    Scalar metrics and separable functions always use the standard prox.
    With ``exact`` (default) non-separable functions under a diagonal metric,
    and the l2 ball under a dense metric, are solved through their scalar
    optimality equation; everything else goes to :func:`skewed_prox_fista`.
    """
    G = as_metric(metric)
    if isinstance(G, ScalarMetric):
        return f.prox(x, 1.0 / G.value)
    if isinstance(G, DiagMetric):
        d = G.d
        if d.size != np.size(x):
            raise StructuralError(f"metric of length {d.size} for vector of length {np.size(x)}")
        if np.all(d == d[0]):
            return f.prox(x, 1.0 / d[0])
        if f.separable:
            return f.prox(x, 1.0 / d)
        if isinstance(f, GroupL12):
            per_group = f.groupwise_step(1.0 / d)
            if per_group is not None:
                return f.prox(x, per_group)
        if exact:
            y = f.skewed(x, d)
            if y is not None:
                return y
    elif exact and isinstance(f, L2Ball):
        # the ball is rotation invariant, so work in the metric's eigenbasis
        V = G.eigvecs
        u = V.T @ (np.asarray(x, dtype=float) - f.center)
        y = skewed_l2_ball(u, G.eigvals, 0.0, f.radius)
        return f.center + V @ y
    return skewed_prox_fista(f, x, G, tol=fista_tol, max_iters=fista_max_iters, y0=fista_y0)


def prox_conjugate(f: ProxFn, x, G, warm: dict | None = None, **fista):
    """``prox_{G,f*}(x) = x - G^{-1} prox_{G^{-1},f}(G x)``.

    ``warm``, if given, is a dict that carries the inner solution from one
    call to the next as the FISTA starting point.
    """
    G = as_metric(G)
    x = np.asarray(x, dtype=float)
    if warm is not None:
        fista = dict(fista, fista_y0=warm.get("y"))
    inner = prox_diag(f, G.apply(x), G.inverse(), **fista)
    if warm is not None:
        warm["y"] = inner
    return x - G.solve(inner)


def prox_objective(f: ProxFn, x, y, G, tol: float = 0.0) -> float:
    """``0.5*<x - y, G(x - y)> + f(y)``, the quantity every prox minimizes."""
    G = as_metric(G)
    d = np.asarray(x, dtype=float) - y
    return 0.5 * float(d @ G.apply(d)) + f.eval(y, tol)


__all__: Sequence[str] = [
    "ScalarMetric",
    "DiagMetric",
    "DenseMetric",
    "as_metric",
    "prox_l1",
    "prox_group_l12",
    "project_l2_ball",
    "project_l1_ball",
    "project_nonneg",
    "project_zero",
    "ProxFn",
    "ZeroFn",
    "L1",
    "GroupL12",
    "L2Ball",
    "L1Ball",
    "NonNeg",
    "ZeroSet",
    "Stacked",
    "skewed_group_l12",
    "skewed_l2_ball",
    "skewed_l1_ball",
    "skewed_prox_fista",
    "prox_diag",
    "prox_conjugate",
    "prox_objective",
]
