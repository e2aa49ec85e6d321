"""Matrix-free linear operators with adjoints and operator-norm bounds.

Every operator acts on flat float64 vectors. Cubes of shape ``(N1, N2, N3)``
are stored with the first index running fastest (Fortran order), so a
hyperspectral cube is a sequence of bands, each band a sequence of columns.

An operator carries ``norm_bound``, an upper bound of its operator norm. The
preconditioner designers only ever read that number, never the entries, so
procedural operators (difference stencils, compositions) are first class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import CapacityError, DegenerateError, NumericError, StructuralError

DEFAULT_MATERIALIZE_CAP = 10**7


@dataclass(frozen=True)
class VarShape:
    """Dimensions of one primal or dual variable."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in np.atleast_1d(self.dims))
        if not dims or any(d < 0 for d in dims):
            raise StructuralError(f"invalid dims {self.dims!r}")
        object.__setattr__(self, "dims", dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def __len__(self) -> int:
        return self.size


def as_shape(shape) -> VarShape:
    if isinstance(shape, VarShape):
        return shape
    return VarShape(tuple(np.atleast_1d(shape)))


class LinOp:
    """A linear map ``R^in -> R^out`` given by forward and adjoint callables.

    ``matrix`` optionally holds an explicit (dense or sparse) representation;
    operators without one can still be turned into a matrix with
    :func:`materialize`.
    """

    __slots__ = ("in_shape", "out_shape", "_fwd", "_adj", "norm_bound", "matrix", "name")

    def __init__(
        self,
        in_shape,
        out_shape,
        forward: Callable[[np.ndarray], np.ndarray],
        adjoint: Callable[[np.ndarray], np.ndarray],
        norm_bound: float,
        matrix=None,
        name: str = "",
    ):
        self.in_shape = as_shape(in_shape)
        self.out_shape = as_shape(out_shape)
        self._fwd = forward
        self._adj = adjoint
        if not (norm_bound >= 0 and math.isfinite(norm_bound)):
            raise NumericError(f"norm bound must be finite and nonnegative, got {norm_bound}")
        self.norm_bound = float(norm_bound)
        self.matrix = matrix
        self.name = name

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._fwd(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self._adj(y)

    __call__ = forward

    @property
    def shape(self) -> tuple[int, int]:
        return (self.out_shape.size, self.in_shape.size)

    def __repr__(self):
        return (
            f"LinOp({self.name or '?'}: {self.in_shape.dims} -> {self.out_shape.dims}, "
            f"mu={self.norm_bound:.6g})"
        )


def _shape_checked(op: LinOp, x: np.ndarray, adjoint: bool) -> np.ndarray:
    n_in, n_out = (op.out_shape.size, op.in_shape.size) if adjoint else (op.in_shape.size, op.out_shape.size)
    if x.shape != (n_in,):
        raise StructuralError(f"{op.name}: expected input of length {n_in}, got {x.shape}")
    y = op.adjoint(x) if adjoint else op.forward(x)
    if np.shape(y) != (n_out,):
        which = "adjoint" if adjoint else "forward"
        raise StructuralError(f"{op.name}: {which} returned shape {np.shape(y)}, expected ({n_out},)")
    return y


def _safe_norm(v: np.ndarray) -> float:
    # Rescale first so the sum of squares neither underflows nor overflows.
    m = float(np.abs(v).max()) if v.size else 0.0
    return m * float(np.linalg.norm(v / m)) if m > 0 else 0.0


def adjoint_consistency_check(op: LinOp, trials: int = 10, seed=0) -> float:
    """Largest relative violation of ``<Lx, y> = <x, L*y>`` over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(op.in_shape.size)
        y = rng.standard_normal(op.out_shape.size)
        lx = _shape_checked(op, x, adjoint=False)
        ly = _shape_checked(op, y, adjoint=True)
        gap = abs(float(lx @ y) - float(x @ ly))
        # Scale by both sides so tiny operators are judged relative to themselves.
        scale = max(_safe_norm(lx) * _safe_norm(y), _safe_norm(x) * _safe_norm(ly))
        if scale > 0:
            worst = max(worst, gap / scale)
        elif gap > 0:
            return math.inf
    return worst


def power_iteration_norm(op: LinOp, iters: int = 200, seed=0) -> float:
    """Estimate ``||op||`` from Rayleigh quotients of ``op* op``.

    The estimate never exceeds the true norm and does not decrease with
    ``iters``. A zero operator gives 0.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    n = op.in_shape.size
    if n == 0 or op.out_shape.size == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        y = op.adjoint(op.forward(x))
        ny = np.linalg.norm(y)
        if not np.isfinite(ny):
            raise NumericError(f"{op.name}: non-finite value in power iteration")
        if ny == 0.0:
            break
        lam = max(lam, float(x @ y))
        x = y / ny
    return math.sqrt(lam)


def compose(a: LinOp, b: LinOp) -> LinOp:
    """``a o b`` with the submultiplicative norm bound."""
    if b.out_shape != a.in_shape:
        raise StructuralError(f"cannot compose {a.name} after {b.name}: {b.out_shape.dims} != {a.in_shape.dims}")
    return LinOp(
        b.in_shape,
        a.out_shape,
        lambda x: a.forward(b.forward(x)),
        lambda y: b.adjoint(a.adjoint(y)),
        a.norm_bound * b.norm_bound,
        name=f"{a.name}*{b.name}",
    )


def identity(shape, scale: float = 1.0) -> LinOp:
    shape = as_shape(shape)
    scale = float(scale)
    if scale == 1.0:
        fn = lambda x: x.copy()  # noqa: E731
    else:
        fn = lambda x: scale * x  # noqa: E731
    name = "I" if scale == 1.0 else f"{scale:g}I"
    return LinOp(shape, shape, fn, fn, abs(scale), matrix=scale * sp.identity(shape.size, format="csr"), name=name)


def _neumann_diff(dims, axis: int, name: str) -> LinOp:
    shape = as_shape(dims)
    if len(shape.dims) != 3:
        raise StructuralError(f"{name} needs a 3-D cube shape, got {shape.dims}")
    cube = shape.dims
    lo = [slice(None)] * 3
    hi = [slice(None)] * 3
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    lo, hi = tuple(lo), tuple(hi)

    def fwd(x):
        c = x.reshape(cube, order="F")
        out = np.zeros(cube, order="F")
        out[lo] = c[lo] - c[hi]
        return out.ravel(order="F")

    def adj(y):
        c = y.reshape(cube, order="F")
        out = np.zeros(cube, order="F")
        out[lo] = c[lo]
        out[hi] -= c[lo]
        return out.ravel(order="F")

    return LinOp(shape, shape, fwd, adj, 2.0, name=name)


def diff_v(dims) -> LinOp:
    """Vertical difference ``x[i,j,k] - x[i+1,j,k]``, zero on the last row."""
    return _neumann_diff(dims, 0, "Dv")


def diff_h(dims) -> LinOp:
    """Horizontal difference ``x[i,j,k] - x[i,j+1,k]``, zero on the last column."""
    return _neumann_diff(dims, 1, "Dh")


def diff_b(dims) -> LinOp:
    """Spectral difference ``x[i,j,k] - x[i,j,k+1]``, zero on the last band."""
    return _neumann_diff(dims, 2, "Db")


@dataclass(frozen=True)
class GraphSpec:
    """Weighted directed graph given by a sparse weight matrix."""

    num_vertices: int
    weights: sp.csr_array

    def __post_init__(self):
        w = sp.csr_array(self.weights, dtype=float)
        w.sum_duplicates()
        w.eliminate_zeros()
        n = int(self.num_vertices)
        if w.shape != (n, n):
            raise StructuralError(f"weight matrix shape {w.shape} does not match {n} vertices")
        if np.any(w.diagonal() != 0):
            raise StructuralError("graph weights must have a zero diagonal")
        if np.any(w.data < 0) or not np.all(np.isfinite(w.data)):
            raise StructuralError("graph weights must be finite and nonnegative")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "num_vertices", n)

    @classmethod
    def from_edges(cls, num_vertices: int, edges: Sequence[tuple[int, int, float]]) -> "GraphSpec":
        if len(edges):
            i, j, w = (np.asarray(c) for c in zip(*edges))
        else:
            i = j = np.zeros(0, dtype=int)
            w = np.zeros(0)
        mat = sp.coo_array((w.astype(float), (i.astype(int), j.astype(int))), shape=(num_vertices, num_vertices))
        return cls(num_vertices, mat.tocsr())

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Nonzero entries ``(i, j, w)`` sorted by ``(i, j)``."""
        coo = self.weights.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(int), coo.col[order].astype(int), coo.data[order]

    @property
    def num_edges(self) -> int:
        return int(self.weights.nnz)


def graph_diff_bound_printed(g: GraphSpec) -> float:
    """``2 max_i sum_j (W_ij^2 + W_ji^2)``, the bound as usually quoted for GTV."""
    if g.num_edges == 0:
        return 0.0
    w2 = g.weights.multiply(g.weights)
    per_vertex = np.asarray(w2.sum(axis=1)).ravel() + np.asarray(w2.sum(axis=0)).ravel()
    return 2.0 * float(per_vertex.max())


def graph_diff_groups(g: GraphSpec) -> np.ndarray:
    """Sizes of the per-vertex blocks of :func:`graph_diff` output, isolated vertices dropped."""
    rows, _, _ = g.edges()
    sizes = np.bincount(rows, minlength=g.num_vertices)
    return sizes[sizes > 0]


def graph_diff(g: GraphSpec, power_iters: int = 1000, seed=0) -> LinOp:
    """Graph difference operator stacking ``(x_j - x_i) W_ij`` per vertex ``i``.

    The norm bound is the smaller of the quoted closed-form bound and the
    power-iteration estimate inflated by 1%, keeping only candidates not
    already refuted by the estimate.
    """
    rows, cols, w = g.edges()
    n, m = g.num_vertices, rows.size
    e = np.arange(m)
    d = sp.csr_array(
        (np.concatenate([w, -w]), (np.concatenate([e, e]), np.concatenate([cols, rows]))),
        shape=(m, n),
    )
    dt = d.T.tocsr()
    op = LinOp(VarShape((n,)), VarShape((m,)), lambda x: d @ x, lambda y: dt @ y, 0.0, matrix=d, name="DG")
    if m == 0:
        return op
    printed = graph_diff_bound_printed(g)
    est = power_iteration_norm(op, iters=power_iters, seed=seed)
    candidates = [c for c in (printed, 1.01 * est) if c >= est]
    op.norm_bound = float(min(candidates))
    return op


def sampling_op(mask) -> LinOp:
    """Row selection ``Phi`` keeping the entries where ``mask`` is true."""
    mask = np.asarray(mask, dtype=bool).ravel()
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise StructuralError("sampling mask selects nothing")
    n = mask.size

    def adj(y):
        out = np.zeros(n)
        out[idx] = y
        return out

    mat = sp.csr_array((np.ones(idx.size), (np.arange(idx.size), idx)), shape=(idx.size, n))
    return LinOp(VarShape((n,)), VarShape((idx.size,)), lambda x: x[idx], adj, 1.0, matrix=mat, name="Phi")


def _check_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise StructuralError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("matrix has non-finite entries")
    return a


def _spectral_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def matrix_op(a) -> LinOp:
    a = _check_matrix(a)
    at = a.T.copy()
    m, n = a.shape
    return LinOp(VarShape((n,)), VarShape((m,)), lambda x: a @ x, lambda y: at @ y, _spectral_norm(a), matrix=a, name="A")


def blockdiag_matrix_op(a, repeats: int, pixel_major: bool = True) -> LinOp:
    """``diag(A, ..., A)`` without forming it.

    With ``pixel_major`` the input is ``repeats`` consecutive blocks of
    length ``A.shape[1]``. Otherwise the input is ``A.shape[1]`` consecutive
    maps of length ``repeats`` and the output is laid out the same way (one
    map per row of ``A``), which is ``kron(A, I)``.
    """
    a = _check_matrix(a)
    m, n = a.shape
    r = int(repeats)
    if r < 1:
        raise StructuralError("repeats must be >= 1")
    if pixel_major:
        fwd = lambda x: (x.reshape(r, n) @ a.T).ravel()  # noqa: E731
        adj = lambda y: (y.reshape(r, m) @ a).ravel()  # noqa: E731
        mat = sp.kron(sp.identity(r), sp.csr_array(a), format="csr")
    else:
        fwd = lambda x: (a @ x.reshape(n, r)).ravel()  # noqa: E731
        adj = lambda y: (a.T @ y.reshape(m, r)).ravel()  # noqa: E731
        mat = sp.kron(sp.csr_array(a), sp.identity(r), format="csr")
    return LinOp(VarShape((n * r,)), VarShape((m * r,)), fwd, adj, _spectral_norm(a), matrix=sp.csr_array(mat), name="blkdiag(A)")


def materialize(op: LinOp, cap: int = DEFAULT_MATERIALIZE_CAP) -> np.ndarray:
    """Dense matrix of ``op`` whose column ``k`` is ``op(e_k)``."""
    m, n = op.shape
    if m * n > cap:
        raise CapacityError(m * n, cap)
    if op.matrix is not None:
        mat = op.matrix
        return mat.toarray() if sp.issparse(mat) else np.array(mat, dtype=float)
    out = np.empty((m, n))
    e = np.zeros(n)
    for k in range(n):
        e[k] = 1.0
        out[:, k] = op.forward(e)
        e[k] = 0.0
    return out


def abs_sums(op: LinOp, cap: int = DEFAULT_MATERIALIZE_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Column and row absolute sums of the representation matrix of ``op``."""
    mat = op.matrix
    if mat is None:
        mat = materialize(op, cap)
    elif not sp.issparse(mat) and mat.size > cap:
        raise CapacityError(mat.size, cap)
    a = abs(mat)
    cols = np.asarray(a.sum(axis=0)).ravel()
    rows = np.asarray(a.sum(axis=1)).ravel()
    return cols, rows


def lemma1_decompose(a, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Split ``A = B C`` with ``||B|| = s1^(1-beta)`` and ``||C|| = s1^beta``.

    Uses the thin SVD restricted to the numerical rank, with the free
    unitary factor fixed to the identity.
    """
    a = _check_matrix(a)
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateError("cannot decompose a zero matrix")
    r = int(np.sum(s > s[0] * max(a.shape) * np.finfo(float).eps))
    u, s, vt = u[:, :r], s[:r], vt[:r]
    b = u * s ** (1.0 - beta)
    c = (s**beta)[:, None] * vt
    return b, c


class OpGrid:
    """``M x N`` block arrangement of operators; ``None`` marks a zero block."""

    def __init__(self, entries: Sequence[Sequence[LinOp | None]], in_shapes=None):
        rows = [list(r) for r in entries]
        if not rows or not rows[0]:
            raise StructuralError("grid must have at least one row and one column")
        n = len(rows[0])
        if any(len(r) != n for r in rows):
            raise StructuralError("grid rows have different lengths")
        self.entries = rows
        self.M, self.N = len(rows), n

        out_shapes = []
        for j, row in enumerate(rows):
            shapes = {op.out_shape for op in row if op is not None}
            if not shapes:
                raise StructuralError(f"dual variable {j} is defined by no operator")
            if len(shapes) > 1:
                raise StructuralError(f"row {j} mixes output shapes {sorted(s.dims for s in shapes)}")
            out_shapes.append(shapes.pop())
        given = list(in_shapes) if in_shapes is not None else [None] * n
        col_shapes = []
        for i in range(n):
            shapes = {rows[j][i].in_shape for j in range(self.M) if rows[j][i] is not None}
            if given[i] is not None:
                shapes.add(as_shape(given[i]))
            if not shapes:
                raise StructuralError(f"primal variable {i} has unknown shape (empty column)")
            if len(shapes) > 1:
                raise StructuralError(f"column {i} mixes input shapes {sorted(s.dims for s in shapes)}")
            col_shapes.append(shapes.pop())
        self.out_shapes: list[VarShape] = out_shapes
        self.in_shapes: list[VarShape] = col_shapes

    def __getitem__(self, ji: tuple[int, int]) -> LinOp | None:
        j, i = ji
        return self.entries[j][i]

    def present(self) -> Iterator[tuple[int, int, LinOp]]:
        for j, row in enumerate(self.entries):
            for i, op in enumerate(row):
                if op is not None:
                    yield j, i, op

    def mu(self) -> np.ndarray:
        """Norm bounds as an ``M x N`` array, ``nan`` where the block is zero."""
        out = np.full((self.M, self.N), np.nan)
        for j, i, op in self.present():
            out[j, i] = op.norm_bound
        return out

    def forward(self, xs: Sequence[np.ndarray]) -> list[np.ndarray]:
        zs = []
        for j, row in enumerate(self.entries):
            acc = None
            for i, op in enumerate(row):
                if op is not None:
                    v = op.forward(xs[i])
                    acc = v if acc is None else acc + v
            zs.append(acc)
        return zs

    def adjoint(self, zs: Sequence[np.ndarray]) -> list[np.ndarray]:
        xs = []
        for i in range(self.N):
            acc = np.zeros(self.in_shapes[i].size)
            for j in range(self.M):
                op = self.entries[j][i]
                if op is not None:
                    acc += op.adjoint(zs[j])
            xs.append(acc)
        return xs

    def split_in(self, x: np.ndarray) -> list[np.ndarray]:
        return _split(x, [s.size for s in self.in_shapes])

    def split_out(self, z: np.ndarray) -> list[np.ndarray]:
        return _split(z, [s.size for s in self.out_shapes])

    def as_linop(self) -> LinOp:
        """The whole grid as one operator on stacked vectors."""
        n_in = sum(s.size for s in self.in_shapes)
        n_out = sum(s.size for s in self.out_shapes)
        bound = math.sqrt(sum(op.norm_bound**2 for _, _, op in self.present()))
        return LinOp(
            VarShape((n_in,)),
            VarShape((n_out,)),
            lambda x: np.concatenate(self.forward(self.split_in(x))),
            lambda z: np.concatenate(self.adjoint(self.split_out(z))),
            bound,
            name="L",
        )


def _split(v: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    if v.size != sum(sizes):
        raise StructuralError(f"vector of length {v.size} does not split into {list(sizes)}")
    return np.split(v, np.cumsum(sizes)[:-1])
