"""Three reference estimation problems with synthetic data.

* mixed noise removal of a hyperspectral cube with spatio-spectral TV (``mnr``),
* collaborative sparse unmixing with an l1,2 penalty (``unmix``),
* graph signal recovery from samples with graph TV (``gsr``).

Cubes use the package layout (first index fastest). Unmixing abundances are
stored endmember-major, one map of ``N1*N2`` pixels per endmember, so the
l1,2 groups are contiguous.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path
from scipy.spatial import cKDTree

from .errors import StructuralError
from .linops import (
    GraphSpec,
    OpGrid,
    VarShape,
    blockdiag_matrix_op,
    compose,
    diff_b,
    diff_h,
    diff_v,
    graph_diff,
    graph_diff_groups,
    identity,
    sampling_op,
)
from .precond import block_norm_bound
from .prox import L1, GroupL12, L1Ball, L2Ball, NonNeg, ZeroFn, ZeroSet
from .solver import ProblemSpec

TASKS = ("mnr", "unmix", "gsr")


# ---------------------------------------------------------------------------
# configs


@dataclass
class MnrConfig:
    dims: tuple[int, int, int] = (16, 16, 8)
    lam: float = 0.005
    sigma: float = 0.05
    p_s: float = 0.1
    eta_s: float | None = None
    eps: float | None = None
    seed: int = 0
    stripe_ratio: float = 0.0
    stripe_amp: float = 0.1

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise StructuralError(f"mnr dims must be three positive integers, got {self.dims}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if not 0 <= self.p_s < 1:
            raise ValueError("p_s must lie in [0, 1)")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def eta(self) -> float:
        """l1-ball radius for the sparse noise, ``0.5*0.95*p_s*N1N2N3`` unless given."""
        return self.eta_s if self.eta_s is not None else 0.5 * 0.95 * self.p_s * self.size

    @property
    def radius(self) -> float:
        """Fidelity radius, ``0.95*sigma*sqrt((1-p_s)*N1N2N3)`` unless given."""
        return self.eps if self.eps is not None else 0.95 * self.sigma * math.sqrt((1 - self.p_s) * self.size)


@dataclass
class UnmixConfig:
    pixels: tuple[int, int] = (16, 16)
    bands: int = 32
    endmembers: int = 4
    E: np.ndarray | None = None
    sigma: float = 0.05
    eps: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.pixels = tuple(int(p) for p in self.pixels)
        if len(self.pixels) != 2 or min(self.pixels) < 1 or self.bands < 1 or self.endmembers < 1:
            raise StructuralError("unmixing sizes must be positive")
        if self.E is not None:
            self.E = np.asarray(self.E, dtype=float)
            if self.E.shape != (self.bands, self.endmembers):
                raise StructuralError(f"E has shape {self.E.shape}, expected {(self.bands, self.endmembers)}")

    @property
    def n_pixels(self) -> int:
        return self.pixels[0] * self.pixels[1]

    @property
    def radius(self) -> float:
        """``0.9*sigma*sqrt(N1N2N3)`` unless given."""
        return self.eps if self.eps is not None else 0.9 * self.sigma * math.sqrt(self.n_pixels * self.bands)

    def endmember_matrix(self) -> np.ndarray:
        return self.E if self.E is not None else gen_endmembers(self.bands, self.endmembers, self.seed)


@dataclass
class GsrConfig:
    n_vertices: int = 200
    k: int = 6
    rate: float = 0.2
    sigma: float = 0.1
    eps: float | None = None
    graph_seed: int = 0
    signal_seed: int = 0
    pieces: int = 4

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError("sampling rate must lie in (0, 1]")
        if self.n_vertices < 2:
            raise StructuralError("graph needs at least two vertices")

    @property
    def n_samples(self) -> int:
        return max(1, int(round(self.rate * self.n_vertices)))

    @property
    def radius(self) -> float:
        """``0.9*sigma*sqrt(M_G)`` unless given."""
        return self.eps if self.eps is not None else 0.9 * self.sigma * math.sqrt(self.n_samples)


# ---------------------------------------------------------------------------
# generators and noise


def gen_hsi_phantom(dims, seed=0, regions: int = 6) -> np.ndarray:
    """Piecewise-constant regions in space, each with a smooth spectrum in [0.05, 0.95]."""
    n1, n2, n3 = (int(d) for d in dims)
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 1, size=(regions, 2)) * (n1, n2)
    ii, jj = np.meshgrid(np.arange(n1) + 0.5, np.arange(n2) + 0.5, indexing="ij")
    d2 = (ii[..., None] - centers[:, 0]) ** 2 + (jj[..., None] - centers[:, 1]) ** 2
    label = d2.argmin(axis=-1)
    band = np.linspace(0, 1, n3)
    spectra = np.empty((regions, n3))
    for r in range(regions):
        s = rng.uniform(0.1, 0.3) + np.zeros(n3)
        for _ in range(2):
            s += rng.uniform(0.1, 0.4) * np.exp(-0.5 * ((band - rng.uniform(0, 1)) / rng.uniform(0.15, 0.5)) ** 2)
        spectra[r] = np.clip(s, 0.05, 0.95)
    cube = spectra[label]  # (n1, n2, n3)
    return np.clip(cube, 0.0, 1.0).ravel(order="F")


def gen_stripes(dims, ratio: float, amp: float, seed=0) -> np.ndarray:
    """Columns constant along the vertical axis, so ``Dv`` of the result is zero."""
    n1, n2, n3 = (int(d) for d in dims)
    rng = np.random.default_rng(seed)
    out = np.zeros((n1, n2, n3))
    n_cols = int(round(ratio * n2 * n3))
    if n_cols:
        picks = rng.choice(n2 * n3, size=n_cols, replace=False)
        vals = rng.uniform(-amp, amp, size=n_cols)
        out[:, picks % n2, picks // n2] = vals
    return out.ravel(order="F")


def add_gaussian(x, sigma: float, seed=0) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if sigma == 0:
        return x.copy()
    return x + sigma * np.random.default_rng(seed).standard_normal(x.shape)


def add_salt_pepper(x, p: float, seed=0) -> np.ndarray:
    """Set a ``p`` fraction of entries, drawn without replacement, to 0 or 1."""
    if not 0 <= p < 1:
        raise ValueError("salt and pepper ratio must lie in [0, 1)")
    x = np.array(x, dtype=float)
    k = int(round(p * x.size))
    if k == 0:
        return x
    rng = np.random.default_rng(seed)
    idx = rng.choice(x.size, size=k, replace=False)
    x.flat[idx] = rng.integers(0, 2, size=k).astype(float)
    return x


def gen_endmembers(bands: int, n: int, seed=0) -> np.ndarray:
    """Nonnegative smooth spectra, one per column, each scaled to unit maximum."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, bands)
    E = np.empty((bands, n))
    for e in range(n):
        s = 0.05 + np.zeros(bands)
        for _ in range(3):
            s += rng.uniform(0.2, 1.0) * np.exp(-0.5 * ((t - rng.uniform(0, 1)) / rng.uniform(0.08, 0.3)) ** 2)
        E[:, e] = s / s.max()
    return E


def gen_abundances(n_pixels: int, n_endmembers: int, seed=0, n_active: int | None = None, max_mix: int = 2) -> np.ndarray:
    """Sparse nonnegative abundances with per-pixel sum at most one.

    Only ``n_active`` endmembers are used anywhere in the image. Returned
    endmember-major with length ``n_endmembers * n_pixels``.
    """
    if n_pixels < 1 or n_endmembers < 1:
        raise StructuralError("sizes must be >= 1")
    rng = np.random.default_rng(seed)
    n_active = n_endmembers if n_active is None else int(n_active)
    active = np.sort(rng.choice(n_endmembers, size=n_active, replace=False))
    A = np.zeros((n_endmembers, n_pixels))
    for p in range(n_pixels):
        k = int(rng.integers(1, min(max_mix, n_active) + 1))
        which = rng.choice(active, size=k, replace=False)
        A[which, p] = rng.dirichlet(np.ones(k)) * rng.uniform(0.8, 1.0)
    return A.ravel()


def gen_graph(n_vertices: int, k: int, seed=0) -> GraphSpec:
    """Symmetrized k-nearest-neighbour graph on random points with Gaussian weights."""
    if k >= n_vertices:
        raise StructuralError(f"k={k} must be smaller than the number of vertices {n_vertices}")
    if k < 1:
        raise StructuralError("k must be >= 1")
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 1, size=(n_vertices, 2))
    dist, idx = cKDTree(pts).query(pts, k=k + 1)
    dist, idx = dist[:, 1:], idx[:, 1:]
    scale = np.median(dist)
    w = np.exp(-(dist**2) / (2 * scale**2))
    rows = np.repeat(np.arange(n_vertices), k)
    W = sp.csr_array((w.ravel(), (rows, idx.ravel())), shape=(n_vertices, n_vertices))
    W = W.maximum(W.T)
    W.setdiag(0)
    return GraphSpec(n_vertices, sp.csr_array(W))


def gen_graph_signal(g: GraphSpec, pieces: int = 4, seed=0) -> np.ndarray:
    """Piecewise-smooth signal: hop-distance clusters with a gentle ramp inside each."""
    rng = np.random.default_rng(seed)
    n = g.num_vertices
    pieces = max(1, min(int(pieces), n))
    seeds = rng.choice(n, size=pieces, replace=False)
    hops = shortest_path(g.weights, unweighted=True, directed=False, indices=seeds)
    hops = np.where(np.isfinite(hops), hops, np.inf)
    label = hops.argmin(axis=0)
    d = hops[label, np.arange(n)]
    d = np.where(np.isfinite(d), d, 0.0)
    level = rng.uniform(0.2, 0.9, size=pieces)
    slope = rng.uniform(-0.03, 0.03, size=pieces)
    return np.clip(level[label] + slope[label] * d, 0.0, 1.0)


def gen_mask(n: int, n_samples: int, seed=0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=n_samples, replace=False)] = True
    return mask


# ---------------------------------------------------------------------------
# metrics


def mpsnr(u, u_true, dims) -> float:
    """Mean over bands of ``10 log10(N1 N2 / ||u_b - u_true_b||^2)``; ``inf`` if some band matches exactly."""
    n1, n2, n3 = (int(d) for d in dims)
    diff = (np.asarray(u_true) - np.asarray(u)).reshape(n1 * n2, n3, order="F")
    sq = (diff**2).sum(axis=0)
    if np.any(sq == 0):
        return math.inf
    return float(np.mean(10 * np.log10(n1 * n2 / sq)))


def snr(a, a_true) -> float:
    """``10 log10(||a_true|| / ||a - a_true||)`` with unsquared norms."""
    err = np.linalg.norm(np.asarray(a) - a_true)
    if err == 0:
        return math.inf
    return float(10 * np.log10(np.linalg.norm(a_true) / err))


def psnr(u, u_true) -> float:
    u_true = np.asarray(u_true)
    sq = float(np.sum((u_true - u) ** 2))
    if sq == 0:
        return math.inf
    return float(10 * np.log10(u_true.size / sq))


# ---------------------------------------------------------------------------
# builders


def build_mnr(cfg: MnrConfig, observed) -> ProblemSpec:
    """Variables ``u, s, l``; duals ``DvDb u``, ``DhDb u``, ``Dv l``, ``u + s + l``."""
    observed = np.asarray(observed, dtype=float).ravel()
    if observed.size != cfg.size:
        raise StructuralError(f"observed cube has {observed.size} entries, config expects {cfg.size}")
    dims = cfg.dims
    shape = VarShape(dims)
    Dv, Dh, Db = diff_v(dims), diff_h(dims), diff_b(dims)
    I = identity(shape)
    grid = OpGrid(
        [
            [compose(Dv, Db), None, None],
            [compose(Dh, Db), None, None],
            [None, None, Dv],
            [I, I, I],
        ]
    )
    primal = [(shape, ZeroFn()), (shape, L1Ball(cfg.eta)), (shape, L1(cfg.lam))]
    dual = [(shape, L1()), (shape, L1()), (shape, ZeroSet()), (shape, L2Ball(observed, cfg.radius))]
    return ProblemSpec(primal, dual, grid, name="mnr")


def build_unmix(cfg: UnmixConfig, observed, E=None) -> ProblemSpec:
    """Abundances ``a`` (endmember-major); duals ``E~ a`` in the fidelity ball and ``a >= 0``."""
    E = cfg.endmember_matrix() if E is None else np.asarray(E, dtype=float)
    P = cfg.n_pixels
    observed = np.asarray(observed, dtype=float).ravel()
    if observed.size != cfg.bands * P:
        raise StructuralError(f"observed data has {observed.size} entries, expected {cfg.bands * P}")
    Et = blockdiag_matrix_op(E, P, pixel_major=False)
    a_shape = VarShape((cfg.endmembers * P,))
    grid = OpGrid([[Et], [identity(a_shape)]])
    primal = [(a_shape, GroupL12(P))]
    dual = [(VarShape((cfg.bands * P,)), L2Ball(observed, cfg.radius)), (a_shape, NonNeg())]
    return ProblemSpec(primal, dual, grid, name="unmix")


def build_gsr(cfg: GsrConfig, graph: GraphSpec, observed, mask) -> ProblemSpec:
    """Signal ``u``; duals ``D_G u`` under GTV and ``Phi u`` in the fidelity ball."""
    mask = np.asarray(mask, dtype=bool)
    if mask.size != graph.num_vertices:
        raise StructuralError("mask length differs from the number of vertices")
    observed = np.asarray(observed, dtype=float).ravel()
    if observed.size != int(mask.sum()):
        raise StructuralError(f"observed has {observed.size} samples, mask selects {int(mask.sum())}")
    DG = graph_diff(graph)
    if DG.out_shape.size == 0:
        raise StructuralError("graph has no edges")
    Phi = sampling_op(mask)
    u_shape = VarShape((graph.num_vertices,))
    grid = OpGrid([[DG], [Phi]])
    primal = [(u_shape, ZeroFn())]
    dual = [(DG.out_shape, GroupL12(graph_diff_groups(graph))), (Phi.out_shape, L2Ball(observed, cfg.radius))]
    return ProblemSpec(primal, dual, grid, name="gsr")


# ---------------------------------------------------------------------------
# complete instances


@dataclass
class Instance:
    """A built problem together with the data that produced it."""

    task: str
    spec: ProblemSpec
    truth: list[np.ndarray]
    metric: Callable[[list[np.ndarray]], float]
    data: dict = field(default_factory=dict)

    @property
    def mu_sp(self) -> float:
        return block_norm_bound(self.spec.grid)


def make_mnr(cfg: MnrConfig) -> Instance:
    u = gen_hsi_phantom(cfg.dims, cfg.seed)
    l_true = gen_stripes(cfg.dims, cfg.stripe_ratio, cfg.stripe_amp, cfg.seed + 3)
    noisy = add_gaussian(u, cfg.sigma, cfg.seed + 1)
    noisy = add_salt_pepper(noisy, cfg.p_s, cfg.seed + 2)
    observed = noisy + l_true
    spec = build_mnr(cfg, observed)
    dims = cfg.dims
    return Instance("mnr", spec, [u], lambda x: mpsnr(x[0], u, dims), {"observed": observed, "truth": u, "stripes": l_true})


def make_unmix(cfg: UnmixConfig) -> Instance:
    E = cfg.endmember_matrix()
    a = gen_abundances(cfg.n_pixels, cfg.endmembers, cfg.seed + 1)
    clean = (E @ a.reshape(cfg.endmembers, cfg.n_pixels)).ravel()
    observed = add_gaussian(clean, cfg.sigma, cfg.seed + 2)
    spec = build_unmix(cfg, observed, E)
    return Instance("unmix", spec, [a], lambda x: snr(x[0], a), {"observed": observed, "truth": a, "E": E})


def make_gsr(cfg: GsrConfig) -> Instance:
    graph = gen_graph(cfg.n_vertices, cfg.k, cfg.graph_seed)
    u = gen_graph_signal(graph, cfg.pieces, cfg.signal_seed)
    mask = gen_mask(cfg.n_vertices, cfg.n_samples, cfg.signal_seed + 1)
    observed = add_gaussian(u[mask], cfg.sigma, cfg.signal_seed + 2)
    spec = build_gsr(cfg, graph, observed, mask)
    return Instance("gsr", spec, [u], lambda x: psnr(x[0], u), {"observed": observed, "truth": u, "mask": mask, "graph": graph})


def make_instance(task: str, cfg) -> Instance:
    makers = {"mnr": make_mnr, "unmix": make_unmix, "gsr": make_gsr}
    if task not in makers:
        raise StructuralError(f"unknown task {task!r}; expected one of {', '.join(TASKS)}")
    return makers[task](cfg)
