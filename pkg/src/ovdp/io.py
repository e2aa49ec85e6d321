"""File formats: raw float64 tensors with a JSON sidecar, and ``i j w`` edge lists."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import StructuralError
from .linops import GraphSpec


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def write_tensor(path, data, dims) -> Path:
    """Write ``data`` as little-endian float64 (first index fastest) plus ``<path>.json``."""
    path = Path(path)
    dims = [int(d) for d in dims]
    data = np.asarray(data, dtype=float).ravel(order="F" if np.ndim(data) > 1 else "C")
    if data.size != math.prod(dims):
        raise StructuralError(f"{data.size} values do not fill dims {dims}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data.astype("<f8").tobytes())
    header = {"dims": dims, "order": "F", "dtype": "float64", "endian": "little"}
    _sidecar(path).write_text(json.dumps(header, indent=2) + "\n")
    return path


def read_tensor(path) -> tuple[np.ndarray, list[int]]:
    """Return the flat vector and its dims."""
    path = Path(path)
    header = json.loads(_sidecar(path).read_text())
    if header.get("dtype", "float64") != "float64" or header.get("endian", "little") != "little":
        raise StructuralError(f"unsupported tensor encoding in {_sidecar(path)}")
    if header.get("order", "F") != "F":
        raise StructuralError("only first-index-fastest ('F') order is supported")
    dims = [int(d) for d in header["dims"]]
    data = np.frombuffer(path.read_bytes(), dtype="<f8").astype(float)
    if data.size != math.prod(dims):
        raise StructuralError(f"{path} holds {data.size} values, header dims {dims}")
    return data, dims


def write_edge_list(path, g: GraphSpec) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols, w = g.edges()
    lines = [f"# vertices {g.num_vertices}"]
    lines += [f"{i} {j} {x!r}" for i, j, x in zip(rows.tolist(), cols.tolist(), w.tolist())]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_edge_list(path, num_vertices: int | None = None) -> GraphSpec:
    """Parse ``i j w`` lines (0-based). Vertex count comes from the argument, a
    ``# vertices N`` comment, or the largest index, in that order."""
    edges = []
    declared = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        text = line.strip()
        if not text:
            continue
        if text.startswith("#"):
            parts = text[1:].split()
            if len(parts) == 2 and parts[0] == "vertices":
                declared = int(parts[1])
            continue
        parts = text.split()
        if len(parts) != 3:
            raise StructuralError(f"{path}:{lineno}: expected 'i j w', got {text!r}")
        try:
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise StructuralError(f"{path}:{lineno}: {exc}") from None
    n = num_vertices or declared
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in edges), default=-1)
    return GraphSpec.from_edges(n, edges)
