"""Panel datasets indexed by (region, time, node) and their file formats.

Values CSV (long): ``region,time,node,component,value`` with 1-based
region/time, node ids as in the graph and 0-based components. Curves CSV:
``region,time,node,t,value`` where ``node`` names the curve. A JSON
sidecar carries the graph, benchmark name, seed, config and, when present,
the exogenous draws.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import MissingNodeData, ValidationError
from .graph import CausalGraph


def column_slices(graph: CausalGraph) -> dict[int, slice]:
    out = {}
    off = 0
    for s in graph.nodes:
        out[s.id] = slice(off, off + s.dim)
        off += s.dim
    return out


@dataclass
class PanelDataset:
    graph: CausalGraph
    values: np.ndarray  # (n, J, total_dim)
    exogenous: np.ndarray | None = None  # same shape as values
    curves: dict = field(default_factory=dict)  # name -> (n, J, G)
    grid: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    present: frozenset | None = None  # node ids with data; None means all

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        width = sum(s.dim for s in self.graph.nodes)
        if self.values.ndim != 3 or self.values.shape[2] != width:
            raise ValidationError(
                f"values must be (n, J, {width}); got {self.values.shape}"
            )
        if self.exogenous is not None:
            self.exogenous = np.asarray(self.exogenous, dtype=np.float64)
            if self.exogenous.shape != self.values.shape:
                raise ValidationError("exogenous draws must match the values shape")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def K(self) -> int:
        return len(self.graph)

    @property
    def columns(self) -> dict[int, slice]:
        return column_slices(self.graph)

    def has(self, k: int) -> bool:
        return self.present is None or k in self.present

    def node_rows(self, k: int) -> np.ndarray:
        """Values of node ``k`` pooled over units as ``(n*J, d_k)``, region-major."""
        if not self.has(k):
            raise MissingNodeData(f"dataset has no values for node {k}")
        sl = self.columns[self.graph.node(k).id]
        return self.values[:, :, sl].reshape(self.n * self.J, -1).copy()

    def rows(self, nodes=None) -> dict[int, np.ndarray]:
        nodes = self.graph.node_ids if nodes is None else nodes
        return {k: self.node_rows(k) for k in nodes}

    def unit_index(self):
        """(region, time) of each pooled row."""
        i, j = np.meshgrid(np.arange(self.n), np.arange(self.J), indexing="ij")
        return i.ravel(), j.ravel()

    def unit(self, i: int, j: int, observed_only=True) -> dict[int, np.ndarray]:
        ids = self.graph.observed_ids() if observed_only else self.graph.node_ids
        cols = self.columns
        return {k: self.values[i, j, cols[k]].copy() for k in ids if self.has(k)}

    # -- files ---------------------------------------------------------

    def write_csv(self, path) -> None:
        cols = self.columns
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region", "time", "node", "component", "value"])
            for i in range(self.n):
                for j in range(self.J):
                    for k in self.graph.node_ids:
                        if not self.has(k):
                            continue
                        for c, v in enumerate(self.values[i, j, cols[k]]):
                            w.writerow([i + 1, j + 1, k, c, repr(float(v))])

    def write_curves_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["region", "time", "node", "t", "value"])
            for name in sorted(self.curves):
                arr = self.curves[name]
                for i in range(self.n):
                    for j in range(self.J):
                        for t, v in zip(self.grid, arr[i, j]):
                            w.writerow([i + 1, j + 1, name, repr(float(t)), repr(float(v))])

    def sidecar(self) -> dict:
        return {
            "graph": self.graph.to_dict(),
            "n": self.n,
            "J": self.J,
            "meta": self.meta,
            "exogenous": None if self.exogenous is None else self.exogenous.tolist(),
        }

    def save(self, directory, stem="dataset") -> dict:
        os.makedirs(directory, exist_ok=True)
        paths = {"values": os.path.join(directory, f"{stem}.csv"),
                 "sidecar": os.path.join(directory, f"{stem}.json")}
        self.write_csv(paths["values"])
        with open(paths["sidecar"], "w") as fh:
            json.dump(self.sidecar(), fh)
        if self.curves:
            paths["curves"] = os.path.join(directory, f"{stem}_curves.csv")
            self.write_curves_csv(paths["curves"])
        return paths


def read_values_csv(path, graph: CausalGraph):
    """Parse a long-format values CSV into ``(values, present)``."""
    cols = column_slices(graph)
    width = sum(s.dim for s in graph.nodes)
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"region", "time", "node", "component", "value"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValidationError(f"{path}: header must contain {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                entries.append((int(row["region"]), int(row["time"]), int(row["node"]),
                                int(row["component"]), float(row["value"])))
            except (TypeError, ValueError):
                raise ValidationError(f"{path}:{line}: malformed row") from None
    if not entries:
        raise ValidationError(f"{path}: no data rows")
    regions = sorted({e[0] for e in entries})
    times = sorted({e[1] for e in entries})
    rmap = {r: a for a, r in enumerate(regions)}
    tmap = {t: a for a, t in enumerate(times)}
    values = np.full((len(regions), len(times), width), np.nan)
    present = set()
    for r, t, k, c, v in entries:
        if k not in cols:
            raise ValidationError(f"{path}: unknown node {k}")
        sl = cols[k]
        if not 0 <= c < sl.stop - sl.start:
            raise ValidationError(f"{path}: node {k} has no component {c}")
        values[rmap[r], tmap[t], sl.start + c] = v
        present.add(k)
    for k in present:
        if np.isnan(values[:, :, cols[k]]).any():
            raise MissingNodeData(f"{path}: node {k} is missing some (region, time) entries")
    return values, frozenset(present)


def read_curves_csv(path):
    """Returns ``(grid, {name: (n, J, G)})``."""
    data = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line, row in enumerate(reader, start=2):
            try:
                key = (row["node"], int(row["region"]), int(row["time"]))
                data.setdefault(key, []).append((float(row["t"]), float(row["value"])))
            except (TypeError, ValueError, KeyError):
                raise ValidationError(f"{path}:{line}: malformed row") from None
    if not data:
        raise ValidationError(f"{path}: no data rows")
    names = sorted({k[0] for k in data})
    regions = sorted({k[1] for k in data})
    times = sorted({k[2] for k in data})
    grid = None
    curves = {}
    for name in names:
        arr = None
        for a, r in enumerate(regions):
            for b, t in enumerate(times):
                pts = sorted(data.get((name, r, t), []))
                if not pts:
                    raise MissingNodeData(f"{path}: curve {name} missing at region {r} time {t}")
                g = np.array([p[0] for p in pts])
                if grid is None:
                    grid = g
                elif g.shape != grid.shape or not np.allclose(g, grid):
                    raise ValidationError(f"{path}: curve {name} uses a different grid")
                if arr is None:
                    arr = np.empty((len(regions), len(times), grid.size))
                arr[a, b] = [p[1] for p in pts]
        curves[name] = arr
    return grid, curves


def load_dataset(path, graph: CausalGraph | None = None, basis=None) -> PanelDataset:
    """Load ``dataset.csv`` (+ sidecar / curves when present).

    ``path`` may be a directory holding ``dataset.csv`` or the CSV itself.
    Functional-coefficient nodes missing from the values file are filled by
    expanding the matching curves on ``basis`` (built from the curve grid
    when not given).
    """
    from . import fda

    if os.path.isdir(path):
        csv_path = os.path.join(path, "dataset.csv")
    else:
        csv_path = path
    stem = os.path.splitext(csv_path)[0]
    side = None
    if os.path.exists(stem + ".json"):
        with open(stem + ".json") as fh:
            side = json.load(fh)
    if graph is None:
        if side is None:
            raise ValidationError("no graph given and no JSON sidecar next to the CSV")
        graph = CausalGraph.from_dict(side["graph"])
    values, present = read_values_csv(csv_path, graph)
    grid, curves = None, {}
    if os.path.exists(stem + "_curves.csv"):
        grid, curves = read_curves_csv(stem + "_curves.csv")
        cols = column_slices(graph)
        fnodes = [s for s in graph.nodes if s.kind == "functional-coefficient" and s.curve in curves]
        if fnodes:
            n_basis = max(s.basis_index for s in fnodes) + 1
            b = basis or fda.build_basis("fourier", n_basis, grid)
            for s in fnodes:
                if s.id in present:
                    continue
                coef = fda.expand(curves[s.curve], b)
                if coef.shape[:2] != values.shape[:2]:
                    raise ValidationError(f"curve {s.curve} panel does not match values panel")
                values[:, :, cols[s.id]] = coef[..., s.basis_index:s.basis_index + 1]
                present = present | {s.id}
    exo = None
    meta = {}
    if side is not None:
        meta = side.get("meta", {})
        if side.get("exogenous") is not None:
            exo = np.asarray(side["exogenous"], dtype=np.float64)
    full = frozenset(graph.node_ids)
    return PanelDataset(graph, np.nan_to_num(values), exo, curves, grid, meta,
                        None if present == full else present)
