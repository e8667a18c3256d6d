"""Areal panel data: loading, validation, standardization, and exploratory
spatial-autocorrelation statistics.

File formats
------------
Panel CSV: header ``unit,time,y,x1,...,xp``, one row per (unit, time) pair,
UTF-8, ``.`` decimal separator.  The set of rows must form a complete
units x times lattice.  Adjacency CSV: header ``unit_a,unit_b``, one
undirected edge per row.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np


@dataclass
class PanelData:
    """Balanced areal panel: response matrix and predictor array.

    ``y`` has shape (I, T); ``x`` has shape (I, T, p + 1) with the constant
    intercept in column 0.  Units keep the order of first appearance in the
    source file, times are sorted ascending.
    """

    unit_ids: list
    times: list
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        n_units, n_times = len(self.unit_ids), len(self.times)
        if n_units < 1 or n_times < 1:
            raise ValueError("panel needs at least one unit and one time point")
        if len(set(self.unit_ids)) != n_units:
            raise ValueError("unit ids must be unique")
        if len(set(self.times)) != n_times:
            raise ValueError("time labels must be unique")
        if self.y.shape != (n_units, n_times):
            raise ValueError(f"y must have shape ({n_units}, {n_times})")
        if self.x.ndim != 3 or self.x.shape[:2] != (n_units, n_times):
            raise ValueError(f"x must have shape ({n_units}, {n_times}, p + 1)")
        if not np.all(np.isfinite(self.y)) or not np.all(np.isfinite(self.x)):
            raise ValueError("panel contains non-finite values")
        if not np.allclose(self.x[:, :, 0], 1.0):
            raise ValueError("x[:, :, 0] must be the constant intercept column")

    @property
    def n_units(self) -> int:
        return len(self.unit_ids)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_predictors(self) -> int:
        return self.x.shape[2] - 1


@dataclass
class AdjacencyGraph:
    """Symmetric 0/1 neighbor structure over ``n`` areal units.

    ``edges`` holds unordered pairs in the graph's current labeling;
    ``permutation[k]`` is the original unit index sitting at position ``k``
    (identity until a band-reducing reordering is applied).
    """

    n: int
    edges: tuple
    neighbor_counts: np.ndarray
    permutation: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, permutation=None) -> "AdjacencyGraph":
        seen = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop at unit {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) outside 0..{n - 1}")
            seen.add((min(a, b), max(a, b)))
        counts = np.zeros(n, dtype=int)
        for a, b in seen:
            counts[a] += 1
            counts[b] += 1
        if permutation is None:
            permutation = np.arange(n)
        return cls(
            n=n,
            edges=tuple(sorted(seen)),
            neighbor_counts=counts,
            permutation=np.asarray(permutation, dtype=int),
        )

    @cached_property
    def neighbor_lists(self) -> list:
        """Per-unit arrays of neighbor indices (current labeling)."""
        lists = [[] for _ in range(self.n)]
        for a, b in self.edges:
            lists[a].append(b)
            lists[b].append(a)
        return [np.asarray(sorted(l), dtype=int) for l in lists]

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def load_panel(path, unit_col="unit", time_col="time", y_col="y",
               x_cols: Sequence[str] | None = None) -> PanelData:
    """Read a panel CSV into a validated :class:`PanelData`.

    Parameters
    ----------
    path : path-like
        CSV file with one row per (unit, time) pair.
    unit_col, time_col, y_col : str
        Column names of the unit identifier, time label, and response.
    x_cols : sequence of str, optional
        Predictor columns; by default every remaining column, in file order.

    Raises
    ------
    ValueError
        On an empty file, missing columns, duplicate (unit, time) rows,
        non-numeric fields, or an incomplete unit x time lattice.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(f.strip() for f in r)]
    if not rows:
        raise ValueError(f"empty file: {path}")
    header = [h.strip() for h in rows[0]]
    for col in (unit_col, time_col, y_col):
        if col not in header:
            raise ValueError(f"missing column '{col}' in {path}")
    if x_cols is None:
        x_cols = [h for h in header if h not in (unit_col, time_col, y_col)]
    missing = [c for c in x_cols if c not in header]
    if missing:
        raise ValueError(f"missing predictor columns {missing} in {path}")
    pos = {h: i for i, h in enumerate(header)}

    units: list = []
    times_seen: set = set()
    cells: dict = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields")
        unit = row[pos[unit_col]].strip()
        time = _parse_time(row[pos[time_col]].strip())
        key = (unit, time)
        if key in cells:
            raise ValueError(f"duplicate (unit, time) row ({unit}, {time})")
        try:
            yval = float(row[pos[y_col]])
            xvals = [float(row[pos[c]]) for c in x_cols]
        except ValueError as e:
            raise ValueError(f"{path}:{lineno}: non-numeric field ({e})") from None
        cells[key] = (yval, xvals)
        if unit not in times_seen and unit not in units:
            units.append(unit)
        times_seen.add(time)

    times = sorted(times_seen)
    for unit in units:
        for time in times:
            if (unit, time) not in cells:
                raise ValueError(
                    f"incomplete panel: missing cell (unit={unit}, time={time})"
                )

    n_units, n_times, p = len(units), len(times), len(x_cols)
    y = np.empty((n_units, n_times))
    x = np.empty((n_units, n_times, p + 1))
    x[:, :, 0] = 1.0
    for i, unit in enumerate(units):
        for t, time in enumerate(times):
            yval, xvals = cells[(unit, time)]
            y[i, t] = yval
            x[i, t, 1:] = xvals
    return PanelData(unit_ids=units, times=times, y=y, x=x)


def _parse_time(label: str):
    try:
        return int(label)
    except ValueError:
        pass
    try:
        return float(label)
    except ValueError:
        return label


def load_adjacency(path, unit_ids: Sequence) -> AdjacencyGraph:
    """Read an edge-list CSV, mapping unit identifiers onto panel order.

    Duplicate edges are tolerated (deduplicated with a warning); self-loops
    and identifiers not present in ``unit_ids`` are errors.
    """
    index = {str(u): i for i, u in enumerate(unit_ids)}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r and any(f.strip() for f in r)]
    if not rows:
        raise ValueError(f"empty file: {path}")
    edges = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) < 2:
            raise ValueError(f"{path}:{lineno}: expected two columns")
        a, b = row[0].strip(), row[1].strip()
        for ident in (a, b):
            if ident not in index:
                raise ValueError(f"{path}:{lineno}: unknown unit id '{ident}'")
        if a == b:
            raise ValueError(f"{path}:{lineno}: self-loop at unit '{a}'")
        edges.append((index[a], index[b]))
    normalized = [(min(a, b), max(a, b)) for a, b in edges]
    if len(set(normalized)) != len(normalized):
        warnings.warn("duplicate edges in adjacency file were deduplicated")
    return AdjacencyGraph.from_edges(len(unit_ids), normalized)


@dataclass
class Standardization:
    """Per-variable centering/scaling constants for back-transformation."""

    y_mean: float
    y_sd: float
    x_means: np.ndarray
    x_sds: np.ndarray


def standardize(data: PanelData) -> tuple[PanelData, Standardization]:
    """Center and scale ``y`` and each non-intercept predictor to mean 0, sd 1.

    Moments are taken over all I*T cells with the sample denominator
    ``I*T - 1``; the intercept column is untouched.  Raises ValueError when
    any variable has zero variance.
    """
    y_mean = float(np.mean(data.y))
    y_sd = float(np.std(data.y, ddof=1)) if data.y.size > 1 else 0.0
    if y_sd <= 0:
        raise ValueError("zero variance: response is constant")
    p = data.n_predictors
    x_means = np.empty(p)
    x_sds = np.empty(p)
    x = data.x.copy()
    for k in range(p):
        col = data.x[:, :, k + 1]
        x_means[k] = np.mean(col)
        x_sds[k] = np.std(col, ddof=1) if col.size > 1 else 0.0
        if x_sds[k] <= 0:
            raise ValueError(f"zero variance: predictor x{k + 1} is constant")
        x[:, :, k + 1] = (col - x_means[k]) / x_sds[k]
    out = PanelData(
        unit_ids=list(data.unit_ids),
        times=list(data.times),
        y=(data.y - y_mean) / y_sd,
        x=x,
    )
    return out, Standardization(y_mean, y_sd, x_means, x_sds)


def unstandardize(data: PanelData, scales: Standardization) -> PanelData:
    """Invert :func:`standardize`."""
    x = data.x.copy()
    for k in range(data.n_predictors):
        x[:, :, k + 1] = data.x[:, :, k + 1] * scales.x_sds[k] + scales.x_means[k]
    return PanelData(
        unit_ids=list(data.unit_ids),
        times=list(data.times),
        y=data.y * scales.y_sd + scales.y_mean,
        x=x,
    )


def _centered(values: np.ndarray, graph: AdjacencyGraph) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != (graph.n,):
        raise ValueError(f"values must have length {graph.n}")
    if graph.n < 2:
        raise ValueError("need at least two units")
    if graph.n_edges == 0:
        raise ValueError("empty graph: no edges")
    z = values - values.mean()
    if not np.any(z != 0):
        raise ValueError("constant input: spatial autocorrelation undefined")
    return z


def morans_i(values: np.ndarray, graph: AdjacencyGraph) -> float:
    """Moran's I with binary symmetric weights.

    I = (n / S0) * sum_ij w_ij (y_i - ybar)(y_j - ybar) / sum_i (y_i - ybar)^2
    where S0 is the total weight.  Positive values indicate positive spatial
    autocorrelation.
    """
    z = _centered(values, graph)
    e = np.asarray(graph.edges)
    cross = 2.0 * float(np.sum(z[e[:, 0]] * z[e[:, 1]]))
    s0 = 2.0 * graph.n_edges
    return graph.n / s0 * cross / float(np.sum(z * z))


def gearys_c(values: np.ndarray, graph: AdjacencyGraph) -> float:
    """Geary's C with binary symmetric weights.

    C = ((n - 1) / (2 S0)) * sum_ij w_ij (y_i - y_j)^2 / sum_i (y_i - ybar)^2.
    Values below 1 indicate positive spatial autocorrelation, above 1 negative.
    """
    z = _centered(values, graph)
    e = np.asarray(graph.edges)
    diff2 = 2.0 * float(np.sum((z[e[:, 0]] - z[e[:, 1]]) ** 2))
    s0 = 2.0 * graph.n_edges
    return (graph.n - 1) / (2.0 * s0) * diff2 / float(np.sum(z * z))


def permute_panel(data: PanelData, order: np.ndarray) -> PanelData:
    """Reorder panel units so that new position k holds old unit order[k]."""
    order = np.asarray(order, dtype=int)
    return PanelData(
        unit_ids=[data.unit_ids[k] for k in order],
        times=list(data.times),
        y=data.y[order],
        x=data.x[order],
    )


def panel_time_slice(data: PanelData, n_times: int) -> PanelData:
    """Restrict a panel to its first ``n_times`` time points."""
    if not (1 <= n_times <= data.n_times):
        raise ValueError(f"n_times must be in 1..{data.n_times}")
    return PanelData(
        unit_ids=list(data.unit_ids),
        times=list(data.times[:n_times]),
        y=data.y[:, :n_times],
        x=data.x[:, :n_times],
    )


def write_panel_csv(data: PanelData, path) -> None:
    """Write a panel in the CSV layout read by :func:`load_panel`."""
    p = data.n_predictors
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "time", "y"] + [f"x{k + 1}" for k in range(p)])
        for i, unit in enumerate(data.unit_ids):
            for t, time in enumerate(data.times):
                writer.writerow(
                    [unit, time, repr(float(data.y[i, t]))]
                    + [repr(float(v)) for v in data.x[i, t, 1:]]
                )


def write_adjacency_csv(graph: AdjacencyGraph, unit_ids: Sequence, path) -> None:
    """Write an edge list in the CSV layout read by :func:`load_adjacency`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_a", "unit_b"])
        for a, b in graph.edges:
            writer.writerow([unit_ids[a], unit_ids[b]])
