"""Synthetic data from the generative model, including the default
grid-of-clusters design used by the recovery tests.

The default design is a 10 x 10 rook-adjacency grid partitioned into seven
contiguous regions (sizes 15, 15, 15, 15, 16, 12, 12).  Every cluster gets
its own regression vector and covariate paths (i.i.d. standard normal) and
an autoregressive coefficient drawn uniformly on (0, 1); the effects are
forward-simulated from the autoregressive CAR process with rho = 0.95 and
unit variances.  The region tiling ships as a data file
(``data/grid_10x10_clusters.csv``) so it can be swapped out.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .dp import ClusterState
from .gmrf import sample_gmrf_prior
from .panel import AdjacencyGraph, PanelData, write_adjacency_csv, write_panel_csv
from .partition import Partition, write_partition_csv
from .sampler import ModelState
from .spatial import leroux_precision


@dataclass
class SimulationSpec:
    """Generative design: grid geometry, true partition, and parameter laws."""

    grid_rows: int
    grid_cols: int
    true_partition: Partition
    p: int = 3
    rho: float = 0.95
    sigma2: float = 1.0
    tau2: float = 1.0
    seed: int = 0
    beta_sd: float = 1.0
    covariate_sd: float = 1.0
    xi_low: float = 0.0
    xi_high: float = 1.0

    def __post_init__(self):
        if self.true_partition.n != self.grid_rows * self.grid_cols:
            raise ValueError("partition must cover every grid cell")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must lie in [0, 1)")
        if self.sigma2 < 0 or self.tau2 <= 0:
            raise ValueError("variances must be positive (sigma2 may be 0)")
        if not -1.0 <= self.xi_low < self.xi_high <= 1.0:
            raise ValueError("xi range must sit inside [-1, 1]")


def grid_unit_ids(rows: int, cols: int) -> list:
    return [f"r{r}c{c}" for r in range(rows) for c in range(cols)]


def rook_grid_graph(rows: int, cols: int) -> AdjacencyGraph:
    """Rook adjacency on a rows x cols grid, cells numbered row-major."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return AdjacencyGraph.from_edges(rows * cols, edges)


def default_grid_partition() -> Partition:
    """Seven contiguous regions tiling the 10 x 10 grid (from the data file)."""
    labels = np.empty(100, dtype=int)
    ref = resources.files("stclust.data").joinpath("grid_10x10_clusters.csv")
    with ref.open("r", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        r, c, k = int(row[0]), int(row[1]), int(row[2])
        labels[r * 10 + c] = k - 1
    return Partition.from_labels(labels)


def default_simulation_spec(seed: int = 0) -> SimulationSpec:
    """The recovery-study design: 10 x 10 grid, 7 clusters, 3 predictors,
    rho = 0.95, unit variances."""
    return SimulationSpec(
        grid_rows=10,
        grid_cols=10,
        true_partition=default_grid_partition(),
        seed=seed,
    )


def simulate_dataset(
    spec: SimulationSpec, n_times: int = 24
) -> tuple[PanelData, AdjacencyGraph, ModelState]:
    """Draw one dataset from the generative model.

    Per cluster: a (p + 1)-vector of regression coefficients (i.i.d. normal)
    and a uniform autoregressive coefficient; covariates are i.i.d. normal
    per unit and time point.  Effects follow the CAR autoregression;
    observations add i.i.d. Gaussian noise.  Deterministic given the seed.

    Returns the panel, the rook grid, and the ground-truth model state.
    """
    if n_times < 1:
        raise ValueError("need at least one time point")
    rng = np.random.default_rng(spec.seed)
    graph = rook_grid_graph(spec.grid_rows, spec.grid_cols)
    n_units = graph.n
    labels = spec.true_partition.as_array()
    k = spec.true_partition.k

    betas = spec.beta_sd * rng.standard_normal((k, spec.p + 1))
    xis = rng.uniform(spec.xi_low, spec.xi_high, size=k)

    x = np.empty((n_units, n_times, spec.p + 1))
    x[:, :, 0] = 1.0
    x[:, :, 1:] = spec.covariate_sd * rng.standard_normal((n_units, n_times, spec.p))
    fitted = np.einsum("itk,ik->it", x, betas[labels])

    q = leroux_precision(spec.rho, graph)
    w = sample_gmrf_prior(xis[labels], spec.tau2, q, n_times, rng)
    noise = rng.standard_normal((n_units, n_times))
    y = fitted + w + np.sqrt(spec.sigma2) * noise

    panel = PanelData(
        unit_ids=grid_unit_ids(spec.grid_rows, spec.grid_cols),
        times=list(range(1, n_times + 1)),
        y=y,
        x=x,
    )
    truth = ModelState(
        cluster=ClusterState(s=labels, betas=betas, xis=xis, alpha=1.0),
        w=w,
        sigma2=spec.sigma2,
        tau2=spec.tau2,
        rho=spec.rho,
    )
    return panel, graph, truth


def save_simulation(
    out_dir, panel: PanelData, graph: AdjacencyGraph, truth: ModelState
) -> None:
    """Write panel.csv and adjacency.csv in the loader formats, the true
    partition as truth_partition.csv, and truth.csv with the generating
    parameters (``name,value`` rows)."""
    os.makedirs(out_dir, exist_ok=True)
    write_panel_csv(panel, os.path.join(out_dir, "panel.csv"))
    write_adjacency_csv(graph, panel.unit_ids, os.path.join(out_dir, "adjacency.csv"))
    write_partition_csv(
        Partition.from_labels(truth.cluster.s),
        panel.unit_ids,
        os.path.join(out_dir, "truth_partition.csv"),
    )
    with open(os.path.join(out_dir, "truth.csv"), "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value"])
        writer.writerow(["sigma2", repr(truth.sigma2)])
        writer.writerow(["tau2", repr(truth.tau2)])
        writer.writerow(["rho", repr(truth.rho)])
        for j, xi in enumerate(truth.cluster.xis, start=1):
            writer.writerow([f"xi.{j}", repr(float(xi))])
        for j, beta in enumerate(truth.cluster.betas, start=1):
            for c, val in enumerate(beta):
                writer.writerow([f"beta.{j}.{c}", repr(float(val))])
