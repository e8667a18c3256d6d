"""Point estimates and diagnostics for posterior partition draws.

Partitions are canonical label vectors (0..K-1 in first-occurrence order).
Point estimates minimize the posterior expectation of a pairwise
misclassification loss (Binder) or an entropy-based loss (generalized
variation of information) over a candidate set: every sampled partition plus
single-unit hill-climbing refinements of the best sample, or every partition
outright when n <= 10.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dp import canonicalize_labels

EXHAUSTIVE_LIMIT = 10


@dataclass(frozen=True)
class Partition:
    """A canonical clustering of n units."""

    labels: tuple
    k: int

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        canon, _ = canonicalize_labels(np.asarray(labels, dtype=int))
        return cls(labels=tuple(int(v) for v in canon), k=int(canon.max()) + 1)

    @property
    def n(self) -> int:
        return len(self.labels)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=int)


def _draws_matrix(draws) -> np.ndarray:
    if isinstance(draws, np.ndarray):
        mat = np.atleast_2d(draws).astype(int)
    else:
        draws = list(draws)
        if not draws:
            raise ValueError("empty draw list")
        rows = [d.as_array() if isinstance(d, Partition) else np.asarray(d, int)
                for d in draws]
        mat = np.vstack(rows)
    if mat.size == 0:
        raise ValueError("empty draw list")
    return mat


def posterior_similarity_matrix(draws) -> np.ndarray:
    """Pairwise co-clustering frequencies across draws.

    ``S[i, j]`` is the fraction of draws allocating units i and j to the same
    cluster; the result is symmetric with unit diagonal and is invariant to
    relabeling within each draw.
    """
    mat = _draws_matrix(draws)
    same = mat[:, :, None] == mat[:, None, :]
    return same.mean(axis=0)


def rand_index(p1, p2) -> float:
    """Fraction of unit pairs on which two partitions agree (both together or
    both apart); 1 exactly when the partitions coincide."""
    a = p1.as_array() if isinstance(p1, Partition) else np.asarray(p1, int)
    b = p2.as_array() if isinstance(p2, Partition) else np.asarray(p2, int)
    if a.shape != b.shape:
        raise ValueError("partitions must cover the same units")
    n = a.shape[0]
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, k=1)
    same_a = (a[:, None] == a[None, :])[iu]
    same_b = (b[:, None] == b[None, :])[iu]
    return float(np.mean(same_a == same_b))


def _xlogx(counts: np.ndarray, n: int) -> np.ndarray:
    frac = counts / n
    out = np.zeros_like(frac, dtype=float)
    mask = frac > 0
    out[mask] = frac[mask] * np.log2(frac[mask])
    return out


def partition_entropy(p) -> float:
    """Shannon entropy of the cluster-size distribution, in bits."""
    labels = p.as_array() if isinstance(p, Partition) else np.asarray(p, int)
    counts = np.bincount(labels)
    return float(-np.sum(_xlogx(counts[counts > 0], labels.shape[0])))


def joint_entropy(p1, p2) -> float:
    """Entropy of the intersection table of two partitions, in bits."""
    a = p1.as_array() if isinstance(p1, Partition) else np.asarray(p1, int)
    b = p2.as_array() if isinstance(p2, Partition) else np.asarray(p2, int)
    if a.shape != b.shape:
        raise ValueError("partitions must cover the same units")
    ka, kb = a.max() + 1, b.max() + 1
    table = np.bincount(a * kb + b, minlength=ka * kb)
    return float(-np.sum(_xlogx(table[table > 0], a.shape[0])))


@lru_cache(maxsize=None)
def enumerate_partitions(n: int) -> np.ndarray:
    """All set partitions of n items as canonical label rows (Bell(n) of them)."""
    if n < 1:
        raise ValueError("need n >= 1")
    rows = [[0]]
    for _ in range(n - 1):
        grown = []
        for row in rows:
            top = max(row)
            for label in range(top + 2):
                grown.append(row + [label])
        rows = grown
    return np.asarray(rows, dtype=int)


def binder_score(labels: np.ndarray, similarity: np.ndarray, a: float, b: float) -> float:
    """Lau-Green objective: sum over co-clustered pairs of S_ij - b/(a+b).

    Maximizing this over candidate partitions minimizes the posterior
    expected Binder loss with separation cost ``a`` and joining cost ``b``.
    """
    labels = np.asarray(labels, dtype=int)
    n = labels.shape[0]
    iu = np.triu_indices(n, k=1)
    same = (labels[:, None] == labels[None, :])[iu]
    return float(np.sum((similarity[iu] - b / (a + b)) * same))


def expected_gvi_loss(
    labels: np.ndarray,
    draws_mat: np.ndarray,
    a: float,
    b: float,
    joint_scale: str = "sum",
) -> float:
    """Monte Carlo posterior expectation of the generalized VI loss.

    Per draw, the loss combines the negative entropies of the drawn and
    candidate partitions (scaled by ``a`` and ``b``) minus the joint entropy
    scaled by a + b (``joint_scale="sum"``, the displayed form) or by
    (a + b)/2 (``joint_scale="mean"``).  At a = b = 1 with ``"sum"`` this is
    the standard variation of information.
    """
    if joint_scale not in ("sum", "mean"):
        raise ValueError("joint_scale must be 'sum' or 'mean'")
    factor = (a + b) if joint_scale == "sum" else (a + b) / 2.0
    labels = np.asarray(labels, dtype=int)
    n = labels.shape[0]
    kb = labels.max() + 1
    cand_term = float(np.sum(_xlogx(np.bincount(labels), n)))
    total = 0.0
    for row in draws_mat:
        ka = row.max() + 1
        draw_term = float(np.sum(_xlogx(np.bincount(row), n)))
        table = np.bincount(row * kb + labels, minlength=ka * kb)
        joint = float(np.sum(_xlogx(table[table > 0], n)))
        total += a * draw_term + b * cand_term - factor * joint
    return total / draws_mat.shape[0]


def _unique_rows(mat: np.ndarray) -> np.ndarray:
    return np.unique(mat, axis=0)


def _binder_scores_bulk(
    cands: np.ndarray, similarity: np.ndarray, a: float, b: float
) -> np.ndarray:
    """Lau-Green objective for every candidate row at once."""
    n = cands.shape[1]
    iu = np.triu_indices(n, k=1)
    weights = similarity[iu] - b / (a + b)
    out = np.empty(cands.shape[0])
    for lo in range(0, cands.shape[0], 20_000):
        chunk = cands[lo : lo + 20_000]
        same = chunk[:, :, None] == chunk[:, None, :]
        out[lo : lo + 20_000] = same[:, iu[0], iu[1]] @ weights
    return out


def _gvi_scores_bulk(
    cands: np.ndarray,
    draws_mat: np.ndarray,
    a: float,
    b: float,
    joint_scale: str,
) -> np.ndarray:
    """Negative expected generalized-VI loss for every candidate row."""
    factor = (a + b) if joint_scale == "sum" else (a + b) / 2.0
    n = cands.shape[1]
    n_draws = draws_mat.shape[0]
    draw_term = np.mean([
        float(np.sum(_xlogx(np.bincount(row), n))) for row in draws_mat
    ])
    out = np.empty(cands.shape[0])
    for lo in range(0, cands.shape[0], 20_000):
        chunk = cands[lo : lo + 20_000]
        m = chunk.shape[0]
        offsets = np.arange(m)[:, None] * (n * n)
        cand_counts = np.zeros((m, n))
        np.add.at(cand_counts, (np.arange(m)[:, None], chunk), 1.0)
        cand_term = _xlogx_matrix(cand_counts, n).sum(axis=1)
        joint = np.zeros(m)
        for row in draws_mat:
            flat = (row[None, :] * n + chunk + offsets).ravel()
            table = np.bincount(flat, minlength=m * n * n).reshape(m, n * n)
            joint += _xlogx_matrix(table, n).sum(axis=1)
        joint /= n_draws
        out[lo : lo + 20_000] = -(a * draw_term + b * cand_term - factor * joint)
    return out


def _xlogx_matrix(counts: np.ndarray, n: int) -> np.ndarray:
    frac = counts / n
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = frac * np.log2(frac)
    return np.where(counts > 0, vals, 0.0)


def _greedy_refine(labels: np.ndarray, score_fn) -> np.ndarray:
    """Hill-climb by single-unit reassignment (existing cluster or new
    singleton) until no move improves the score."""
    labels = canonicalize_labels(labels)[0]
    best = score_fn(labels)
    improved = True
    while improved:
        improved = False
        for i in range(labels.shape[0]):
            current = labels[i]
            top = labels.max()
            for target in range(top + 2):
                if target == current:
                    continue
                trial = labels.copy()
                trial[i] = target
                trial = canonicalize_labels(trial)[0]
                val = score_fn(trial)
                if val > best + 1e-12:
                    labels, best = trial, val
                    improved = True
    return labels


def _tie_key(labels: np.ndarray) -> tuple:
    return (int(labels.max()) + 1, tuple(int(v) for v in labels))


def _pick_best(candidates: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Highest-scoring candidate; ties break toward fewer clusters, then
    lexicographic canonical labels."""
    top = scores.max()
    best_labels, best_key = None, None
    for idx in np.nonzero(scores >= top - 1e-12)[0]:
        canon = canonicalize_labels(candidates[idx])[0]
        key = _tie_key(canon)
        if best_key is None or key < best_key:
            best_labels, best_key = canon, key
    return best_labels


def _minimize(draws, bulk_score_fn, scalar_score_fn) -> Partition:
    mat = _draws_matrix(draws)
    n = mat.shape[1]
    if n <= EXHAUSTIVE_LIMIT:
        cands = enumerate_partitions(n)
        return Partition.from_labels(_pick_best(cands, bulk_score_fn(cands)))
    candidates = _unique_rows(mat)
    best = _pick_best(candidates, bulk_score_fn(candidates))
    refined = _greedy_refine(best, scalar_score_fn)
    final = np.vstack([best, refined])
    return Partition.from_labels(_pick_best(final, bulk_score_fn(final)))


def minimize_binder(
    similarity: np.ndarray, draws, a: float = 1.0, b: float = 1.0
) -> Partition:
    """Partition minimizing the expected Binder loss over the candidate set.

    Equivalently, maximizes :func:`binder_score`.  Ties break toward fewer
    clusters, then lexicographic canonical labels.
    """
    if a <= 0 or b <= 0:
        raise ValueError("costs must be positive")
    return _minimize(
        draws,
        lambda cands: _binder_scores_bulk(cands, similarity, a, b),
        lambda labels: binder_score(labels, similarity, a, b),
    )


def minimize_gvi(
    draws, a: float = 1.0, b: float = 1.0, joint_scale: str = "sum"
) -> Partition:
    """Partition minimizing the expected generalized-VI loss over the same
    candidate set as :func:`minimize_binder`."""
    if a <= 0 or b <= 0:
        raise ValueError("costs must be positive")
    mat = _draws_matrix(draws)
    return _minimize(
        mat,
        lambda cands: _gvi_scores_bulk(cands, mat, a, b, joint_scale),
        lambda labels: -expected_gvi_loss(labels, mat, a, b, joint_scale),
    )


def load_partition_draws(run_dir) -> np.ndarray:
    """Allocation draws (M, n) from a chain output directory, 0-based."""
    import os

    with open(os.path.join(run_dir, "allocations.csv"), encoding="utf-8") as fh:
        fh.readline()
        mat = np.loadtxt(fh, delimiter=",", ndmin=2)
    return mat.astype(int) - 1


def write_partition_csv(partition: Partition, unit_ids, path) -> None:
    """Write a ``unit,cluster`` CSV (clusters numbered from 1)."""
    if len(unit_ids) != partition.n:
        raise ValueError("unit id list must match the partition length")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit", "cluster"])
        for unit, label in zip(unit_ids, partition.labels):
            writer.writerow([unit, label + 1])


def read_partition_csv(path, unit_ids) -> Partition:
    """Read a ``unit,cluster`` CSV and align it with ``unit_ids`` order."""
    index = {str(u): i for i, u in enumerate(unit_ids)}
    labels = np.full(len(unit_ids), -1, dtype=int)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for row in rows[1:]:
        if not row or not any(f.strip() for f in row):
            continue
        unit, label = row[0].strip(), row[1].strip()
        if unit not in index:
            raise ValueError(f"unknown unit id '{unit}' in {path}")
        labels[index[unit]] = int(label)
    if np.any(labels < 0):
        missing = [u for u, i in index.items() if labels[i] < 0]
        raise ValueError(f"partition file misses units: {missing[:5]}")
    return Partition.from_labels(labels)
