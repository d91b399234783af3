"""Average-linkage clustering with multiscale bootstrap support for each cluster.

For a cluster G seen in the dendrogram, the selective region S is "G
appears in the dendrogram" and the hypothesis region H is its complement.
Counts of S per scale are fitted on the H side (``B - C``) and turned into
BP, AU and SI p-values.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .bootstrap_engine import CountTable, DatasetMatrix, ScaleGrid, default_scale_grid
from .pvalues import PValueReport, p_values_B
from .scaling_models import DEFAULT_CANDIDATES, DegenerateFit, select_model

logger = logging.getLogger(__name__)

METRICS = {"euclid_sq_mean": 0, "correlation": 1}


@dataclass
class DistanceMatrix:
    """Symmetric p x p distances stored as the condensed upper triangle (row-major)."""

    condensed: np.ndarray
    p: int
    metric: str

    def __post_init__(self):
        self.condensed = np.asarray(self.condensed, dtype=float)
        if self.condensed.size != self.p * (self.p - 1) // 2:
            raise ValueError("condensed vector has the wrong length")
        if np.any(self.condensed < 0) or not np.all(np.isfinite(self.condensed)):
            raise ValueError("distances must be finite and nonnegative")

    def square(self) -> np.ndarray:
        d = np.zeros((self.p, self.p))
        iu = np.triu_indices(self.p, 1)
        d[iu] = self.condensed
        return d + d.T

    @classmethod
    def from_square(cls, d, metric: str = "custom") -> "DistanceMatrix":
        d = np.asarray(d, dtype=float)
        if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
            raise ValueError("distance matrix must be symmetric with zero diagonal")
        return cls(d[np.triu_indices(d.shape[0], 1)], d.shape[0], metric)


@dataclass(frozen=True)
class ClusterId:
    """A cluster identified by its set of leaf labels."""

    members: frozenset

    @classmethod
    def of(cls, labels) -> "ClusterId":
        return cls(frozenset(labels))

    def sorted(self) -> list:
        return sorted(self.members, key=str)

    def __str__(self):
        return "{" + ",".join(str(m) for m in self.sorted()) + "}"


@dataclass
class Dendrogram:
    """Merge history of average linkage.

    Attributes:
        merges: (p-1, 2) node ids; leaves are 0..p-1 and merge k creates node p+k.
        heights: Merge heights.
        members: (p-1, p) boolean leaf membership of each merge node.
        labels: Leaf labels.
    """

    merges: np.ndarray
    heights: np.ndarray
    members: np.ndarray
    labels: list
    flags: set = field(default_factory=set)

    @property
    def p(self) -> int:
        return len(self.labels)

    def cluster(self, k: int) -> ClusterId:
        return ClusterId.of(self.labels[i] for i in np.flatnonzero(self.members[k]))

    def newick(self, annotations: Optional[dict] = None) -> str:
        """Nested bracket string; internal nodes may carry ``[si,au,bp]`` annotations."""
        p = self.p

        def rec(node):
            if node < p:
                return str(self.labels[node])
            k = node - p
            a, b = self.merges[k]
            s = f"({rec(a)},{rec(b)})"
            if annotations and k in annotations:
                s += annotations[k]
            return s

        return rec(2 * p - 2) + ";"


def distance(data: DatasetMatrix, metric: str = "euclid_sq_mean") -> DistanceMatrix:
    """Column distances of a data matrix.

    Args:
        data: n x p matrix.
        metric: ``euclid_sq_mean`` for ``(1/n) sum_t (x_ti - x_tj)**2`` or
            ``correlation`` for ``1 - cor(x_i, x_j)``.

    Raises:
        ValueError: For a constant column under the correlation metric.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    x = data.values
    n, p = x.shape
    w = np.ones(n)
    if metric == "correlation":
        sd = x.std(axis=0)
        bad = [data.col_labels[j] for j in np.flatnonzero(sd == 0)]
        if bad:
            raise ValueError(f"zero-variance columns under correlation distance: {bad}")
        dv = _kernels.correlation_from_weights(x, w, float(n))
        dv = np.maximum(dv, 0.0)
    else:
        dv = _kernels.euclid_from_weights(x, w, float(n))
    return DistanceMatrix(dv, p, metric)


def average_linkage(d: DistanceMatrix, labels: Optional[Sequence] = None) -> Dendrogram:
    """UPGMA with exact ties broken toward the lexicographically smallest pair of leaf labels.

    Args:
        d: Distances.
        labels: Leaf labels (default ``1..p``).
    """
    if d.p < 3:
        raise ValueError("need at least 3 items")
    merges, heights, members = _kernels.upgma(d.condensed, d.p)
    labs = list(labels) if labels is not None else list(range(1, d.p + 1))
    dend = Dendrogram(merges, heights, members, labs)
    if np.any(np.diff(heights) < -1e-12):
        dend.flags.add("height_inversion")
    return dend


def clusters_of(dend: Dendrogram) -> list:
    """The p-2 nontrivial clusters, ordered by merge height from the bottom."""
    return [dend.cluster(k) for k in range(dend.p - 2)]


def _target_matrix(targets: Sequence[ClusterId], labels: list) -> np.ndarray:
    pos = {lab: i for i, lab in enumerate(labels)}
    out = np.zeros((len(targets), len(labels)), dtype=np.bool_)
    for t, g in enumerate(targets):
        for lab in g.members:
            if lab not in pos:
                raise ValueError(f"unknown label {lab!r} in target {g}")
            out[t, pos[lab]] = True
    return out


def canonical_rows(x: np.ndarray) -> np.ndarray:
    """Rows in a canonical order that ignores both row and column order of the input.

    Rows are sorted by their own sorted values, so resampling by replicate
    index gives the same counts for any permutation of rows or columns.
    """
    x = np.asarray(x, dtype=float)
    key = np.sort(x, axis=1)
    return np.ascontiguousarray(x[np.lexsort(key.T[::-1])])


def multiscale_cluster_counts(data: DatasetMatrix, targets: Sequence[ClusterId], grid: ScaleGrid, B: int,
                              seed: int, metric: str = "euclid_sq_mean", on_error: str = "error") -> list:
    """Count, per scale, replicate dendrograms containing each target cluster (leaf-set equality).

    Replicates resample the rows after putting them in canonical order. Replicate ``b`` at scale ``i`` uses the
    random substream ``(seed, i, b)``.

    Args:
        on_error: What to do when a replicate's distance is undefined
            (zero-variance column under correlation): ``error`` or ``skip``.

    Returns:
        One CountTable per target, in order.
    """
    if grid.nprime is None:
        raise ValueError("grid must carry n' values")
    labels = list(data.col_labels)
    tm = _target_matrix(targets, labels)
    counts, bad = _kernels.cluster_counts(canonical_rows(data.values), tm, grid.nprime.astype(np.int64), int(B), int(seed),
                                          METRICS[metric])
    if np.any(bad):
        if on_error == "error":
            raise ValueError(f"{int(bad.sum())} replicates had undefined distances")
        logger.warning("skipped %d replicates with undefined distances", int(bad.sum()))
    used = B - bad
    return [CountTable(grid.sigma2, used, counts[:, t], grid.nprime, skipped=bad.copy()) for t in range(len(targets))]


def mixture_sim(a: float, n: int, seed: int) -> DatasetMatrix:
    """Rows from ``0.5 N((a, a, 0), I) + 0.5 N((a, 0, a), I)``, each row's component chosen by a fair coin."""
    if n < 1:
        raise ValueError("n must be positive")
    z, coin = _kernels.dataset_normals(int(seed), 0, int(n), 3)
    mean = np.where(coin[:, None], np.array([a, a, 0.0]), np.array([a, 0.0, a]))
    return DatasetMatrix.from_array(z + mean, ["1", "2", "3"])


def mixture_dataset(a: float, n: int, seed: int, rep: int) -> np.ndarray:
    """Dataset number ``rep`` of a seeded simulation study (raw array)."""
    z, coin = _kernels.dataset_normals(int(seed), int(rep), int(n), 3)
    return z + np.where(coin[:, None], np.array([a, a, 0.0]), np.array([a, 0.0, a]))


@dataclass
class ClusterReport:
    cluster_id: int
    cluster: ClusterId
    counts: CountTable
    report: PValueReport


def assess_counts(counts_S: CountTable, candidates=DEFAULT_CANDIDATES, k: int = 3, tau2: float = 1.0) -> PValueReport:
    """p-values for "the cluster is not true" from counts of the cluster appearing.

    Falls back to a BP-only report flagged ``degenerate_fit`` when no model
    can be fitted.
    """
    counts_H = counts_S.complement()
    bp_H = _bp_at_one(counts_H)
    try:
        best, _ = select_model(counts_H, candidates)
    except DegenerateFit:
        return PValueReport(math.nan, math.nan, math.nan, math.nan, bp_H, math.nan, math.nan, {"degenerate_fit"})
    return p_values_B(best, best.negated(), k, tau2, tau2, bp_H)


def _bp_at_one(counts: CountTable) -> float:
    i = np.flatnonzero(np.abs(counts.sigma2 - 1.0) <= 1e-9)
    return float(counts.C[i[0]] / counts.B[i[0]]) if i.size else math.nan


def pvclust_run(data: DatasetMatrix, grid: Optional[ScaleGrid] = None, B: int = 10000, seed: int = 0,
                metric: str = "euclid_sq_mean", candidates=DEFAULT_CANDIDATES, k: int = 3,
                tau2: float = 1.0, on_error: str = "error"):
    """Cluster the columns and assess every nontrivial cluster.

    Returns:
        Tuple ``(dendrogram, reports)`` with one ClusterReport per cluster,
        numbered 1.. by merge height.
    """
    grid = grid if grid is not None else default_scale_grid(data.shape[0])
    dend = average_linkage(distance(data, metric), data.col_labels)
    targets = clusters_of(dend)
    tables = multiscale_cluster_counts(data, targets, grid, B, seed, metric, on_error)
    reports = []
    for i, (g, ct) in enumerate(zip(targets, tables)):
        reports.append(ClusterReport(i + 1, g, ct, assess_counts(ct, candidates, k, tau2)))
    return dend, reports


def _pct(p):
    return "NA" if p is None or not np.isfinite(p) else f"{100 * (1 - p):.0f}"


def annotated_newick(dend: Dendrogram, reports: Sequence[ClusterReport]) -> str:
    """Dendrogram string with ``[si,au,bp]`` given as ``(1 - p) * 100`` at each nontrivial node.

    Here p is the p-value of the hypothesis that the cluster is not true.
    """
    ann = {r.cluster_id - 1: f"[{_pct(r.report.p_si)},{_pct(r.report.p_au)},{_pct(r.report.p_bp)}]"
           for r in reports}
    return dend.newick(ann)


REPORT_COLUMNS = ("cluster_id", "members", "bp", "au", "si", "t", "gamma", "model", "flags")


def report_rows(reports: Sequence[ClusterReport]) -> list:
    rows = []
    for r in reports:
        rep = r.report
        rows.append({
            "cluster_id": r.cluster_id,
            "members": ",".join(str(m) for m in r.cluster.sorted()),
            "bp": rep.p_bp, "au": rep.p_au, "si": rep.p_si,
            "t": rep.t_hat, "gamma": rep.gamma_hat,
            "model": rep.model or "NA",
            "flags": ",".join(sorted(rep.flags)) or "-",
        })
    return rows


# ----------------------------------------------------------------------------
# mixture simulation study
# ----------------------------------------------------------------------------

@dataclass
class MixtureStudy:
    """Selective rejection rates for the hypotheses "cluster {1,i} is not true".

    Attributes:
        a: Mixture parameter.
        n_datasets: Number of simulated datasets.
        selected: Times each cluster {1,2}, {1,3} appeared.
        rejections: Per method and cluster, the number of rejections.
    """

    a: float
    n_datasets: int
    alpha: float
    selected: dict
    rejections: dict

    def rates(self) -> dict:
        return {m: {c: (r / self.selected[c] if self.selected[c] else math.nan) for c, r in v.items()}
                for m, v in self.rejections.items()}

    def selection_probability(self) -> dict:
        return {c: s / self.n_datasets for c, s in self.selected.items()}


STUDY_METHODS = ("BP", "AU3", "2BP", "2AU3", "SI3")


def _decisions(rep: PValueReport, alpha: float) -> dict:
    def lt(p, lev):
        return bool(np.isfinite(p) and p < lev)

    return {"BP": lt(rep.p_bp, alpha), "AU3": lt(rep.p_au, alpha), "2BP": lt(rep.p_bp, alpha / 2),
            "2AU3": lt(rep.p_au, alpha / 2), "SI3": lt(rep.p_si, alpha)}


def mixture_study(a: float, n: int = 1000, n_datasets: int = 2000, B: int = 1000, seed: int = 0,
                  alpha: float = 0.1, candidates=DEFAULT_CANDIDATES, progress=None) -> MixtureStudy:
    """Seeded simulation of the three-column mixture with p-values for the appearing {1,i} cluster."""
    grid = default_scale_grid(n)
    names = ("{1,2}", "{1,3}")
    selected = dict.fromkeys(names, 0)
    rej = {m: dict.fromkeys(names, 0) for m in STUDY_METHODS}
    for rep in range(n_datasets):
        x = mixture_dataset(a, n, seed, rep)
        data = DatasetMatrix.from_array(x, ["1", "2", "3"])
        dend = average_linkage(distance(data), data.col_labels)
        g = dend.cluster(0)
        key = str(g)
        if key not in selected:
            continue
        selected[key] += 1
        ct = multiscale_cluster_counts(data, [g], grid, B, seed * 7919 + rep + 1)[0]
        dec = _decisions(assess_counts(ct, candidates), alpha)
        for m in STUDY_METHODS:
            rej[m][key] += dec[m]
        if progress is not None and (rep + 1) % 100 == 0:
            progress(rep + 1, n_datasets)
    return MixtureStudy(a, n_datasets, alpha, selected, rej)
