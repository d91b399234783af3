"""Multiscale scale grids, bootstrap replicate generation and region counting."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

N_SCALES = 13
SCALE_RANGE = (1.0 / 9.0, 9.0)
_BLOCK = 1 << 15


def set_threads(threads: Optional[int]) -> int:
    """Set the worker count for compiled loops, capped at what numba allows.

    Results never depend on this value; it only changes wall time.
    """
    cap = numba.config.NUMBA_NUM_THREADS
    k = cap if not threads else max(1, min(int(threads), cap))
    numba.set_num_threads(k)
    return k


@dataclass(frozen=True)
class ScaleGrid:
    """Bootstrap scales ``sigma2 = n / n_prime`` sorted increasingly.

    Attributes:
        sigma2: Realized scales.
        nprime: Replicate sample sizes, or None in parametric mode.
        n: Original sample size, or None in parametric mode.
    """

    sigma2: np.ndarray
    nprime: Optional[np.ndarray] = None
    n: Optional[int] = None

    def __post_init__(self):
        s = np.asarray(self.sigma2, dtype=float)
        object.__setattr__(self, "sigma2", s)
        if np.any(s <= 0):
            raise ValueError("scales must be positive")
        if np.any(np.diff(s) <= 0):
            raise ValueError("scales must be strictly increasing")
        if self.nprime is not None:
            npr = np.asarray(self.nprime, dtype=np.int64)
            object.__setattr__(self, "nprime", npr)
            if npr.shape != s.shape:
                raise ValueError("nprime and sigma2 lengths differ")
            if self.n is not None and not np.array_equal(s, self.n / npr):
                raise ValueError("sigma2 must equal n / nprime")

    def __len__(self):
        return self.sigma2.size

    @classmethod
    def parametric(cls, sigma2: Sequence[float]) -> "ScaleGrid":
        return cls(np.sort(np.asarray(sigma2, dtype=float)))

    @classmethod
    def from_nprime(cls, n: int, nprime: Sequence[int]) -> "ScaleGrid":
        npr = np.asarray(sorted(set(int(v) for v in nprime), reverse=True), dtype=np.int64)
        return cls(n / npr, npr, int(n))


def default_scale_grid(n: int, rounding: str = "floor") -> ScaleGrid:
    """Thirteen scales placed log-evenly on [1/9, 9], realized through n' = n / sigma2.

    Args:
        n: Original number of rows.
        rounding: ``"floor"`` truncates n / sigma2 (this reproduces the
            classic 916-row grid 8244, ..., 101); ``"round"`` uses the
            nearest integer.

    Returns:
        ScaleGrid whose sigma2 values are recomputed as n / n'.

    Raises:
        ValueError: If two targets collapse to the same n'.
    """
    if n < N_SCALES:
        raise ValueError(f"n={n} is too small for {N_SCALES} distinct scales")
    targets = np.exp(np.linspace(np.log(SCALE_RANGE[0]), np.log(SCALE_RANGE[1]), N_SCALES))
    raw = n / targets
    if rounding == "floor":
        npr = np.floor(raw + 1e-9).astype(np.int64)
    elif rounding == "round":
        npr = np.rint(raw).astype(np.int64)
    else:
        raise ValueError(f"unknown rounding rule {rounding!r}")
    npr = np.maximum(npr, 1)
    if np.unique(npr).size != npr.size:
        vals, cnt = np.unique(npr, return_counts=True)
        raise ValueError(f"scale grid collisions at n'={vals[cnt > 1].tolist()} for n={n}")
    return ScaleGrid(n / npr, npr, int(n))


@dataclass(eq=False)
class CountTable:
    """Per-scale bootstrap frequencies of one region.

    Attributes:
        sigma2: Scales (unique).
        B: Replicates per scale.
        C: Replicates falling in the region.
        nprime: Optional replicate sample sizes.
        skipped: Replicates dropped per scale under the skip policy.
    """

    sigma2: np.ndarray
    B: np.ndarray
    C: np.ndarray
    nprime: Optional[np.ndarray] = None
    skipped: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        self.B = np.broadcast_to(np.asarray(self.B, dtype=np.int64), self.sigma2.shape).copy()
        self.C = np.asarray(self.C, dtype=np.int64)
        if self.nprime is not None:
            self.nprime = np.asarray(self.nprime, dtype=np.int64)
        if not (self.sigma2.shape == self.B.shape == self.C.shape):
            raise ValueError("sigma2, B and C must have equal length")
        if np.unique(self.sigma2).size != self.sigma2.size:
            raise ValueError("sigma2 values must be unique")
        if np.any(self.B <= 0) or np.any(self.C < 0) or np.any(self.C > self.B):
            raise ValueError("counts must satisfy 0 <= C <= B with B > 0")

    def __len__(self):
        return self.sigma2.size

    def __eq__(self, other):
        if not isinstance(other, CountTable):
            return NotImplemented
        same_nprime = (self.nprime is None and other.nprime is None) or (
            self.nprime is not None and other.nprime is not None and np.array_equal(self.nprime, other.nprime))
        return (same_nprime and np.array_equal(self.sigma2, other.sigma2)
                and np.array_equal(self.B, other.B) and np.array_equal(self.C, other.C))

    @property
    def frequency(self) -> np.ndarray:
        return self.C / self.B

    @property
    def n_informative(self) -> int:
        return int(np.sum((self.C > 0) & (self.C < self.B)))

    def complement(self) -> "CountTable":
        """Counts of the complementary region, ``B - C``."""
        return CountTable(self.sigma2, self.B, self.B - self.C, self.nprime)

    def to_tsv(self) -> str:
        lines = ["sigma2\tnprime\tB\tC"]
        for i in range(len(self)):
            npr = "" if self.nprime is None else str(int(self.nprime[i]))
            lines.append(f"{float(self.sigma2[i])!r}\t{npr}\t{int(self.B[i])}\t{int(self.C[i])}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2.tolist(),
            "nprime": None if self.nprime is None else self.nprime.tolist(),
            "B": self.B.tolist(),
            "C": self.C.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "CountTable":
        return cls(d["sigma2"], d["B"], d["C"], d.get("nprime"))

    @classmethod
    def from_json(cls, text: str) -> "CountTable":
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_tsv(cls, text: str) -> "CountTable":
        """Parse the ``sigma2 nprime B C`` table; errors carry line numbers."""
        rows = [ln for ln in enumerate(text.splitlines(), 1) if ln[1].strip()]
        if not rows:
            raise ValueError("empty count table")
        header = rows[0][1].split("\t")
        if header != ["sigma2", "nprime", "B", "C"]:
            raise ValueError(f"line {rows[0][0]}: expected header 'sigma2<TAB>nprime<TAB>B<TAB>C'")
        s, npr, b, c = [], [], [], []
        for lineno, line in rows[1:]:
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                s.append(float(parts[0]))
                npr.append(int(parts[1]) if parts[1] else None)
                b.append(int(parts[2]))
                c.append(int(parts[3]))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        nprime = None if any(v is None for v in npr) else npr
        return cls(s, b, c, nprime)


@dataclass
class DatasetMatrix:
    """n x p data matrix; rows are sampling units, columns are items to cluster."""

    values: np.ndarray
    row_labels: list
    col_labels: list

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        n, p = self.values.shape
        if n < 2 or p < 3:
            raise ValueError(f"need at least 2 rows and 3 columns, got {n}x{p}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("dataset contains missing or non-finite values")
        if len(self.row_labels) != n or len(self.col_labels) != p:
            raise ValueError("label lengths do not match the matrix shape")

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def from_array(cls, values, col_labels=None) -> "DatasetMatrix":
        values = np.asarray(values, dtype=float)
        n, p = values.shape
        cols = list(col_labels) if col_labels is not None else [f"c{j + 1}" for j in range(p)]
        return cls(values, [f"r{i + 1}" for i in range(n)], cols)

    @classmethod
    def read_csv(cls, path, delimiter: str = ",") -> "DatasetMatrix":
        """Read a delimited matrix with a header row of column labels."""
        with open(path, newline="") as fh:
            return cls.from_csv_text(fh.read(), delimiter, source=str(path))

    @classmethod
    def from_csv_text(cls, text: str, delimiter: str = ",", source: str = "<input>") -> "DatasetMatrix":
        """Parse a header row of column labels followed by numeric rows.

        The first column holds row labels when the header is one field
        shorter than the data rows, when the header starts with an empty
        corner cell, or when the first field of any data row is not numeric.
        Otherwise rows are labelled ``r1, r2, ...``.
        """
        rows = [(i, r) for i, r in enumerate(csv.reader(io.StringIO(text), delimiter=delimiter), 1) if r]
        if not rows:
            raise ValueError(f"{source}: empty file")
        header, body = rows[0][1], rows[1:]
        width = len(body[0][1]) if body else len(header)

        def numeric(v):
            try:
                float(v)
                return True
            except ValueError:
                return False

        if width == len(header) + 1:
            labelled, cols = True, header
        else:
            labelled = header[0] == "" or any(not numeric(r[0]) for _, r in body)
            cols = header[1:] if labelled else header
        vals, labels = [], []
        for lineno, row in body:
            if len(row) != width:
                raise ValueError(f"{source}: line {lineno}: expected {width} fields, got {len(row)}")
            cells = row[1:] if labelled else row
            try:
                vals.append([float(v) for v in cells])
            except ValueError as exc:
                raise ValueError(f"{source}: line {lineno}: {exc}") from None
            labels.append(row[0] if labelled else f"r{len(labels) + 1}")
        return cls(np.array(vals), labels, cols)

    def to_csv(self, delimiter: str = ",") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow([""] + list(self.col_labels))
        for lab, row in zip(self.row_labels, self.values):
            w.writerow([lab] + [repr(float(v)) for v in row])
        return buf.getvalue()


def parametric_counts(
    y,
    membership: Callable[[np.ndarray], np.ndarray],
    grid: ScaleGrid,
    B: int,
    seed: int,
) -> CountTable:
    """Count replicates ``Y* ~ N(y, sigma2 I)`` falling in a region, per scale.

    Args:
        y: Observation, a point in R^d.
        membership: Vectorized predicate mapping an (N, d) array to N booleans.
        grid: Scales to use.
        B: Replicates per scale.
        seed: Master seed; replicate b at scale i uses the substream (seed, i, b).

    Returns:
        CountTable with one row per scale.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if B < 1:
        raise ValueError("B must be positive")
    counts = np.zeros(len(grid), dtype=np.int64)
    for i, s2 in enumerate(grid.sigma2):
        sd = np.sqrt(s2)
        for b0 in range(0, B, _BLOCK):
            nb_ = min(_BLOCK, B - b0)
            z = _kernels.normal_block(seed, i, b0, nb_, y.size)
            counts[i] += int(np.count_nonzero(membership(y + sd * z)))
    return CountTable(grid.sigma2, B, counts, grid.nprime)


def nonparametric_counts(
    data: DatasetMatrix,
    statistic: Callable[[np.ndarray], bool],
    grid: ScaleGrid,
    B: int,
    seed: int,
    on_error: str = "error",
) -> CountTable:
    """Count row-resampled replicates satisfying a predicate, per scale.

    Each replicate draws n' rows with replacement. Generic but runs the
    predicate in Python; clustering uses a compiled path instead.

    Args:
        data: Dataset whose rows are resampled.
        statistic: Predicate on the resampled n' x p matrix.
        grid: Scale grid carrying n' per entry.
        B: Replicates per scale.
        seed: Master seed.
        on_error: ``"error"`` to propagate predicate failures, ``"skip"`` to
            drop the replicate and record it in ``skipped``.
    """
    if grid.nprime is None:
        raise ValueError("nonparametric resampling needs n' for every scale")
    if on_error not in ("error", "skip"):
        raise ValueError("on_error must be 'error' or 'skip'")
    x = data.values
    n = x.shape[0]
    C = np.zeros(len(grid), dtype=np.int64)
    used = np.full(len(grid), B, dtype=np.int64)
    for i, npr in enumerate(grid.nprime):
        for b in range(B):
            idx = _kernels.resample_indices(seed, i, b, n, int(npr))
            try:
                hit = bool(statistic(x[idx]))
            except Exception:
                if on_error == "error":
                    raise
                used[i] -= 1
                continue
            C[i] += hit
    skipped = B - used
    if np.any(skipped):
        logger.warning("skipped %d failing replicates", int(skipped.sum()))
    if np.any(used == 0):
        raise ValueError("every replicate failed at some scale")
    return CountTable(grid.sigma2, used, C, grid.nprime, skipped=skipped)
