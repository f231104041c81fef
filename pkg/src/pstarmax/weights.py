"""Spatial neighborhood weight matrices.

A weight-matrix set is an ordered list ``[W0, W1, ..., Wl]`` of p x p
row-normalized matrices, one per neighborhood order.  ``W0`` is always the
identity (order 0 = the location itself); higher orders have zero diagonals
and nonnegative entries, and each row holding at least one neighbor sums
to 1.  Builders are provided for regular square grids (isotropic 4-nearest-
neighbor, and directional north/south + west/east pairs) and for general
adjacency lists with equal weights per neighborhood order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .validation import ValidationReport

ROW_SUM_TOL = 1e-12
RANK_RTOL = 1e-10
SPARSE_DENSITY = 0.25


class WeightsError(ValueError):
    """Raised for invalid weight-matrix inputs."""


@dataclass(frozen=True)
class GridSpec:
    """Square n x n grid, locations numbered column-wise from 1 (top-left)
    to n^2 (bottom-right)."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise WeightsError(f"grid side must be >= 2, got {self.n}")

    @property
    def p(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class AdjacencyList:
    """Symmetric order-1 neighbor sets for p locations (0-based indices)."""

    p: int
    neighbors: tuple[frozenset, ...]

    def __post_init__(self):
        if self.p < 1 or len(self.neighbors) != self.p:
            raise WeightsError("neighbor list length must equal p")
        for i, nbrs in enumerate(self.neighbors):
            if i in nbrs:
                raise WeightsError(f"location {i} lists itself as a neighbor")
            if not nbrs:
                raise WeightsError(f"location {i} has no neighbors")
            for j in nbrs:
                if not (0 <= j < self.p):
                    raise WeightsError(f"neighbor index {j} out of range")
                if i not in self.neighbors[j]:
                    raise WeightsError(f"adjacency not symmetric: {i} -> {j}")

    @classmethod
    def from_edges(cls, p: int, edges) -> "AdjacencyList":
        nbrs = [set() for _ in range(p)]
        for i, j in edges:
            if i == j:
                raise WeightsError(f"self-edge at location {i}")
            nbrs[i].add(j)
            nbrs[j].add(i)
        return cls(p, tuple(frozenset(s) for s in nbrs))


class WeightMatrixSet:
    """Ordered list of p x p spatial weight matrices, W0 = identity.

    Matrices with density below 25% are stored sparsely (CSR); the public
    contract is dense semantics.  Instances are immutable after
    construction and safe to share across threads.
    """

    def __init__(self, matrices):
        if not matrices:
            raise WeightsError("at least one matrix (the identity) is required")
        first = np.asarray(matrices[0].toarray() if sp.issparse(matrices[0]) else matrices[0], dtype=float)
        if first.ndim != 2 or first.shape[0] != first.shape[1]:
            raise WeightsError("weight matrices must be square")
        p = first.shape[0]
        stored = []
        for mat in matrices:
            dense = np.asarray(mat.toarray() if sp.issparse(mat) else mat, dtype=float)
            if dense.shape != (p, p):
                raise WeightsError(f"matrix shape {dense.shape} != ({p}, {p})")
            density = np.count_nonzero(dense) / dense.size
            if density < SPARSE_DENSITY and p > 1:
                stored.append(sp.csr_matrix(dense))
            else:
                stored.append(dense)
        self.p = p
        self.matrices = tuple(stored)

    @property
    def ell_max(self) -> int:
        return len(self.matrices) - 1

    def __len__(self) -> int:
        return len(self.matrices)

    def dense(self, ell: int) -> np.ndarray:
        m = self.matrices[ell]
        return m.toarray() if sp.issparse(m) else np.array(m, copy=True)

    def dot(self, ell: int, x: np.ndarray) -> np.ndarray:
        """W^(ell) @ x for a vector or matrix x."""
        return self.matrices[ell] @ x

    def dense_all(self) -> list[np.ndarray]:
        return [self.dense(ell) for ell in range(len(self.matrices))]


def _grid_directional_neighbors(n: int):
    """(ns, we) neighbor lists for the column-wise numbered n x n grid.

    Location index i (0-based): column c = i // n, row r = i % n.
    North/south neighbors share the column (row +/- 1); west/east share the
    row (column +/- 1, i.e. |i - j| = n).
    """
    ns = [[] for _ in range(n * n)]
    we = [[] for _ in range(n * n)]
    for i in range(n * n):
        c, r = divmod(i, n)
        if r > 0:
            ns[i].append(i - 1)
        if r < n - 1:
            ns[i].append(i + 1)
        if c > 0:
            we[i].append(i - n)
        if c < n - 1:
            we[i].append(i + n)
    return ns, we


def _equal_weight_matrix(p: int, neighbor_lists) -> np.ndarray:
    W = np.zeros((p, p))
    for i, nbrs in enumerate(neighbor_lists):
        if nbrs:
            W[i, list(nbrs)] = 1.0 / len(nbrs)
    return W


def build_grid_4nn(grid: GridSpec) -> WeightMatrixSet:
    """[I, W_4NN]: axis-adjacent neighbors weighted equally.

    Interior locations have 4 neighbors (weight 0.25), edges 3 (1/3),
    corners 2 (0.5).
    """
    n = grid.n
    ns, we = _grid_directional_neighbors(n)
    merged = [sorted(set(a) | set(b)) for a, b in zip(ns, we)]
    W = _equal_weight_matrix(grid.p, merged)
    return WeightMatrixSet([np.eye(grid.p), W])


def build_grid_directional(grid: GridSpec) -> WeightMatrixSet:
    """[I, W_NS, W_WE]: separate north/south and west/east neighbor matrices.

    Weight 1 where a location has a single neighbor in the direction pair
    (grid boundary), 0.5 in the interior.
    """
    ns, we = _grid_directional_neighbors(grid.n)
    W_ns = _equal_weight_matrix(grid.p, ns)
    W_we = _equal_weight_matrix(grid.p, we)
    return WeightMatrixSet([np.eye(grid.p), W_ns, W_we])


def order2_neighbors(adj: AdjacencyList) -> list[set]:
    """Order-2 sets: union of neighbors' neighbors minus order-1 and self."""
    out = []
    for i in range(adj.p):
        second = set()
        for j in adj.neighbors[i]:
            second |= adj.neighbors[j]
        second -= set(adj.neighbors[i])
        second.discard(i)
        out.append(second)
    return out


def from_adjacency(adj: AdjacencyList, max_order: int = 1) -> WeightMatrixSet:
    """Equal-weight matrices from an adjacency list, orders 1 and optionally 2.

    Locations with an empty order-2 neighborhood get an all-zero row in
    W2; ``validate`` flags this unless explicitly allowed.
    """
    if max_order not in (1, 2):
        raise WeightsError("max_order must be 1 or 2")
    mats = [np.eye(adj.p), _equal_weight_matrix(adj.p, [sorted(s) for s in adj.neighbors])]
    if max_order == 2:
        mats.append(_equal_weight_matrix(adj.p, [sorted(s) for s in order2_neighbors(adj)]))
    return WeightMatrixSet(mats)


def validate(wset: WeightMatrixSet, allow_zero_rows: bool = False) -> ValidationReport:
    """Check all weight-set invariants; every violation is reported with
    matrix and row indices."""
    report = ValidationReport()
    p = wset.p
    dense = wset.dense_all()

    if not np.array_equal(dense[0], np.eye(p)):
        report.add("identity", "W^(0) is not the identity matrix", matrix=0)

    for ell, W in enumerate(dense):
        neg = np.argwhere(W < 0)
        for i, j in neg:
            report.add("negative_entry", f"W^({ell})[{i},{j}] = {W[i, j]:.3g} < 0",
                       matrix=ell, row=int(i), col=int(j))
        if ell > 0:
            bad_diag = np.nonzero(np.abs(np.diag(W)) > 0)[0]
            for i in bad_diag:
                report.add("nonzero_diagonal", f"W^({ell}) has nonzero diagonal at row {i}",
                           matrix=ell, row=int(i))
        row_sums = W.sum(axis=1)
        for i in range(p):
            s = row_sums[i]
            if abs(s) <= ROW_SUM_TOL:
                sev = "warning" if allow_zero_rows else "error"
                report.add("zero_row", f"W^({ell}) row {i} has no neighbors (all-zero row)",
                           severity=sev, matrix=ell, row=int(i))
            elif abs(s - 1.0) > ROW_SUM_TOL:
                report.add("row_sum", f"W^({ell}) row {i} sums to {s!r}, not 1",
                           matrix=ell, row=int(i))

    flat = np.stack([W.ravel() for W in dense])
    svals = np.linalg.svd(flat, compute_uv=False)
    rank = int(np.sum(svals > RANK_RTOL * svals[0]))
    if rank < len(dense):
        report.add("linear_dependence",
                   f"matrices are linearly dependent (rank {rank} of {len(dense)})")
    return report


def column_sum_norm_tau(wset: WeightMatrixSet) -> float:
    """tau = max over matrices of the maximum absolute column sum."""
    tau = 0.0
    for m in wset.matrices:
        col_sums = np.abs(m).sum(axis=0)
        col_sums = np.asarray(col_sums).ravel()
        tau = max(tau, float(col_sums.max()))
    return tau


def save_csv(wset: WeightMatrixSet, path) -> None:
    """Write the set as ``order,row,col,weight`` triples (0-based indices)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["order", "row", "col", "weight"])
        for ell, W in enumerate(wset.dense_all()):
            rows, cols = np.nonzero(W)
            for i, j in zip(rows, cols):
                writer.writerow([ell, int(i), int(j), repr(float(W[i, j]))])


def load_csv(path, allow_zero_rows: bool = False) -> WeightMatrixSet:
    """Read a triples CSV and re-validate; raises WeightsError on failure."""
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["order", "row", "col", "weight"]:
            raise WeightsError(f"bad header in {path}: expected order,row,col,weight")
        for line in reader:
            if not line:
                continue
            ell, i, j, w = int(line[0]), int(line[1]), int(line[2]), float(line[3])
            entries.append((ell, i, j, w))
    if not entries:
        raise WeightsError(f"no weight entries in {path}")
    n_orders = max(e[0] for e in entries) + 1
    p = max(max(e[1] for e in entries), max(e[2] for e in entries)) + 1
    mats = [np.zeros((p, p)) for _ in range(n_orders)]
    for ell, i, j, w in entries:
        mats[ell][i, j] = w
    wset = WeightMatrixSet(mats)
    report = validate(wset, allow_zero_rows=allow_zero_rows)
    if not report.ok:
        raise WeightsError(f"invalid weight set in {path}: {report}")
    return wset
