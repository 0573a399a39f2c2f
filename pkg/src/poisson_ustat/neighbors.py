"""Fixed-radius neighbor search on a uniform cell grid, and clique / connected
subset enumeration over the resulting graphs.

All routines are vectorized; subsets are returned as ``(M, k)`` integer arrays
with increasing indices in each row, rows sorted lexicographically.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

__all__ = [
    "neighbor_pairs",
    "brute_pairs",
    "adjacency",
    "cliques",
    "connected_subsets",
    "all_subsets",
]


def _filter(points, i, j, radius, closed):
    diff = points[i] - points[j]
    d2 = np.sum(diff * diff, axis=1)
    r2 = radius * radius
    keep = d2 <= r2 if closed else d2 < r2
    return i[keep], j[keep]


def _sorted_pairs(i, j):
    order = np.lexsort((j, i))
    return i[order], j[order]


def brute_pairs(points: np.ndarray, radius: float, closed: bool = True):
    """All pairs ``i < j`` within ``radius`` by direct comparison."""
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    i, j = np.triu_indices(n, k=1)
    return _sorted_pairs(*_filter(points, i.astype(np.int64), j.astype(np.int64), radius, closed))


def neighbor_pairs(points: np.ndarray, radius: float, closed: bool = True):
    """Pairs ``i < j`` with distance ``<= radius`` (``< radius`` if not closed).

    Points are hashed to cells of side ``radius``; candidates come from the
    ``3^d`` neighboring cells, so no pair within ``radius`` is missed.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    empty = (np.zeros(0, np.int64), np.zeros(0, np.int64))
    if n < 2:
        return empty
    if not radius > 0:
        return empty if not closed or radius < 0 else brute_pairs(points, 0.0, True)
    lo = points.min(axis=0)
    cells = np.floor((points - lo) / radius).astype(np.int64)
    extent = cells.max(axis=0) + 3
    if float(np.prod(extent.astype(float))) > 2.0**62:
        return brute_pairs(points, radius, closed)
    strides = np.cumprod(np.concatenate([[1], extent[:0:-1]]))[::-1]
    keys = (cells + 1) @ strides
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    ii, jj = [], []
    for off in itertools.product((-1, 0, 1), repeat=d):
        nk = keys + np.asarray(off, dtype=np.int64) @ strides
        start = np.searchsorted(skeys, nk, side="left")
        stop = np.searchsorted(skeys, nk, side="right")
        cnt = stop - start
        tot = int(cnt.sum())
        if tot == 0:
            continue
        src = np.repeat(np.arange(n), cnt)
        first = np.repeat(start - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
        dst = order[first + np.arange(tot)]
        keep = src < dst
        ii.append(src[keep])
        jj.append(dst[keep])
    i = np.concatenate(ii).astype(np.int64)
    j = np.concatenate(jj).astype(np.int64)
    return _sorted_pairs(*_filter(points, i, j, radius, closed))


def adjacency(n: int, i: np.ndarray, j: np.ndarray):
    """Symmetric CSR adjacency ``(indptr, indices)`` with sorted neighbor lists."""
    src = np.concatenate([i, j])
    dst = np.concatenate([j, i])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src + 1, 1)
    return np.cumsum(indptr), dst


def _edge_lookup(n, i, j):
    keys = np.sort(np.minimum(i, j) * n + np.maximum(i, j))

    def has(a, b):
        q = np.minimum(a, b) * n + np.maximum(a, b)
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(keys.size - 1, 0))
        return (keys.size > 0) & (keys[pos] == q) if keys.size else np.zeros(q.shape, bool)

    return has


def _expand(rows, indptr, indices, pivot):
    """Pair every row with each neighbor of ``rows[:, pivot]``."""
    v = rows[:, pivot]
    cnt = indptr[v + 1] - indptr[v]
    tot = int(cnt.sum())
    rep = np.repeat(np.arange(rows.shape[0]), cnt)
    first = np.repeat(indptr[v] - np.concatenate([[0], np.cumsum(cnt)[:-1]]), cnt)
    return rep, indices[first + np.arange(tot)]


def cliques(n: int, i: np.ndarray, j: np.ndarray, k: int) -> np.ndarray:
    """All ``k``-cliques of the graph on ``n`` vertices with edges ``(i, j)``."""
    if k < 1:
        raise ValueError("clique size must be positive")
    if k == 1:
        return np.arange(n, dtype=np.int64)[:, None]
    rows = np.stack([np.minimum(i, j), np.maximum(i, j)], axis=1).astype(np.int64)
    if k == 2 or rows.shape[0] == 0:
        return _canonical(rows) if k == 2 else np.zeros((0, k), np.int64)
    indptr, indices = adjacency(n, i, j)
    has = _edge_lookup(n, i, j)
    for size in range(2, k):
        rep, cand = _expand(rows, indptr, indices, size - 1)
        keep = cand > rows[rep, size - 1]
        rep, cand = rep[keep], cand[keep]
        for c in range(size - 1):
            ok = has(rows[rep, c], cand)
            rep, cand = rep[ok], cand[ok]
        rows = np.concatenate([rows[rep], cand[:, None]], axis=1)
        if rows.shape[0] == 0:
            return np.zeros((0, k), np.int64)
    return _canonical(rows)


def _canonical(rows):
    if rows.shape[0] == 0:
        return rows.reshape(0, rows.shape[1]).astype(np.int64)
    rows = np.sort(rows, axis=1)
    return np.unique(rows, axis=0)


def connected_subsets(n: int, i: np.ndarray, j: np.ndarray, k: int) -> np.ndarray:
    """All ``k``-subsets inducing a connected subgraph.

    Every connected ``k``-set contains a connected ``(k-1)``-set (drop a leaf of
    a spanning tree), so growing by one neighbor at a time reaches all of them.
    """
    if k == 1:
        return np.arange(n, dtype=np.int64)[:, None]
    rows = _canonical(np.stack([i, j], axis=1).astype(np.int64))
    if k == 2 or rows.shape[0] == 0:
        return rows if k == 2 else np.zeros((0, k), np.int64)
    indptr, indices = adjacency(n, i, j)
    for size in range(2, k):
        grown = []
        for pivot in range(size):
            rep, cand = _expand(rows, indptr, indices, pivot)
            fresh = np.all(rows[rep] != cand[:, None], axis=1)
            rep, cand = rep[fresh], cand[fresh]
            grown.append(np.concatenate([rows[rep], cand[:, None]], axis=1))
        rows = _canonical(np.concatenate(grown))
        if rows.shape[0] == 0:
            return np.zeros((0, k), np.int64)
    return rows


def all_subsets(n: int, k: int) -> np.ndarray:
    if k > n:
        return np.zeros((0, k), np.int64)
    count = math.comb(n, k)
    return np.fromiter(itertools.chain.from_iterable(itertools.combinations(range(n), k)), np.int64, count * k).reshape(
        count, k
    )
