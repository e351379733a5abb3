"""Independent reference implementations used as test oracles."""

from collections import deque

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components


def flood_components(mask: np.ndarray) -> int:
    """Reference 8-connected component count by breadth-first flood fill."""
    seen = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    n = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                n += 1
                todo = deque([(y, x)])
                seen[y, x] = True
                while todo:
                    cy, cx = todo.popleft()
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            ny, nx = cy + dy, cx + dx
                            if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                                seen[ny, nx] = True
                                todo.append((ny, nx))
    return n


def reference_dbscan(points, eps, min_pts):
    """DBSCAN straight from the pairwise-distance definition.

    Core points are those with at least ``min_pts`` points (self included)
    within ``eps``. Clusters are the connected components of the core-core
    eps graph. A border point joins the cluster with the smallest lowest-core
    index among its core neighbours; clusters are numbered in order of their
    lowest core index. Everything else is noise (-1).
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            d[i, j] = np.sqrt(np.sum((x[i] - x[j]) ** 2))
    near = d <= eps
    core = near.sum(axis=1) >= min_pts
    idx = np.flatnonzero(core)
    labels = np.full(n, -1, dtype=np.int64)
    if len(idx) == 0:
        return labels
    _, comp = connected_components(csr_matrix(near[np.ix_(idx, idx)]), directed=False)
    first = {}
    for i, c in zip(idx, comp):
        first.setdefault(c, i)
    order = {c: k for k, c in enumerate(sorted(first, key=first.get))}
    for i, c in zip(idx, comp):
        labels[i] = order[c]
    for i in np.flatnonzero(~core):
        hits = [labels[j] for j in idx if near[i, j]]
        if hits:
            labels[i] = min(hits)
    return labels


def partition(labels):
    """Labels as a set of frozensets of indices, noise kept as its own group."""
    groups = {}
    for i, lab in enumerate(np.asarray(labels).tolist()):
        groups.setdefault(lab if lab >= 0 else ("noise",), set()).add(i)
    return {(k == ("noise",), frozenset(v)) for k, v in groups.items()}
