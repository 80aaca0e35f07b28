"""Exact discrete optimal transport via the transportation simplex (MODI method)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from ..costs import CostSpec

MAX_SUPPORT = 512


class InfeasibleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DiscreteDist:
    """Finitely supported distribution: ``points`` (n, d) with ``masses`` summing to one."""

    points: np.ndarray
    masses: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        m = (np.full(len(pts), 1.0 / len(pts)) if self.masses is None
             else np.asarray(self.masses, dtype=np.float64).ravel())
        if m.size != len(pts) or np.any(m < 0):
            raise ValueError("need one nonnegative mass per point")
        if abs(m.sum() - 1.0) > 1e-12:
            raise ValueError(f"masses sum to {m.sum()!r}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "masses", m)

    def __len__(self):
        return len(self.points)

    @property
    def mean(self) -> np.ndarray:
        return self.masses @ self.points

    @property
    def variance(self) -> float:
        d = self.points - self.mean
        return float(self.masses @ np.sum(d * d, axis=1))


def _northwest(a, b):
    n, m = len(a), len(b)
    a, b = a.copy(), b.copy()
    flow = np.zeros((n, m))
    basis = []
    i = j = 0
    while i < n and j < m:
        q = min(a[i], b[j])
        flow[i, j] = q
        basis.append((i, j))
        a[i] -= q
        b[j] -= q
        if i == n - 1 and j == m - 1:
            break
        # move down unless the row still has supply; degenerate ties advance the row only
        if (a[i] <= b[j] and i < n - 1) or j == m - 1:
            i += 1
        else:
            j += 1
    return flow, basis


class _BasisTree:
    """Spanning tree of basic cells; rows are nodes ``0..n-1``, columns ``n..n+m-1``."""

    def __init__(self, basis, n, m):
        self.n, self.m = n, m
        ij = np.array(basis, dtype=np.int64).reshape(-1, 2)
        self.rows, self.cols = ij[:, 0].copy(), ij[:, 1].copy()
        self.slot = {(int(i), int(j)): k for k, (i, j) in enumerate(ij)}

    def replace(self, leaving, entering):
        k = self.slot.pop(leaving)
        self.rows[k], self.cols[k] = entering
        self.slot[entering] = k

    def solve(self, C):
        """Potentials with ``u_i + v_j = C_ij`` on basic cells and ``u_0 = 0``, plus the BFS tree."""
        n, size = self.n, self.n + self.m
        graph = csr_matrix((np.ones(len(self.rows)), (self.rows, self.cols + n)), shape=(size, size))
        order, pred = breadth_first_order(graph, 0, directed=False, return_predecessors=True)
        if len(order) != size:
            raise RuntimeError("basis is not a spanning tree")
        nodes = np.arange(size)
        anc = np.where(pred < 0, 0, pred)
        is_row = nodes < n
        r = np.where(is_row, nodes, anc)
        c = np.where(is_row, anc, nodes) - n
        child = nodes != 0
        acc = np.zeros(size)
        sgn = np.zeros(size)
        depth = child.astype(np.int64)
        acc[child] = C[r[child], c[child]]
        sgn[child] = -1.0
        # pointer jumping: pot[b] = acc[b] + sgn[b] * pot[anc[b]]
        while np.any(anc != 0):
            acc = acc + sgn * acc[anc]
            sgn = sgn * sgn[anc]
            depth = depth + depth[anc]
            anc = anc[anc]
        self.pred, self.depth = pred, depth
        return acc[:n], acc[n:]

    def path(self, i0, j0):
        """Basic cells on the tree path from row ``i0`` to column ``j0``."""
        n, pred, depth = self.n, self.pred, self.depth

        def edge(a, b):
            return (a, b - n) if a < n else (b, a - n)

        up, down = [], []
        a, b = i0, n + j0
        while a != b:
            if depth[a] >= depth[b]:
                p = int(pred[a])
                up.append(edge(a, p))
                a = p
            else:
                p = int(pred[b])
                down.append(edge(b, p))
                b = p
        return up + down[::-1]


def transport_simplex(a, b, C, tol: float = 1e-12, max_iter: int = 100_000):
    """Solve ``min <C, P>`` over plans with row sums ``a`` and column sums ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    n, m = len(a), len(b)
    if C.shape != (n, m):
        raise ValueError("cost matrix shape does not match marginals")
    if np.any(a < 0) or np.any(b < 0) or abs(a.sum() - b.sum()) > 1e-10:
        raise InfeasibleError("supply and demand must be nonnegative with equal totals")
    flow, basis = _northwest(a, b)
    tree = _BasisTree(basis, n, m)
    scale = max(1.0, float(np.abs(C).max()))
    reduced = np.empty_like(C)
    for _ in range(max_iter):
        u, v = tree.solve(C)
        np.subtract(C, u[:, None], out=reduced)
        reduced -= v[None, :]
        k = int(np.argmin(reduced))
        i0, j0 = divmod(k, m)
        if reduced[i0, j0] >= -tol * scale:
            break
        path = tree.path(i0, j0)
        minus, plus = path[0::2], path[1::2]
        k_out = min(range(len(minus)), key=lambda k: (flow[minus[k]], k))
        theta = flow[minus[k_out]]
        for cell in minus:
            flow[cell] -= theta
        for cell in plus:
            flow[cell] += theta
        flow[i0, j0] += theta
        leaving = minus[k_out]
        flow[leaving] = 0.0
        tree.replace(leaving, (i0, j0))
    else:
        raise RuntimeError("transportation simplex did not converge")
    flow = np.clip(flow, 0.0, None)
    return float(np.sum(flow * C)), flow


def discrete_ot_lp(src: DiscreteDist, dst: DiscreteDist, c: CostSpec | None = None):
    """Exact optimal transport cost and plan between two discrete distributions."""
    c = CostSpec() if c is None else c
    if len(src) > MAX_SUPPORT or len(dst) > MAX_SUPPORT:
        raise ValueError(f"supports limited to {MAX_SUPPORT} points")
    C = c.pairwise(src.points, dst.points)
    return transport_simplex(src.masses, dst.masses, C)


def enumerate_permutation_plans(C) -> tuple:
    """Brute-force minimum over permutation plans of a square uniform problem."""
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise ValueError("permutation enumeration needs a square cost matrix")
    best, best_perm = np.inf, None
    for perm in itertools.permutations(range(n)):
        val = sum(C[i, perm[i]] for i in range(n)) / n
        if val < best:
            best, best_perm = val, perm
    plan = np.zeros((n, n))
    plan[np.arange(n), best_perm] = 1.0 / n
    return float(best), plan
