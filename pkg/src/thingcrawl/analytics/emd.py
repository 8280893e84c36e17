"""Exact Earth Mover's Distance between grid density matrices.

The optimal transport problem is solved with the transportation simplex
(least-cost start, MODI potentials, stepping-stone pivots). Grids are
capped at 32x32 cells, which keeps the dense reduced-cost matrix small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from ..errors import DimensionMismatch, EmptyDistribution, GridTooLarge
from .density import DensityMatrix

__all__ = ["DriftScore", "emd", "emd_weights", "ground_distance", "transport_simplex", "gap_score", "MAX_CELLS_PER_SIDE"]

MAX_CELLS_PER_SIDE = 32


@dataclass(frozen=True)
class DriftScore:
    value: float
    from_timestamp: datetime | None = None
    to_timestamp: datetime | None = None

    def to_json(self) -> dict:
        from ..geo import format_timestamp

        return {
            "value": self.value,
            "from_timestamp": format_timestamp(self.from_timestamp) if self.from_timestamp else None,
            "to_timestamp": format_timestamp(self.to_timestamp) if self.to_timestamp else None,
        }


def ground_distance(rows: int, cols: int) -> np.ndarray:
    """Cell-center distances in index space, scaled so the grid diagonal is 1."""
    r, c = np.divmod(np.arange(rows * cols), cols)
    d = np.hypot(r[:, None] - r[None, :], c[:, None] - c[None, :])
    diag = math.hypot(rows - 1, cols - 1)
    return d / diag if diag > 0 else d


def _least_cost_start(a: np.ndarray, b: np.ndarray, c: np.ndarray):
    """Greedy least-cost allocation, padded with zero cells to a spanning tree."""
    m, n = len(a), len(b)
    s, d = a.copy(), b.copy()
    order = np.argsort(c, axis=None, kind="stable")
    flow: dict[tuple[int, int], float] = {}
    parent = list(range(m + n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    row_open = np.ones(m, dtype=bool)
    col_open = np.ones(n, dtype=bool)
    open_rows, open_cols = m, n
    for k in order:
        i, j = divmod(int(k), n)
        if not (row_open[i] and col_open[j]):
            continue
        x = min(s[i], d[j])
        flow[(i, j)] = x
        parent[find(i)] = find(m + j)
        s[i] -= x
        d[j] -= x
        # close exactly one line per allocation unless it is the very last one
        if (s[i] <= d[j] and open_rows > 1) or open_cols == 1:
            row_open[i] = False
            open_rows -= 1
            d[j] += s[i]
            s[i] = 0.0
        else:
            col_open[j] = False
            open_cols -= 1
            s[i] += d[j]
            d[j] = 0.0
        if open_rows == 0 or open_cols == 0:
            break
    if len(flow) < m + n - 1:
        for k in order:
            i, j = divmod(int(k), n)
            if (i, j) in flow:
                continue
            ri, rj = find(i), find(m + j)
            if ri != rj:
                parent[ri] = rj
                flow[(i, j)] = 0.0
                if len(flow) == m + n - 1:
                    break
    return flow


def transport_simplex(a, b, cost, tol: float = 1e-13, max_iter: int | None = None):
    """Minimise ``sum(flow * cost)`` subject to row sums ``a`` and column sums ``b``.

    ``a`` and ``b`` must be nonnegative with equal totals. Returns
    ``(objective, flow_matrix)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    full = np.zeros((len(a), len(b)))
    if rows.size == 0 or cols.size == 0:
        return 0.0, full
    sa, sb = a[rows], b[cols]
    sb = sb * (sa.sum() / sb.sum())
    c = cost[np.ix_(rows, cols)]
    m, n = len(sa), len(sb)
    clist = c.tolist()

    flow = _least_cost_start(sa, sb, c)
    # basis tree over nodes 0..m-1 (rows) and m..m+n-1 (columns)
    adj: list[set[int]] = [set() for _ in range(m + n)]
    for i, j in flow:
        adj[i].add(m + j)
        adj[m + j].add(i)

    max_iter = max_iter or 50 * (m + n) * max(m, n) + 1000
    degenerate_run = 0
    block = max(1, -(-m // 8)) if m * n > 4096 else m
    n_blocks = -(-m // block)
    next_block = 0
    pot = [0.0] * (m + n)
    parent = [-1] * (m + n)
    depth = [0] * (m + n)
    for _ in range(max_iter):
        # potentials u (rows) and v (cols) with u_i + v_j = c_ij on the tree, rooted at row 0
        seen = [False] * (m + n)
        seen[0] = True
        pot[0] = 0.0
        parent[0] = -1
        depth[0] = 0
        stack = [0]
        while stack:
            x = stack.pop()
            px, dx = pot[x], depth[x] + 1
            for y in adj[x]:
                if not seen[y]:
                    seen[y] = True
                    parent[y] = x
                    depth[y] = dx
                    pot[y] = (clist[x][y - m] if x < m else clist[y][x - m]) - px
                    stack.append(y)
        u = np.array(pot[:m])
        v = np.array(pot[m:])
        if degenerate_run > m + n:
            # Bland's rule: first improving cell in index order (anti-cycling)
            reduced = c - u[:, None] - v[None, :]
            candidates = np.flatnonzero(reduced.ravel() < -tol)
            if candidates.size == 0:
                break
            ie, je = divmod(int(candidates[0]), n)
        else:
            # block pricing: take the best cell of the first row block that improves
            entering = None
            for step in range(n_blocks):
                blk = (next_block + step) % n_blocks
                lo, hi = blk * block, min(m, (blk + 1) * block)
                red = c[lo:hi] - u[lo:hi, None] - v[None, :]
                k = int(np.argmin(red))
                r, q = divmod(k, n)
                if red[r, q] < -tol:
                    entering = (lo + r, q)
                    next_block = (blk + 1) % n_blocks
                    break
            if entering is None:
                break
            ie, je = entering
        # tree path row ie -> column je, via the lowest common ancestor
        x, y = ie, m + je
        left: list[int] = [x]
        right: list[int] = [y]
        while depth[x] > depth[y]:
            x = parent[x]
            left.append(x)
        while depth[y] > depth[x]:
            y = parent[y]
            right.append(y)
        while x != y:
            x = parent[x]
            y = parent[y]
            left.append(x)
            right.append(y)
        nodes = left + right[-2::-1]
        path = [(p, q - m) if p < m else (q, p - m) for p, q in zip(nodes, nodes[1:])]
        minus = path[0::2]
        plus = path[1::2]
        leave = min(minus, key=lambda cell: (flow[cell], cell))
        theta = flow[leave]
        degenerate_run = degenerate_run + 1 if theta == 0 else 0
        for cell in minus:
            flow[cell] -= theta
        for cell in plus:
            flow[cell] += theta
        flow[(ie, je)] = theta
        del flow[leave]
        li, lj = leave
        adj[li].discard(m + lj)
        adj[m + lj].discard(li)
        adj[ie].add(m + je)
        adj[m + je].add(ie)
    else:  # pragma: no cover - guarded by the iteration budget
        raise RuntimeError("transportation simplex did not converge")

    objective = math.fsum(max(x, 0.0) * clist[i][j] for (i, j), x in flow.items())
    for (i, j), x in flow.items():
        full[rows[i], cols[j]] = max(x, 0.0)
    return objective, full


def emd_weights(a, b) -> float:
    """EMD between two nonnegative weight grids of equal shape."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionMismatch(f"shapes {a.shape} and {b.shape} differ")
    rows, cols = a.shape
    if rows > MAX_CELLS_PER_SIDE or cols > MAX_CELLS_PER_SIDE:
        raise GridTooLarge(f"{rows}x{cols} exceeds {MAX_CELLS_PER_SIDE}x{MAX_CELLS_PER_SIDE}")
    ta, tb = a.sum(), b.sum()
    if not (ta > 0 and tb > 0):
        raise EmptyDistribution("both distributions need positive total mass")
    pa = (a / ta).ravel()
    pb = (b / tb).ravel()
    if np.array_equal(pa, pb):
        return 0.0
    # solve in a canonical orientation so emd(a, b) == emd(b, a) bit for bit
    if pa.tobytes() > pb.tobytes():
        pa, pb = pb, pa
    value, _ = transport_simplex(pa, pb, ground_distance(rows, cols))
    return min(1.0, max(0.0, value))


def emd(a: DensityMatrix, b: DensityMatrix) -> DriftScore:
    """Normalized EMD between two density matrices over the same grid."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"grid {a.shape} vs {b.shape}")
    if a.region != b.region:
        raise DimensionMismatch("density matrices cover different regions")
    return DriftScore(emd_weights(a.counts, b.counts), a.timestamp, b.timestamp)


def gap_score(things_density: DensityMatrix, query_density: DensityMatrix) -> DriftScore:
    """Spatial gap between where things are and where users search."""
    return emd(things_density, query_density)
