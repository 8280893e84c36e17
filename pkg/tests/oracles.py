"""Independent reference implementations the library is checked against."""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linprog


def centers_distance(rows: int, cols: int) -> np.ndarray:
    # built from explicit cell centers rather than reusing the library helper
    pts = [(r + 0.5, c + 0.5) for r in range(rows) for c in range(cols)]
    diag = math.hypot(rows - 1, cols - 1) or 1.0
    return np.array([[math.dist(p, q) / diag for q in pts] for p in pts])


def lp_emd(a, b) -> float:
    """Brute-force transportation LP on normalized grids via a generic LP solver."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    rows, cols = a.shape
    p = a.ravel() / a.sum()
    q = b.ravel() / b.sum()
    n = p.size
    cost = centers_distance(rows, cols).ravel()
    a_eq = np.zeros((2 * n, n * n))
    for i in range(n):
        a_eq[i, i * n:(i + 1) * n] = 1.0
        a_eq[n + i, i::n] = 1.0
    res = linprog(cost, A_eq=a_eq, b_eq=np.concatenate([p, q]), bounds=(0, None), method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    assert res.status == 0, res.message
    return float(res.fun)


def random_grid(rng: np.random.Generator, rows: int, cols: int, sparsity: float = 0.3) -> np.ndarray:
    g = rng.integers(0, 20, (rows, cols)).astype(float)
    g[rng.random((rows, cols)) < sparsity] = 0
    if g.sum() == 0:
        g[rng.integers(rows), rng.integers(cols)] = 1
    return g
