"""Independent oracles shared by the test modules."""

from __future__ import annotations

import numpy as np

from dagmtl import numcore as nc


def numeric_grad(f, var: nc.Variable, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``var``."""
    grad = np.zeros_like(var.value)
    flat = var.value.reshape(-1)
    g = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        up = f().item()
        flat[k] = old - h
        down = f().item()
        flat[k] = old
        g[k] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grads(f, variables, h: float = 1e-5) -> float:
    """Worst relative error between backprop and finite differences."""
    for v in variables:
        v.zero_grad()
    nc.backward(f())
    analytic = [v.grad.copy() for v in variables]
    return max(rel_error(a, numeric_grad(f, v, h)) for a, v in zip(analytic, variables))


# ------------------------------------------------------------------ Alg. 1

def naive_flow_reduce(gamma, a, b, target=None, n_total=None):
    """Straight-line rendering of the flow-based reduction with explicit
    loops, kept free of any code from the package.

    Conventions (shared with the package, documented there): inclusive
    anchor window, ties broken by the first (i, j) in row-major order,
    zero-count terms of the score contribute 0, and a removal is accepted
    while the anchor read-in, the anchor read-out and a DAG path between
    the anchors survive.
    """
    gamma = np.array(gamma, dtype=float)
    n = len(a)
    if n_total is None:
        n_total = sum(1 for i in range(n) for j in range(n) if gamma[i][j] != 0)
    n_alpha = max(range(n), key=lambda s: (a[s], -s))
    arg_b = max(range(n), key=lambda s: (b[s], -s))
    n_beta = min(max(n_alpha + 1, arg_b), n - 1)
    for i in range(n):
        for j in range(n):
            if i < n_alpha or j > n_beta:
                gamma[i][j] = 0.0
    size = n + 2
    psi = [[0.0] * size for _ in range(size)]
    for i in range(n):
        for j in range(n):
            psi[i + 1][j + 1] = gamma[i][j]
    for s in range(n_alpha, n_beta + 1):
        psi[0][s + 1] = float(a[s])
        psi[s + 1][n + 1] = float(b[s])
    first, last = n_alpha + 1, n_beta + 1

    def connected(p):
        if p[0][first] <= 0 or p[last][n + 1] <= 0:
            return False
        seen, todo = {first}, [first]
        while todo:
            v = todo.pop()
            if v == last:
                return True
            for w in range(1, n + 1):
                if p[v][w] > 0 and w not in seen:
                    seen.add(w)
                    todo.append(w)
        return False

    def hidden_edges(p):
        return sum(1 for i in range(1, n + 1) for j in range(1, n + 1) if p[i][j] > 0)

    removed = []
    snapshot = [row[:] for row in psi]
    while True:
        if target is not None and hidden_edges(psi) / n_total <= target:
            break
        best, best_ij = None, None
        for i in range(size):
            for j in range(size):
                if psi[i][j] <= 0:
                    continue
                into_i = sum(psi[k][i] for k in range(size))
                from_i = sum(psi[i][k] for k in range(size))
                from_j = sum(psi[j][k] for k in range(size))
                into_j = sum(psi[k][j] for k in range(size))
                in_i = sum(1 for k in range(size) if psi[k][i] > 0)
                out_j = sum(1 for k in range(size) if psi[j][k] > 0)
                t1 = into_i / from_i / in_i if in_i > 0 and from_i > 0 else 0.0
                t2 = from_j / into_j / out_j if out_j > 0 and into_j > 0 else 0.0
                s = psi[i][j] * (t1 + t2)
                if best is None or s < best:
                    best, best_ij = s, (i, j)
        i, j = best_ij
        psi[i][j] = 0.0
        if connected(psi):
            removed.append((i, j))
            snapshot = [row[:] for row in psi]
        else:
            break
    hat = (np.array(snapshot) > 0).astype(float)
    return removed, hat[0, 1:n + 1], hat[1:n + 1, n + 1], hat[1:n + 1, 1:n + 1]
