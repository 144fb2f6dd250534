"""Independent ground-truth engines for the acceptance tests.

Nothing here shares code with the solvers it checks: the binomial tree, the
PSOR variational-inequality grid and the no-memo strategy-tree enumeration
are all written against their own recursions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import BudgetError, NumericError


@dataclass(frozen=True)
class MarkovianSpec:
    """d = 1 instance whose data depend on the path only through the value."""

    sigma: float
    rate: float
    barrier: Callable      # (t, x) -> array
    terminal: Callable     # (x) -> array
    T: float = 1.0

    @staticmethod
    def from_problem(data) -> "MarkovianSpec":
        if not data.markovian or data.d != 1:
            raise NumericError("oracle specs need markovian d = 1 data")
        r = getattr(data.driver, "r", 0.0)
        return MarkovianSpec(
            sigma=data.sigma_scalar(0),
            rate=float(r),
            barrier=data.barrier.state,
            terminal=data.terminal.state,
            T=data.T,
        )


def binomial_american(spec: MarkovianSpec, n_steps: int) -> float:
    """Backward max(exercise, discounted continuation) on a binomial tree."""
    dt = spec.T / n_steps
    step = spec.sigma * np.sqrt(dt)
    disc = np.exp(-spec.rate * dt)
    x = step * (2.0 * np.arange(n_steps + 1) - n_steps)
    v = np.asarray(spec.terminal(x), dtype=float)
    for i in range(n_steps - 1, -1, -1):
        x = step * (2.0 * np.arange(i + 1) - i)
        cont = disc * 0.5 * (v[1:] + v[:-1])
        v = np.maximum(np.asarray(spec.barrier(i * dt, x), dtype=float), cont)
    return float(v[0])


class FdSolution(NamedTuple):
    x_grid: np.ndarray
    root_value: float
    values: np.ndarray          # (n_t + 1, n_x) backward-in-time rows
    complementarity: float      # worst |min(V - obstacle, residual)| at t = 0


def _psor(diag, off, rhs, obstacle, v0, omega=1.5, tol=1e-8, max_iter=10_000):
    """Projected SOR for the tridiagonal LCP min(V - obstacle, M V - rhs) = 0."""
    v = np.maximum(v0.copy(), obstacle)
    n = v.size
    idx_r = np.arange(1, n - 1, 2)
    idx_b = np.arange(2, n - 1, 2)
    for _ in range(max_iter):
        delta = 0.0
        for idx in (idx_r, idx_b):
            res = rhs[idx] - (diag * v[idx] + off * (v[idx - 1] + v[idx + 1]))
            new = np.maximum(obstacle[idx], v[idx] + omega * res / diag)
            delta = max(delta, float(np.max(np.abs(new - v[idx]))) if idx.size else 0.0)
            v[idx] = new
        if delta <= tol:
            return v
    raise NumericError("PSOR failed to converge within the iteration budget")


def fd_variational_inequality(
    spec: MarkovianSpec,
    n_x: int = 401,
    n_t: int = 400,
    x_max: float = 4.0,
) -> FdSolution:
    """Implicit-Euler PSOR solve of the obstacle problem on [-x_max, x_max]."""
    x = np.linspace(-x_max, x_max, n_x)
    dx = x[1] - x[0]
    dt = spec.T / n_t
    nu = 0.5 * spec.sigma**2 * dt / dx**2
    diag = 1.0 + 2.0 * nu + spec.rate * dt
    off = -nu
    v = np.asarray(spec.terminal(x), dtype=float)
    rows = np.empty((n_t + 1, n_x))
    rows[n_t] = v
    worst_comp = 0.0
    for i in range(n_t - 1, -1, -1):
        t = i * dt
        ob = np.asarray(spec.barrier(t, x), dtype=float)
        rhs = v.copy()
        # Dirichlet edges pinned to the obstacle (deep in/out of the money)
        vnew = _psor(diag, off, rhs, ob, v)
        vnew[0] = max(ob[0], v[0])
        vnew[-1] = max(ob[-1], v[-1])
        v = vnew
        rows[i] = v
        if i == 0:
            res = diag * v[1:-1] + off * (v[:-2] + v[2:]) - rhs[1:-1]
            worst_comp = float(np.max(np.abs(np.minimum(v[1:-1] - ob[1:-1], res))))
    j0 = n_x // 2
    return FdSolution(x, float(v[j0]), rows, worst_comp)


def brute_force_snell(lattice, X, budget: int = 3_000_000) -> float:
    """Exhaustive strategy-tree walk: max over stop/continue and action at
    every node, expanded recursively with no memoization."""
    n = lattice.n_steps
    acts = list(lattice.actions)
    dt, dx = lattice.dt, lattice.dx
    cost = (3 * max(len(acts), 1)) ** n
    if cost > budget:
        raise BudgetError(f"enumeration cost {cost} exceeds budget {budget}")
    if callable(X):
        xs = lattice.x_grid
        arr = np.stack([np.asarray(X(i, xs), dtype=float) for i in range(n + 1)])
    else:
        arr = np.asarray(X, dtype=float)

    # local stencil recomputation, independent of the lattice implementation
    probs = []
    for a, b in acts:
        m1 = a * dt / dx
        m2 = (b * b * dt + a * a * dt * dt) / (dx * dx)
        pu = 0.5 * (m2 + m1)
        pd = 0.5 * (m2 - m1)
        probs.append((pd, 1.0 - pu - pd, pu))

    center = lattice.center

    def value(i: int, j: int) -> float:
        here = arr[i, j]
        if i == n:
            return here
        best = -np.inf
        for (pd, p0, pu) in probs:
            cont = pd * value(i + 1, j - 1) + p0 * value(i + 1, j) + pu * value(i + 1, j + 1)
            if cont > best:
                best = cont
        return max(here, best)

    return float(value(0, center))
