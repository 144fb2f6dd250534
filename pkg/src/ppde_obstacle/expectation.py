"""Lattice discretization of the bounded-characteristics measure family, the
sublinear expectations, the nonlinear Snell envelope with its optimal stopping
rule, and the test-functional membership harness (d = 1).

An action is a drift/volatility pair (a, b) with |a| <= L and b^2/2 <= L.
Each action induces a trinomial stencil matching the increment mean a dt and
variance b^2 dt exactly; stencil probabilities must be nonnegative (CFL).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ParameterError
from .model import TestFunctional


def stencil_probabilities(a: float, b: float, dt: float, dx: float):
    """(p_down, p_stay, p_up) for one action; ParameterError if CFL fails."""
    m1 = a * dt / dx
    m2 = (b * b * dt + a * a * dt * dt) / (dx * dx)
    pu = 0.5 * (m2 + m1)
    pd = 0.5 * (m2 - m1)
    p0 = 1.0 - pu - pd
    if pu < -1e-12 or pd < -1e-12 or p0 < -1e-12:
        raise ParameterError(
            f"action (a={a}, b={b}) violates the lattice CFL at dt={dt}, dx={dx}"
        )
    return (max(pd, 0.0), max(p0, 0.0), max(pu, 0.0))


@dataclass(frozen=True)
class Lattice:
    """Recombining value grid with per-step action choices."""

    T: float
    n_steps: int
    dx: float
    actions: tuple          # ((a, b), ...)
    L: float

    def __post_init__(self):
        if self.n_steps < 1 or self.dx <= 0 or self.T <= 0:
            raise DomainError("lattice needs n_steps >= 1, dx > 0, T > 0")
        acts = tuple((float(a), float(b)) for a, b in self.actions)
        if not acts:
            raise DomainError("need at least one action")
        for a, b in acts:
            if abs(a) > self.L + 1e-12 or 0.5 * b * b > self.L + 1e-12:
                raise DomainError(f"action (a={a}, b={b}) outside the L={self.L} bounds")
        object.__setattr__(self, "actions", acts)
        stencils = tuple(stencil_probabilities(a, b, self.dt, self.dx) for a, b in acts)
        object.__setattr__(self, "_stencils", stencils)

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def stencils(self) -> tuple:
        return self._stencils

    @property
    def x_grid(self) -> np.ndarray:
        return self.dx * np.arange(-self.n_steps, self.n_steps + 1)

    @property
    def center(self) -> int:
        return self.n_steps

    @staticmethod
    def build(L: float, T: float, n_steps: int, dx: float | None = None,
              actions=None, b_low: float | None = None) -> "Lattice":
        """Default action grid: drift in {-L, 0, L}, volatility in {b_low, sqrt(2L)}."""
        b_hi = float(np.sqrt(2.0 * L))
        if actions is None:
            b_lo = b_hi / 2.0 if b_low is None else float(b_low)
            bs = sorted({b_lo, b_hi})
            actions = [(a, b) for b in bs for a in (-L, 0.0, L)]
        if dx is None:
            dt = T / n_steps
            # p0 >= 0 needs dx >= lo; drifted actions need dx <= hi
            lo = float(np.sqrt(max(b * b * dt + a * a * dt * dt for a, b in actions)))
            his = [(b * b * dt + a * a * dt * dt) / (abs(a) * dt) for a, b in actions if a != 0.0]
            hi = min(his) if his else np.inf
            if lo > hi * (1.0 + 1e-12):
                raise ParameterError("no feasible dx for this action grid; refine n_steps")
            dx = float(min(1.2 * lo, np.sqrt(lo * hi))) if np.isfinite(hi) else 1.2 * lo
            dx = max(dx, lo)
        return Lattice(T=T, n_steps=n_steps, dx=dx, actions=tuple(actions), L=L)


def _action_continuations(lattice: Lattice, v: np.ndarray) -> np.ndarray:
    """Stencil expectations of next-step values, one row per action."""
    out = np.empty((len(lattice.actions), v.size))
    for ai, (pd, p0, pu) in enumerate(lattice.stencils):
        c = out[ai]
        c[1:-1] = pd * v[:-2] + p0 * v[1:-1] + pu * v[2:]
        c[0] = pd * v[0] + p0 * v[0] + pu * v[1]     # edge rows are unreachable
        c[-1] = pd * v[-2] + p0 * v[-1] + pu * v[-1]
    return out


def _payoff_array(lattice: Lattice, xi) -> np.ndarray:
    x = lattice.x_grid
    arr = xi(x) if callable(xi) else np.asarray(xi, dtype=float)
    if arr.shape != x.shape:
        raise DomainError("payoff must evaluate on the terminal state grid")
    return np.asarray(arr, dtype=float)


def upper_expectation(lattice: Lattice, xi) -> float:
    """Backward DP value of sup over actions: the upper expectation at the root."""
    v = _payoff_array(lattice, xi)
    for _ in range(lattice.n_steps):
        v = _action_continuations(lattice, v).max(axis=0)
    return float(v[lattice.center])


def lower_expectation(lattice: Lattice, xi) -> float:
    """Duality: lower = -upper of the negated payoff, exactly."""
    if callable(xi):
        return -upper_expectation(lattice, lambda x: -np.asarray(xi(x), dtype=float))
    return -upper_expectation(lattice, -np.asarray(xi, dtype=float))


class SnellResult(NamedTuple):
    value: float
    envelope: np.ndarray   # (n_steps + 1, n_states)
    reward: np.ndarray     # the adapted process actually used
    contact: np.ndarray    # envelope meets reward (tau* = first contact)


def _process_array(lattice: Lattice, X) -> np.ndarray:
    n, xs = lattice.n_steps, lattice.x_grid
    if callable(X):
        arr = np.stack([np.asarray(X(i, xs), dtype=float) for i in range(n + 1)])
    else:
        arr = np.asarray(X, dtype=float)
    if arr.shape != (n + 1, xs.size):
        raise DomainError(f"process must have shape {(n + 1, xs.size)}")
    return arr


def snell_upper(lattice: Lattice, X, stop_cap: float | None = None) -> SnellResult:
    """Nonlinear Snell envelope Y_i = max(X_i, sup_a E_a[Y_{i+1}]).

    stop_cap forces stopping at the first grid time >= stop_cap (the process
    is frozen there).  The first-contact field realizes the optimal rule.
    """
    arr = _process_array(lattice, X)
    n = lattice.n_steps
    cap_idx = n if stop_cap is None else min(int(round(stop_cap / lattice.dt)), n)
    env = np.empty_like(arr)
    env[cap_idx:] = arr[cap_idx:]
    for i in range(cap_idx - 1, -1, -1):
        cont = _action_continuations(lattice, env[i + 1]).max(axis=0)
        env[i] = np.maximum(arr[i], cont)
    contact = env <= arr + 1e-12
    contact[cap_idx:] = True
    return SnellResult(float(env[0, lattice.center]), env, arr, contact)


def positive_hitting_check(lattice: Lattice, delta: float) -> float:
    """Lower expectation of the level-delta hitting time capped at delta ^ T.

    The DP minimizes over actions; absorbed states carry their hit time.
    """
    if delta <= 0:
        raise DomainError("delta must be positive")
    n, xs, dt = lattice.n_steps, lattice.x_grid, lattice.dt
    cap = min(delta, lattice.T)
    cap_idx = min(int(round(cap / dt)), n)
    cap_idx = max(cap_idx, 1)
    absorbed = np.abs(xs) >= delta - 1e-12
    v = np.full(xs.size, cap)
    v[absorbed] = cap  # at the cap row every alive state stops at the cap
    for i in range(cap_idx - 1, -1, -1):
        cont = _action_continuations(lattice, v).min(axis=0)
        v = np.where(absorbed, i * dt, cont)
    return float(v[lattice.center])


def test_membership(
    lattice: Lattice,
    u_values,
    phi: TestFunctional,
    t: float,
    delta: float,
    tol: float = 1e-9,
) -> dict:
    """Membership margins of a test functional against a lattice process.

    The difference process D = phi - u is stopped at the first exit from the
    level-delta ball (capped at t + delta); the lower margin is the infimum
    over all lattice stopping rules of the lower expectation of D, the upper
    margin the supremum over rules of the upper expectation.  Nonnegative
    lower margin certifies the subsolution-side test class at lattice
    resolution; nonpositive upper margin the supersolution side.
    """
    arr_u = _process_array(lattice, u_values)
    xs, dt = lattice.x_grid, lattice.dt
    times = t + dt * np.arange(lattice.n_steps + 1)
    arr_phi = np.stack([phi.value(times[i], xs) for i in range(lattice.n_steps + 1)])
    D = arr_phi - arr_u
    if abs(D[0, lattice.center]) > tol:
        raise DomainError("phi and u must be aligned at the base point (shift phi)")

    cap_idx = min(int(round(min(delta, lattice.T) / dt)), lattice.n_steps)
    cap_idx = max(cap_idx, 1)
    hit = np.abs(xs) >= delta - 1e-12

    def extremal(sign: float) -> float:
        # sup over stopping rules of the upper expectation of sign * D
        v = sign * D[cap_idx]
        for i in range(cap_idx - 1, -1, -1):
            cont = _action_continuations(lattice, v).max(axis=0)
            v = np.where(hit, sign * D[i], np.maximum(sign * D[i], cont))
        return float(v[lattice.center])

    margin_lower = -extremal(-1.0)   # inf over rules of the lower expectation
    margin_upper = extremal(+1.0)    # sup over rules of the upper expectation
    return {
        "margin_lower": margin_lower,
        "margin_upper": margin_upper,
        "member_lower": margin_lower >= -tol,
        "member_upper": margin_upper <= tol,
    }


def envelope_to_csv(result: SnellResult, lattice: Lattice, fname) -> None:
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "state", "x", "envelope", "reward", "contact"])
        xs = lattice.x_grid
        for i in range(result.envelope.shape[0]):
            for j in range(result.envelope.shape[1]):
                if abs(j - lattice.center) > i:
                    continue  # unreachable
                w.writerow(
                    [i, j, f"{xs[j]:.12g}", f"{result.envelope[i, j]:.12g}",
                     f"{result.reward[i, j]:.12g}", int(result.contact[i, j])]
                )
