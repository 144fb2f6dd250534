"""Backward solvers: discretely reflected BSDE on a recombining tree (d = 1),
least-squares Monte Carlo variant with path-dependent features, the penalized
(unreflected) solver, the value functional, dynamic-programming residuals and
Skorokhod-condition reports.

Discrete reflection is max-with-barrier after the driver step.  The penalty
term is resolved implicitly per step (exact scalar resolvent), so the penalty
strength m does not constrain the grid; the explicit driver still requires
dt L0 <= 1.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DomainError, NumericError, ParameterError
from .model import ProblemData
from .paths import DiscretePath, PathPoint
from .simulate import ControlPolicy, PathBundle, euler_bundle

COND_THRESHOLD = 1e8


class TreeSpec(NamedTuple):
    """Tree solve request: root point, number of steps, policy (None = sup)."""

    base: PathPoint
    n_steps: int
    policy: ControlPolicy | None = None


@dataclass(frozen=True)
class RbsdeSolution:
    """Solver output.

    Tree solutions hold node grids of shape (n_steps + 1, n_nodes) with NaN
    off the reachable cone and K as per-step increments.  LSMC solutions hold
    per-path arrays (n_paths, n_steps + 1), K again as increments.
    """

    y0: float
    kind: str
    times: np.ndarray
    Y: np.ndarray
    Z: np.ndarray
    K: np.ndarray
    barrier: np.ndarray
    meta: dict

    def cumulative_K(self) -> np.ndarray:
        """K as a nondecreasing process, zero at the origin."""
        inc = np.nan_to_num(self.K, nan=0.0)
        axis = 1 if self.kind.endswith("lsmc") else 0
        cum = np.cumsum(inc, axis=axis)
        if axis == 1:
            return np.concatenate([np.zeros((inc.shape[0], 1)), cum[:, :-1]], axis=1)
        return np.concatenate([np.zeros((1, inc.shape[1])), cum[:-1]], axis=0)


def _require_tree_data(data: ProblemData):
    if data.d != 1:
        raise DomainError("tree solvers are d = 1 only")
    if not data.markovian:
        raise DomainError("tree solvers need current-value (markovian) data; use the LSMC solver")


def _tree_geometry(data: ProblemData, base: PathPoint, n_steps: int, dx_mult: float = 1.5):
    dt = (data.T - base.t) / n_steps
    if dt <= 0:
        raise DomainError("base time must be before the horizon")
    if dt * data.L0 > 1.0 + 1e-12:
        raise ParameterError("dt L0 > 1: the explicit driver step needs a finer grid")
    sig = data.sigma_values
    dx = float(sig.max() * np.sqrt(dx_mult * dt))
    probs = [(s * s * dt / (2 * dx * dx)) for s in sig]
    if any(2 * p > 1.0 + 1e-12 for p in probs):
        raise ParameterError("tree CFL violated; increase dx_mult")
    return dt, dx, sig, probs


def _tree_backward(
    data: ProblemData,
    base: PathPoint,
    n_steps: int,
    policy: ControlPolicy | None,
    reflect: bool,
    m: float = 0.0,
    dx_mult: float = 1.5,
    store_full: bool = True,
) -> RbsdeSolution:
    _require_tree_data(data)
    dt, dx, sig, probs = _tree_geometry(data, base, n_steps, dx_mult)
    n = n_steps
    t0 = base.t
    x0 = float(base.value[0])
    width = 2 * n + 1
    offsets = dx * (np.arange(width) - n)
    x_abs = x0 + offsets
    times = t0 + dt * np.arange(n + 1)

    if store_full:
        Y = np.full((n + 1, width), np.nan)
        Z = np.full((n + 1, width), np.nan)
        dK = np.full((n + 1, width), np.nan)
        H = np.full((n + 1, width), np.nan)
        A = np.full((n + 1, width), -1, dtype=np.int64)
    row = np.asarray(data.terminal.state(x_abs), dtype=float)
    if store_full:
        Y[n] = row
        H[n] = data.barrier.state(times[n], x_abs)
        dK[n] = 0.0

    for i in range(n - 1, -1, -1):
        lo, hi = n - i, n + i + 1
        xs = x_abs[lo:hi]
        up, mid, dn = row[lo + 1 : hi + 1], row[lo:hi], row[lo - 1 : hi - 1]
        vals = np.empty((data.n_controls, hi - lo))
        zs = np.empty_like(vals)
        for k in range(data.n_controls):
            p = probs[k]
            cont = p * (up + dn) + (1.0 - 2.0 * p) * mid
            zk = sig[k] * (up - dn) / (2.0 * dx)
            f = data.driver.state(times[i], xs, cont, zk, k)
            vals[k] = cont + dt * np.asarray(f, dtype=float)
            zs[k] = zk
        if policy is None:
            # first index within float-tie range of the max: lowest wins
            best = vals.max(axis=0)
            karg = np.argmax(vals >= best - 1e-15, axis=0)
        else:
            karg = policy.controls_at(i, xs[:, None])
        val = np.take_along_axis(vals, karg[None, :], axis=0)[0]
        zval = np.take_along_axis(zs, karg[None, :], axis=0)[0]
        b = np.asarray(data.barrier.state(times[i], xs), dtype=float)
        if reflect:
            ynew = np.maximum(b, val)
            dk_row = np.maximum(b - val, 0.0)
        else:
            lowered = (val + dt * m * b) / (1.0 + dt * m)
            ynew = np.where(val >= b, val, lowered)
            dk_row = np.zeros_like(val)
        row = row.copy()
        row[lo:hi] = ynew
        if store_full:
            Y[i, lo:hi] = ynew
            Z[i, lo:hi] = zval
            dK[i, lo:hi] = dk_row
            H[i, lo:hi] = b
            A[i, lo:hi] = karg
        if not np.all(np.isfinite(ynew)):
            raise NumericError("tree backward recursion produced non-finite values")

    kind = "tree" if reflect else "penalized-tree"
    meta = {
        "dt": dt,
        "dx": dx,
        "x0": x0,
        "policy": policy.describe() if policy is not None else "sup",
        "m": m,
        "store_full": store_full,
    }
    y0 = float(row[n])
    if store_full:
        meta["controls"] = A
        return RbsdeSolution(y0, kind, times, Y, Z, dK, H, meta)
    empty = np.empty((0, 0))
    return RbsdeSolution(y0, kind, times, empty, empty, empty, empty, meta)


def solve_rbsde_tree(
    data: ProblemData,
    base: PathPoint,
    n_steps: int,
    policy: ControlPolicy | None = None,
    dx_mult: float = 1.5,
    store_full: bool = True,
) -> RbsdeSolution:
    """Reflected backward recursion Y_i = max(h_i, sup_k {E_k[Y_{i+1}] + F dt}).

    store_full=False keeps only the root value (rolling rows), for very fine
    grids where the node arrays would not fit comfortably in memory.
    """
    return _tree_backward(data, base, n_steps, policy, reflect=True, dx_mult=dx_mult, store_full=store_full)


# ---------------------------------------------------------------------------
# least-squares Monte Carlo
# ---------------------------------------------------------------------------

def _features(basis: str, v, run_max, run_min):
    if basis == "quad":
        return [np.ones_like(v), v, v * v]
    if basis == "quad-extrema":
        return [
            np.ones_like(v), v, v * v,
            run_max, run_max * run_max,
            run_min, run_min * run_min,
            v * run_max, v * run_min, run_max * run_min,
        ]
    raise DomainError(f"unknown basis {basis!r}")


def _features_nd(vmat, run_max, run_min):
    """Degree-2 features in the coordinates plus running extrema (d >= 2)."""
    d = vmat.shape[1]
    cols = [vmat[:, j] for j in range(d)]
    for j in range(d):
        for l in range(j, d):
            cols.append(vmat[:, j] * vmat[:, l])
    cols += [run_max, run_min]
    return cols


def _regress(cols, target, fit_mask=None):
    """Least-squares fit with scaled columns; ridge fallback when ill-conditioned.

    fit_mask restricts the rows entering the normal equations; the fit is
    evaluated on every row.
    """
    keep = []
    sel = slice(None) if fit_mask is None else fit_mask
    for c in cols:
        s = float(np.std(c[sel]))
        if s > 1e-13:
            keep.append(c / s)
    X = np.column_stack([np.ones_like(target)] + keep) if keep else np.ones((target.size, 1))
    Xf, yf = X[sel], target[sel]
    XtX = Xf.T @ Xf
    Xty = Xf.T @ yf
    svals = np.linalg.svd(XtX, compute_uv=False)
    cond = float(np.sqrt(svals[0] / max(svals[-1], 1e-300)))
    if cond > COND_THRESHOLD:
        warnings.warn(
            f"regression condition number {cond:.2e} above threshold; using ridge",
            RuntimeWarning,
        )
        XtX = XtX + 1e-10 * svals[0] * np.eye(XtX.shape[0])
    beta = np.linalg.solve(XtX, Xty)
    return X @ beta


def _pair_se(values: np.ndarray, antithetic: bool) -> float:
    """Standard error of the mean, aware of antithetic pairing."""
    if antithetic and values.size % 2 == 0:
        pairs = 0.5 * (values[0::2] + values[1::2])
        return float(np.std(pairs) / np.sqrt(pairs.size))
    return float(np.std(values) / np.sqrt(values.size))


def solve_rbsde_lsmc(
    data: ProblemData,
    bundle: PathBundle,
    basis: str = "quad-extrema",
    reflect: bool = True,
    m: float = 0.0,
) -> RbsdeSolution:
    """Backward regression for the continuation E_i[Y_{i+1} + F dt], reflected
    through max with the barrier; Z regressed on Brownian-scaled increments.

    The continuation fit is restricted to paths where the barrier is off its
    floor (the region where exercise can matter), and the recursion carries
    pathwise values, replaced by the barrier where the rule exercises; this
    keeps the root estimate free of the fitted-value max bias.  The stored
    (Y, K) arrays carry the reflected representation max(h, C), (h - C)^+.
    """
    times, full = bundle.full_paths()
    i0 = bundle.base.index
    n = bundle.n_steps
    npaths = bundle.n_paths
    dt = bundle.dt
    d = bundle.d
    if dt * data.L0 > 1.0 + 1e-12:
        raise ParameterError("dt L0 > 1: the explicit driver step needs a finer grid")
    v_all = full[:, :, 0]
    run_max = np.maximum.accumulate(v_all, axis=1)
    run_min = np.minimum.accumulate(v_all, axis=1)

    Y = np.empty((npaths, n + 1))       # reflected representation
    Z = np.zeros((npaths, n + 1)) if d == 1 else np.zeros((npaths, n + 1, d))
    dK = np.zeros((npaths, n + 1))
    H = np.empty((npaths, n + 1))

    carry = np.asarray(data.terminal.batch(times, full), dtype=float).copy()
    Y[:, n] = carry
    H[:, n] = data.barrier.batch(times, full, i0 + n)
    min_fit = 64

    for i in range(n - 1, -1, -1):
        g = i0 + i
        if d == 1:
            cols = _features(basis, v_all[:, g], run_max[:, g], run_min[:, g])[1:]
            dw = bundle.increments_w[:, i, 0]
            if i == 0:
                zfit = np.full(npaths, float(np.mean(carry * dw / dt)))
            else:
                zfit = _regress(cols, carry * dw / dt)
        else:
            cols = _features_nd(full[:, g, :], run_max[:, g], run_min[:, g])
            dw = bundle.increments_w[:, i, :]
            if i == 0:
                zfit = np.broadcast_to(np.mean(carry[:, None] * dw / dt, axis=0), (npaths, d)).copy()
            else:
                zfit = np.column_stack([_regress(cols, carry * dw[:, j] / dt) for j in range(d)])
        k = bundle.controls[:, i]
        f = data.driver.batch(times[g], g, times, full, carry, zfit, k)
        target = carry + dt * np.asarray(f, dtype=float)
        b = np.asarray(data.barrier.batch(times, full, g), dtype=float)
        active = b > b.min() + 1e-12
        fit_mask = active if int(active.sum()) >= min_fit else None
        if i == 0:
            cont = np.full(npaths, float(np.mean(target)))
        else:
            cont = _regress(cols, target, fit_mask=fit_mask)
        eligible = active if fit_mask is not None else np.ones(npaths, dtype=bool)
        if reflect:
            exercise = eligible & (b > cont)
            carry = np.where(exercise, b, target)
            Y[:, i] = np.maximum(b, cont)
            dK[:, i] = np.where(eligible, np.maximum(b - cont, 0.0), 0.0)
        else:
            lowered = (cont + dt * m * b) / (1.0 + dt * m)
            resolve = eligible & (cont < b)
            carry = np.where(resolve, lowered, target)
            Y[:, i] = np.where(cont < b, lowered, cont)
        Z[:, i] = zfit
        H[:, i] = b
        if not np.all(np.isfinite(carry)):
            raise NumericError("LSMC backward recursion produced non-finite values")

    y0 = float(np.mean(carry))
    if reflect:
        y0 = max(float(H[0, 0]), y0)
    se0 = _pair_se(carry, bundle.antithetic)
    Y[:, 0] = y0

    kind = "lsmc" if reflect else "penalized-lsmc"
    meta = {
        "dt": dt,
        "basis": basis,
        "n_paths": npaths,
        "se": se0,
        "seed": bundle.seed,
        "policy": bundle.policy.describe(),
        "m": m,
    }
    return RbsdeSolution(y0, kind, times[i0:], Y, Z, dK, H, meta)


def solve_penalized(data: ProblemData, source, m: float) -> RbsdeSolution:
    """Unreflected recursion with driver F + m (y - h)^-; K is identically 0.

    The penalty is resolved implicitly per step, so any m >= 0 is stable; the
    explicit driver part still requires dt L0 <= 1 (finer grid otherwise).
    """
    if m < 0:
        raise DomainError("penalty m must be nonnegative")
    if isinstance(source, PathBundle):
        return solve_rbsde_lsmc(data, source, reflect=False, m=m)
    if isinstance(source, TreeSpec):
        return _tree_backward(data, source.base, source.n_steps, source.policy, reflect=False, m=m)
    raise DomainError("source must be a PathBundle or a TreeSpec")


# ---------------------------------------------------------------------------
# value functional
# ---------------------------------------------------------------------------

class ValueEstimate(NamedTuple):
    value: float
    ci: float
    meta: dict


def _one_switch_policies(n_controls: int, n_steps: int, stride: int):
    pols = [ControlPolicy.constant(k) for k in range(n_controls)]
    for s in range(stride, n_steps, stride):
        for k1 in range(n_controls):
            for k2 in range(n_controls):
                if k1 == k2:
                    continue
                pols.append(ControlPolicy.from_steps([k1] * s + [k2] * (n_steps - s)))
    return pols


def value_functional(
    data: ProblemData,
    base: PathPoint,
    n_steps: int = 50,
    n_paths: int = 20_000,
    seed: int = 0,
    method: str = "auto",
    basis: str = "quad-extrema",
    switch_stride: int | None = None,
) -> ValueEstimate:
    """Value estimate at a path point.

    d = 1 markovian data: per-step control sup on the tree with a refinement
    half-grid gap as the tolerance.  Otherwise: maximum over an enumerated
    family of constant and one-switch policies of LSMC values (family size in
    the metadata; the sup is biased low by the family restriction).
    """
    if method == "auto":
        method = "tree" if (data.d == 1 and data.markovian) else "lsmc"
    if method == "tree":
        sol = solve_rbsde_tree(data, base, n_steps)
        half = solve_rbsde_tree(data, base, max(n_steps // 2, 1))
        ci = abs(sol.y0 - half.y0)
        return ValueEstimate(sol.y0, ci, {"method": "tree", "n_steps": n_steps})
    stride = switch_stride or max(n_steps // 8, 1)
    pols = _one_switch_policies(data.n_controls, n_steps, stride)
    best, best_se, best_pol = -np.inf, float("nan"), ""
    for j, pol in enumerate(pols):
        bundle = euler_bundle(data, base, pol, n_steps, n_paths, seed=seed + 7919 * j)
        sol = solve_rbsde_lsmc(data, bundle, basis=basis)
        if sol.y0 > best:
            best, best_se, best_pol = sol.y0, sol.meta["se"], pol.describe()
    return ValueEstimate(
        float(best),
        3.0 * best_se,
        {"method": "lsmc", "policy_family_size": len(pols), "argmax_policy": best_pol, "n_steps": n_steps},
    )


def _reroot_point(t: float, x_abs: float, dt: float) -> PathPoint:
    """A canonical path point at time t with current value x_abs."""
    if t <= 0:
        if abs(x_abs) > 1e-12:
            raise DomainError("time-zero points must sit at the origin")
        return PathPoint.origin(dt=dt)
    k = max(int(round(t / dt)), 1)
    path = DiscretePath.linear(0.0, t / k, k, x_abs / t)
    return PathPoint(t, path)


def dpp_residual(
    data: ProblemData,
    base: PathPoint,
    t1: float,
    n_steps: int,
    variant: str = "deterministic",
    delta: float | None = None,
    dx_mult: float = 1.5,
) -> float:
    """|u(t, omega) - nested two-stage value| on the tree (d = 1).

    The inner values u(t1, .) (or u at the hitting layer for the stopped
    variant) are recomputed by fresh re-rooted tree solves; the outer stage
    solves the reflected recursion down to the base with those values as the
    terminal data.
    """
    _require_tree_data(data)
    full = solve_rbsde_tree(data, base, n_steps, dx_mult=dx_mult)
    dt, dx = full.meta["dt"], full.meta["dx"]
    n = n_steps
    t0, x0 = base.t, float(base.value[0])
    i1 = int(round((t1 - t0) / dt))
    if not 0 < i1 <= n:
        raise DomainError("t1 must lie strictly inside (t, T]")
    width = 2 * n + 1
    offsets = dx * (np.arange(width) - n)
    x_abs = x0 + offsets
    times = t0 + dt * np.arange(n + 1)

    def inner(i: int, j: int) -> float:
        if i == n:
            return float(data.terminal.state(np.array([x_abs[j]]))[0])
        pt = _reroot_point(times[i], x_abs[j], dt)
        return solve_rbsde_tree(data, pt, n - i, dx_mult=dx_mult).y0

    if variant == "deterministic":
        cap_idx = i1
        stopped = np.zeros(width, dtype=bool)
    elif variant == "hitting":
        if delta is None:
            raise DomainError("the hitting variant needs delta")
        cap_idx = min(i1, max(int(round(min(delta, data.T - t0) / dt)), 1))
        stopped = np.abs(offsets) >= delta - 1e-12
    else:
        raise DomainError(f"unknown variant {variant!r}")

    V = np.full(width, np.nan)
    lo, hi = n - cap_idx, n + cap_idx + 1
    for j in range(lo, hi):
        V[j] = inner(cap_idx, j)
    sig = data.sigma_values
    probs = [(s * s * dt / (2 * dx * dx)) for s in sig]
    for i in range(cap_idx - 1, -1, -1):
        l2, h2 = n - i, n + i + 1
        xs = x_abs[l2:h2]
        up, mid, dn = V[l2 + 1 : h2 + 1], V[l2:h2], V[l2 - 1 : h2 - 1]
        vals = np.empty((data.n_controls, h2 - l2))
        for k in range(data.n_controls):
            p = probs[k]
            cont = p * (up + dn) + (1.0 - 2.0 * p) * mid
            zk = sig[k] * (up - dn) / (2.0 * dx)
            f = data.driver.state(times[i], xs, cont, zk, k)
            vals[k] = cont + dt * np.asarray(f, dtype=float)
        val = vals.max(axis=0)
        b = np.asarray(data.barrier.state(times[i], xs), dtype=float)
        cand = np.maximum(b, val)
        newV = np.full(width, np.nan)
        newV[l2:h2] = cand
        if variant == "hitting":
            for j in range(l2, h2):
                if stopped[j]:
                    newV[j] = inner(i, j)
        V = newV
    return abs(full.y0 - float(V[n]))


# ---------------------------------------------------------------------------
# Skorokhod report
# ---------------------------------------------------------------------------

def skorokhod_report(sol: RbsdeSolution, knot_mask=None, activity_tol: float = 1e-9) -> dict:
    """Flat-off defects, K monotonicity and off-barrier/off-knot K mass.

    For tree solutions the checks run at every node (which dominates every
    path); for LSMC solutions per path.  A knot mask (per step, or per path
    and step) restricts where K increments are allowed to sit; the report
    carries the stray mass fraction.
    """
    Y = np.nan_to_num(sol.Y, nan=0.0)
    H = np.nan_to_num(sol.barrier, nan=0.0)
    dK = np.nan_to_num(sol.K, nan=0.0)
    gap = Y - H
    defect = gap * dK
    per_axis = 1 if sol.kind.endswith("lsmc") else 0
    rep = {
        "kind": sol.kind,
        "flat_off_max": float(np.max(np.abs(defect))) if defect.size else 0.0,
        "flat_off_path_max": float(np.max(np.abs(defect).sum(axis=per_axis))) if defect.size else 0.0,
        "min_increment": float(np.min(sol.K[np.isfinite(sol.K)])) if np.isfinite(sol.K).any() else 0.0,
        "k_nondecreasing": bool(np.min(sol.K[np.isfinite(sol.K)]) >= 0.0),
        "reflection_worst": float(np.min(gap[np.isfinite(sol.Y)])) if np.isfinite(sol.Y).any() else 0.0,
        "total_K_mass": float(dK.sum()),
    }
    total = dK.sum()
    if total > 0:
        off_barrier = dK[gap > activity_tol].sum()
        rep["frac_off_barrier"] = float(off_barrier / total)
    else:
        rep["frac_off_barrier"] = 0.0
    if knot_mask is not None:
        mask = np.asarray(knot_mask, dtype=bool)
        if mask.ndim == 1:
            mask = np.broadcast_to(mask, dK.shape) if sol.kind.endswith("lsmc") else mask[:, None] * np.ones_like(dK, dtype=bool)
        stray = dK[~mask].sum()
        rep["off_knot_mass"] = float(stray / total) if total > 0 else 0.0
    return rep


def solution_to_csv(sol: RbsdeSolution, fname) -> None:
    """Per-step summary: mean Y, mean cumulative K, barrier activity fraction."""
    cumK = sol.cumulative_K()
    axis = 0 if sol.kind.endswith("lsmc") else 1
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "time", "mean_Y", "mean_K", "barrier_active_frac"])
        nsteps = sol.Y.shape[1] if axis == 0 else sol.Y.shape[0]
        for i in range(nsteps):
            ycol = sol.Y[:, i] if axis == 0 else sol.Y[i]
            hcol = sol.barrier[:, i] if axis == 0 else sol.barrier[i]
            kcol = cumK[:, i] if axis == 0 else cumK[i]
            fin = np.isfinite(ycol)
            act = float(np.mean((ycol[fin] - hcol[fin]) <= 1e-9)) if fin.any() else 0.0
            w.writerow(
                [i, f"{sol.times[i]:.12g}", f"{np.nanmean(ycol):.12g}",
                 f"{np.nanmean(kcol):.12g}", f"{act:.6g}"]
            )
