"""Discrete canonical path space: stopped/shifted/concatenated paths, the
d-infinity metric, and level hitting-time machinery.

All paths live on a uniform time grid.  Times handed to the operations are
rounded to the nearest grid point; hitting is the first grid time at which
the level condition holds along the piecewise-linear interpolant (for the
sup-norm of a linear segment that is a grid-endpoint condition).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_REL_TOL = 1e-9


def _as_matrix(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] < 1:
        raise DomainError("path values must be a (n_times, d) array")
    return v


@dataclass(frozen=True)
class DiscretePath:
    """Uniform-grid path with values[0] = 0 (canonical normalization)."""

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self):
        v = _as_matrix(self.values)
        v = np.ascontiguousarray(v)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.dt <= 0:
            raise DomainError("dt must be positive")
        if np.max(np.abs(v[0])) > _REL_TOL:
            raise DomainError("path must start at the zero vector")

    # -- geometry ---------------------------------------------------------
    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def n_points(self) -> int:
        return self.values.shape[0]

    @property
    def end_time(self) -> float:
        return self.t0 + (self.n_points - 1) * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_points)

    def index_of(self, t: float, clip: bool = False) -> int:
        """Nearest grid index of time t; DomainError if t is off the span."""
        i = int(round((t - self.t0) / self.dt))
        if clip:
            return min(max(i, 0), self.n_points - 1)
        if i < 0 or i > self.n_points - 1:
            raise DomainError(f"time {t} outside path span [{self.t0}, {self.end_time}]")
        if abs(self.t0 + i * self.dt - t) > self.dt * 1e-6:
            raise DomainError(f"time {t} is not on the grid (dt={self.dt})")
        return i

    def value_at(self, t: float) -> np.ndarray:
        """Linear-interpolant value at t, constant extension beyond the span."""
        s = (t - self.t0) / self.dt
        if s <= 0:
            return self.values[0].copy()
        if s >= self.n_points - 1:
            return self.values[-1].copy()
        i = int(s)
        w = s - i
        return (1 - w) * self.values[i] + w * self.values[i + 1]

    # -- constructors -----------------------------------------------------
    @staticmethod
    def zeros(t0: float, dt: float, n_steps: int, d: int = 1) -> "DiscretePath":
        return DiscretePath(t0, dt, np.zeros((n_steps + 1, d)))

    @staticmethod
    def from_increments(t0: float, dt: float, increments) -> "DiscretePath":
        inc = _as_matrix(increments)
        vals = np.vstack([np.zeros((1, inc.shape[1])), np.cumsum(inc, axis=0)])
        return DiscretePath(t0, dt, vals)

    @staticmethod
    def linear(t0: float, dt: float, n_steps: int, slope) -> "DiscretePath":
        slope = np.atleast_1d(np.asarray(slope, dtype=float))
        tt = dt * np.arange(n_steps + 1)
        return DiscretePath(t0, dt, tt[:, None] * slope[None, :])


@dataclass(frozen=True)
class PathPoint:
    """A point (t, omega) of the path space; values beyond t are ignored."""

    t: float
    path: DiscretePath

    def __post_init__(self):
        self.path.index_of(self.t)  # validates t on grid

    @property
    def index(self) -> int:
        return self.path.index_of(self.t)

    @property
    def value(self) -> np.ndarray:
        """Current value omega_t."""
        return self.path.values[self.index]

    @staticmethod
    def origin(d: int = 1, dt: float = 1.0) -> "PathPoint":
        return PathPoint(0.0, DiscretePath.zeros(0.0, dt, 0, d))


@dataclass(frozen=True)
class LevelCascade:
    """Successive level-alpha hitting times with the inter-hit increments."""

    alpha: float
    times: tuple = field(default=())
    anchors: tuple = field(default=())  # d-vectors, increments between hits

    def __post_init__(self):
        if self.alpha <= 0:
            raise DomainError("cascade level alpha must be positive")

    @property
    def n_knots(self) -> int:
        return len(self.times)


def stop(path: DiscretePath, t: float) -> DiscretePath:
    """Stopped path omega_{. ^ t}: frozen at its value at t."""
    i = path.index_of(t)
    vals = path.values.copy()
    vals[i + 1 :] = vals[i]
    return DiscretePath(path.t0, path.dt, vals)


def concat(left: DiscretePath, right: DiscretePath) -> DiscretePath:
    """Concatenation at t = left.end_time: left before t, left(t)+right after."""
    t = left.end_time
    if abs(right.t0 - t) > left.dt * 1e-6:
        raise DomainError("grids must align at the concatenation time")
    if abs(left.dt - right.dt) > left.dt * 1e-9:
        raise DomainError("concat requires equal grid steps")
    vals = np.vstack([left.values, left.values[-1] + right.values[1:]])
    return DiscretePath(left.t0, left.dt, vals)


def shift(path: DiscretePath, t: float) -> DiscretePath:
    """Shifted path on [t, end]: s -> path(s) - path(t)."""
    i = path.index_of(t)
    vals = path.values[i:] - path.values[i]
    return DiscretePath(t, path.dt, vals)


def dist_dinfty(a: PathPoint, b: PathPoint) -> float:
    """|t-t'| + sup-norm distance of the stopped paths on the union grid."""
    pa, pb = stop(a.path, a.t), stop(b.path, b.t)
    grid = np.union1d(np.round(pa.times, 12), np.round(pb.times, 12))
    va = np.array([pa.value_at(s) for s in grid])
    vb = np.array([pb.value_at(s) for s in grid])
    if va.shape[1] != vb.shape[1]:
        raise DomainError("paths must share the dimension d")
    sup = float(np.max(np.linalg.norm(va - vb, axis=1)))
    return abs(a.t - b.t) + sup


def _cap_index(path: DiscretePath, start_idx: int, cap_time: float) -> int:
    """Grid index of the cap, rounded to nearest, at least one step ahead."""
    i = int(round((cap_time - path.t0) / path.dt))
    i = min(i, path.n_points - 1)
    return max(i, min(start_idx + 1, path.n_points - 1))


def _first_hit_index(norms: np.ndarray, start_idx: int, level: float, cap_idx: int) -> int:
    """First grid index in (start_idx, cap_idx] where the running sup reaches level."""
    for i in range(start_idx + 1, cap_idx + 1):
        if norms[i] >= level - 1e-12:
            return i
    return cap_idx


def hitting_time_delta(t: float, delta: float, path: DiscretePath, T: float | None = None) -> float:
    """First grid time the path's running sup-norm reaches delta, capped at (t+delta)^T."""
    if delta <= 0:
        raise DomainError("delta must be positive")
    i0 = path.index_of(t)
    if np.max(np.abs(path.values[i0])) > _REL_TOL:
        raise DomainError("path must start at 0 at time t")
    horizon = path.end_time if T is None else min(T, path.end_time)
    cap_idx = _cap_index(path, i0, min(t + delta, horizon))
    norms = np.linalg.norm(path.values - path.values[i0], axis=1)
    hit = _first_hit_index(norms, i0, delta, cap_idx)
    return path.t0 + hit * path.dt


def level_cascade(
    t: float,
    x,
    alpha: float,
    path: DiscretePath,
    anchor_time: float | None = None,
    T: float | None = None,
) -> LevelCascade:
    """Cascade hitting times of level alpha started from offset x at time t.

    ch_0 caps at (anchor_time + alpha) ^ T, each later ch_{i+1} caps at
    (ch_i + alpha) ^ T; the cascade ends with its first entry equal to T.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if np.linalg.norm(x) > alpha + _REL_TOL:
        raise DomainError("|x| must not exceed alpha")
    t_anchor = t if anchor_time is None else anchor_time
    if t_anchor > t + _REL_TOL:
        raise DomainError("anchor_time must not exceed t")
    i0 = path.index_of(t)
    horizon = path.end_time if T is None else min(T, path.end_time)
    i_T = path.index_of(horizon, clip=True)

    times, anchors = [], []
    # first hit: |x + B|, capped at anchor + alpha
    cap_idx = _cap_index(path, i0, min(t_anchor + alpha, horizon))
    norms = np.linalg.norm(x[None, :] + path.values - path.values[i0], axis=1)
    i_hit = _first_hit_index(norms, i0, alpha, cap_idx)
    times.append(path.t0 + i_hit * path.dt)
    anchors.append(x + path.values[i_hit] - path.values[i0])
    # subsequent hits of |B - B_{ch_i}|
    while i_hit < i_T:
        prev = i_hit
        cap_idx = _cap_index(path, prev, min(path.t0 + prev * path.dt + alpha, horizon))
        norms = np.linalg.norm(path.values - path.values[prev], axis=1)
        i_hit = _first_hit_index(norms, prev, alpha, cap_idx)
        times.append(path.t0 + i_hit * path.dt)
        anchors.append(path.values[i_hit] - path.values[prev])
    return LevelCascade(alpha, tuple(times), tuple(np.asarray(a) for a in anchors))


def skeleton_path(pi, T: float, dt: float, d: int = 1) -> DiscretePath:
    """Piecewise-linear path through the prefix knots (t_i, sum x_j), constant to T.

    pi is a sequence of (t_i, x_i) pairs with t_0 = 0 and x_i the increments.
    """
    knot_t, knot_v = _prefix_knots(pi, d)
    if knot_t[-1] < T:
        knot_t = np.append(knot_t, T)
        knot_v = np.vstack([knot_v, knot_v[-1]])
    return _sample_knots(knot_t, knot_v, 0.0, T, dt)


def interpolate_hat_path(pi, t: float, x, alpha: float, path: DiscretePath, T: float | None = None) -> DiscretePath:
    """The hat path: prefix skeleton knots followed by the cascade knots of `path`.

    Knot values after the prefix are sum(x_j) + x + path(ch_i); sampled on the
    global grid of step path.dt over [0, T].
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = path.d
    knot_t, knot_v = _prefix_knots(pi, d)
    anchor_time = knot_t[-1]
    base = knot_v[-1]
    horizon = path.end_time if T is None else T
    casc = level_cascade(t, x, alpha, path, anchor_time=anchor_time, T=horizon)
    i0 = path.index_of(t)
    for ct in casc.times:
        ci = path.index_of(ct)
        knot_t = np.append(knot_t, ct)
        knot_v = np.vstack([knot_v, base + x + path.values[ci] - path.values[i0]])
    if knot_t[-1] < horizon - 1e-12:
        knot_t = np.append(knot_t, horizon)
        knot_v = np.vstack([knot_v, knot_v[-1]])
    return _sample_knots(knot_t, knot_v, 0.0, horizon, path.dt)


def _prefix_knots(pi, d: int):
    knot_t = [0.0]
    knot_v = [np.zeros(d)]
    run = np.zeros(d)
    for j, (ti, xi) in enumerate(pi):
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        run = run + xi
        if j == 0:
            if abs(ti) > _REL_TOL or np.linalg.norm(xi) > _REL_TOL:
                raise DomainError("prefix must start with (0, 0)")
            continue
        if ti < knot_t[-1] - _REL_TOL:
            raise DomainError("prefix times must be nondecreasing")
        knot_t.append(float(ti))
        knot_v.append(run.copy())
    return np.asarray(knot_t), np.asarray(knot_v)


def _sample_knots(knot_t, knot_v, t0: float, T: float, dt: float) -> DiscretePath:
    n = int(round((T - t0) / dt))
    tt = t0 + dt * np.arange(n + 1)
    vals = np.empty((n + 1, knot_v.shape[1]))
    for c in range(knot_v.shape[1]):
        vals[:, c] = np.interp(tt, knot_t, knot_v[:, c])
    vals[0] = 0.0
    return DiscretePath(t0, dt, vals)


# -- CSV fixtures ----------------------------------------------------------

def path_to_csv(path: DiscretePath, fname) -> None:
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"x_{j + 1}" for j in range(path.d)])
        for t, row in zip(path.times, path.values):
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in row])


def path_from_csv(fname) -> DiscretePath:
    with open(fname, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    t = data[:, 0]
    if len(t) < 2:
        raise DomainError("need at least two rows to infer the grid step")
    return DiscretePath(t[0], t[1] - t[0], data[:, 1:])
