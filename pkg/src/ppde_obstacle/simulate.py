"""Seeded simulation of the controlled state and path bundles for the
regression solvers.

Gaussian increments come from the counter-based Philox generator keyed by the
seed, so a bundle is a pure function of (seed, shape): regeneration is
bit-identical and independent of any parallel scheduling.  Antithetic pairing
mirrors path 2i+1 against path 2i.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import ProblemData
from .paths import DiscretePath, PathPoint


@dataclass(frozen=True)
class ControlPolicy:
    """Piecewise-constant control assignment, optionally state-feedback."""

    kind: str = "constant"
    index: int = 0
    steps: tuple = ()
    feedback: object = None

    def controls_at(self, step: int, x: np.ndarray) -> np.ndarray:
        """Control indices for every path at a step; x has shape (n, d)."""
        n = x.shape[0]
        if self.kind == "constant":
            return np.full(n, self.index, dtype=np.int64)
        if self.kind == "steps":
            return np.full(n, self.steps[min(step, len(self.steps) - 1)], dtype=np.int64)
        if self.kind == "feedback":
            out = np.asarray(self.feedback(step, x), dtype=np.int64)
            return np.broadcast_to(out, (n,)).copy()
        raise DomainError(f"unknown policy kind {self.kind!r}")

    @staticmethod
    def constant(k: int) -> "ControlPolicy":
        return ControlPolicy(kind="constant", index=int(k))

    @staticmethod
    def from_steps(indices) -> "ControlPolicy":
        return ControlPolicy(kind="steps", steps=tuple(int(i) for i in indices))

    @staticmethod
    def from_feedback(fn) -> "ControlPolicy":
        return ControlPolicy(kind="feedback", feedback=fn)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.index}"
        if self.kind == "steps":
            return "steps:" + ",".join(map(str, self.steps))
        return "feedback"


@dataclass(frozen=True)
class PathBundle:
    """Simulated controlled paths on [t, T], rooted at a path point.

    values[p, i] is X at step i for path p, started at 0; increments_w holds
    the driving Brownian increments; controls the per-step control indices.
    """

    base: PathPoint
    policy: ControlPolicy
    seed: int
    dt: float
    values: np.ndarray        # (n_paths, n_steps + 1, d)
    increments_w: np.ndarray  # (n_paths, n_steps, d)
    controls: np.ndarray      # (n_paths, n_steps)
    antithetic: bool

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def t0(self) -> float:
        return self.base.t

    @property
    def times(self) -> np.ndarray:
        return self.base.t + self.dt * np.arange(self.n_steps + 1)

    def full_paths(self):
        """(times, values) of the concatenated paths on the global grid [0, T].

        The base prefix (stopped at base.t) is prepended and the bundle values
        are offset by the base's current value, so data functionals see whole
        canonical paths.
        """
        i0 = self.base.index
        pre_t = self.base.path.times[:i0]
        pre_v = self.base.path.values[:i0]
        times = np.concatenate([pre_t, self.times])
        vals = np.empty((self.n_paths, len(times), self.d))
        vals[:, :i0, :] = pre_v[None, :, :]
        vals[:, i0:, :] = self.base.value[None, None, :] + self.values
        return times, vals

    def path(self, p: int) -> DiscretePath:
        return DiscretePath(self.base.t, self.dt, self.values[p])


def gaussian_block(seed: int, n_paths: int, n_steps: int, d: int, antithetic: bool = True) -> np.ndarray:
    """Standard normal block (n_paths, n_steps, d) from a Philox stream.

    With antithetic pairing, odd paths mirror their even partner.
    """
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    if not antithetic:
        return gen.standard_normal((n_paths, n_steps, d))
    half = (n_paths + 1) // 2
    z = gen.standard_normal((half, n_steps, d))
    out = np.empty((2 * half, n_steps, d))
    out[0::2] = z
    out[1::2] = -z
    return out[:n_paths]


def euler_bundle(
    data: ProblemData,
    base: PathPoint,
    policy: ControlPolicy,
    n_steps: int,
    n_paths: int,
    seed: int,
    antithetic: bool = True,
) -> PathBundle:
    """X_{i+1} = X_i + sigma(k_i) dW_i with dW ~ N(0, dt I).

    sigma is control-only, so the per-step transition is exact in
    distribution for piecewise-constant policies.
    """
    if n_steps < 1:
        raise DomainError("n_steps must be at least 1")
    t0 = base.t
    if t0 >= data.T:
        raise DomainError("base time must be before the horizon")
    dt = (data.T - t0) / n_steps
    z = gaussian_block(seed, n_paths, n_steps, data.d, antithetic)
    dw = np.sqrt(dt) * z
    sig = np.stack(data.sigma)  # (K, d, d)
    values = np.zeros((n_paths, n_steps + 1, data.d))
    controls = np.zeros((n_paths, n_steps), dtype=np.int64)
    for i in range(n_steps):
        k = policy.controls_at(i, values[:, i, :])
        controls[:, i] = k
        step = np.einsum("pij,pj->pi", sig[k], dw[:, i, :])
        values[:, i + 1, :] = values[:, i, :] + step
    values.setflags(write=False)
    dw.setflags(write=False)
    controls.setflags(write=False)
    return PathBundle(base, policy, int(seed), dt, values, dw, controls, antithetic)


def moment_report(bundle: PathBundle, data: ProblemData | None = None, other: PathBundle | None = None) -> dict:
    """Empirical sup-norm moments plus martingale/covariance checks.

    With a second bundle driven by common noise from a shifted base, the
    control-only sigma makes X - X' vanish identically; the report carries the
    exact gap.
    """
    n = bundle.n_paths
    sup = np.max(np.linalg.norm(bundle.values, axis=2), axis=1)
    xT = bundle.values[:, -1, :]
    rep = {
        "n_paths": n,
        "n_steps": bundle.n_steps,
        "sup_norm_p2": float(np.mean(sup**2)),
        "sup_norm_p2_se": float(np.std(sup**2) / np.sqrt(n)),
        "sup_norm_p4": float(np.mean(sup**4)),
        "sup_norm_p4_se": float(np.std(sup**4) / np.sqrt(n)),
        "terminal_mean": [float(v) for v in np.mean(xT, axis=0)],
        "terminal_mean_se": [float(v) for v in np.std(xT, axis=0) / np.sqrt(n)],
    }
    if data is not None:
        # one-step covariance consistency against dt sigma sigma^T
        sig = np.stack(data.sigma)
        worst = 0.0
        for i in range(bundle.n_steps):
            inc = bundle.values[:, i + 1, :] - bundle.values[:, i, :]
            for k in np.unique(bundle.controls[:, i]):
                mask = bundle.controls[:, i] == k
                if mask.sum() < 8:
                    continue
                emp = np.cov(inc[mask].T, bias=True).reshape(bundle.d, bundle.d)
                tgt = bundle.dt * sig[k] @ sig[k].T
                se = np.sqrt(2.0 / mask.sum()) * np.linalg.norm(tgt)
                worst = max(worst, float(np.max(np.abs(emp - tgt)) / max(se, 1e-300)))
        rep["cov_worst_z"] = worst
    if other is not None:
        rep["common_noise_gap"] = float(np.max(np.abs(bundle.values - other.values)))
    return rep


def bundle_to_csv(bundle: PathBundle, fname) -> None:
    with open(fname, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "time"] + [f"x_{j + 1}" for j in range(bundle.d)])
        tt = bundle.times
        for p in range(bundle.n_paths):
            for i in range(bundle.n_steps + 1):
                w.writerow([p, i, f"{tt[i]:.12g}"] + [f"{v:.12g}" for v in bundle.values[p, i]])
