"""Problem data, the control-sup generator, the differential operator on test
functionals, the exponential change of variable, and assumption validation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import families
from .errors import DomainError
from .paths import DiscretePath, PathPoint


@dataclass(frozen=True)
class Modulus:
    """Parametric modulus rho(r) = c (r^beta + r), beta in (0, 1]."""

    c: float = 1.0
    beta: float = 1.0

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.c * (r**self.beta + r)

    def as_dict(self):
        return {"c": self.c, "beta": self.beta}


@dataclass(frozen=True)
class ProblemData:
    """Data (K, sigma, F, h, xi) of the obstacle problem plus its constants.

    sigma is a per-control table of symmetric positive-definite matrices;
    passing scalars builds the d = 1 table.  Immutable after construction.
    """

    T: float
    sigma: tuple
    driver: families.Driver
    barrier: families.Barrier
    terminal: families.Terminal
    M0: float = 1.0
    L0: float = 1.0
    rho0: Modulus = field(default_factory=Modulus)
    c0: float = 0.0
    label: str = ""

    def __post_init__(self):
        mats = []
        for s in self.sigma:
            m = np.atleast_2d(np.asarray(s, dtype=float))
            if m.shape[0] != m.shape[1]:
                raise DomainError("sigma entries must be square matrices")
            m = np.ascontiguousarray(m)
            m.setflags(write=False)
            mats.append(m)
        if not mats:
            raise DomainError("control set must be nonempty")
        if len({m.shape for m in mats}) != 1:
            raise DomainError("all sigma matrices must share the dimension")
        object.__setattr__(self, "sigma", tuple(mats))
        if self.T <= 0:
            raise DomainError("horizon T must be positive")
        if self.c0 == 0.0:
            eig = min(float(np.linalg.eigvalsh(m).min()) for m in mats)
            object.__setattr__(self, "c0", eig)

    # -- control table ------------------------------------------------------
    @property
    def d(self) -> int:
        return self.sigma[0].shape[0]

    @property
    def n_controls(self) -> int:
        return len(self.sigma)

    def sigma_scalar(self, k: int) -> float:
        if self.d != 1:
            raise DomainError("sigma_scalar is for d = 1 only")
        return float(self.sigma[k][0, 0])

    @property
    def sigma_values(self) -> np.ndarray:
        """d = 1 volatilities as a flat array."""
        return np.array([self.sigma_scalar(k) for k in range(self.n_controls)])

    @property
    def markovian(self) -> bool:
        return self.barrier.markovian and self.terminal.markovian and self.driver.markovian

    # -- data functionals ----------------------------------------------------
    def F(self, p: PathPoint, y, z, k: int):
        return self.driver.at(p, y, z, k)

    def h(self, p: PathPoint) -> float:
        return self.barrier.at(p)

    def xi(self, path: DiscretePath) -> float:
        return self.terminal.at(path)

    def value_bound(self) -> float:
        """A priori bound on the value functional from (M0, L0, T)."""
        return float(np.exp(self.L0 * self.T) * self.M0 * (1.0 + 2.0 * self.T))

    def describe(self) -> dict:
        return {
            "label": self.label,
            "T": self.T,
            "sigma": [np.asarray(s).tolist() for s in self.sigma],
            "driver": {"name": self.driver.name, **self.driver.params()},
            "barrier": {"name": self.barrier.name, **self.barrier.params()},
            "terminal": {"name": self.terminal.name, **self.terminal.params()},
            "M0": self.M0,
            "L0": self.L0,
            "rho0": self.rho0.as_dict(),
            "c0": self.c0,
        }


def build_problem(cfg: dict) -> ProblemData:
    """Assemble ProblemData from a plain configuration mapping."""
    cfg = dict(cfg)
    rho = cfg.get("rho0", {})
    return ProblemData(
        T=float(cfg.get("T", 1.0)),
        sigma=tuple(cfg.get("sigma", [1.0])),
        driver=families.build_driver(cfg.get("driver", {"name": "zero"})),
        barrier=families.build_barrier(cfg.get("barrier", {"name": "const", "c": -10.0})),
        terminal=families.build_terminal(cfg.get("terminal", {"name": "power", "power": 2})),
        M0=float(cfg.get("M0", 16.0)),
        L0=float(cfg.get("L0", 1.0)),
        rho0=Modulus(float(rho.get("c", 1.0)), float(rho.get("beta", 1.0))),
        c0=float(cfg.get("c0", 0.0)),
        label=str(cfg.get("label", "")),
    )


# ---------------------------------------------------------------------------
# generator and operator
# ---------------------------------------------------------------------------


class GeneratorValue(NamedTuple):
    value: float
    argmax: int


def generator_G(data: ProblemData, p: PathPoint, y, z, gamma) -> GeneratorValue:
    """sup over controls of  1/2 sigma(k)^2 : gamma + F(p, y, sigma(k) z, k).

    Ties resolve to the lowest control index.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    best, arg = -np.inf, 0
    for k in range(data.n_controls):
        s = data.sigma[k]
        val = 0.5 * float(np.trace(s @ s @ gamma)) + data.F(p, y, s @ z, k)
        if val > best + 1e-15:
            best, arg = val, k
    return GeneratorValue(float(best), arg)


@dataclass(frozen=True)
class TestFunctional:
    """Polynomial test functional phi(t, omega) = sum c_ij t^i omega_t^j, j <= 4.

    Closed-form partials make it usable wherever a C^{1,2} test object is
    required (d = 1).
    """

    coeffs: tuple  # ((i, j, c), ...)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        c = tuple((int(i), int(j), float(v)) for i, j, v in self.coeffs)
        if any(j > 4 or j < 0 or i < 0 for i, j, _ in c):
            raise DomainError("polynomial degree in the value is capped at 4")
        object.__setattr__(self, "coeffs", c)

    def value(self, t, x):
        t, x = np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        out = sum(c * t**i * x**j for i, j, c in self.coeffs)
        return out + np.zeros(np.broadcast(t, x).shape)

    def dt(self, t, x):
        t, x = np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        out = sum(c * i * t ** (i - 1) * x**j for i, j, c in self.coeffs if i > 0)
        return out + np.zeros(np.broadcast(t, x).shape)

    def dx(self, t, x):
        t, x = np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        out = sum(c * j * t**i * x ** (j - 1) for i, j, c in self.coeffs if j > 0)
        return out + np.zeros(np.broadcast(t, x).shape)

    def dxx(self, t, x):
        t, x = np.asarray(t, dtype=float), np.asarray(x, dtype=float)
        out = sum(c * j * (j - 1) * t**i * x ** (j - 2) for i, j, c in self.coeffs if j > 1)
        return out + np.zeros(np.broadcast(t, x).shape)

    def at(self, p: PathPoint) -> float:
        return float(self.value(p.t, p.value[0]))

    @staticmethod
    def from_dict(d: dict) -> "TestFunctional":
        return TestFunctional(tuple((i, j, c) for (i, j), c in d.items()))


def operator_L(data: ProblemData, phi: TestFunctional, p: PathPoint) -> float:
    """- d_t phi - G(p, phi, d_x phi, d_xx phi) at the path point (d = 1)."""
    t, x = p.t, float(p.value[0])
    g = generator_G(data, p, float(phi.value(t, x)), [float(phi.dx(t, x))], [[float(phi.dxx(t, x))]])
    return -float(phi.dt(t, x)) - g.value


# ---------------------------------------------------------------------------
# change of variable
# ---------------------------------------------------------------------------


class _TransformedBarrier(families.Barrier):
    name = "transformed"

    def __init__(self, base, lam, mu, C):
        self.base, self.lam, self.mu, self.C = base, lam, mu, C
        self.markovian = base.markovian

    def _map(self, t, h):
        return np.exp(self.lam * t) * h + self.C * np.exp(self.mu * t) * t

    def batch(self, times, values, i):
        return self._map(times[i], self.base.batch(times, values, i))

    def state(self, t, x):
        return self._map(t, self.base.state(t, x))

    def params(self):
        return {"base": self.base.name, "lam": self.lam, "mu": self.mu, "C": self.C}


class _TransformedTerminal(families.Terminal):
    name = "transformed"

    def __init__(self, base, lam, mu, C, T):
        self.base, self.lam, self.mu, self.C, self.T = base, lam, mu, C, T
        self.markovian = base.markovian

    def _map(self, v):
        return np.exp(self.lam * self.T) * v + self.C * np.exp(self.mu * self.T) * self.T

    def batch(self, times, values):
        return self._map(self.base.batch(times, values))

    def state(self, x):
        return self._map(self.base.state(x))

    def params(self):
        return {"base": self.base.name, "lam": self.lam, "mu": self.mu, "C": self.C}


class _TransformedDriver(families.Driver):
    name = "transformed"

    def __init__(self, base, lam, mu, C):
        self.base, self.lam, self.mu, self.C = base, lam, mu, C
        self.lipschitz = base.lipschitz + abs(lam)

    def state(self, t, x, y, z, k):
        lam, mu, C = self.lam, self.mu, self.C
        e = np.exp(lam * t)
        y0 = np.asarray(y, dtype=float) / e - C * np.exp((mu - lam) * t) * t
        z0 = np.asarray(z, dtype=float) / e
        return (
            e * self.base.state(t, x, y0, z0, k)
            - C * np.exp(mu * t) * (1.0 + (mu - lam) * t)
            - lam * np.asarray(y, dtype=float)
        )

    def params(self):
        return {"base": self.base.name, "lam": self.lam, "mu": self.mu, "C": self.C}


def change_of_variable(data: ProblemData, lam: float, mu: float, C: float) -> ProblemData:
    """Exponentially tilted data (F', xi', h'); u' = e^{lam t} u + C e^{mu t} t."""
    T = data.T
    eL = float(np.exp(abs(lam) * T))
    eM = float(np.exp(abs(mu) * T))
    bound_xh = eL * data.M0 + abs(C) * T * eM
    bound_f0 = eL * (data.M0 + data.L0 * abs(C) * T * np.exp(abs(mu - lam) * T)) + abs(C) * eM * (
        1.0 + abs(mu - lam) * T
    )
    return ProblemData(
        T=T,
        sigma=data.sigma,
        driver=_TransformedDriver(data.driver, lam, mu, C),
        barrier=_TransformedBarrier(data.barrier, lam, mu, C),
        terminal=_TransformedTerminal(data.terminal, lam, mu, C, T),
        M0=float(max(bound_xh, bound_f0)),
        L0=data.L0 + abs(lam),
        rho0=Modulus(data.rho0.c * eL * (1 + abs(C)), data.rho0.beta),
        c0=data.c0,
        label=data.label + "+cov",
    )


def monotone_transform_constants(data: ProblemData) -> tuple:
    """(lam, mu, C) making the tilted data strictly monotone in y."""
    lam = data.L0 + 1.0
    C = -2.0 * float(np.exp((data.L0 + 1.0) * data.T)) * (lam + 1.0) * (data.M0 + 1.0)
    return lam, 0.0, C


def invert_change_of_variable(value_prime: float, t: float, lam: float, mu: float, C: float) -> float:
    """u = e^{-lam t} (u' - C e^{mu t} t)."""
    return float(np.exp(-lam * t) * (value_prime - C * np.exp(mu * t) * t))


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------


def _probe_paths(data: ProblemData, n: int, rng) -> list:
    smax = max(float(np.linalg.norm(s, 2)) for s in data.sigma)
    out = []
    steps = 32
    dtg = data.T / steps
    for slope in (0.0, smax, -smax):
        out.append(DiscretePath.linear(0.0, dtg, steps, [slope] + [0.0] * (data.d - 1)))
    for _ in range(n):
        inc = rng.normal(0.0, smax * np.sqrt(dtg), size=(steps, data.d))
        out.append(DiscretePath.from_increments(0.0, dtg, inc))
    return out


def validate(data: ProblemData, probes: int = 200, seed: int = 0) -> dict:
    """Empirical check of the standing assumptions; report-only, never raises."""
    rng = np.random.default_rng(seed)
    paths = _probe_paths(data, max(probes // 8, 8), rng)
    points = []
    for p in paths:
        for i in (0, p.n_points // 2, p.n_points - 1):
            points.append(PathPoint(p.times[i], p))
    cushion = 1e-9

    report = {"clauses": {}}

    def clause(name, passed, worst, detail=""):
        report["clauses"][name] = {"passed": bool(passed), "worst": float(worst), "detail": detail}

    w = max(abs(data.xi(p)) for p in paths)
    clause("bounded_terminal", w <= data.M0 + cushion, w, "sup |xi| over probe paths vs M0")

    w = max(abs(data.h(q)) for q in points)
    clause("bounded_barrier", w <= data.M0 + cushion, w, "sup |h| over probe points vs M0")

    w = max(abs(data.F(q, 0.0, np.zeros(data.d), k)) for q in points for k in range(data.n_controls))
    clause("bounded_driver_origin", w <= data.M0 + cushion, w, "sup |F(.,0,0,.)| vs M0")

    worst = 0.0
    for _ in range(probes):
        q = points[int(rng.integers(len(points)))]
        k = int(rng.integers(data.n_controls))
        y1, y2 = rng.uniform(-data.M0, data.M0, size=2)
        z1 = rng.uniform(-data.M0, data.M0, size=data.d)
        z2 = rng.uniform(-data.M0, data.M0, size=data.d)
        num = abs(data.F(q, y1, z1, k) - data.F(q, y2, z2, k))
        den = abs(y1 - y2) + float(np.linalg.norm(z1 - z2))
        if den > 1e-12:
            worst = max(worst, num / den)
    clause("lipschitz_driver", worst <= data.L0 + 1e-6, worst, "secant slopes in (y, z) vs L0")

    eigmin = min(float(np.linalg.eigvalsh(s).min()) for s in data.sigma)
    clause("sigma_nondegenerate", eigmin >= max(data.c0, 1e-12) - cushion and eigmin > 0, eigmin, "min eigenvalue vs c0")

    smax = max(float(np.linalg.norm(s, 2)) for s in data.sigma)
    clause("sigma_bounded", smax <= np.sqrt(2.0 * data.L0) + cushion, smax, "operator norm vs sqrt(2 L0)")

    w = min(data.xi(p) - data.h(PathPoint(p.end_time, p)) for p in paths)
    clause("terminal_dominates_barrier", w >= -cushion, w, "min xi - h(T) over probe paths")

    report["passed"] = all(c["passed"] for c in report["clauses"].values())
    return report
