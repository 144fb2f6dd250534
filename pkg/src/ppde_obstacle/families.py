"""Built-in barrier/terminal/driver families.

Every family offers three views of the same functional:
  at(...)      scalar evaluation on path-space objects,
  batch(...)   vectorized evaluation over a bundle of paths
               (values arrays of shape (n_paths, n_times, d)),
  state(...)   vectorized evaluation in the current value only
               (available when markovian is True; used by tree/FD solvers).

Drivers broadcast over numpy arrays in (y, z), which is what the grid
solvers rely on.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

# ---------------------------------------------------------------------------
# barriers  h(t, omega)
# ---------------------------------------------------------------------------


class Barrier:
    markovian = False
    name = "barrier"

    def at(self, p) -> float:
        times = p.path.times
        vals = p.path.values[None, :, :]
        return float(self.batch(times, vals, p.index)[0])

    def batch(self, times, values, i):
        raise NotImplementedError

    def state(self, t, x):
        raise NotImplementedError

    def params(self) -> dict:
        return {}


class _MarkovBarrier(Barrier):
    """Barrier depending on (t, current value) only."""

    markovian = True

    def batch(self, times, values, i):
        return self.state(times[i], values[:, i, 0])


class ConstBarrier(_MarkovBarrier):
    name = "const"

    def __init__(self, c=0.0):
        self.c = float(c)

    def state(self, t, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    def params(self):
        return {"c": self.c}


class AbsBarrier(_MarkovBarrier):
    name = "abs"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def state(self, t, x):
        return self.scale * np.abs(np.asarray(x, dtype=float))

    def params(self):
        return {"scale": self.scale}


class PutBarrier(_MarkovBarrier):
    name = "put"

    def __init__(self, strike=0.0, scale=1.0):
        self.strike = float(strike)
        self.scale = float(scale)

    def state(self, t, x):
        return self.scale * np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)

    def params(self):
        return {"strike": self.strike, "scale": self.scale}


class CosBarrier(_MarkovBarrier):
    name = "cos"

    def __init__(self, scale=1.0, freq=1.0, shift=0.0):
        self.scale, self.freq, self.shift = float(scale), float(freq), float(shift)

    def state(self, t, x):
        return self.scale * np.cos(self.freq * np.asarray(x, dtype=float)) + self.shift

    def params(self):
        return {"scale": self.scale, "freq": self.freq, "shift": self.shift}


class RunningMaxBarrier(Barrier):
    """h(t, omega) = scale * max_{s <= t} omega^1_s  (path dependent)."""

    name = "running_max"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def batch(self, times, values, i):
        return self.scale * np.max(values[:, : i + 1, 0], axis=1)

    def params(self):
        return {"scale": self.scale}


# ---------------------------------------------------------------------------
# terminals  xi(omega)
# ---------------------------------------------------------------------------


class Terminal:
    markovian = False
    name = "terminal"

    def at(self, path) -> float:
        return float(self.batch(path.times, path.values[None, :, :])[0])

    def batch(self, times, values):
        raise NotImplementedError

    def state(self, x):
        raise NotImplementedError

    def params(self) -> dict:
        return {}


class _MarkovTerminal(Terminal):
    markovian = True

    def batch(self, times, values):
        return self.state(values[:, -1, 0])


class PowerTerminal(_MarkovTerminal):
    """xi = scale * omega_T^power (power 1 and 2 cover the staple cases)."""

    name = "power"

    def __init__(self, power=1, scale=1.0):
        self.power = int(power)
        self.scale = float(scale)

    def state(self, x):
        return self.scale * np.asarray(x, dtype=float) ** self.power

    def params(self):
        return {"power": self.power, "scale": self.scale}


class AbsTerminal(_MarkovTerminal):
    name = "abs"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def state(self, x):
        return self.scale * np.abs(np.asarray(x, dtype=float))

    def params(self):
        return {"scale": self.scale}


class PutTerminal(_MarkovTerminal):
    name = "put"

    def __init__(self, strike=0.0, scale=1.0):
        self.strike = float(strike)
        self.scale = float(scale)

    def state(self, x):
        return self.scale * np.maximum(self.strike - np.asarray(x, dtype=float), 0.0)

    def params(self):
        return {"strike": self.strike, "scale": self.scale}


class ConstTerminal(_MarkovTerminal):
    name = "const"

    def __init__(self, c=0.0):
        self.c = float(c)

    def state(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.c)

    def params(self):
        return {"c": self.c}


class CosTerminal(_MarkovTerminal):
    name = "cos"

    def __init__(self, scale=1.0, freq=1.0, shift=0.0):
        self.scale, self.freq, self.shift = float(scale), float(freq), float(shift)

    def state(self, x):
        return self.scale * np.cos(self.freq * np.asarray(x, dtype=float)) + self.shift

    def params(self):
        return {"scale": self.scale, "freq": self.freq, "shift": self.shift}


class RunningMaxTerminal(Terminal):
    name = "running_max"

    def __init__(self, scale=1.0):
        self.scale = float(scale)

    def batch(self, times, values):
        return self.scale * np.max(values[:, :, 0], axis=1)

    def params(self):
        return {"scale": self.scale}


# ---------------------------------------------------------------------------
# drivers  F(t, omega, y, z, k);  z is the sigma(k)-scaled gradient argument
# ---------------------------------------------------------------------------


class Driver:
    markovian = True  # all built-ins depend on (t, y, z) at most
    name = "driver"
    lipschitz = 0.0   # Lipschitz constant in (y, z), used by validate defaults

    def at(self, p, y, z, k) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return float(self.state(p.t, p.value[0], np.asarray(y, dtype=float), z[..., 0], k))

    def batch(self, t, i, times, values, y, z, k):
        return self.state(t, values[:, i, 0], y, z[..., 0] if np.ndim(z) > 1 else z, k)

    def state(self, t, x, y, z, k):
        """Vectorized in (x, y, z); z is the first component for d = 1."""
        raise NotImplementedError

    def params(self) -> dict:
        return {}


class ZeroDriver(Driver):
    name = "zero"

    def state(self, t, x, y, z, k):
        return np.zeros(np.broadcast(x, y, z).shape)


class DiscountDriver(Driver):
    """F = -r y, the classical discounting driver."""

    name = "discount"

    def __init__(self, r=0.05):
        self.r = float(r)
        self.lipschitz = abs(self.r)

    def state(self, t, x, y, z, k):
        return -self.r * np.asarray(y, dtype=float) + np.zeros(np.broadcast(x, y, z).shape)

    def params(self):
        return {"r": self.r}


class LinearDriver(Driver):
    """F = a y + b z."""

    name = "linear"

    def __init__(self, a=0.0, b=0.0):
        self.a, self.b = float(a), float(b)
        self.lipschitz = max(abs(self.a), abs(self.b))

    def state(self, t, x, y, z, k):
        return self.a * np.asarray(y, dtype=float) + self.b * np.asarray(z, dtype=float) + np.zeros(np.broadcast(x, y, z).shape)

    def params(self):
        return {"a": self.a, "b": self.b}


class AbsZDriver(Driver):
    """F = b |z|, a convex nonlinearity in the gradient."""

    name = "abs_z"

    def __init__(self, b=0.0):
        self.b = float(b)
        self.lipschitz = abs(self.b)

    def state(self, t, x, y, z, k):
        return self.b * np.abs(np.asarray(z, dtype=float)) + np.zeros(np.broadcast(x, y, z).shape)

    def params(self):
        return {"b": self.b}


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

BARRIERS = {c.name: c for c in (ConstBarrier, AbsBarrier, PutBarrier, CosBarrier, RunningMaxBarrier)}
TERMINALS = {c.name: c for c in (PowerTerminal, AbsTerminal, PutTerminal, ConstTerminal, CosTerminal, RunningMaxTerminal)}
DRIVERS = {c.name: c for c in (ZeroDriver, DiscountDriver, LinearDriver, AbsZDriver)}


def _build(registry, cfg, what):
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name not in registry:
        raise DomainError(f"unknown {what} family {name!r}; choose from {sorted(registry)}")
    return registry[name](**cfg)


def build_barrier(cfg) -> Barrier:
    return _build(BARRIERS, cfg, "barrier")


def build_terminal(cfg) -> Terminal:
    return _build(TERMINALS, cfg, "terminal")


def build_driver(cfg) -> Driver:
    return _build(DRIVERS, cfg, "driver")
