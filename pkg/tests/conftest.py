"""Shared instances used across the solver and acceptance tests."""

import numpy as np
import pytest

from ppde_obstacle import families
from ppde_obstacle.model import Modulus, ProblemData


def quadratic_instance():
    """K singleton, sigma = 1, F = 0, h = -10, xi = omega_T^2; value 1 at T = 1."""
    return ProblemData(
        T=1.0,
        sigma=(1.0,),
        driver=families.ZeroDriver(),
        barrier=families.ConstBarrier(-10.0),
        terminal=families.PowerTerminal(2),
        M0=16.0,
        L0=1.0,
        rho0=Modulus(2.0, 1.0),
        label="quadratic-inactive",
    )


def abs_instance():
    """Stopping instance: h = |omega_t|, xi = |omega_T|, sigma = 1."""
    return ProblemData(
        T=1.0,
        sigma=(1.0,),
        driver=families.ZeroDriver(),
        barrier=families.AbsBarrier(1.0),
        terminal=families.AbsTerminal(1.0),
        M0=8.0,
        L0=1.0,
        rho0=Modulus(1.0, 1.0),
        label="abs-stopping",
    )


def put_instance(strike=0.2, rate=0.05, sigma=1.0):
    """American-put style obstacle instance with discounting within L0."""
    return ProblemData(
        T=1.0,
        sigma=(sigma,),
        driver=families.DiscountDriver(rate),
        barrier=families.PutBarrier(strike),
        terminal=families.PutTerminal(strike),
        M0=16.0,
        L0=0.5,
        rho0=Modulus(1.0, 1.0),
        label="american-put",
    )


def two_control_instance(terminal_scale=1.0):
    """K = {0.5, 1.0}, F = 0, barrier inactive, xi = scale * omega_T^2."""
    return ProblemData(
        T=1.0,
        sigma=(0.5, 1.0),
        driver=families.ZeroDriver(),
        barrier=families.ConstBarrier(-10.0),
        terminal=families.PowerTerminal(2, terminal_scale),
        M0=16.0,
        L0=1.0,
        rho0=Modulus(2.0, 1.0),
        label="two-control",
    )


def bounded_instance():
    """Small-M0 instance used by the change-of-variable round trip."""
    return ProblemData(
        T=1.0,
        sigma=(1.0,),
        driver=families.ZeroDriver(),
        barrier=families.ConstBarrier(-1.0),
        terminal=families.CosTerminal(1.0),
        M0=1.0,
        L0=0.5,
        rho0=Modulus(1.0, 1.0),
        label="bounded-cos",
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
