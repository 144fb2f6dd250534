import numpy as np
import pytest

from ppde_obstacle import families
from ppde_obstacle.errors import DomainError
from ppde_obstacle.model import (
    Modulus,
    ProblemData,
    TestFunctional,
    build_problem,
    change_of_variable,
    generator_G,
    invert_change_of_variable,
    monotone_transform_constants,
    operator_L,
    validate,
)
from ppde_obstacle.paths import DiscretePath, PathPoint


def make_data(sigma=(1.0,), driver=None, barrier=None, terminal=None, **kw):
    return ProblemData(
        T=kw.get("T", 1.0),
        sigma=sigma,
        driver=driver or families.ZeroDriver(),
        barrier=barrier or families.ConstBarrier(-10.0),
        terminal=terminal or families.PowerTerminal(2),
        M0=kw.get("M0", 16.0),
        L0=kw.get("L0", 1.0),
        rho0=kw.get("rho0", Modulus(1.0, 1.0)),
    )


def origin():
    return PathPoint.origin()


# ---------------------------------------------------------------------------
# generator
# ---------------------------------------------------------------------------

def test_generator_singleton():
    data = make_data()
    g = generator_G(data, origin(), 0.0, [0.0], [[2.0]])
    assert g.value == pytest.approx(1.0)
    assert g.argmax == 0


def test_generator_two_controls_positive_gamma():
    data = make_data(sigma=(0.5, 1.0))
    g = generator_G(data, origin(), 0.0, [0.0], [[2.0]])
    assert g.value == pytest.approx(1.0)
    assert g.argmax == 1


def test_generator_two_controls_negative_gamma():
    data = make_data(sigma=(0.5, 1.0))
    g = generator_G(data, origin(), 0.0, [0.0], [[-2.0]])
    assert g.value == pytest.approx(-0.25)
    assert g.argmax == 0


def test_generator_tie_breaks_low_index():
    data = make_data(sigma=(1.0, 1.0))
    assert generator_G(data, origin(), 0.0, [0.0], [[2.0]]).argmax == 0


def test_generator_monotone_in_gamma_psd_order():
    rng = np.random.default_rng(3)
    data = make_data(sigma=(0.5, 1.0), driver=families.LinearDriver(0.3, 0.4))
    for _ in range(40):
        g1 = rng.normal()
        bump = rng.uniform(0.0, 2.0)          # PSD perturbation in d = 1
        z = rng.normal(size=1)
        y = rng.normal()
        lo = generator_G(data, origin(), y, z, [[g1]]).value
        hi = generator_G(data, origin(), y, z, [[g1 + bump]]).value
        assert lo <= hi + 1e-12


def test_generator_convex_in_z_gamma():
    rng = np.random.default_rng(5)
    data = make_data(sigma=(0.5, 1.0), driver=families.AbsZDriver(0.7))
    for _ in range(40):
        z1, z2 = rng.normal(size=2)
        g1, g2 = rng.normal(size=2)
        y = rng.normal()
        mid = generator_G(data, origin(), y, [(z1 + z2) / 2], [[(g1 + g2) / 2]]).value
        avg = 0.5 * (
            generator_G(data, origin(), y, [z1], [[g1]]).value
            + generator_G(data, origin(), y, [z2], [[g2]]).value
        )
        assert mid <= avg + 1e-12


# ---------------------------------------------------------------------------
# operator on test functionals
# ---------------------------------------------------------------------------

def test_operator_time_functional():
    data = make_data()
    phi = TestFunctional(((1, 0, 1.0),))  # phi = t
    assert operator_L(data, phi, origin()) == pytest.approx(-1.0)


def test_operator_square_functional():
    data = make_data()
    phi = TestFunctional(((0, 2, 1.0),))  # phi = x^2
    assert operator_L(data, phi, origin()) == pytest.approx(-1.0)


def test_operator_heat_solution_vanishes_on_grid():
    data = make_data()
    phi = TestFunctional(((0, 2, 1.0), (1, 0, -1.0)))  # x^2 - t
    rng = np.random.default_rng(1)
    p = DiscretePath.from_increments(0.0, 0.05, rng.normal(0, 0.2, size=(20, 1)))
    for i in range(0, 21, 4):
        q = PathPoint(p.times[i], p)
        assert operator_L(data, phi, q) == pytest.approx(0.0, abs=1e-12)


def test_polynomial_partials_satisfy_ito_identity():
    # phi(T, X_T) - phi(0, 0) vs the functional Ito sum; residual shrinks with dt
    phi = TestFunctional(((1, 0, 0.5), (0, 2, 1.0), (1, 2, -0.3), (0, 4, 0.1)))
    sigma = 0.8
    rng = np.random.default_rng(7)

    def mean_residual(n_steps):
        dt = 1.0 / n_steps
        res = []
        for _ in range(200):
            dw = rng.normal(0, np.sqrt(dt), size=n_steps)
            x = np.concatenate([[0.0], np.cumsum(sigma * dw)])
            t = dt * np.arange(n_steps + 1)
            ito = np.sum(
                phi.dt(t[:-1], x[:-1]) * dt
                + 0.5 * phi.dxx(t[:-1], x[:-1]) * sigma**2 * dt
                + phi.dx(t[:-1], x[:-1]) * np.diff(x)
            )
            res.append(abs(phi.value(1.0, x[-1]) - phi.value(0.0, 0.0) - ito))
        return float(np.mean(res))

    r_coarse, r_fine = mean_residual(64), mean_residual(256)
    assert r_fine < r_coarse
    assert r_fine < 0.05


def test_polynomial_degree_cap():
    with pytest.raises(DomainError):
        TestFunctional(((0, 5, 1.0),))


# ---------------------------------------------------------------------------
# change of variable
# ---------------------------------------------------------------------------

def test_change_of_variable_identity():
    data = make_data(driver=families.LinearDriver(0.4, 0.2), barrier=families.AbsBarrier())
    tdata = change_of_variable(data, 0.0, 0.0, 0.0)
    rng = np.random.default_rng(11)
    p = DiscretePath.from_increments(0.0, 0.1, rng.normal(0, 0.3, size=(10, 1)))
    for i in (0, 5, 10):
        q = PathPoint(p.times[i], p)
        assert tdata.h(q) == pytest.approx(data.h(q), abs=1e-12)
        y, z = rng.normal(), rng.normal(size=1)
        assert tdata.F(q, y, z, 0) == pytest.approx(data.F(q, y, z, 0), abs=1e-12)
    assert tdata.xi(p) == pytest.approx(data.xi(p), abs=1e-12)


def test_change_of_variable_scaling_lambda_one():
    data = make_data(barrier=families.AbsBarrier(), terminal=families.PowerTerminal(1))
    tdata = change_of_variable(data, 1.0, 0.0, 0.0)
    rng = np.random.default_rng(13)
    p = DiscretePath.from_increments(0.0, 0.1, rng.normal(0, 0.3, size=(10, 1)))
    assert tdata.xi(p) == pytest.approx(np.e * data.xi(p))
    q = PathPoint(0.5, p)
    assert tdata.h(q) == pytest.approx(np.exp(0.5) * data.h(q))


def test_monotone_transform_probe_grid():
    # the chosen constants give a strict monotonicity gap and a nonnegative
    # driver on the barrier, on one thousand random probes
    data = make_data(
        sigma=(1.0,),
        driver=families.LinearDriver(0.4, 0.3),
        barrier=families.CosBarrier(0.8),
        terminal=families.CosTerminal(0.9),
        M0=1.0,
        L0=0.5,
    )
    lam, mu, C = monotone_transform_constants(data)
    tdata = change_of_variable(data, lam, mu, C)
    rng = np.random.default_rng(17)
    p = DiscretePath.from_increments(0.0, 0.05, rng.normal(0, 0.2, size=(20, 1)))
    for _ in range(1000):
        i = int(rng.integers(0, 21))
        q = PathPoint(p.times[i], p)
        y = rng.uniform(-3 * data.M0, 3 * data.M0)
        z = rng.normal(size=1)
        delta = rng.uniform(0.01, 1.0)
        k = 0
        assert tdata.F(q, y + delta, z, k) + delta <= tdata.F(q, y, z, k) + 1e-9
        hq = tdata.h(q)
        assert tdata.F(q, hq, np.zeros(1), k) >= -1e-9


def test_invert_change_of_variable_roundtrip():
    lam, mu, C = 2.0, 0.0, -5.0
    for t, u in [(0.0, 1.3), (0.4, -0.2), (1.0, 0.8)]:
        up = np.exp(lam * t) * u + C * np.exp(mu * t) * t
        assert invert_change_of_variable(up, t, lam, mu, C) == pytest.approx(u)


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def test_validate_compliant_put_data():
    data = ProblemData(
        T=1.0,
        sigma=(1.0,),
        driver=families.DiscountDriver(0.05),
        barrier=families.PutBarrier(0.2),
        terminal=families.PutTerminal(0.2),
        M0=16.0,
        L0=0.5,
    )
    rep = validate(data, probes=300, seed=1)
    assert rep["passed"], rep


def test_validate_degenerate_sigma_fails():
    data = make_data(sigma=(0.0,))
    rep = validate(data, probes=50, seed=1)
    assert not rep["clauses"]["sigma_nondegenerate"]["passed"]
    assert not rep["passed"]


def test_validate_lipschitz_violation_detected():
    data = make_data(driver=families.LinearDriver(2.0, 0.0), L0=1.0)  # slope L0 + 1
    rep = validate(data, probes=400, seed=2)
    assert not rep["clauses"]["lipschitz_driver"]["passed"]


def test_build_problem_roundtrip():
    cfg = {
        "T": 1.0,
        "sigma": [0.5, 1.0],
        "driver": {"name": "discount", "r": 0.05},
        "barrier": {"name": "abs", "scale": 1.0},
        "terminal": {"name": "abs"},
        "M0": 8.0,
        "L0": 1.0,
        "rho0": {"c": 1.0, "beta": 1.0},
    }
    data = build_problem(cfg)
    assert data.n_controls == 2
    assert data.describe()["driver"]["r"] == 0.05
    assert data.markovian


def test_modulus_form():
    rho = Modulus(2.0, 0.5)
    assert rho(0.25) == pytest.approx(2.0 * (0.5 + 0.25))
