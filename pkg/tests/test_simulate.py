import numpy as np
import pytest

from ppde_obstacle import families
from ppde_obstacle.errors import DomainError
from ppde_obstacle.model import ProblemData
from ppde_obstacle.paths import DiscretePath, PathPoint
from ppde_obstacle.simulate import ControlPolicy, PathBundle, bundle_to_csv, euler_bundle, gaussian_block, moment_report

# frozen fine-grid oracle (3200 steps, 4e5 paths, separate generator):
# E[(sup_{[0,1]} |B|)^2] estimate and its standard error
SUP_SQ_ORACLE = 1.8039
SUP_SQ_ORACLE_SE = 0.0026


def std_data(sigma=(1.0,)):
    return ProblemData(
        T=1.0,
        sigma=sigma,
        driver=families.ZeroDriver(),
        barrier=families.ConstBarrier(-10.0),
        terminal=families.PowerTerminal(2),
        M0=16.0,
        L0=1.0,
    )


def test_single_step_is_scaled_draw():
    data = std_data(sigma=(0.7,))
    b = euler_bundle(data, PathPoint.origin(), ControlPolicy.constant(0), 1, 64, seed=5)
    assert np.allclose(b.values[:, 1, 0], 0.7 * b.increments_w[:, 0, 0])


def test_terminal_moments_match_normal():
    data = std_data()
    b = euler_bundle(data, PathPoint.origin(), ControlPolicy.constant(0), 50, 100_000, seed=11)
    xT = b.values[:, -1, 0]
    se = xT.std() / np.sqrt(b.n_paths)
    assert abs(xT.mean()) <= 3 * se + 1e-12
    assert abs(xT.var() - 1.0) <= 0.02


def test_seed_determinism_bit_identical():
    data = std_data(sigma=(0.5, 1.0))
    pol = ControlPolicy.from_feedback(lambda i, x: (x[:, 0] > 0).astype(int))
    a = euler_bundle(data, PathPoint.origin(), pol, 20, 500, seed=42)
    b = euler_bundle(data, PathPoint.origin(), pol, 20, 500, seed=42)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.increments_w, b.increments_w)
    c = euler_bundle(data, PathPoint.origin(), pol, 20, 500, seed=43)
    assert not np.array_equal(a.values, c.values)


def test_antithetic_pairing():
    z = gaussian_block(7, 10, 4, 1, antithetic=True)
    assert np.allclose(z[0::2], -z[1::2])


def test_martingale_every_policy():
    data = std_data(sigma=(0.5, 1.0))
    for pol in (
        ControlPolicy.constant(0),
        ControlPolicy.constant(1),
        ControlPolicy.from_steps([0, 1] * 10),
        ControlPolicy.from_feedback(lambda i, x: (x[:, 0] < 0).astype(int)),
    ):
        b = euler_bundle(data, PathPoint.origin(), pol, 20, 20_000, seed=3)
        xT = b.values[:, -1, 0]
        se = xT.std() / np.sqrt(b.n_paths)
        assert abs(xT.mean()) <= 3 * se + 1e-12


def test_covariance_consistency():
    data = std_data(sigma=(0.5, 1.0))
    pol = ControlPolicy.from_steps([0, 1] * 10)
    b = euler_bundle(data, PathPoint.origin(), pol, 20, 20_000, seed=9)
    rep = moment_report(b, data=data)
    assert rep["cov_worst_z"] <= 3.5


def test_sup_moment_matches_fine_grid_oracle():
    data = std_data()
    b = euler_bundle(data, PathPoint.origin(), ControlPolicy.constant(0), 50, 100_000, seed=21)
    rep = moment_report(b)
    est, se = rep["sup_norm_p2"], rep["sup_norm_p2_se"]
    assert np.isfinite(est)
    # coarse grid max under-reads the sup: allow the Asmussen-Glynn bias term
    bias = 1.6 * np.sqrt(b.dt)
    assert abs(est - SUP_SQ_ORACLE) <= 3 * (se + SUP_SQ_ORACLE_SE) + bias


def test_common_noise_shifted_bases_exact_equality():
    data = std_data(sigma=(0.5, 1.0))
    pol = ControlPolicy.from_steps([1, 0] * 8)
    base_a = PathPoint.origin(dt=0.0625)
    prefix = DiscretePath.linear(0.0, 0.0625, 8, 1.0)  # a different history
    base_b = PathPoint(0.5, prefix)
    # both bundles start at t = 0 vs t = 0.5; to share noise compare equal spans
    a = euler_bundle(data, PathPoint(0.5, DiscretePath.zeros(0.0, 0.0625, 8)), pol, 8, 1000, seed=4)
    b = euler_bundle(data, base_b, pol, 8, 1000, seed=4)
    rep = moment_report(a, other=b)
    assert rep["common_noise_gap"] == 0.0


def test_zero_step_bundle_rejected():
    data = std_data()
    with pytest.raises(DomainError):
        euler_bundle(data, PathPoint.origin(), ControlPolicy.constant(0), 0, 10, seed=1)


def test_full_paths_offsets_base():
    data = std_data()
    prefix = DiscretePath.linear(0.0, 0.125, 8, 2.0)  # ends at 1.0... value 2*t
    base = PathPoint(0.5, prefix)
    b = euler_bundle(data, base, ControlPolicy.constant(0), 4, 16, seed=2)
    times, vals = b.full_paths()
    i0 = base.index
    assert times[i0] == pytest.approx(0.5)
    assert np.allclose(vals[:, i0, 0], 1.0)          # base value 2 * 0.5
    assert np.allclose(vals[:, :i0, 0], prefix.values[:i0, 0][None, :])


def test_bundle_csv(tmp_path):
    data = std_data()
    b = euler_bundle(data, PathPoint.origin(), ControlPolicy.constant(0), 3, 4, seed=8)
    f = tmp_path / "b.csv"
    bundle_to_csv(b, f)
    rows = f.read_text().strip().splitlines()
    assert rows[0] == "path,step,time,x_1"
    assert len(rows) == 1 + 4 * 4


def test_zero_step_bundle_moments_vanish():
    # a degenerate bundle constructed directly: all sup-norm moments are zero
    base = PathPoint.origin()
    vals = np.zeros((8, 1, 1))
    b = PathBundle(base, ControlPolicy.constant(0), 0, 0.1, vals,
                   np.zeros((8, 0, 1)), np.zeros((8, 0), dtype=np.int64), True)
    rep = moment_report(b)
    assert rep["sup_norm_p2"] == 0.0
    assert rep["sup_norm_p4"] == 0.0
