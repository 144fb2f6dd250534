import numpy as np
import pytest

from ppde_obstacle.errors import DomainError
from ppde_obstacle.paths import (
    DiscretePath,
    LevelCascade,
    PathPoint,
    concat,
    dist_dinfty,
    hitting_time_delta,
    interpolate_hat_path,
    level_cascade,
    path_from_csv,
    path_to_csv,
    shift,
    skeleton_path,
    stop,
)


# ---------------------------------------------------------------------------
# independent oracle: plain forward scan of the cascade definition on the grid
# ---------------------------------------------------------------------------

def scan_cascade_oracle(t, x, alpha, path, anchor_time, T):
    """Direct per-step scan of the cascade recursion, no shared code."""
    times = list(path.times)
    vals = path.values[:, 0] - path.values[path.index_of(t), 0]
    i = path.index_of(t)
    out = []
    # first hit of |x + B|
    cap = min(anchor_time + alpha, T)
    j, hit = i + 1, None
    while times[j] <= cap + 1e-12:
        if abs(x + vals[j]) >= alpha - 1e-12:
            hit = j
            break
        if j == len(times) - 1:
            break
        j += 1
    if hit is None:
        hit = min(int(round((cap - path.t0) / path.dt)), len(times) - 1)
        hit = max(hit, i + 1)
    out.append(times[hit])
    while times[hit] < T - 1e-12:
        prev = hit
        cap = min(times[prev] + alpha, T)
        j, hit = prev + 1, None
        while times[j] <= cap + 1e-12:
            if abs(vals[j] - vals[prev]) >= alpha - 1e-12:
                hit = j
                break
            if j == len(times) - 1:
                break
            j += 1
        if hit is None:
            hit = min(int(round((cap - path.t0) / path.dt)), len(times) - 1)
            hit = max(hit, prev + 1)
        out.append(times[hit])
    return out


def brownian(rng, t0, dt, n, d=1, scale=1.0):
    inc = rng.normal(0.0, scale * np.sqrt(dt), size=(n, d))
    return DiscretePath.from_increments(t0, dt, inc)


# ---------------------------------------------------------------------------
# stop / concat / shift
# ---------------------------------------------------------------------------

def test_stop_linear_path():
    p = DiscretePath.linear(0.0, 0.1, 10, 1.0)  # 0 -> 1 on [0, 1]
    s = stop(p, 0.5)
    assert np.allclose(s.values[:6, 0], p.values[:6, 0])
    assert np.allclose(s.values[6:, 0], 0.5)


def test_stop_constant_zero_identity():
    p = DiscretePath.zeros(0.0, 0.25, 4)
    for t in [0.0, 0.25, 1.0]:
        assert np.array_equal(stop(p, t).values, p.values)


def test_stop_idempotent():
    p = DiscretePath.linear(0.0, 0.1, 10, 2.0)
    a = stop(stop(p, 0.3), 0.7)
    b = stop(p, 0.3)
    assert np.allclose(a.values, b.values)


def test_stop_outside_span_raises():
    p = DiscretePath.zeros(0.0, 0.1, 10)
    with pytest.raises(DomainError):
        stop(p, 1.5)


def test_concat_formula():
    left = DiscretePath.zeros(0.0, 0.1, 5)  # flat on [0, .5]
    right = DiscretePath.linear(0.5, 0.1, 5, 2.0)  # 0 -> 1 on [.5, 1]
    c = concat(left, right)
    assert c.n_points == 11
    assert c.values[-1, 0] == pytest.approx(1.0)
    assert np.allclose(c.values[:6, 0], 0.0)


def test_concat_zero_right_is_stopped_extension():
    left = DiscretePath.linear(0.0, 0.1, 5, 1.0)
    right = DiscretePath.zeros(0.5, 0.1, 5)
    c = concat(left, right)
    assert np.allclose(c.values[5:, 0], left.values[-1, 0])


def test_concat_misaligned_raises():
    left = DiscretePath.zeros(0.0, 0.1, 5)
    right = DiscretePath.zeros(0.7, 0.1, 3)
    with pytest.raises(DomainError):
        concat(left, right)


def test_shift_identity_at_start():
    p = DiscretePath.linear(0.0, 0.1, 10, 2.0)
    s = shift(p, 0.0)
    assert np.allclose(s.values, p.values)
    assert s.t0 == p.t0


def test_shift_linear():
    p = DiscretePath.linear(0.0, 0.1, 10, 2.0)
    s = shift(p, 0.5)
    assert s.t0 == pytest.approx(0.5)
    assert s.values[0, 0] == pytest.approx(0.0)
    assert np.allclose(s.values[:, 0], 2.0 * 0.1 * np.arange(6))


def test_shift_concat_inverse_pair():
    rng = np.random.default_rng(7)
    left = brownian(rng, 0.0, 0.05, 8)
    right = brownian(rng, 0.4, 0.05, 12)
    rec = shift(concat(left, right), 0.4)
    assert np.allclose(rec.values, right.values, atol=1e-12)
    # and the other direction on grid points
    p = brownian(rng, 0.0, 0.05, 20)
    rec2 = concat(
        DiscretePath(0.0, 0.05, p.values[:9]),
        shift(p, 0.4),
    )
    assert np.allclose(rec2.values, p.values, atol=1e-12)


# ---------------------------------------------------------------------------
# d-infinity metric
# ---------------------------------------------------------------------------

def test_dinfty_identical_zero():
    p = DiscretePath.linear(0.0, 0.1, 10, 1.0)
    a = PathPoint(0.5, p)
    assert dist_dinfty(a, a) == pytest.approx(0.0)


def test_dinfty_time_only():
    p = DiscretePath.zeros(0.0, 0.1, 10)
    assert dist_dinfty(PathPoint(0.0, p), PathPoint(0.5, p)) == pytest.approx(0.5)


def test_dinfty_constant_offset():
    p0 = DiscretePath.zeros(0.0, 0.1, 10)
    vals = np.full((11, 1), 3.0)
    vals[0] = 0.0
    pc = DiscretePath(0.0, 0.1, vals)
    assert dist_dinfty(PathPoint(1.0, p0), PathPoint(1.0, pc)) == pytest.approx(3.0)


def test_dinfty_metric_axioms_random():
    rng = np.random.default_rng(11)
    for _ in range(25):
        pts = []
        for _ in range(3):
            n = int(rng.integers(3, 14))
            p = brownian(rng, 0.0, 0.1, n)
            t = 0.1 * int(rng.integers(0, n + 1))
            pts.append(PathPoint(t, p))
        a, b, c = pts
        dab, dba = dist_dinfty(a, b), dist_dinfty(b, a)
        assert dab == pytest.approx(dba, abs=1e-12)          # symmetry
        assert dab >= -1e-15
        dac, dcb = dist_dinfty(a, c), dist_dinfty(c, b)
        assert dab <= dac + dcb + 1e-10                      # triangle
    # identity of indiscernibles on stopped paths
    p = brownian(np.random.default_rng(3), 0.0, 0.1, 10)
    a = PathPoint(0.4, p)
    b = PathPoint(0.4, stop(p, 0.4))
    assert dist_dinfty(a, b) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# hitting times
# ---------------------------------------------------------------------------

def test_hitting_cap_binds_for_flat_path():
    p = DiscretePath.zeros(0.0, 0.05, 20)
    assert hitting_time_delta(0.0, 0.3, p, T=1.0) == pytest.approx(0.3)


def test_hitting_level_crossing_slope_two():
    p = DiscretePath.linear(0.0, 0.05, 20, 2.0)
    assert hitting_time_delta(0.0, 0.3, p, T=1.0) == pytest.approx(0.15)


def test_hitting_cap_at_T():
    p = DiscretePath.zeros(0.0, 0.05, 20)
    assert hitting_time_delta(0.0, 2.0, p, T=1.0) == pytest.approx(1.0)


def test_hitting_in_open_interval():
    rng = np.random.default_rng(5)
    for _ in range(40):
        p = brownian(rng, 0.0, 0.02, 50, scale=2.0)
        delta = float(rng.uniform(0.05, 1.4))
        h = hitting_time_delta(0.0, delta, p, T=1.0)
        assert 0.0 < h <= min(delta, 1.0) + 1e-12


def test_hitting_nondecreasing_in_level():
    rng = np.random.default_rng(9)
    for _ in range(20):
        p = brownian(rng, 0.0, 0.02, 50)
        hs = [hitting_time_delta(0.0, d, p, T=1.0) for d in (0.1, 0.2, 0.4, 0.8)]
        assert all(a <= b + 1e-12 for a, b in zip(hs, hs[1:]))


# ---------------------------------------------------------------------------
# level cascade
# ---------------------------------------------------------------------------

def test_cascade_flat_path_caps():
    p = DiscretePath.zeros(0.0, 0.05, 20)
    c = level_cascade(0.0, 0.0, 0.25, p, T=1.0)
    assert np.allclose(c.times, [0.25, 0.5, 0.75, 1.0])


def test_cascade_slope_one_crossings():
    p = DiscretePath.linear(0.0, 0.05, 20, 1.0)
    c = level_cascade(0.0, 0.0, 0.2, p, T=1.0)
    assert np.allclose(c.times, [0.2, 0.4, 0.6, 0.8, 1.0])
    assert np.allclose([a[0] for a in c.anchors], 0.2)


def test_cascade_matches_scan_oracle():
    rng = np.random.default_rng(17)
    for _ in range(30):
        p = brownian(rng, 0.2, 0.01, 80)
        alpha = float(rng.uniform(0.1, 0.5))
        x = float(rng.uniform(-alpha, alpha)) * 0.9
        c = level_cascade(0.2, x, alpha, p, anchor_time=0.1, T=1.0)
        oracle = scan_cascade_oracle(0.2, x, alpha, p, 0.1, 1.0)
        assert np.allclose(c.times, oracle)


def test_cascade_invariants_on_brownian():
    rng = np.random.default_rng(23)
    for _ in range(25):
        p = brownian(rng, 0.0, 0.01, 100)
        alpha = float(rng.uniform(0.1, 0.4))
        c = level_cascade(0.0, 0.0, alpha, p, T=1.0)
        ts = np.array(c.times)
        k = np.searchsorted(ts, 1.0 - 1e-12)
        assert np.all(np.diff(ts[: k + 1]) > 0)          # strictly increasing to T
        assert np.allclose(ts[k:], 1.0)
        gaps = np.diff(np.concatenate([[0.0], ts]))
        assert np.all(gaps <= alpha + p.dt + 1e-12)      # cap slack one grid step
        # anchors exceed alpha only by the one-step grid overshoot
        max_move = np.max(np.abs(np.diff(p.values[:, 0])))
        for a in c.anchors:
            assert np.linalg.norm(a) <= alpha + max_move + 1e-9


def test_cascade_rejects_large_offset():
    p = DiscretePath.zeros(0.0, 0.05, 20)
    with pytest.raises(DomainError):
        level_cascade(0.0, 0.5, 0.25, p, T=1.0)


# ---------------------------------------------------------------------------
# hat path
# ---------------------------------------------------------------------------

def test_hat_path_zero_inputs():
    p = DiscretePath.zeros(0.0, 0.05, 20)
    hat = interpolate_hat_path([(0.0, 0.0)], 0.0, 0.0, 0.25, p, T=1.0)
    assert np.allclose(hat.values, 0.0)


def test_hat_path_slope_one_knots():
    p = DiscretePath.linear(0.0, 0.05, 20, 1.0)
    hat = interpolate_hat_path([(0.0, 0.0)], 0.0, 0.0, 0.2, p, T=1.0)
    # knots every 0.2 carry the true value; linear in between = the path itself
    assert np.allclose(hat.values[:, 0], p.values[:, 0], atol=1e-12)


def test_skeleton_path_interpolates_prefix():
    pi = [(0.0, 0.0), (0.25, 0.2), (0.5, -0.1)]
    sk = skeleton_path(pi, 1.0, 0.05)
    assert sk.value_at(0.25)[0] == pytest.approx(0.2)
    assert sk.value_at(0.5)[0] == pytest.approx(0.1)
    assert sk.value_at(1.0)[0] == pytest.approx(0.1)  # constant extension
    assert sk.value_at(0.125)[0] == pytest.approx(0.1)  # halfway up the first leg


def test_hat_path_offset_bound_on_hoelder_event():
    # ||hat^x - hat^0|| <= 16 d K^3 / alpha^2 + |x| whenever the measured
    # hitting-time gap d is below alpha^3 / (32 K^3) and the path is
    # 1/3-Hoelder with constant K (grid estimate).
    rng = np.random.default_rng(41)
    alpha, T, dt = 0.4, 1.0, 0.002
    checked = 0
    for _ in range(80):
        p = brownian(rng, 0.0, dt, int(T / dt))
        x = float(rng.uniform(0.005, 0.05))
        hat_x = interpolate_hat_path([(0.0, 0.0)], 0.0, x, alpha, p, T=T)
        hat_0 = interpolate_hat_path([(0.0, 0.0)], 0.0, 0.0, alpha, p, T=T)
        cx = level_cascade(0.0, x, alpha, p, T=T)
        c0 = level_cascade(0.0, 0.0, alpha, p, T=T)
        n = min(len(cx.times), len(c0.times))
        gap = max(abs(a - b) for a, b in zip(cx.times[:n], c0.times[:n]))
        # grid Hoelder-1/3 constant over a lag ladder
        v = p.values[:, 0]
        K = 0.0
        for lag in range(1, 60):
            K = max(K, np.max(np.abs(v[lag:] - v[:-lag])) / (lag * dt) ** (1.0 / 3.0))
        if gap <= alpha**3 / (32 * K**3):
            checked += 1
            bound = 16 * gap * K**3 / alpha**2 + x + 2 * dt * K
            assert np.max(np.abs(hat_x.values - hat_0.values)) <= bound + 1e-9
    assert checked >= 10  # the event must actually occur


# ---------------------------------------------------------------------------
# serialization and invariants of the types
# ---------------------------------------------------------------------------

def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    p = brownian(rng, 0.0, 0.1, 10, d=2)
    f = tmp_path / "p.csv"
    path_to_csv(p, f)
    q = path_from_csv(f)
    assert q.t0 == pytest.approx(p.t0)
    assert q.dt == pytest.approx(p.dt)
    assert np.allclose(q.values, p.values, atol=1e-10)


def test_path_requires_zero_start():
    with pytest.raises(DomainError):
        DiscretePath(0.0, 0.1, np.array([[1.0], [2.0]]))


def test_values_are_immutable():
    p = DiscretePath.zeros(0.0, 0.1, 4)
    with pytest.raises(ValueError):
        p.values[0, 0] = 1.0


def test_cascade_type_validation():
    with pytest.raises(DomainError):
        LevelCascade(-0.1)
