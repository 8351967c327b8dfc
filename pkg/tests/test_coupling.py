import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fundgap.coupling import (
    BLOCK_SIZE,
    Outcome,
    SimConfig,
    reflection_matrix,
    simulate,
    simulate_ensemble,
    step_pair,
    write_raw_paths,
)
from fundgap.domain import Disk

FAST = SimConfig(dt=4e-5, eta=0.04, horizon=0.02, n_traj=300, record_stride=50)


class ZeroDrift:
    """Field stub with vanishing drift on the unit disk."""

    domain = Disk(1.0)
    dim = 2

    def log_gradient_batch(self, pts):
        return np.zeros_like(np.asarray(pts, dtype=float))


# -- reflection matrix ---------------------------------------------------------

def test_reflection_axis_example():
    np.testing.assert_array_equal(reflection_matrix([1.0, 0.0], [0.0, 0.0]), [[-1.0, 0.0], [0.0, 1.0]])


def test_reflection_coincident():
    with pytest.raises(ValueError):
        reflection_matrix([0.1, 0.2], [0.1, 0.2])


@settings(max_examples=200)
@given(arrays(np.float64, 2, elements=st.floats(-1, 1)), arrays(np.float64, 2, elements=st.floats(-1, 1)))
def test_reflection_algebra(x, y):
    if np.linalg.norm(x - y) < 1e-6:
        return
    M = reflection_matrix(x, y)
    e = (x - y) / np.linalg.norm(x - y)
    v = np.array([-e[1], e[0]])
    assert np.max(np.abs(M @ M - np.eye(2))) <= 1e-14
    assert np.max(np.abs(M - M.T)) == 0.0
    assert np.max(np.abs(M @ e + e)) <= 1e-14
    assert np.max(np.abs(M @ v - v)) <= 1e-14
    assert abs(np.linalg.det(M) + 1.0) <= 1e-14


def test_reflection_three_dimensions():
    M = reflection_matrix([1.0, 2.0, 3.0], [0.0, 0.0, 1.0])
    assert np.linalg.det(M) == pytest.approx(-1.0)
    np.testing.assert_allclose(M @ M, np.eye(3), atol=1e-14)


# -- single steps --------------------------------------------------------------

def test_zero_step_is_noop():
    x, y = np.array([0.2, 0.1]), np.array([-0.3, 0.0])
    xn, yn, ok = step_pair((x, y), ZeroDrift(), 1e-4, np.zeros(2))
    assert ok
    np.testing.assert_array_equal(xn, x)
    np.testing.assert_array_equal(yn, y)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.01, 0.01), st.floats(-0.01, 0.01))
def test_difference_moves_along_e(b1, b2):
    x, y = np.array([0.2, 0.1]), np.array([-0.2, 0.1])
    dB = np.array([b1, b2])
    xn, yn, ok = step_pair((x, y), ZeroDrift(), 1e-4, dB)
    assert ok
    np.testing.assert_allclose((xn - yn) - (x - y), [2 * math.sqrt(2) * b1, 0.0], atol=1e-15)
    np.testing.assert_allclose(xn, x + math.sqrt(2) * dB)


def test_difference_with_drift(disk_field):
    x, y = np.array([0.3, -0.2]), np.array([-0.1, 0.25])
    dt = 1e-5
    dB = np.array([0.003, -0.001])
    xn, yn, _ = step_pair((x, y), disk_field, dt, dB)
    e = (x - y) / np.linalg.norm(x - y)
    alpha = disk_field.log_gradient(x) - disk_field.log_gradient(y)
    expected = (x - y) + 2 * math.sqrt(2) * (e @ dB) * e + 2 * dt * alpha
    np.testing.assert_allclose(xn - yn, expected, atol=1e-15)


def test_exit_without_budget():
    x, y = np.array([0.99, 0.0]), np.array([0.5, 0.0])
    xn, yn, ok = step_pair((x, y), ZeroDrift(), 1e-4, np.array([0.1, 0.0]))
    assert not ok
    np.testing.assert_array_equal(xn, x)


def test_exit_retry_keeps_inside(disk_field):
    # the full Euler step overshoots; the halved steps feel the 1/rho drift in between
    x, y = np.array([0.995, 0.0]), np.array([0.5, 0.0])
    dt, dB = 1e-4, np.array([0.05, 0.0])
    assert not step_pair((x, y), disk_field, dt, dB)[2]
    rng = np.random.default_rng(0)
    hits = 0
    for _ in range(50):
        xn, yn, ok = step_pair((x, y), disk_field, dt, dB, rng=rng, max_retries=8)
        if ok:
            hits += 1
            assert Disk(1.0).contains(xn) and Disk(1.0).contains(yn)
    assert hits > 0


def test_step_needs_distinct_points():
    with pytest.raises(ValueError):
        step_pair((np.zeros(2), np.zeros(2)), ZeroDrift(), 1e-4, np.zeros(2))


# -- configuration ---------------------------------------------------------------

@pytest.mark.parametrize("changes", [
    {"dt": 0.0}, {"eta": -1.0}, {"delta": 0.0}, {"horizon": float("nan")},
    {"n_traj": 0}, {"record_stride": 0}, {"max_retries": -1}, {"seed": -1}, {"seed": 2**64},
    {"eta": 0.001},  # below 4 sqrt(2 dt)
])
def test_config_validation(changes):
    with pytest.raises(ValueError):
        SimConfig().replace(**changes)


def test_config_helpers():
    cfg = SimConfig(dt=1e-5, eta=0.02, horizon=0.2)
    assert cfg.n_steps == 20000
    assert cfg.safety_factor == pytest.approx(0.02 / math.sqrt(2e-5))
    assert cfg.safety_factor >= 4
    assert cfg.to_dict()["dt"] == 1e-5
    assert cfg.replace(seed=3).seed == 3


# -- ensembles ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def fast_ensemble(coarse_disk_field):
    return simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST, record_positions=True)


def test_already_coupled(coarse_disk_field):
    cfg = FAST.replace(n_traj=5)
    e = np.array([1.0, 0.0])
    y0 = np.array([0.1, 0.0])
    ens = simulate_ensemble(y0 + 0.5 * cfg.eta * e, y0, coarse_disk_field, cfg)
    assert np.all(ens.outcome == Outcome.COUPLED)
    assert np.all(ens.final_time == 0.0)
    assert np.all(ens.xi == 0.0)


def test_trajectory_invariants(fast_ensemble):
    ens = fast_ensemble
    D = 2.0
    assert np.all(ens.xi >= 0)
    assert np.all(2 * ens.xi <= D)
    for i in np.flatnonzero(ens.outcome == Outcome.COUPLED):
        after = ens.times >= ens.final_time[i]
        assert np.all(ens.xi[i, after] == 0.0)
        np.testing.assert_array_equal(ens.X[i, after], ens.Y[i, after])
    assert np.all(np.diff(ens.times) > 0)
    assert ens.times[-1] == pytest.approx(FAST.horizon)
    np.testing.assert_allclose(ens.xi, 0.5 * np.linalg.norm(ens.X - ens.Y, axis=2), atol=1e-15)


def test_deterministic(coarse_disk_field, fast_ensemble):
    again = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST, record_positions=True)
    np.testing.assert_array_equal(again.xi, fast_ensemble.xi)
    np.testing.assert_array_equal(again.F, fast_ensemble.F)
    other = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST.replace(seed=1))
    assert not np.array_equal(other.xi, fast_ensemble.xi)


def test_workers_do_not_change_results(coarse_disk_field, fast_ensemble):
    par = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST, record_positions=True, workers=2)
    np.testing.assert_array_equal(par.xi, fast_ensemble.xi)
    np.testing.assert_array_equal(par.outcome, fast_ensemble.outcome)


def test_single_trajectory_matches_ensemble(coarse_disk_field, fast_ensemble):
    i = BLOCK_SIZE + 7
    tr = simulate([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST, index=i)
    np.testing.assert_array_equal(tr.xi, fast_ensemble.xi[i])
    np.testing.assert_array_equal(tr.X, fast_ensemble.X[i])
    assert tr.outcome == Outcome(int(fast_ensemble.outcome[i]))
    with pytest.raises(IndexError):
        simulate([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST, index=FAST.n_traj)


def test_prefix_independent_of_n_traj(coarse_disk_field, fast_ensemble):
    # streams are keyed by block, so a smaller ensemble is a prefix of a larger one
    small = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, FAST.replace(n_traj=BLOCK_SIZE))
    np.testing.assert_array_equal(small.xi, fast_ensemble.xi[:BLOCK_SIZE])


def test_start_validation(coarse_disk_field):
    with pytest.raises(ValueError):
        simulate_ensemble([1.2, 0.0], [0.0, 0.0], coarse_disk_field, FAST)
    with pytest.raises(ValueError):
        simulate_ensemble([0.9995, 0.0], [0.0, 0.0], coarse_disk_field, FAST)


def test_per_trajectory_starts(coarse_disk_field):
    n = 20
    x0 = np.tile([0.3, 0.0], (n, 1))
    y0 = np.tile([-0.3, 0.0], (n, 1))
    y0[10:] = [-0.1, 0.0]
    ens = simulate_ensemble(x0, y0, coarse_disk_field, FAST.replace(n_traj=n))
    np.testing.assert_allclose(ens.xi[:10, 0], 0.3)
    np.testing.assert_allclose(ens.xi[10:, 0], 0.2)
    with pytest.raises(ValueError):
        simulate_ensemble(x0[:5], y0[:5], coarse_disk_field, FAST.replace(n_traj=n))


def test_exchange_symmetry(coarse_disk_field):
    cfg = FAST.replace(n_traj=1000, horizon=0.04, record_stride=100)
    a = simulate_ensemble([0.3, 0.1], [-0.2, -0.1], coarse_disk_field, cfg)
    b = simulate_ensemble([-0.2, -0.1], [0.3, 0.1], coarse_disk_field, cfg.replace(seed=99))
    se = np.sqrt(a.xi.var(axis=0, ddof=1) / a.n_traj + b.xi.var(axis=0, ddof=1) / b.n_traj)
    z = np.abs(a.xi.mean(axis=0) - b.xi.mean(axis=0))[1:] / se[1:]
    assert np.all(z < 4)


def test_accumulate_integral(coarse_disk_field):
    cfg = FAST.replace(n_traj=8, horizon=0.004, record_stride=10)
    ens = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, cfg, accumulate=lambda xi: np.ones_like(xi))
    running = ens.outcome == Outcome.HORIZON
    np.testing.assert_allclose(ens.integral[running, -1], cfg.horizon, rtol=1e-9)
    two = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, cfg,
                            accumulate=lambda xi: np.stack([xi, 2 * xi], axis=-1))
    assert two.integral.shape == (8, len(two.times), 2)
    np.testing.assert_allclose(two.integral[..., 1], 2 * two.integral[..., 0])


def test_boundary_fraction_shrinks_with_delta(coarse_disk_field):
    cfg = SimConfig(horizon=0.05, n_traj=512, record_stride=500)
    x0, y0 = [0.95, 0.0], [0.5, 0.0]
    small = simulate_ensemble(x0, y0, coarse_disk_field, cfg.replace(delta=1e-3))
    large = simulate_ensemble(x0, y0, coarse_disk_field, cfg.replace(delta=1e-2))
    assert small.fraction(Outcome.BOUNDARY) < large.fraction(Outcome.BOUNDARY)


@pytest.mark.slow
def test_disk_couples(disk_field):
    cfg = SimConfig(dt=1e-5, horizon=5.0, n_traj=1000, record_stride=10_000)
    ens = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], disk_field, cfg)
    assert ens.fraction(Outcome.COUPLED) >= 0.99


def test_raw_paths(tmp_path, coarse_disk_field):
    cfg = FAST.replace(n_traj=3)
    ens = simulate_ensemble([0.3, 0.0], [-0.3, 0.0], coarse_disk_field, cfg)
    path = tmp_path / "paths.txt"
    write_raw_paths(ens, path, start=10)
    lines = path.read_text().splitlines()
    assert lines[0] == "# traj time xi F outcome"
    assert len(lines) == 1 + 3 * len(ens.times)
    first = lines[1].split()
    assert first[0] == "10"
    assert float(first[2]) == pytest.approx(0.3)
    assert first[4] in {"horizon", "coupled", "boundary"}
    data = np.loadtxt(path, usecols=(0, 1, 2, 3))
    np.testing.assert_array_equal(data[:, 2].reshape(3, -1), ens.xi)
