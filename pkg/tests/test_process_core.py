"""Path simulation: keyed streams, path queries, caps, and determinism."""

import io
import math

import numpy as np
import pytest

from cmpplab.distributions import Degenerate, DiscreteFinite, Exponential, Gamma
from cmpplab.process_core import (
    EventCapExceeded,
    RiskPath,
    TimeGrid,
    aggregate_at,
    count_at,
    dump_paths_csv,
    increments,
    path_streams,
    simulate_cmpp_path,
    simulate_cpp_path,
    simulate_ensemble,
    simulate_renewal_path,
)


def _hand_path():
    return RiskPath(
        theta=1.0,
        arrivals=np.array([0.5, 1.0, 1.5]),
        claims=np.array([1.0, 2.0, 3.0]),
        horizon=2.0,
        kind="cpp",
    )


def test_path_streams_reproducible_and_disjoint():
    a = path_streams(42, 7)
    b = path_streams(42, 7)
    assert a.interarrival.random() == b.interarrival.random()
    # Different path index, substream, namespace, or seed gives a new stream.
    base = path_streams(42, 7).interarrival.random()
    assert path_streams(42, 8).interarrival.random() != base
    assert path_streams(42, 7).claim.random() != base
    assert path_streams(42, 7, namespace=1).interarrival.random() != base
    assert path_streams(43, 7).interarrival.random() != base


@pytest.mark.parametrize(
    "seed,index,namespace",
    [(-1, 0, 0), (2**64, 0, 0), (0, -1, 0), (0, 2**38, 0), (0, 0, 2**24)],
)
def test_path_streams_key_range_enforced(seed, index, namespace):
    with pytest.raises(ValueError):
        path_streams(seed, index, namespace)


def test_time_grid_validation():
    TimeGrid([0.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        TimeGrid([0.5, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        TimeGrid([])
    assert TimeGrid([0.0, 1.0, 3.0]).adjacent_pairs() == ((0.0, 1.0), (1.0, 3.0))


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(arrivals=[1.0, 0.5], claims=[1.0, 1.0]),
        dict(arrivals=[0.5, 0.5], claims=[1.0, 1.0]),
        dict(arrivals=[-0.5, 0.5], claims=[1.0, 1.0]),
        dict(arrivals=[0.5, 2.5], claims=[1.0, 1.0]),
        dict(arrivals=[0.5], claims=[1.0, 1.0]),
        dict(arrivals=[0.5], claims=[0.0]),
        dict(arrivals=[0.5], claims=[1.0], kind="bogus"),
        dict(arrivals=[0.5], claims=[1.0], theta=0.0),
    ],
)
def test_risk_path_invariants(kwargs):
    base = dict(theta=1.0, horizon=2.0, kind="cpp")
    base.update(kwargs)
    with pytest.raises(ValueError):
        RiskPath(
            theta=base["theta"],
            arrivals=np.asarray(base["arrivals"], dtype=float),
            claims=np.asarray(base["claims"], dtype=float),
            horizon=base["horizon"],
            kind=base["kind"],
        )


def test_count_and_aggregate_at_jump_times():
    """Counts are right-continuous: the jump at t belongs to [0, t]."""
    p = _hand_path()
    assert count_at(p, 0.0) == 0
    assert count_at(p, 0.25) == 0
    assert count_at(p, 0.5) == 1
    assert count_at(p, 1.4999) == 2
    assert count_at(p, 2.0) == 3
    assert aggregate_at(p, 0.0) == 0.0
    assert aggregate_at(p, 0.5) == 1.0
    assert aggregate_at(p, 1.0) == 3.0
    assert aggregate_at(p, 2.0) == 6.0


def test_count_at_outside_horizon_raises():
    p = _hand_path()
    with pytest.raises(ValueError):
        count_at(p, 2.5)
    with pytest.raises(ValueError):
        aggregate_at(p, -0.1)


def test_increments_match_pointwise_queries():
    p = _hand_path()
    grid = TimeGrid([0.0, 0.5, 1.0, 2.0])
    np.testing.assert_array_equal(increments(p, grid, "count"), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(increments(p, grid, "aggregate"), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        increments(p, grid, "bogus")
    with pytest.raises(ValueError):
        increments(p, TimeGrid([0.0, 3.0]), "count")


def test_simulate_cpp_path_structure():
    p = simulate_cpp_path(2.0, Exponential(1.0), 2.0, path_streams(5, 0))
    assert p.kind == "cpp"
    assert p.theta == 2.0
    assert p.arrivals.size == p.claims.size
    if p.arrivals.size:
        assert p.arrivals[0] > 0
        assert p.arrivals[-1] <= 2.0
        assert np.all(np.diff(p.arrivals) > 0)
        assert np.all(p.claims > 0)


def test_cmpp_draws_theta_from_mixing_law():
    p = simulate_cmpp_path(DiscreteFinite((1.0, 3.0), (0.5, 0.5)), Exponential(1.0),
                           2.0, path_streams(5, 0))
    assert p.kind == "cmpp"
    assert p.theta in (1.0, 3.0)


def test_degenerate_mixing_is_bitwise_fixed_rate():
    """A point-mass mixing law reproduces the fixed-rate path exactly."""
    for i in range(20):
        a = simulate_cmpp_path(Degenerate(2.0), Exponential(1.0), 2.0, path_streams(9, i))
        b = simulate_cpp_path(2.0, Exponential(1.0), 2.0, path_streams(9, i))
        assert a.theta == b.theta == 2.0
        assert a.arrivals.tobytes() == b.arrivals.tobytes()
        assert a.claims.tobytes() == b.claims.tobytes()


def test_renewal_with_deterministic_gaps_is_exact():
    p = simulate_renewal_path(Degenerate(0.5), Degenerate(1.0), 2.0, path_streams(1, 0))
    np.testing.assert_array_equal(p.arrivals, [0.5, 1.0, 1.5, 2.0])
    assert p.kind == "renewal"
    assert p.theta == 2.0  # mean-matched nominal rate 1/E[gap]


def test_event_cap_raises():
    with pytest.raises(EventCapExceeded):
        simulate_renewal_path(
            Degenerate(0.001), Degenerate(1.0), 10.0, path_streams(1, 0), max_events=100
        )
    with pytest.raises(EventCapExceeded):
        simulate_cpp_path(5000.0, Degenerate(1.0), 10.0, path_streams(1, 0), max_events=1000)


def test_mean_count_matches_rate():
    paths = simulate_ensemble(
        "cpp", mixing=Degenerate(2.0), claims=Degenerate(1.0),
        horizon=2.0, n_paths=20_000, master_seed=3,
    )
    counts = np.array([count_at(p, 2.0) for p in paths], dtype=float)
    se = counts.std(ddof=1) / math.sqrt(counts.size)
    assert abs(counts.mean() - 4.0) < 5 * se


def test_mixing_induces_increment_covariance():
    """Cov(N_1, N_2 - N_1) = 1 * 1 * Var(Theta): 2 for Gamma(2,1), 0 when fixed."""
    paths = simulate_ensemble(
        "cmpp", mixing=Gamma(2.0, 1.0), claims=Degenerate(1.0),
        horizon=2.0, n_paths=30_000, master_seed=101, threads=4,
    )
    n1 = np.array([count_at(p, 1.0) for p in paths], dtype=float)
    d = np.array([count_at(p, 2.0) for p in paths], dtype=float) - n1
    cov = float(np.mean((n1 - n1.mean()) * (d - d.mean())))
    assert abs(cov - 2.0) < 0.2

    fixed = simulate_ensemble(
        "cpp", mixing=Degenerate(2.0), claims=Degenerate(1.0),
        horizon=2.0, n_paths=30_000, master_seed=101, threads=4,
    )
    n1 = np.array([count_at(p, 1.0) for p in fixed], dtype=float)
    d = np.array([count_at(p, 2.0) for p in fixed], dtype=float) - n1
    cov = float(np.mean((n1 - n1.mean()) * (d - d.mean())))
    assert abs(cov) < 0.1


def test_ensemble_identical_across_thread_counts():
    kwargs = dict(
        mixing=Gamma(2.0, 1.0), claims=Exponential(1.0),
        horizon=2.0, n_paths=200, master_seed=17,
    )
    serial = simulate_ensemble("cmpp", **kwargs, threads=1)
    threaded = simulate_ensemble("cmpp", **kwargs, threads=8)
    assert len(serial) == len(threaded) == 200
    for a, b in zip(serial, threaded):
        assert a.theta == b.theta
        assert a.arrivals.tobytes() == b.arrivals.tobytes()
        assert a.claims.tobytes() == b.claims.tobytes()


def test_ensemble_argument_validation():
    with pytest.raises(ValueError):
        simulate_ensemble("cmpp", claims=Exponential(1.0), horizon=1.0,
                          n_paths=10, master_seed=0)
    with pytest.raises(ValueError):
        simulate_ensemble("renewal", claims=Exponential(1.0), horizon=1.0,
                          n_paths=10, master_seed=0)
    with pytest.raises(ValueError):
        simulate_ensemble("bogus", claims=Exponential(1.0), horizon=1.0,
                          n_paths=10, master_seed=0)


def test_paths_csv_dump_round_trips():
    paths = simulate_ensemble(
        "cmpp", mixing=Gamma(2.0, 1.0), claims=Exponential(1.0),
        horizon=2.0, n_paths=50, master_seed=23,
    )
    buf = io.StringIO()
    dump_paths_csv(paths, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "path_id,theta,arrival_time,claim_size"
    total_events = sum(p.arrivals.size for p in paths)
    assert len(lines) == 1 + total_events
    first_id, theta, t, x = lines[1].split(",")
    assert float(theta) == paths[int(first_id)].theta
    assert float(t) == paths[int(first_id)].arrivals[0]
    assert float(x) == paths[int(first_id)].claims[0]
