"""Simulation engine: config parsing, tail recording, event dynamics,
and long-run averaging."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkdispatch.engine import (ExperimentConfig, QueueSystem, TailVector,
                                 build_graph, config_to_dict, init,
                                 initial_queues, parse_config, read_config,
                                 run, run_stationary, simulate_trajectory,
                                 stationary_estimate, tails)
from walkdispatch.errors import ConfigError
from walkdispatch.graph import (build_cycle, build_lps, build_random_regular,
                                build_torus)
from walkdispatch.policy import IidPod, Jsq, NbrwPod, NbrwrPod, RandomAssign

FLAT_TEXT = """\
# queueing experiment
graph.kind = cycle
graph.params = 12
lambda = 0.75
policy = nbrw-pod
d = 2          # candidates per arrival
T = 8
dt = 0.25
B = 6
init = constant:1
seed = 3
"""

JSON_TEXT = json.dumps({
    "graph": {"kind": "cycle", "params": [12]},
    "lambda": 0.75,
    "policy": "nbrw-pod",
    "d": 2,
    "T": 8,
    "dt": 0.25,
    "B": 6,
    "init": "constant:1",
    "seed": 3,
})


def cfg_for(n=30, lam=0.5, policy=RandomAssign(), **kw):
    return ExperimentConfig(graph_kind="cycle", graph_params=(n,), lam=lam,
                            policy=policy, **kw)


# ---------------------------------------------------------------------------
# Config parsing


def test_parse_flat_config():
    cfg = parse_config(FLAT_TEXT)
    assert cfg == ExperimentConfig(
        graph_kind="cycle", graph_params=(12,), lam=0.75,
        policy=NbrwPod(2), T=8.0, dt=0.25, B=6, init="constant:1", seed=3)


def test_parse_json_matches_flat():
    assert parse_config(JSON_TEXT) == parse_config(FLAT_TEXT)


def test_parse_defaults():
    cfg = parse_config("graph.kind = cycle\ngraph.params = 5\n"
                       "lambda = 0.5\npolicy = jsq\n")
    assert (cfg.T, cfg.dt, cfg.B, cfg.init, cfg.seed) == \
        (20.0, 0.1, 16, "empty", 0)


def test_config_dict_reparses_identically():
    cfg = parse_config(FLAT_TEXT)
    again = parse_config(json.dumps(config_to_dict(cfg)))
    assert again == cfg


def test_parse_params_comma_or_space():
    a = parse_config("graph.kind = torus\ngraph.params = 3, 4\n"
                     "lambda = 0.5\npolicy = jsq\n")
    b = parse_config("graph.kind = torus\ngraph.params = 3 4\n"
                     "lambda = 0.5\npolicy = jsq\n")
    assert a == b


def test_read_config_from_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(FLAT_TEXT)
    assert read_config(path) == parse_config(FLAT_TEXT)


BASE = "graph.kind = cycle\ngraph.params = 9\nlambda = 0.5\n"


@pytest.mark.parametrize("text,needle", [
    ("graph.kind = cycle\nlambda = 0.5\npolicy = jsq\n"
     "graph.params = 9\nno_equals_here\n", "key = value"),
    (BASE + "policy = jsq\nlambda = 0.6\n", "duplicate key 'lambda'"),
    (BASE + " = 3\npolicy = jsq\n", "empty key"),
    ("graph.params = 9\nlambda = 0.5\npolicy = jsq\n",
     "missing config key 'graph.kind'"),
    (BASE + "policy = jsq\nzeta = 1\nalpha = 2\n",
     "unknown config key 'alpha'"),
    (BASE.replace("cycle", "grid") + "policy = jsq\n", "unknown kind"),
    ("graph.kind = cycle\ngraph.params = 9 9\nlambda = 0.5\npolicy = jsq\n",
     "'graph.params'"),
    ("graph.kind = lps\ngraph.params = -5 29\nlambda = 0.5\npolicy = jsq\n",
     "must be >= 0"),
    (BASE.replace("0.5", "abc") + "policy = jsq\n", "expected a number"),
    (BASE.replace("0.5", "1.0") + "policy = jsq\n", "0 <= lambda < 1"),
    (BASE + "policy = lru\n", "unknown policy"),
    (BASE + "policy = jsq\nd = 2\n", "'d': not accepted"),
    (BASE + "policy = iid-pod\n", "missing config key 'd'"),
    (BASE + "policy = iid-pod\nd = 1.5\n", "expected an integer"),
    (BASE + "policy = iid-pod\nd = 0\n", "d must be >= 1"),
    (BASE + "policy = nbrwr-pod\nd = 2\n",
     "missing config key 'reset_period'"),
    (BASE + "policy = nbrw-pod\nd = 2\nreset_period = 5\n",
     "'reset_period': not accepted"),
    (BASE + "policy = jsq\nT = 0\n", "'T'"),
    (BASE + "policy = jsq\ndt = -1\n", "'dt'"),
    (BASE + "policy = jsq\nB = 0\n", "'B'"),
    (BASE + "policy = jsq\nseed = 1.5\n", "'seed'"),
    (BASE + "policy = jsq\ninit = sometimes\n", "init"),
    (BASE + "policy = jsq\ninit = constant:-2\n", "init"),
    (BASE + "policy = jsq\ninit = constant:x\n", "init"),
    (BASE + "policy = jsq\ninit = explicit:1,a\n", "init"),
])
def test_parse_errors_name_the_problem(text, needle):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(text)
    assert needle in str(exc_info.value)


def test_parse_errors_report_line_numbers():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("graph.kind = cycle\nlambda = 0.5\nlambda = 0.6\n")


@pytest.mark.parametrize("text,needle", [
    ("{nope", "not valid JSON"),
    # Only brace-prefixed text takes the JSON path; anything else falls
    # back to the flat parser and fails there.
    ("[1, 2]", "key = value"),
    (json.dumps({"graph": "cycle", "lambda": 0.5, "policy": "jsq"}),
     "'graph'"),
    (json.dumps({"graph": {"kind": "cycle", "params": [9], "n": 9},
                 "lambda": 0.5, "policy": "jsq"}), "graph.n"),
    (json.dumps({"graph": {"kind": "cycle", "params": [9]},
                 "lambda": 0.5, "policy": "jsq", "seed": True}), "'seed'"),
    (json.dumps({"graph": {"kind": "cycle", "params": [9]},
                 "lambda": 0.5, "policy": "jsq", "B": 16.5}),
     "expected an integer"),
])
def test_parse_json_errors(text, needle):
    with pytest.raises(ConfigError) as exc_info:
        parse_config(text)
    assert needle in str(exc_info.value)


def test_json_integral_floats_accepted_for_int_keys():
    cfg = parse_config(json.dumps({
        "graph": {"kind": "cycle", "params": [9]},
        "lambda": 0.5, "policy": "jsq", "B": 16.0}))
    assert cfg.B == 16


POLICY_STRATEGY = st.one_of(
    st.builds(NbrwPod, d=st.integers(1, 4)),
    st.builds(NbrwrPod, d=st.integers(1, 4), reset_period=st.integers(1, 99)),
    st.builds(IidPod, d=st.integers(1, 4)),
    st.just(RandomAssign()),
    st.just(Jsq()),
)


@settings(max_examples=60, deadline=None)
@given(
    lam=st.floats(min_value=0.0, max_value=0.99),
    policy=POLICY_STRATEGY,
    T=st.floats(min_value=0.1, max_value=500.0),
    dt=st.floats(min_value=0.001, max_value=5.0),
    B=st.integers(1, 32),
    seed=st.integers(-10 ** 9, 10 ** 9),
)
def test_config_round_trip_property(lam, policy, T, dt, B, seed):
    cfg = ExperimentConfig(graph_kind="cycle", graph_params=(17,), lam=lam,
                           policy=policy, T=T, dt=dt, B=B, seed=seed)
    assert parse_config(json.dumps(config_to_dict(cfg))) == cfg


# ---------------------------------------------------------------------------
# Graph building and initial conditions


def test_build_graph_matches_direct_builders():
    assert build_graph(cfg_for(9)) == build_cycle(9)
    torus_cfg = ExperimentConfig(graph_kind="torus", graph_params=(3, 4),
                                 lam=0.5, policy=Jsq())
    assert build_graph(torus_cfg) == build_torus([3, 4])
    lps_cfg = ExperimentConfig(graph_kind="lps", graph_params=(5, 11),
                               lam=0.5, policy=Jsq())
    assert build_graph(lps_cfg) == build_lps(5, 11)
    rr_cfg = ExperimentConfig(graph_kind="random-regular",
                              graph_params=(20, 3), lam=0.5, policy=Jsq())
    assert build_graph(rr_cfg) == build_random_regular(20, 3, seed=0)
    rr7 = ExperimentConfig(graph_kind="random-regular",
                           graph_params=(20, 3, 7), lam=0.5, policy=Jsq())
    assert build_graph(rr7) == build_random_regular(20, 3, seed=7)


def test_initial_queue_materialization():
    assert initial_queues("empty", 4) == [0, 0, 0, 0]
    assert initial_queues("constant:5", 3) == [5, 5, 5]
    assert initial_queues("explicit:0,1,2", 3) == [0, 1, 2]


def test_initial_queue_explicit_wrong_length():
    with pytest.raises(ConfigError, match="n=4"):
        initial_queues("explicit:0,1,2", 4)


# ---------------------------------------------------------------------------
# Tail vectors


def test_tails_all_empty():
    tv = tails([0, 0, 0], 3, 2)
    np.testing.assert_array_equal(tv.x, [1.0, 0.0, 0.0])
    assert not tv.overflow
    assert tv.B == 2


def test_tails_direct_count():
    tv = tails([1, 2, 2, 0], 4, 3)
    np.testing.assert_array_equal(tv.x, [1.0, 0.75, 0.5, 0.0])
    assert not tv.overflow


def test_tails_overflow_truncation():
    tv = tails([7], 1, 3)
    np.testing.assert_array_equal(tv.x, [1.0, 1.0, 1.0, 1.0])
    assert tv.overflow


def test_tails_rejects_length_mismatch():
    with pytest.raises(ValueError):
        tails([0, 1], 3, 4)


@settings(max_examples=120, deadline=None)
@given(queues=st.lists(st.integers(0, 25), min_size=1, max_size=60),
       B=st.integers(1, 8))
def test_tails_invariants(queues, B):
    n = len(queues)
    tv = tails(queues, n, B)
    assert tv.x[0] == 1.0
    assert np.all(np.diff(tv.x) <= 0.0)
    # Every level is a count divided by n.
    np.testing.assert_allclose(tv.x * n, np.round(tv.x * n), atol=1e-9)
    for i in range(B + 1):
        assert tv.x[i] == sum(1 for q in queues if q >= i) / n
    assert tv.overflow == (max(queues) > B)


# ---------------------------------------------------------------------------
# System initialization


def test_init_sets_queues_and_counts():
    cfg = cfg_for(5, init="explicit:0,2,1,0,3")
    sys = init(cfg, build_cycle(5))
    assert sys.queues == [0, 2, 1, 0, 3]
    # counts[i] = number of servers holding at least i jobs.
    assert sys.counts == [5, 3, 2, 1]
    assert sys.clock == 0.0
    assert sys.event_count == 0 and sys.arrival_count == 0


def test_init_walk_policy_draws_ensemble():
    cfg = cfg_for(30, policy=NbrwPod(2), seed=12)
    g = build_cycle(30)
    a = init(cfg, g)
    b = init(cfg, g)
    assert a.policy_state.ensemble.d == 2
    assert a.policy_state.ensemble.positions() == \
        b.policy_state.ensemble.positions()


def test_init_rejects_mismatched_graph():
    with pytest.raises(ConfigError, match="n=5"):
        init(cfg_for(5), build_cycle(6))


# ---------------------------------------------------------------------------
# Trajectory runs


def test_run_sampling_grid():
    traj = simulate_trajectory(cfg_for(10, T=2.1, dt=0.3))
    np.testing.assert_allclose(traj.times, np.arange(8) * 0.3, atol=1e-12)
    assert traj.times[-1] == 2.1


def test_run_grid_when_dt_does_not_divide_t():
    traj = simulate_trajectory(cfg_for(10, T=1.0, dt=0.3))
    np.testing.assert_allclose(traj.times, [0.0, 0.3, 0.6, 0.9], atol=1e-12)


def test_run_is_deterministic_per_seed():
    cfg = cfg_for(40, lam=0.8, policy=NbrwPod(2), T=5.0, seed=21)
    t1 = simulate_trajectory(cfg)
    t2 = simulate_trajectory(cfg)
    np.testing.assert_array_equal(t1.xs, t2.xs)
    np.testing.assert_array_equal(t1.overflow, t2.overflow)
    assert t1.meta["events"] == t2.meta["events"]
    t3 = simulate_trajectory(cfg_for(40, lam=0.8, policy=NbrwPod(2), T=5.0,
                                     seed=22))
    assert not np.array_equal(t1.xs, t3.xs)


def test_run_requires_fresh_system():
    g = build_cycle(10)
    sys = init(cfg_for(10, T=1.0), g)
    run(sys, g)
    assert sys.clock == 1.0
    with pytest.raises(ValueError, match="fresh"):
        run(sys, g)


def test_run_rejects_wrong_graph():
    sys = init(cfg_for(10), build_cycle(10))
    with pytest.raises(ValueError):
        run(sys, build_cycle(11))


def test_run_rejects_bad_overrides():
    g = build_cycle(10)
    with pytest.raises(ValueError):
        run(init(cfg_for(10), g), g, T=0.0)
    with pytest.raises(ValueError):
        run(init(cfg_for(10), g), g, dt=0.0)
    with pytest.raises(ValueError):
        run(init(cfg_for(10), g), g, B=0)


def test_run_first_sample_is_initial_condition():
    cfg = cfg_for(6, init="explicit:0,1,2,0,0,7", B=3, T=1.0)
    traj = simulate_trajectory(cfg)
    expect = tails([0, 1, 2, 0, 0, 7], 6, 3)
    np.testing.assert_array_equal(traj.xs[0], expect.x)
    assert bool(traj.overflow[0]) is True
    assert traj.meta["overflow"] is True


def test_run_samples_are_valid_tail_vectors():
    cfg = cfg_for(25, lam=0.9, policy=IidPod(2), T=10.0, seed=2)
    traj = simulate_trajectory(cfg)
    assert np.all(traj.xs[:, 0] == 1.0)
    assert np.all(np.diff(traj.xs, axis=1) <= 1e-15)
    assert np.all((traj.xs >= 0.0) & (traj.xs <= 1.0))
    scaled = traj.xs * 25
    np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-9)


def test_run_trajectory_tails_property():
    traj = simulate_trajectory(cfg_for(10, T=1.0, B=4))
    tvs = traj.tails
    assert len(tvs) == len(traj.times)
    assert all(isinstance(tv, TailVector) and tv.B == 4 for tv in tvs)


def test_run_counts_cache_matches_queues():
    cfg = cfg_for(30, lam=0.85, policy=Jsq(), T=20.0, seed=5)
    g = build_cycle(30)
    sys = init(cfg, g)
    run(sys, g)
    for i in range(len(sys.counts)):
        assert sys.counts[i] == sum(1 for q in sys.queues if q >= i)


def test_run_job_conservation_bounds():
    cfg = cfg_for(30, lam=0.7, policy=RandomAssign(), T=10.0, seed=8)
    g = build_cycle(30)
    sys = init(cfg, g)
    traj = run(sys, g)
    arrivals = traj.meta["arrivals"]
    services = traj.meta["events"] - arrivals
    finished = arrivals - sum(sys.queues)
    # Every departure is a service event at a busy server.
    assert 0 <= finished <= services


def test_run_arrival_fraction():
    cfg = cfg_for(100, lam=0.5, T=50.0, seed=13)
    traj = simulate_trajectory(cfg)
    frac = traj.meta["arrivals"] / traj.meta["events"]
    assert abs(frac - 1.0 / 3.0) < 0.02
    # Total event rate is (1 + lambda) * n.
    assert traj.meta["events"] == pytest.approx(1.5 * 100 * 50, rel=0.05)


def test_run_pure_service_drains_exponentially():
    cfg = cfg_for(2000, lam=0.0, init="constant:1", T=3.0, dt=0.5, seed=9)
    traj = simulate_trajectory(cfg)
    assert traj.meta["arrivals"] == 0
    # Busy fraction decays like e^{-t}; each column is a binomial average
    # over 2000 servers.
    for j, t in enumerate(traj.times):
        assert traj.xs[j][1] == pytest.approx(math.exp(-t), abs=0.03)
    # Never below the initial level anywhere: services only decrease.
    assert np.all(np.diff(traj.xs[:, 1]) <= 0.0)


def test_run_meta_echo():
    cfg = cfg_for(12, T=2.0, seed=4)
    traj = simulate_trajectory(cfg)
    assert traj.meta["config"] == config_to_dict(cfg)
    assert traj.meta["T"] == 2.0 and traj.meta["dt"] == 0.1
    assert traj.meta["rng"] == "python-random-mt19937"


def test_run_b_override_controls_recorded_levels():
    g = build_cycle(10)
    cfg = cfg_for(10, init="constant:4", T=1.0)
    traj = run(init(cfg, g), g, B=2)
    assert traj.xs.shape[1] == 3
    assert bool(traj.overflow[0]) is True


# ---------------------------------------------------------------------------
# Long-run averaging


def test_stationary_rejects_bad_window():
    g = build_cycle(9)
    with pytest.raises(ValueError):
        run_stationary(cfg_for(9), g, burn_in=5.0, horizon=5.0)
    with pytest.raises(ValueError):
        run_stationary(cfg_for(9), g, burn_in=-1.0, horizon=5.0)


def test_stationary_pure_service_is_empty():
    cfg = cfg_for(50, lam=0.0, init="constant:2", seed=3)
    res = run_stationary(cfg, build_cycle(50), burn_in=40.0, horizon=60.0)
    np.testing.assert_array_equal(res.tail.x[1:], 0.0)
    assert res.mean_queue == 0.0
    assert res.arrival_tail is None
    assert res.window_arrivals == 0
    assert not res.tail.overflow


def test_stationary_is_deterministic():
    cfg = cfg_for(40, lam=0.8, policy=NbrwPod(2), seed=6)
    g = build_cycle(40)
    r1 = run_stationary(cfg, g, burn_in=2.0, horizon=12.0)
    r2 = run_stationary(cfg, g, burn_in=2.0, horizon=12.0)
    np.testing.assert_array_equal(r1.tail.x, r2.tail.x)
    np.testing.assert_array_equal(r1.arrival_tail, r2.arrival_tail)
    assert r1.mean_queue == r2.mean_queue
    assert r1.events == r2.events


def test_stationary_estimate_is_the_tail():
    cfg = cfg_for(20, lam=0.5, seed=2)
    g = build_cycle(20)
    est = stationary_estimate(cfg, g, burn_in=1.0, horizon=6.0)
    full = run_stationary(cfg, g, burn_in=1.0, horizon=6.0)
    np.testing.assert_array_equal(est.x, full.tail.x)


def test_stationary_random_assignment_matches_geometric_law():
    # Uniform assignment makes every server an independent M/M/1 queue
    # with utilization lambda, so the long-run tails are lambda^i.
    cfg = cfg_for(200, lam=0.5, policy=RandomAssign(), seed=14)
    est = stationary_estimate(cfg, build_cycle(200), burn_in=50.0,
                              horizon=200.0)
    for i in range(1, 6):
        assert est.x[i] == pytest.approx(0.5 ** i, abs=0.02)


@pytest.fixture(scope="module")
def iid_heavy_run():
    cfg = ExperimentConfig(graph_kind="cycle", graph_params=(2000,), lam=0.9,
                           policy=IidPod(2), seed=27)
    return run_stationary(cfg, build_cycle(2000), burn_in=50.0,
                          horizon=200.0)


def test_stationary_busy_fraction_equals_utilization(iid_heavy_run):
    assert iid_heavy_run.tail.x[1] == pytest.approx(0.9, abs=0.02)


def test_stationary_tail_is_monotone(iid_heavy_run):
    x = iid_heavy_run.tail.x
    assert x[0] == 1.0
    assert np.all(np.diff(x) <= 1e-15)


def test_stationary_arrivals_see_time_averages(iid_heavy_run):
    # Poisson arrivals sample the stationary state without bias, so the
    # arrival-weighted tail agrees with the time-weighted one.
    diff = np.abs(iid_heavy_run.arrival_tail - iid_heavy_run.tail.x).max()
    assert diff < 0.02
    assert iid_heavy_run.window_arrivals > 0
    assert iid_heavy_run.window_arrivals <= iid_heavy_run.arrivals


def test_stationary_mean_queue_extends_truncated_tail(iid_heavy_run):
    res = iid_heavy_run
    assert not res.tail.overflow
    assert res.mean_queue == pytest.approx(float(res.tail.x[1:].sum()),
                                           abs=1e-12)


def test_stationary_overflow_flag():
    cfg = cfg_for(10, lam=0.1, init="constant:3", B=1, seed=0)
    res = run_stationary(cfg, build_cycle(10), burn_in=0.1, horizon=1.0)
    assert res.tail.overflow
    assert res.mean_queue > float(res.tail.x[1:].sum())


def test_stationary_agrees_with_dense_trajectory_average():
    # The exact between-event integrals must match a Riemann sum over a
    # fine sampling grid of the same seeded path: both interfaces consume
    # identical randomness, so the paths coincide.
    cfg = cfg_for(20, lam=0.8, policy=Jsq(), T=12.0, dt=0.001, seed=33)
    g = build_cycle(20)
    traj = run(init(cfg, g), g)
    burn, horizon = 2.0, 12.0
    res = run_stationary(cfg, g, burn_in=burn, horizon=horizon)
    mask = (traj.times >= burn - 1e-12) & (traj.times < horizon - 1e-12)
    riemann = traj.xs[mask].mean(axis=0)
    np.testing.assert_allclose(res.tail.x, riemann, atol=1e-3)
