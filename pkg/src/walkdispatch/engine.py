"""Event-driven simulation of n parallel single-server queues whose
arrivals are routed by a dispatch policy over a graph.

Dynamics are simulated by uniformization: holding times between events are
i.i.d. Exponential with mean 1/((1+lambda)n); each event is an arrival
with probability lambda/(1+lambda) (server chosen by the policy, queue +1)
and otherwise a potential service (uniform server, queue -1, clamped at 0
so services at idle servers are wasted).  Queue lengths are unbounded
integers; the truncation level B applies to recording only.

Randomness: one stdlib ``random.Random(seed)`` stream per run.  Draw order
is documented and frozen: at init, two draws per walker for walk policies;
per event, holding-time draw, then the arrival/service coin, then policy
draws (arrival) or the uniform server draw (service).

State samples are right-continuous: the tail recorded at time t is the
state after the last event at or before t.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

import numpy as np

from . import graph as graph_mod
from . import policy as policy_mod
from .errors import ConfigError

__all__ = [
    "RNG_NAME",
    "GRAPH_KINDS",
    "ExperimentConfig",
    "parse_config",
    "read_config",
    "config_to_dict",
    "build_graph",
    "initial_queues",
    "TailVector",
    "tails",
    "TailTrajectory",
    "QueueSystem",
    "init",
    "run",
    "simulate_trajectory",
    "StationaryResult",
    "run_stationary",
    "stationary_estimate",
]

RNG_NAME = "python-random-mt19937"

GRAPH_KINDS = ("cycle", "torus", "lps", "random-regular")

_POD_POLICY_NAMES = ("nbrw-pod", "nbrwr-pod", "iid-pod")
_POLICY_BY_NAME = {
    "nbrw-pod": policy_mod.NbrwPod,
    "nbrwr-pod": policy_mod.NbrwrPod,
    "iid-pod": policy_mod.IidPod,
    "random": policy_mod.RandomAssign,
    "jsq": policy_mod.Jsq,
}


# ---------------------------------------------------------------------------
# Configuration


def _parse_init(spec):
    """Split an initial-condition string into (kind, value).

    Accepted: ``empty``, ``constant:<c>`` with integer c >= 0, and
    ``explicit:<q0>,<q1>,...`` with nonnegative integers.
    """
    if not isinstance(spec, str):
        raise ConfigError(f"init must be a string, got {type(spec).__name__}")
    if spec == "empty":
        return "empty", None
    if spec.startswith("constant:"):
        body = spec[len("constant:"):]
        try:
            c = int(body)
        except ValueError:
            raise ConfigError(
                f"init 'constant:' needs an integer, got {body!r}") from None
        if c < 0:
            raise ConfigError(f"init constant must be >= 0, got {c}")
        return "constant", c
    if spec.startswith("explicit:"):
        body = spec[len("explicit:"):]
        try:
            qs = tuple(int(part) for part in body.split(","))
        except ValueError:
            raise ConfigError(
                "init 'explicit:' needs comma-separated integers, got "
                f"{body!r}") from None
        if not qs or any(q < 0 for q in qs):
            raise ConfigError("init explicit queue lengths must be >= 0")
        return "explicit", qs
    raise ConfigError(
        f"init must be 'empty', 'constant:<c>' or 'explicit:<q,...>', "
        f"got {spec!r}")


def _expected_n(kind, params):
    """Vertex count implied by a graph spec (None when only known after
    generation)."""
    if kind == "cycle":
        return params[0]
    if kind == "torus":
        n = 1
        for dim in params:
            n *= dim
        return n
    if kind == "random-regular":
        return params[0]
    if kind == "lps":
        p, q = params
        n = q * (q * q - 1)
        return n // 2 if pow(p, (q - 1) // 2, q) == 1 else n
    return None


def _validate_graph_spec(kind, params):
    if kind not in GRAPH_KINDS:
        raise ConfigError(
            f"config key 'graph.kind': unknown kind {kind!r}; expected one "
            f"of {', '.join(GRAPH_KINDS)}")
    arity = {"cycle": (1, 1), "torus": (1, 8), "lps": (2, 2),
             "random-regular": (2, 3)}[kind]
    if not arity[0] <= len(params) <= arity[1]:
        raise ConfigError(
            f"config key 'graph.params': kind {kind!r} takes between "
            f"{arity[0]} and {arity[1]} integers, got {len(params)}")
    if any(p < 0 for p in params):
        raise ConfigError("config key 'graph.params': values must be >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a simulation run depends on, seed included."""

    graph_kind: str
    graph_params: tuple
    lam: float
    policy: object
    T: float = 20.0
    dt: float = 0.1
    B: int = 16
    init: str = "empty"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "graph_params",
                           tuple(int(p) for p in self.graph_params))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "dt", float(self.dt))
        _validate_graph_spec(self.graph_kind, self.graph_params)
        if not 0.0 <= self.lam < 1.0:
            raise ConfigError(
                f"config key 'lambda': must satisfy 0 <= lambda < 1, got "
                f"{self.lam}")
        if type(self.policy) not in policy_mod.POLICY_NAMES:
            raise ConfigError(
                f"config key 'policy': unknown policy {self.policy!r}")
        if self.T <= 0:
            raise ConfigError(f"config key 'T': must be > 0, got {self.T}")
        if self.dt <= 0:
            raise ConfigError(f"config key 'dt': must be > 0, got {self.dt}")
        if self.B < 1:
            raise ConfigError(f"config key 'B': must be >= 1, got {self.B}")
        _parse_init(self.init)
        if not isinstance(self.seed, int):
            raise ConfigError(
                f"config key 'seed': must be an integer, got {self.seed!r}")


_REQUIRED = object()


def _as_int(key, raw):
    if isinstance(raw, bool) or isinstance(raw, float) and raw != int(raw):
        raise ConfigError(f"config key '{key}': expected an integer, "
                          f"got {raw!r}")
    try:
        return int(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{key}': expected an integer, "
                          f"got {raw!r}") from None


def _as_float(key, raw):
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"config key '{key}': expected a number, "
                          f"got {raw!r}") from None


def _as_params(key, raw):
    if isinstance(raw, str):
        raw = raw.replace(",", " ").split()
    try:
        return tuple(_as_int(key, part) for part in raw)
    except TypeError:
        raise ConfigError(f"config key '{key}': expected a list of "
                          f"integers, got {raw!r}") from None


def _parse_flat(text):
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"config line {lineno}: expected 'key = value', got "
                f"{line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ConfigError(f"config line {lineno}: empty key")
        if key in items:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        items[key] = value
    return items


def _flatten_json(raw):
    if not isinstance(raw, dict):
        raise ConfigError("JSON config must be an object")
    items = {}
    for key, value in raw.items():
        if key == "graph":
            if not isinstance(value, dict):
                raise ConfigError("config key 'graph': must be an object "
                                  "with 'kind' and 'params'")
            for sub, subval in value.items():
                if sub not in ("kind", "params"):
                    raise ConfigError(f"unknown config key 'graph.{sub}'")
                items[f"graph.{sub}"] = subval
        else:
            items[key] = value
    return items


def parse_config(text):
    """Parse a config from flat ``key = value`` text (# comments allowed)
    or a JSON object.  Unknown or missing keys raise ConfigError naming
    the key."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        items = _flatten_json(raw)
    else:
        items = _parse_flat(text)

    def take(key, conv, default=_REQUIRED):
        if key not in items:
            if default is _REQUIRED:
                raise ConfigError(f"missing config key '{key}'")
            return default
        return conv(key, items.pop(key))

    def as_str(key, raw):
        if not isinstance(raw, str):
            raise ConfigError(f"config key '{key}': expected a string, "
                              f"got {raw!r}")
        return raw

    graph_kind = take("graph.kind", as_str)
    graph_params = take("graph.params", _as_params)
    lam = take("lambda", _as_float)
    policy_name = take("policy", as_str)
    if policy_name not in _POLICY_BY_NAME:
        raise ConfigError(
            f"config key 'policy': unknown policy {policy_name!r}; expected "
            f"one of {', '.join(sorted(_POLICY_BY_NAME))}")

    if policy_name in _POD_POLICY_NAMES:
        d = take("d", _as_int)
    elif "d" in items:
        raise ConfigError(
            f"config key 'd': not accepted by policy '{policy_name}'")
    if policy_name == "nbrwr-pod":
        reset_period = take("reset_period", _as_int)
    elif "reset_period" in items:
        raise ConfigError(
            f"config key 'reset_period': not accepted by policy "
            f"'{policy_name}'")

    try:
        if policy_name == "nbrwr-pod":
            policy = policy_mod.NbrwrPod(d=d, reset_period=reset_period)
        elif policy_name in _POD_POLICY_NAMES:
            policy = _POLICY_BY_NAME[policy_name](d=d)
        else:
            policy = _POLICY_BY_NAME[policy_name]()
    except ValueError as exc:
        raise ConfigError(f"config key 'policy': {exc}") from exc

    kwargs = dict(
        T=take("T", _as_float, 20.0),
        dt=take("dt", _as_float, 0.1),
        B=take("B", _as_int, 16),
        init=take("init", as_str, "empty"),
        seed=take("seed", _as_int, 0),
    )
    if items:
        key = sorted(items)[0]
        raise ConfigError(f"unknown config key '{key}'")
    return ExperimentConfig(graph_kind=graph_kind, graph_params=graph_params,
                            lam=lam, policy=policy, **kwargs)


def read_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def config_to_dict(cfg):
    """JSON-ready dict that re-parses (via parse_config) to an identical
    config."""
    out = {
        "graph": {"kind": cfg.graph_kind, "params": list(cfg.graph_params)},
        "lambda": cfg.lam,
        "policy": policy_mod.policy_name(cfg.policy),
    }
    if isinstance(cfg.policy,
                  (policy_mod.NbrwPod, policy_mod.NbrwrPod,
                   policy_mod.IidPod)):
        out["d"] = cfg.policy.d
    if isinstance(cfg.policy, policy_mod.NbrwrPod):
        out["reset_period"] = cfg.policy.reset_period
    out.update(T=cfg.T, dt=cfg.dt, B=cfg.B, init=cfg.init, seed=cfg.seed)
    return out


def build_graph(cfg):
    """Construct the graph named by the config (deterministic; the
    random-regular kind takes its own generation seed as a third
    parameter, defaulting to 0)."""
    kind, params = cfg.graph_kind, cfg.graph_params
    if kind == "cycle":
        return graph_mod.build_cycle(params[0])
    if kind == "torus":
        return graph_mod.build_torus(list(params))
    if kind == "lps":
        return graph_mod.build_lps(params[0], params[1])
    seed = params[2] if len(params) == 3 else 0
    return graph_mod.build_random_regular(params[0], params[1], seed=seed)


def initial_queues(init, n):
    """Materialize the initial queue-length vector for n servers."""
    kind, value = _parse_init(init)
    if kind == "empty":
        return [0] * n
    if kind == "constant":
        return [value] * n
    if len(value) != n:
        raise ConfigError(
            f"init 'explicit:' lists {len(value)} queues but the graph has "
            f"n={n} servers")
    return list(value)


# ---------------------------------------------------------------------------
# Tail vectors


@dataclass(frozen=True)
class TailVector:
    """Occupancy tail x_0..x_B (x_i = fraction of servers with >= i jobs);
    overflow flags mass above level B."""

    x: np.ndarray
    overflow: bool = False

    @property
    def B(self):
        return len(self.x) - 1


def tails(queues, n, B):
    """Tail vector of a queue-length sample: x_i = |{j : Q_j >= i}| / n
    for 0 <= i <= B, with overflow=True when any queue exceeds B."""
    if len(queues) != n:
        raise ValueError(f"got {len(queues)} queues for n={n}")
    q = np.asarray(queues)
    counts = np.bincount(np.minimum(q, B + 1), minlength=B + 2)
    ge = counts[::-1].cumsum()[::-1]
    return TailVector(x=ge[:B + 1] / n, overflow=bool(ge[B + 1] > 0))


@dataclass
class TailTrajectory:
    """Sampled tail path: times[j] is strictly increasing from 0 and
    xs[j] holds levels x_0..x_B right-continuously sampled at times[j]."""

    times: np.ndarray
    xs: np.ndarray
    overflow: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def B(self):
        return self.xs.shape[1] - 1

    @property
    def tails(self):
        return [TailVector(x=row, overflow=bool(flag))
                for row, flag in zip(self.xs, self.overflow)]


# ---------------------------------------------------------------------------
# Simulation


class QueueSystem:
    """Mutable simulation state: queue lengths, the policy's walker state,
    clock, RNG stream, and event counters.

    ``counts[i]`` caches the number of servers with at least i jobs
    (``counts[0] == n``); the list grows as queues grow and is what tail
    sampling reads, so recording is O(B) instead of O(n).
    """

    def __init__(self, cfg, g, queues, policy_state, rng):
        self.cfg = cfg
        self.queues = queues
        maxq = max(queues)
        bc = np.bincount(queues, minlength=maxq + 1)
        self.counts = [int(c) for c in bc[::-1].cumsum()[::-1]]
        self.policy_state = policy_state
        self.clock = 0.0
        self.rng = rng
        self.lam = cfg.lam
        self.event_count = 0
        self.arrival_count = 0
        self.dispatch = policy_mod.make_dispatcher(cfg.policy, policy_state,
                                                   g, rng)
        self._n = g.n


def init(cfg, g):
    """Fresh QueueSystem on g: seed the RNG, draw the walker ensemble
    (walk policies), set queues from the initial condition, clock 0."""
    expected = _expected_n(cfg.graph_kind, cfg.graph_params)
    if expected is not None and expected != g.n:
        raise ConfigError(
            f"config names a graph with n={expected} but got n={g.n}")
    rng = random.Random(cfg.seed)
    policy_state = policy_mod.init_state(cfg.policy, g, rng)
    queues = initial_queues(cfg.init, g.n)
    return QueueSystem(cfg, g, queues, policy_state, rng)


def _sample_times(T, dt):
    ns = int(math.floor(T / dt + 1e-9))
    times = np.arange(ns + 1) * dt
    if abs(times[ns] - T) <= 1e-9 * max(1.0, abs(T)):
        times[ns] = T
    return times


def run(sys, g, T=None, dt=None, B=None):
    """Advance a fresh system for simulated time T, recording the tail
    vector at every multiple of dt (including t=0).  Returns the
    trajectory; ``sys`` ends with clock == T."""
    cfg = sys.cfg
    T = cfg.T if T is None else float(T)
    dt = cfg.dt if dt is None else float(dt)
    B = cfg.B if B is None else int(B)
    if sys.clock != 0.0:
        raise ValueError("run() expects a fresh system (clock must be 0)")
    if len(sys.queues) != g.n:
        raise ValueError(
            f"system has {len(sys.queues)} queues, graph has n={g.n}")
    if T <= 0 or dt <= 0 or B < 1:
        raise ValueError(f"need T > 0, dt > 0, B >= 1; got {T}, {dt}, {B}")

    n = g.n
    lam = sys.lam
    rnd = sys.rng.random
    dispatch = sys.dispatch
    q = sys.queues
    counts = sys.counts
    clen = len(counts)
    inv_rate = 1.0 / ((1.0 + lam) * n)
    p_arr = lam / (1.0 + lam)
    inv_n = 1.0 / n
    log = math.log

    times = _sample_times(T, dt)
    ns = len(times) - 1
    sample_at = times.tolist()
    xs = np.empty((ns + 1, B + 1))
    xs[:, 0] = 1.0
    overflow = np.zeros(ns + 1, dtype=bool)
    sample_i = 0
    events = 0
    arrivals = 0
    t = 0.0

    while True:
        hold = -log(1.0 - rnd()) * inv_rate
        t_new = t + hold
        while sample_i <= ns and sample_at[sample_i] < t_new:
            row = xs[sample_i]
            m = clen if clen <= B + 1 else B + 1
            for i in range(1, m):
                row[i] = counts[i] * inv_n
            for i in range(m, B + 1):
                row[i] = 0.0
            overflow[sample_i] = clen > B + 1 and counts[B + 1] > 0
            sample_i += 1
        if t_new > T:
            break
        t = t_new
        events += 1
        if rnd() < p_arr:
            srv = dispatch(q)
            lvl = q[srv] + 1
            q[srv] = lvl
            if lvl < clen:
                counts[lvl] += 1
            else:
                counts.append(1)
                clen += 1
            arrivals += 1
        else:
            srv = int(rnd() * n)
            lvl = q[srv]
            if lvl:
                q[srv] = lvl - 1
                counts[lvl] -= 1

    while sample_i <= ns:
        row = xs[sample_i]
        m = clen if clen <= B + 1 else B + 1
        for i in range(1, m):
            row[i] = counts[i] * inv_n
        for i in range(m, B + 1):
            row[i] = 0.0
        overflow[sample_i] = clen > B + 1 and counts[B + 1] > 0
        sample_i += 1

    sys.clock = T
    sys.event_count += events
    sys.arrival_count += arrivals
    meta = {"config": config_to_dict(cfg), "rng": RNG_NAME, "T": T, "dt": dt,
            "B": B, "events": events, "arrivals": arrivals,
            "overflow": bool(overflow.any())}
    return TailTrajectory(times=times, xs=xs, overflow=overflow, meta=meta)


def simulate_trajectory(cfg, g=None):
    """Build the graph (unless given), init, and run with the config's
    T/dt/B."""
    if g is None:
        g = build_graph(cfg)
    return run(init(cfg, g), g)


@dataclass
class StationaryResult:
    """Long-run averages over the window (burn_in, horizon].

    ``tail`` holds time-weighted averages of x_0..x_B; ``arrival_tail``
    holds the same levels averaged over states seen by arrivals (PASTA
    comparison; None when the window has no arrivals); ``mean_queue`` is
    the untruncated time-averaged mean queue length per server.
    """

    tail: TailVector
    arrival_tail: object
    mean_queue: float
    events: int
    arrivals: int
    window_arrivals: int
    burn_in: float
    horizon: float


def run_stationary(cfg, g, burn_in=50.0, horizon=200.0):
    """Run to `horizon` and return time-weighted averages over
    (burn_in, horizon], integrating every occupied level exactly between
    events (no sampling grid)."""
    burn_in = float(burn_in)
    horizon = float(horizon)
    if not 0.0 <= burn_in < horizon:
        raise ValueError(
            f"need 0 <= burn_in < horizon, got {burn_in}, {horizon}")
    sys = init(cfg, g)
    B = cfg.B
    n = g.n
    lam = sys.lam
    rnd = sys.rng.random
    dispatch = sys.dispatch
    q = sys.queues
    counts = sys.counts
    clen = len(counts)
    inv_rate = 1.0 / ((1.0 + lam) * n)
    p_arr = lam / (1.0 + lam)
    log = math.log

    area = [0.0] * clen
    last_t = [0.0] * clen
    arr_area = [0.0] * clen
    last_arr = [0] * clen
    snapped = False
    snap_area = snap_arr = None
    snap_arrivals = 0
    events = 0
    arrivals = 0
    t = 0.0

    while True:
        hold = -log(1.0 - rnd()) * inv_rate
        t_new = t + hold
        if not snapped and t_new > burn_in:
            snap_area = [area[i] + counts[i] * (burn_in - last_t[i])
                         for i in range(clen)]
            snap_arr = [arr_area[i] + counts[i] * (arrivals - last_arr[i])
                        for i in range(clen)]
            snap_arrivals = arrivals
            snapped = True
        if t_new > horizon:
            break
        t = t_new
        events += 1
        if rnd() < p_arr:
            srv = dispatch(q)
            lvl = q[srv] + 1
            q[srv] = lvl
            arrivals += 1
            if lvl < clen:
                area[lvl] += counts[lvl] * (t - last_t[lvl])
                last_t[lvl] = t
                arr_area[lvl] += counts[lvl] * (arrivals - last_arr[lvl])
                last_arr[lvl] = arrivals
                counts[lvl] += 1
            else:
                counts.append(1)
                area.append(0.0)
                last_t.append(t)
                arr_area.append(0.0)
                last_arr.append(arrivals)
                clen += 1
        else:
            srv = int(rnd() * n)
            lvl = q[srv]
            if lvl:
                q[srv] = lvl - 1
                area[lvl] += counts[lvl] * (t - last_t[lvl])
                last_t[lvl] = t
                arr_area[lvl] += counts[lvl] * (arrivals - last_arr[lvl])
                last_arr[lvl] = arrivals
                counts[lvl] -= 1

    for i in range(clen):
        area[i] += counts[i] * (horizon - last_t[i])
        arr_area[i] += counts[i] * (arrivals - last_arr[i])

    window = horizon - burn_in
    shortfall = clen - len(snap_area)
    if shortfall > 0:
        snap_area.extend([0.0] * shortfall)
        snap_arr.extend([0.0] * shortfall)
    win_area = np.array(area) - np.array(snap_area)

    x = np.zeros(B + 1)
    x[0] = 1.0
    top = min(B + 1, clen)
    x[1:top] = win_area[1:top] / (n * window)
    overflow = bool(clen > B + 1 and win_area[B + 1:].sum() > 0.0)

    win_arrivals = arrivals - snap_arrivals
    if win_arrivals > 0:
        win_arr = np.array(arr_area) - np.array(snap_arr)
        ax = np.zeros(B + 1)
        ax[0] = 1.0
        ax[1:top] = win_arr[1:top] / (n * win_arrivals)
        arrival_tail = ax
    else:
        arrival_tail = None

    mean_queue = float(win_area[1:].sum() / (n * window))
    sys.clock = horizon
    sys.event_count += events
    sys.arrival_count += arrivals
    return StationaryResult(
        tail=TailVector(x=x, overflow=overflow), arrival_tail=arrival_tail,
        mean_queue=mean_queue, events=events, arrivals=arrivals,
        window_arrivals=win_arrivals, burn_in=burn_in, horizon=horizon)


def stationary_estimate(cfg, g, burn_in=50.0, horizon=200.0):
    """Time-weighted average tail vector over (burn_in, horizon]."""
    return run_stationary(cfg, g, burn_in=burn_in, horizon=horizon).tail
