"""Non-backtracking walkers on regular graphs, plus exact distribution
diagnostics for how fast such walks spread over the vertex set.

A walker lives on a directed edge (prev -> curr).  A step moves to a
uniform neighbor of curr other than prev, so the walk never immediately
reverses.  For k = 2 the step is deterministic and consumes no randomness.

Randomness contract: ``rng`` is any generator exposing ``random()``
returning uniforms on [0, 1) (``random.Random`` or ``numpy`` Generator).
Draw order is documented per operation so seeded runs are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from weakref import WeakKeyDictionary

import numpy as np
from scipy import sparse

from .errors import BipartiteGraphError
from .graph import is_bipartite, is_connected

__all__ = [
    "WalkerState",
    "WalkerEnsemble",
    "init_uniform",
    "step",
    "nbrw_vertex_distribution",
    "mixing_deviation",
    "mixing_profile",
]


@dataclass(slots=True)
class WalkerState:
    """Directed-edge position of one walker: curr in adj(prev)."""

    prev: int
    curr: int


@dataclass(slots=True)
class WalkerEnsemble:
    """d >= 1 mutually independent walkers."""

    walkers: list

    def __post_init__(self):
        if len(self.walkers) < 1:
            raise ValueError("ensemble needs at least one walker (d >= 1)")

    @property
    def d(self):
        return len(self.walkers)

    def positions(self):
        return [w.curr for w in self.walkers]


def init_uniform(g, d, rng):
    """Ensemble of d walkers, each on an independent uniform directed edge.

    Draws per walker, in order: one uniform for the tail vertex, one for
    the neighbor slot.  Uniform directed edges are stationary for the
    non-backtracking walk on a regular graph, and give a uniform curr.
    """
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    n, k, adj = g.n, g.k, g.adj
    walkers = []
    for _ in range(d):
        u = int(rng.random() * n)
        v = adj[u][int(rng.random() * k)]
        walkers.append(WalkerState(u, v))
    return WalkerEnsemble(walkers)


def step(ens, g, rng):
    """Advance every walker one non-backtracking step, in list order.

    The ensemble is updated in place and returned.  Per walker: one
    uniform draw selects among the k-1 non-reversal neighbors; for k = 2
    the move is forced and no draw is consumed.
    """
    adj = g.adj
    m = g.k - 1
    rnd = rng.random
    for w in ens.walkers:
        row = adj[w.curr]
        j = row.index(w.prev)
        if m == 1:
            c = row[1 - j]
        else:
            r = int(rnd() * m)
            if r >= j:
                r += 1
            c = row[r]
        w.prev = w.curr
        w.curr = c
    return ens


# ---------------------------------------------------------------------------
# exact distribution diagnostics
#
# Directed edges are numbered e = u*k + s where adj[u][s] is the head.  The
# one-step operator R (row-stochastic, n*k x n*k) spreads mass 1/(k-1) from
# each directed edge to its non-reversal continuations.

_edge_ops = WeakKeyDictionary()


def _edge_operator(g):
    cached = _edge_ops.get(g)
    if cached is not None:
        return cached
    n, k, adj = g.n, g.k, g.adj
    nk = n * k
    heads = np.empty(nk, dtype=np.int64)
    rows = np.empty(nk * (k - 1), dtype=np.int64)
    cols = np.empty(nk * (k - 1), dtype=np.int64)
    pos = 0
    for u in range(n):
        for s, v in enumerate(adj[u]):
            e = u * k + s
            heads[e] = v
            back = adj[v].index(u)
            for s2 in range(k):
                if s2 != back:
                    rows[pos] = e
                    cols[pos] = v * k + s2
                    pos += 1
    data = np.full(nk * (k - 1), 1.0 / (k - 1))
    op = sparse.csr_array((data, (rows, cols)), shape=(nk, nk))
    # Head indicator H (nk x n): marginalizes edge mass to head vertices.
    head_ind = sparse.csr_array(
        (np.ones(nk), (np.arange(nk), heads)), shape=(nk, n))
    _edge_ops[g] = (op, head_ind, heads)
    return op, head_ind, heads


def _edge_id(g, state):
    row = g.adj[state.prev]
    try:
        s = row.index(state.curr)
    except ValueError:
        raise ValueError(
            f"({state.prev} -> {state.curr}) is not a directed edge") from None
    return state.prev * g.k + s


def nbrw_vertex_distribution(g, start, t):
    """Exact law of curr after t non-backtracking steps from start.

    Computed by t pushes of a probability vector over the n*k directed
    edges, then marginalizing to head vertices.  The result is nonnegative
    and sums to 1 within 1e-12.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    op, head_ind, _ = _edge_operator(g)
    vec = np.zeros(g.n * g.k)
    vec[_edge_id(g, start)] = 1.0
    for _ in range(t):
        vec = vec @ op
    dist = vec @ head_ind
    assert abs(dist.sum() - 1.0) <= 1e-12
    return dist


def mixing_profile(g, ts, sample_edges=None, exact_limit=10_000,
                   sample_size=64, seed=0):
    """Walk-spread deviation max_start max_v |P_t(v) - 1/n| at each t.

    Exact over all n*k start edges when n*k <= exact_limit (or when
    explicit start edges are supplied, exact over those); otherwise a
    lower bound over ``sample_size`` seeded start edges.  A single pass
    evolves all requested t values together.
    """
    if any(t < 0 for t in ts):
        raise ValueError(f"t values must be >= 0, got {list(ts)}")
    if not is_connected(g):
        raise ValueError("mixing requires a connected graph")
    if is_bipartite(g):
        raise BipartiteGraphError(
            "walk distributions never converge on a bipartite graph")
    op, head_ind, _ = _edge_operator(g)
    n, k = g.n, g.k
    nk = n * k
    if sample_edges is not None:
        starts = np.asarray([_edge_id(g, e) if isinstance(e, WalkerState)
                             else int(e) for e in sample_edges])
        if starts.size == 0:
            raise ValueError("sample_edges must be nonempty")
    elif nk <= exact_limit:
        starts = None  # all start edges
    else:
        rng = np.random.default_rng(seed)
        starts = np.sort(rng.choice(nk, size=min(sample_size, nk),
                                    replace=False))

    target = 1.0 / n
    out = {}
    order = sorted(set(int(t) for t in ts))
    if starts is None:
        # dist[e, v] = P(curr = v at step t | start edge e), evolved for all
        # start edges at once: t applications of R to the head indicator.
        dist = head_ind.toarray()
        done = 0
        for t in order:
            for _ in range(t - done):
                dist = op @ dist
            done = t
            out[t] = float(np.abs(dist - target).max())
    else:
        vec = np.zeros((len(starts), nk))
        vec[np.arange(len(starts)), starts] = 1.0
        done = 0
        for t in order:
            for _ in range(t - done):
                vec = vec @ op
            done = t
            out[t] = float(np.abs(vec @ head_ind - target).max())
    return [out[int(t)] for t in ts]


def mixing_deviation(g, t, sample_edges=None, exact_limit=10_000,
                     sample_size=64, seed=0):
    """Single-t convenience wrapper around :func:`mixing_profile`."""
    return mixing_profile(g, [t], sample_edges=sample_edges,
                          exact_limit=exact_limit, sample_size=sample_size,
                          seed=seed)[0]
