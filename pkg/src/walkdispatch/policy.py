"""Dispatch policies: map an arriving job to a server, advancing any
policy-internal walker state.

Policies
--------
NbrwPod(d)              d non-backtracking walkers supply candidates; the
                        job joins the shortest candidate queue, then every
                        walker takes one step (sample-then-step).
NbrwrPod(d, reset_period)
                        as NbrwPod, but the ensemble is re-drawn uniformly
                        after every ``reset_period`` dispatches.
IidPod(d)               d servers drawn i.i.d. uniformly WITH replacement
                        (with-replacement matches the mean-field x^d law
                        exactly at every n); join the shortest.
RandomAssign            one uniform server.
Jsq                     global shortest queue.

All ties are broken uniformly at random; a tie-break draw is consumed
exactly when two or more candidates share the minimum.  Candidates form a
multiset: coinciding walkers count twice.

Randomness: ``rng`` exposes ``random()``; per dispatch the draws are, in
order: (IidPod) d candidate draws; tie-break draw if tied; (walk policies)
one step draw per walker with k >= 3; (NbrwrPod) 2d re-draw draws when the
reset period elapses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import walker as walker_mod

__all__ = [
    "NbrwPod",
    "NbrwrPod",
    "IidPod",
    "RandomAssign",
    "Jsq",
    "PolicyState",
    "POLICY_NAMES",
    "policy_name",
    "init_state",
    "dispatch",
    "make_dispatcher",
    "selection_tail_law",
]


@dataclass(frozen=True)
class NbrwPod:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")


@dataclass(frozen=True)
class NbrwrPod:
    d: int
    reset_period: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.reset_period < 1:
            raise ValueError(
                f"reset_period must be >= 1, got {self.reset_period}")


@dataclass(frozen=True)
class IidPod:
    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")


@dataclass(frozen=True)
class RandomAssign:
    pass


@dataclass(frozen=True)
class Jsq:
    pass


POLICY_NAMES = {
    NbrwPod: "nbrw-pod",
    NbrwrPod: "nbrwr-pod",
    IidPod: "iid-pod",
    RandomAssign: "random",
    Jsq: "jsq",
}


def policy_name(kind):
    return POLICY_NAMES[type(kind)]


@dataclass
class PolicyState:
    """Walker ensemble for walk policies (None otherwise) and the dispatch
    count since the last ensemble reset (NbrwrPod only)."""

    ensemble: object = None
    arrivals_since_reset: int = 0


def init_state(kind, g, rng):
    """Fresh policy state; walk policies draw their ensemble here."""
    if isinstance(kind, (NbrwPod, NbrwrPod)):
        return PolicyState(ensemble=walker_mod.init_uniform(g, kind.d, rng))
    return PolicyState()


def _pick_min(cands, queues, rnd):
    """Index of a shortest-queue candidate, uniform over ties."""
    best_q = queues[cands[0]]
    ties = [cands[0]]
    for c in cands[1:]:
        qc = queues[c]
        if qc < best_q:
            best_q = qc
            ties = [c]
        elif qc == best_q:
            ties.append(c)
    if len(ties) > 1:
        return ties[int(rnd() * len(ties))]
    return ties[0]


def make_dispatcher(kind, state, g, rng):
    """Bind a per-arrival callable ``dispatch_fn(queues) -> server`` for
    the simulation hot loop.  ``state`` is mutated across calls exactly as
    by :func:`dispatch`."""
    rnd = rng.random
    n = g.n

    if isinstance(kind, NbrwrPod):
        reset_period = kind.reset_period
        d = kind.d

        def dispatch_fn(queues):
            ens = state.ensemble
            server = _pick_min(ens.positions(), queues, rnd)
            walker_mod.step(ens, g, rng)
            state.arrivals_since_reset += 1
            if state.arrivals_since_reset >= reset_period:
                state.ensemble = walker_mod.init_uniform(g, d, rng)
                state.arrivals_since_reset = 0
            return server

    elif isinstance(kind, NbrwPod):
        ens = state.ensemble
        walkers = ens.walkers
        if len(walkers) == 2:
            w0, w1 = walkers

            def dispatch_fn(queues):
                c0, c1 = w0.curr, w1.curr
                q0, q1 = queues[c0], queues[c1]
                if q0 < q1:
                    server = c0
                elif q1 < q0:
                    server = c1
                else:
                    server = c1 if rnd() >= 0.5 else c0
                walker_mod.step(ens, g, rng)
                return server
        else:

            def dispatch_fn(queues):
                server = _pick_min(ens.positions(), queues, rnd)
                walker_mod.step(ens, g, rng)
                return server

    elif isinstance(kind, IidPod):
        d = kind.d

        def dispatch_fn(queues):
            cands = [int(rnd() * n) for _ in range(d)]
            return _pick_min(cands, queues, rnd)

    elif isinstance(kind, RandomAssign):

        def dispatch_fn(queues):
            return int(rnd() * n)

    elif isinstance(kind, Jsq):

        def dispatch_fn(queues):
            m = min(queues)
            c = queues.count(m)
            if c == 1:
                return queues.index(m)
            r = int(rnd() * c)
            pos = queues.index(m)
            for _ in range(r):
                pos = queues.index(m, pos + 1)
            return pos

    else:
        raise TypeError(f"unknown policy kind: {kind!r}")

    return dispatch_fn


def dispatch(kind, state, queues, g, rng):
    """One dispatch under ``kind``: returns (server, state).

    ``state`` is advanced in place and returned.  ``queues`` is read-only
    here; the caller applies the arrival.
    """
    if len(queues) != g.n:
        raise ValueError(
            f"queue vector has length {len(queues)}, graph has n={g.n}")
    server = make_dispatcher(kind, state, g, rng)(queues)
    return server, state


def selection_tail_law(kind, tails):
    """P(selected server has load exactly L), L = 0..B, for policies that
    sample candidates by the i.i.d. uniform law: x_L^d - x_{L+1}^d.

    Applies to IidPod (exact at every n) and to the walk policies in the
    regime where walker positions are near-uniform and near-independent;
    RandomAssign is the d = 1 case.  Jsq has no such per-level law.
    """
    if isinstance(kind, (NbrwPod, NbrwrPod, IidPod)):
        d = kind.d
    elif isinstance(kind, RandomAssign):
        d = 1
    else:
        raise ValueError(f"no closed-form selection law for {kind!r}")
    x = np.asarray(getattr(tails, "x", tails), dtype=float)
    xd = x ** d
    return xd - np.append(xd[1:], 0.0)
