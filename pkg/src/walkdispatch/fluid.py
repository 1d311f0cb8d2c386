"""Mean-field tail dynamics: ODE integration, fixed point, and distances.

The state is the tail-occupancy vector x_0..x_B with x_0 pinned at 1 and
x_{B+1} closed to 0 (truncation).  All functions here are pure and
deterministic: identical inputs give bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError

__all__ = [
    "FluidState",
    "FluidTrajectory",
    "rhs",
    "arrival_term",
    "service_term",
    "integrate",
    "fixed_point",
    "l1_distance",
    "sup_deviation",
]

MONOTONE_TOL = 1e-9


@dataclass
class FluidState:
    """Tail vector x_0..x_B with per-server arrival rate lam and d choices."""

    x: np.ndarray
    lam: float
    d: int
    B: int = field(default=-1)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.B < 0:
            self.B = len(self.x) - 1
        if len(self.x) != self.B + 1:
            raise ValueError(
                f"state has {len(self.x)} levels, expected B+1={self.B + 1}")
        if not 0.0 <= self.lam < 1.0:
            raise ValueError(f"lam must be in [0, 1), got {self.lam}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        _check_monotone(self.x, "initial state")


def _check_monotone(x, where):
    if abs(x[0] - 1.0) > MONOTONE_TOL:
        raise ValueError(f"x_0 must be 1, got {x[0]!r} at {where}")
    if x[-1] < -MONOTONE_TOL or np.any(np.diff(x) > MONOTONE_TOL):
        raise ValueError(
            f"tail vector not monotone nonincreasing within "
            f"{MONOTONE_TOL} at {where}")


def arrival_term(s):
    """Per-level arrival flux a_i = lam * (x_{i-1}^d - x_i^d); a_0 = 0."""
    xd = s.x ** s.d
    a = np.zeros_like(s.x)
    a[1:] = s.lam * (xd[:-1] - xd[1:])
    return a


def service_term(s):
    """Per-level service flux b_i = x_i - x_{i+1} with x_{B+1} = 0; b_0 = 0."""
    b = np.zeros_like(s.x)
    b[1:-1] = s.x[1:-1] - s.x[2:]
    b[-1] = s.x[-1]
    return b


def rhs(s):
    """Time derivative of the tail vector (truncated closure x_{B+1} = 0)."""
    return arrival_term(s) - service_term(s)


@dataclass
class FluidTrajectory:
    """Integration nodes: times[j] and matching states xs[j] (rows)."""

    times: np.ndarray
    xs: np.ndarray
    h: float
    lam: float
    d: int
    B: int

    def state_at(self, t):
        """Linear interpolation between integration nodes."""
        times = self.times
        if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
            raise ValueError(f"t={t} outside integrated range "
                             f"[{times[0]}, {times[-1]}]")
        j = int(np.searchsorted(times, t, side="right")) - 1
        j = max(0, min(j, len(times) - 2))
        t0, t1 = times[j], times[j + 1]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1.0 - w) * self.xs[j] + w * self.xs[j + 1]


def _rk4_step(x, h, lam, d):
    def f(y):
        xd = y ** d
        dy = np.zeros_like(y)
        dy[1:] = lam * (xd[:-1] - xd[1:]) - y[1:]
        dy[1:-1] += y[2:]
        return dy

    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _full_steps(T, h):
    """floor(T/h) robust to T being an exact float multiple of h."""
    q = int(T / h)
    while (q + 1) * h <= T:
        q += 1
    while q * h > T:
        q -= 1
    return q


def integrate(x0, T, h=0.01):
    """Classical fixed-step RK4 from a FluidState to horizon T.

    Takes floor(T/h) full steps plus one partial step to land exactly on
    T.  The monotone-tail invariant is asserted after every step; a
    violation beyond 1e-9 raises NumericalError naming the step.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    if T < 0:
        raise ValueError(f"horizon must be nonnegative, got {T}")
    lam, d, B = x0.lam, x0.d, x0.B
    n_full = _full_steps(T, h)
    rem = T - n_full * h
    if rem <= 1e-12 * max(1.0, T):
        rem = 0.0
    steps = n_full + (1 if rem > 0.0 else 0)
    xs = np.empty((steps + 1, B + 1))
    times = np.empty(steps + 1)
    x = x0.x.copy()
    xs[0] = x
    times[0] = 0.0
    for j in range(1, steps + 1):
        step_h = h if j <= n_full else rem
        x = _rk4_step(x, step_h, lam, d)
        try:
            _check_monotone(x, f"step {j} (t={min(j * h, T):g})")
        except ValueError as exc:
            raise NumericalError(f"integration failed at step {j}: {exc}",
                                 step=j) from exc
        xs[j] = x
        times[j] = j * h
    times[steps] = T
    return FluidTrajectory(times=times, xs=xs, h=h, lam=lam, d=d, B=B)


def fixed_point(lam, d, B=16):
    """Equilibrium tail vector: x_0 = 1, x_i = lam * x_{i-1}^d.

    Equivalently x_i = lam^((d^i - 1)/(d - 1)) for d >= 2 and lam^i for
    d = 1.  The closed form is verified against the balance equations
    before being returned: the residual uses the equilibrium continuation
    x_{B+1} = lam * x_B^d, which removes the boundary artifact that the
    hard-zero truncation would inject for slowly decaying tails (d = 1).
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lam must be in (0, 1), got {lam}")
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if B < 1:
        raise ValueError(f"B must be >= 1, got {B}")
    x = np.empty(B + 1)
    x[0] = 1.0
    for i in range(1, B + 1):
        x[i] = lam * x[i - 1] ** d
    res = fixed_point_residual(x, lam, d)
    if res > 1e-9:
        raise NumericalError(
            f"fixed-point residual {res:.3e} exceeds 1e-9", best=x)
    return FluidState(x=x, lam=lam, d=d, B=B)


def fixed_point_residual(x, lam, d):
    """Max absolute residual of the balance equations at x, closing the
    tail with its equilibrium continuation x_{B+1} = lam * x_B^d."""
    x = np.asarray(x, dtype=float)
    ext = np.append(x, lam * x[-1] ** d)
    xd = ext ** d
    res = lam * (xd[:-2] - xd[1:-1]) - (ext[1:-1] - ext[2:])
    return float(np.abs(res).max()) if len(res) else 0.0


def _levels(v):
    """Extract the level array from a FluidState, TailVector, or array."""
    x = getattr(v, "x", v)
    return np.asarray(x, dtype=float)


def l1_distance(a, b):
    """Sum_{i>=1} |a_i - b_i| (level 0 excluded; it is identically 1)."""
    xa, xb = _levels(a), _levels(b)
    if len(xa) != len(xb):
        raise ValueError(
            f"level count mismatch: {len(xa)} vs {len(xb)}")
    return float(np.abs(xa[1:] - xb[1:]).sum())


def sup_deviation(traj, fluid):
    """Max over simulation sample instants of the l1 distance between the
    sampled tail vector and the interpolated fluid solution."""
    times = np.asarray(traj.times, dtype=float)
    sim = np.asarray(traj.xs, dtype=float)
    if sim.shape[1] != fluid.xs.shape[1]:
        raise ValueError(
            f"level count mismatch: simulation has {sim.shape[1] - 1}, "
            f"fluid has {fluid.xs.shape[1] - 1}")
    if times[-1] > fluid.times[-1] + 1e-9:
        raise ValueError(
            f"fluid integrated to t={fluid.times[-1]}, simulation "
            f"sampled to t={times[-1]}")
    # Vectorized linear interpolation of every fluid level at the sample
    # instants.
    idx = np.searchsorted(fluid.times, times, side="right") - 1
    idx = np.clip(idx, 0, len(fluid.times) - 2)
    t0 = fluid.times[idx]
    t1 = fluid.times[idx + 1]
    w = np.where(t1 > t0, (times - t0) / np.maximum(t1 - t0, 1e-300), 0.0)
    interp = (1.0 - w[:, None]) * fluid.xs[idx] + w[:, None] * fluid.xs[idx + 1]
    return float(np.abs(sim[:, 1:] - interp[:, 1:]).sum(axis=1).max())
