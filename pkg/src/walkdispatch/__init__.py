"""Load-balancing on regular graphs: walk-driven dispatch, exact queueing
dynamics via uniformization, and mean-field ODE comparison.

Modules
-------
graph   : k-regular graph construction (cycle, torus, LPS Cayley, random
          regular), validation, girth, and spectral analysis.
walker  : non-backtracking walkers and exact walk-distribution diagnostics.
policy  : dispatch policies (walk-driven power-of-d, i.i.d. power-of-d,
          random assignment, join-shortest-queue).
engine  : continuous-time queue simulation via uniformization; tail
          occupancy trajectories and stationary estimates.
fluid   : mean-field ODE integration, fixed point, and sim-vs-ODE metrics.
cli     : command-line front end with deterministic file outputs.
"""

__version__ = "0.1.0"
