"""Exception types shared across the package."""


class ParseError(ValueError):
    """A text artifact (edge list, config file) violates its format."""


class ConfigError(ValueError):
    """An experiment configuration is missing or misuses a key."""


class GenerationError(RuntimeError):
    """A graph generator could not produce a valid graph."""


class NumericalError(RuntimeError):
    """An iterative numerical routine failed a convergence or invariant
    check.  ``best`` carries the best estimate available at failure time,
    ``step`` the failing step index where applicable."""

    def __init__(self, message, best=None, step=None):
        super().__init__(message)
        self.best = best
        self.step = step


class BipartiteGraphError(ValueError):
    """An operation requiring a non-bipartite graph received a bipartite
    one (e.g. walk mixing, which never converges on bipartite graphs)."""
