"""Construction, validation, and analysis of simple k-regular graphs.

Graphs are immutable after construction and safe to share across threads.
All generators are deterministic functions of their parameters (and seed,
where one is taken).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import GenerationError, NumericalError, ParseError

__all__ = [
    "Graph",
    "GraphReport",
    "build_cycle",
    "build_torus",
    "build_lps",
    "build_random_regular",
    "girth",
    "spectral_lambda",
    "is_connected",
    "is_bipartite",
    "validate",
    "write_edge_list",
    "read_edge_list",
    "to_edge_list_text",
    "from_edge_list_text",
]


class Graph:
    """Simple undirected k-regular graph on vertices 0..n-1.

    ``adj[u]`` is a tuple of the k neighbors of ``u``.  Neighbor order is
    fixed at construction and governs how seeded walks consume randomness,
    but it is not part of graph identity: two graphs compare equal when
    their neighbor *sets* agree everywhere.
    """

    def __init__(self, adj):
        adj = tuple(tuple(int(v) for v in row) for row in adj)
        n = len(adj)
        if n == 0:
            raise ValueError("graph must have at least one vertex")
        k = len(adj[0])
        if k < 2:
            raise ValueError(f"degree must be >= 2, got {k}")
        directed = set()
        for u, row in enumerate(adj):
            if len(row) != k:
                raise ValueError(
                    f"vertex {u} has degree {len(row)}, expected {k}")
            seen = set()
            for v in row:
                if v == u:
                    raise ValueError(f"self-loop at vertex {u}")
                if not 0 <= v < n:
                    raise ValueError(f"neighbor {v} of {u} out of range")
                if v in seen:
                    raise ValueError(f"parallel edge {u}-{v}")
                seen.add(v)
            directed.update((u, v) for v in row)
        for u, v in directed:
            if (v, u) not in directed:
                raise ValueError(f"asymmetric adjacency: {u}-{v}")
        self.n = n
        self.k = k
        self.adj = adj
        self._adj_array = None

    # Identity hash (adjacency tuples are deep and rarely hashed); equality
    # is order-insensitive on neighbor lists.
    __hash__ = object.__hash__

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if self.n != other.n or self.k != other.k:
            return False
        return all(sorted(a) == sorted(b)
                   for a, b in zip(self.adj, other.adj))

    def __repr__(self):
        return f"Graph(n={self.n}, k={self.k})"

    @property
    def adj_array(self):
        """Adjacency as an (n, k) int64 array, built lazily."""
        if self._adj_array is None:
            self._adj_array = np.asarray(self.adj, dtype=np.int64)
        return self._adj_array

    def edges(self):
        """Sorted list of undirected edges (u, v) with u < v."""
        return sorted((u, v) for u, row in enumerate(self.adj)
                      for v in row if u < v)


@dataclass
class GraphReport:
    """Summary produced by :func:`validate`.

    ``girth_log_ratio`` is girth / (2 * log_{k-1} n), an indicator of how
    locally tree-like the graph is; it is undefined (None) for k = 2.
    """

    n: int
    degree: int
    connected: bool
    bipartite: bool
    girth: int | str
    spectral_lambda: float
    girth_log_ratio: float | None

    def to_dict(self):
        return {
            "n": self.n,
            "degree": self.degree,
            "connected": self.connected,
            "bipartite": self.bipartite,
            "girth": self.girth,
            "spectral_lambda": self.spectral_lambda,
            "girth_log_ratio": self.girth_log_ratio,
        }


# ---------------------------------------------------------------------------
# generators


def build_cycle(n):
    """Cycle 0-1-...-(n-1)-0; 2-regular."""
    if n < 3:
        raise ValueError(f"cycle needs n >= 3, got {n}")
    return Graph([((u + 1) % n, (u - 1) % n) for u in range(n)])


def build_torus(dims):
    """Nearest-neighbor torus with wraparound; 2*len(dims)-regular.

    Every dimension must be >= 3 (a dimension of 2 would create parallel
    edges).  Dimensions of 3 are allowed but introduce triangles, which
    shows up as girth 3 in the report.
    """
    dims = [int(d) for d in dims]
    if not dims:
        raise ValueError("torus needs at least one dimension")
    if any(d <= 2 for d in dims):
        raise ValueError(f"every torus dimension must be >= 3, got {dims}")
    strides = [1] * len(dims)
    for i in range(len(dims) - 2, -1, -1):
        strides[i] = strides[i + 1] * dims[i + 1]
    n = strides[0] * dims[0]
    adj = []
    for u in range(n):
        coords = [(u // strides[i]) % dims[i] for i in range(len(dims))]
        row = []
        for i, (c, m, s) in enumerate(zip(coords, dims, strides)):
            base = u - c * s
            row.append(base + ((c + 1) % m) * s)
            row.append(base + ((c - 1) % m) * s)
        adj.append(row)
    return Graph(adj)


def build_random_regular(n, k, seed, max_tries=100_000):
    """Random simple k-regular graph via the configuration model.

    Stubs are paired by a seeded shuffle; any self-loop or parallel edge
    triggers a full restart.  Deterministic given (n, k, seed).
    """
    if n * k % 2 != 0:
        raise ValueError(f"n*k must be even, got n={n}, k={k}")
    if not 2 <= k < n:
        raise ValueError(f"need 2 <= k < n, got n={n}, k={k}")
    rng = np.random.default_rng(seed)
    stubs = np.repeat(np.arange(n, dtype=np.int64), k)
    for _ in range(max_tries):
        perm = rng.permutation(stubs)
        u, v = perm[0::2], perm[1::2]
        if np.any(u == v):
            continue
        codes = np.minimum(u, v) * n + np.maximum(u, v)
        if np.unique(codes).size != codes.size:
            continue
        adj = [[] for _ in range(n)]
        for a, b in zip(u.tolist(), v.tolist()):
            adj[a].append(b)
            adj[b].append(a)
        return Graph(adj)
    raise GenerationError(
        f"configuration model failed after {max_tries} restarts "
        f"(n={n}, k={k}); large k makes simple pairings exponentially rare")


def _four_square_solutions(p):
    """All (a, b, c, d) with a^2+b^2+c^2+d^2 = p, a odd positive, b,c,d even.

    For a prime p = 1 (mod 4) there are exactly p+1 such solutions."""
    r = math.isqrt(p)
    sols = []
    for a in range(1, r + 1, 2):
        for b in range(-r, r + 1):
            if b % 2:
                continue
            rem_b = p - a * a - b * b
            if rem_b < 0:
                continue
            for c in range(-r, r + 1):
                if c % 2:
                    continue
                rem_c = rem_b - c * c
                if rem_c < 0:
                    continue
                e = math.isqrt(rem_c)
                if e * e == rem_c and e % 2 == 0:
                    for d in ({e, -e} if e else {0}):
                        sols.append((a, b, c, d))
    return sorted(sols)


def _sqrt_minus_one(q):
    """A square root of -1 modulo a prime q = 1 (mod 4)."""
    for z in range(2, q):
        if pow(z, (q - 1) // 2, q) == q - 1:  # z is a non-residue
            i = pow(z, (q - 1) // 4, q)
            assert (i * i) % q == q - 1
            return i
    raise GenerationError(f"no quadratic non-residue found mod {q}")


def _minus_one_decomposition(q):
    """Deterministic (x, y) with x^2 + y^2 = -1 mod an odd prime q.

    For q = 1 (mod 4) this is (sqrt(-1), 0), which keeps the matrix
    embedding below in its familiar diagonal form; for q = 3 (mod 4) no
    sqrt(-1) exists and the smallest x >= 1 making -(1 + x^2) a quadratic
    residue is used instead.
    """
    if q % 4 == 1:
        return _sqrt_minus_one(q), 0
    for x in range(1, q):
        r = (-1 - x * x) % q
        if r and pow(r, (q - 1) // 2, q) == 1:
            y = pow(r, (q + 1) // 4, q)
            assert (y * y) % q == r
            return x, y
    raise GenerationError(f"no decomposition of -1 as x^2 + y^2 mod {q}")


def _canon(m, q):
    """Canonical projective representative: scale so the first nonzero
    entry (row-major) is 1."""
    for x in m:
        if x:
            inv = pow(x, q - 2, q)
            return tuple((y * inv) % q for y in m)
    raise GenerationError("zero matrix has no projective representative")


def build_lps(p, q):
    """(p+1)-regular Cayley graph on PSL(2,q) or PGL(2,q).

    Generators come from the p+1 integer solutions of a^2+b^2+c^2+d^2 = p
    with a odd positive and b, c, d even, mapped to the 2x2 matrices
    [[a+bx-dy, by+c+dx], [by-c+dx, a-bx+dy]] mod q where (x, y) satisfies
    x^2 + y^2 = -1 mod q; for q = 1 (mod 4) that is (sqrt(-1), 0), giving
    the familiar form [[a+ib, c+id], [-c+id, a-ib]].  When p is a
    quadratic residue mod q the generators generate PSL(2,q)
    (n = q(q^2-1)/2, non-bipartite); otherwise the graph is bipartite on
    PGL(2,q) (n = q(q^2-1)).  Vertices are canonical projective matrix
    forms numbered in breadth-first order from the identity.
    """
    from sympy import isprime

    for name, val in (("p", p), ("q", q)):
        if not isprime(val):
            raise ValueError(f"{name} must be prime, got {val}")
    if p % 4 != 1:
        raise ValueError(f"p must be 1 mod 4, got {p}")
    if q == 2:
        raise ValueError("q must be an odd prime, got 2")
    if p == q:
        raise ValueError("p and q must be distinct")
    if q * q <= 4 * p:
        raise ValueError(f"need q > 2*sqrt(p), got p={p}, q={q}")

    x, y = _minus_one_decomposition(q)
    sols = _four_square_solutions(p)
    if len(sols) != p + 1:
        raise GenerationError(
            f"expected {p + 1} quaternion solutions, found {len(sols)}")
    gens = []
    for a, b, c, d in sols:
        m = ((a + b * x - d * y) % q, (b * y + c + d * x) % q,
             (b * y - c + d * x) % q, (a - b * x + d * y) % q)
        gens.append(_canon(m, q))
    if len(set(gens)) != p + 1:
        raise GenerationError("generator set has projective collisions")
    # The set is closed under inversion (the solution with negated b, c, d
    # gives the projective inverse), so the Cayley graph is undirected.
    for g0, g1, g2, g3 in gens:
        if _canon((g3, (-g1) % q, (-g2) % q, g0), q) not in set(gens):
            raise GenerationError("generator set not closed under inverse")

    legendre = pow(p, (q - 1) // 2, q)
    group_order = q * (q * q - 1)
    expected_n = group_order // 2 if legendre == 1 else group_order

    ident = (1, 0, 0, 1)
    index = {ident: 0}
    queue = deque([ident])
    adj = []
    while queue:
        m0, m1, m2, m3 = queue.popleft()
        row = []
        for s0, s1, s2, s3 in gens:
            prod = _canon(((m0 * s0 + m1 * s2) % q, (m0 * s1 + m1 * s3) % q,
                           (m2 * s0 + m3 * s2) % q, (m2 * s1 + m3 * s3) % q),
                          q)
            w = index.get(prod)
            if w is None:
                w = len(index)
                index[prod] = w
                queue.append(prod)
            row.append(w)
        adj.append(row)
    if len(adj) != expected_n:
        raise GenerationError(
            f"Cayley graph has {len(adj)} vertices, expected {expected_n}")
    return Graph(adj)


# ---------------------------------------------------------------------------
# analysis


def is_connected(g):
    seen = bytearray(g.n)
    seen[0] = 1
    frontier = [0]
    count = 1
    while frontier:
        nxt = []
        for u in frontier:
            for v in g.adj[u]:
                if not seen[v]:
                    seen[v] = 1
                    count += 1
                    nxt.append(v)
        frontier = nxt
    return count == g.n


def is_bipartite(g):
    color = bytearray(g.n)  # 0 = unseen, 1/2 = sides
    for s in range(g.n):
        if color[s]:
            continue
        color[s] = 1
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                cu = color[u]
                for v in g.adj[u]:
                    cv = color[v]
                    if cv == 0:
                        color[v] = 3 - cu
                        nxt.append(v)
                    elif cv == cu:
                        return False
            frontier = nxt
    return True


def girth(g):
    """Length of the shortest cycle, or "acyclic" if there is none.

    BFS from every vertex with parent-edge tracking: an edge reaching an
    already-visited vertex at depths d1, d2 closes a cycle of length
    d1+d2+1.  The minimum over all roots is exact.  Each BFS is truncated
    at the depth beyond which no cycle shorter than the best known one can
    close, so later searches are cheap.
    """
    n = len(g.adj)
    adj = g.adj
    best = math.inf
    visit_tag = [-1] * n
    dist = [0] * n
    parent = [0] * n
    for root in range(n):
        if best == 3:
            break
        # Scanning vertices at depth <= (best-2)//2 suffices to detect any
        # cycle of length <= best-1 through this root.
        cap = n if math.isinf(best) else (best - 2) // 2
        visit_tag[root] = root
        dist[root] = 0
        parent[root] = -1
        frontier = [root]
        depth = 0
        while frontier and depth <= cap:
            nxt = []
            for u in frontier:
                du = dist[u]
                pu = parent[u]
                for v in adj[u]:
                    if v == pu:
                        continue
                    if visit_tag[v] == root:
                        c = du + dist[v] + 1
                        if c < best:
                            best = c
                            cap = (best - 2) // 2
                    else:
                        visit_tag[v] = root
                        dist[v] = du + 1
                        parent[v] = u
                        nxt.append(v)
            frontier = nxt
            depth += 1
    return "acyclic" if math.isinf(best) else best


def _power_iteration(matvec, shift_sign, k, n, tol, max_iter):
    """Rayleigh-quotient power iteration on (k*I + shift_sign*A), deflating
    the all-ones Perron direction each iteration.  Returns the Rayleigh
    quotient of A at convergence (the extremal eigenvalue orthogonal to the
    Perron vector: the largest for shift_sign=+1, the smallest for -1)."""
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    x -= x.mean()
    x /= np.linalg.norm(x)
    inner = max(tol * 1e-3, 1e-15)
    hits = 0
    r_prev = math.inf
    r = math.nan
    for it in range(max_iter):
        ax = matvec(x)
        r = float(x @ ax)
        y = k * x + shift_sign * ax
        y -= y.mean()
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return r  # x already spans the extremal eigenspace exactly
        x = y / nrm
        if it >= 20 and abs(r - r_prev) <= inner:
            hits += 1
            if hits >= 10:
                return r
        else:
            hits = 0
        r_prev = r
    raise NumericalError(
        f"power iteration did not converge in {max_iter} iterations",
        best=r)


def spectral_lambda(g, tol=1e-6, max_iter=100_000):
    """max(lambda_2, |lambda_n|) of the adjacency matrix, within ~tol.

    lambda_2 comes from power iteration on A shifted positive (A + kI) with
    the all-ones Perron vector deflated; lambda_n from iteration on kI - A.
    Both report the Rayleigh quotient of A, which approaches the true value
    one-sidedly from inside the spectrum, so an unconverged estimate never
    exceeds the true spectral bound.
    """
    arr = g.adj_array
    k, n = g.k, g.n

    def matvec(x):
        return x[arr].sum(axis=1)

    lam2 = _power_iteration(matvec, +1, k, n, tol, max_iter)
    lam_n = _power_iteration(matvec, -1, k, n, tol, max_iter)
    return min(float(k), max(lam2, abs(lam_n)))


def validate(g, tol=1e-6):
    """GraphReport with connectivity, bipartiteness, girth, and spectrum."""
    girth_val = girth(g)
    ratio = None
    if g.k >= 3 and isinstance(girth_val, int):
        ratio = girth_val / (2 * math.log(g.n, g.k - 1))
    return GraphReport(
        n=g.n,
        degree=g.k,
        connected=is_connected(g),
        bipartite=is_bipartite(g),
        girth=girth_val,
        spectral_lambda=spectral_lambda(g, tol=tol),
        girth_log_ratio=ratio,
    )


# ---------------------------------------------------------------------------
# edge-list text format


def to_edge_list_text(g):
    """Render as text: first line "n k", then one "u v" (u < v) per edge,
    ascending."""
    lines = [f"{g.n} {g.k}"]
    lines.extend(f"{u} {v}" for u, v in g.edges())
    return "\n".join(lines) + "\n"


def from_edge_list_text(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ParseError("empty edge list")
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError(f"header must be 'n k', got {lines[0]!r}")
    try:
        n, k = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"header must be two integers, got {lines[0]!r}")
    if n <= 0 or k < 2:
        raise ParseError(f"invalid header n={n}, k={k}")
    adj = [[] for _ in range(n)]
    seen = set()
    for ln in lines[1:]:
        toks = ln.split()
        if len(toks) != 2:
            raise ParseError(f"edge line must be 'u v', got {ln!r}")
        try:
            u, v = int(toks[0]), int(toks[1])
        except ValueError:
            raise ParseError(f"edge line must be two integers, got {ln!r}")
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError(f"edge {u}-{v} out of range for n={n}")
        if u >= v:
            raise ParseError(f"edges must satisfy u < v, got {ln!r}")
        if (u, v) in seen:
            raise ParseError(f"duplicate edge {u}-{v}")
        seen.add((u, v))
        adj[u].append(v)
        adj[v].append(u)
    for u, row in enumerate(adj):
        if len(row) != k:
            raise ParseError(
                f"vertex {u} has degree {len(row)}, header declares k={k}")
    try:
        return Graph(adj)
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def write_edge_list(g, path):
    with open(path, "w", encoding="ascii") as fh:
        fh.write(to_edge_list_text(g))


def read_edge_list(path):
    with open(path, encoding="ascii") as fh:
        return from_edge_list_text(fh.read())
