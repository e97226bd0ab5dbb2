"""Row-stochastic transition matrices and their stationary distributions."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import FraqdimError, NegativeEntry, NoConvergence, NotIrreducible, RowSumNotOne

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StochasticMatrix:
    """Validated irreducible row-stochastic matrix ``entries[i, j] = p_ij``.

    Build through :func:`validate`; the array is made read-only.
    """

    entries: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, ij):
        return self.entries[ij]

    def __eq__(self, other):
        return isinstance(other, StochasticMatrix) and np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    p: np.ndarray

    def __getitem__(self, i):
        return self.p[i]

    def __len__(self):
        return len(self.p)

    def __eq__(self, other):
        return isinstance(other, StationaryDistribution) and np.array_equal(self.p, other.p)

    def __hash__(self):
        return hash(self.p.tobytes())


def _reachable(adj: np.ndarray, start: int) -> np.ndarray:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(adj[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return seen


def is_irreducible(P) -> bool:
    """True iff the support graph ``i -> j (p_ij > 0)`` is strongly connected.

    One forward and one reverse breadth-first search from state 0 suffice.
    """
    adj = np.asarray(P, dtype=float) > 0
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def validate(raw) -> StochasticMatrix:
    """Check nonnegativity, unit row sums (to 1e-12) and irreducibility.

    Rows are never renormalised: a row that is off by more than the tolerance
    is an error, not something to fix silently.
    """
    a = np.array(raw, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise FraqdimError(f"transition matrix must be square, got shape {a.shape}")
    if a.shape[0] < 2:
        raise FraqdimError("need at least two states")
    if not np.all(np.isfinite(a)):
        raise FraqdimError("transition matrix has non-finite entries")
    neg = np.argwhere(a < 0)
    if len(neg):
        i, j = neg[0]
        raise NegativeEntry(f"p[{i},{j}] = {a[i, j]} < 0")
    dev = a.sum(axis=1) - 1.0
    bad = np.flatnonzero(np.abs(dev) > ROW_SUM_TOL)
    if len(bad):
        raise RowSumNotOne(int(bad[0]), float(dev[bad[0]]))
    if not is_irreducible(a):
        raise NotIrreducible("support graph is not strongly connected")
    a.setflags(write=False)
    return StochasticMatrix(a)


def _as_array(P) -> np.ndarray:
    return P.entries if isinstance(P, StochasticMatrix) else np.asarray(P, dtype=float)


def stationary_power(P, tol: float = 1e-14, max_iter: int = 1_000_000) -> np.ndarray:
    """Power iteration ``p <- p Q`` from the uniform vector.

    Q = (P + I)/2 has the same invariant vector as P but is aperiodic, so
    periodic chains converge too.
    """
    a = _as_array(P)
    n = a.shape[0]
    q = 0.5 * (a + np.eye(n))
    p = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = p @ q
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - p)) <= tol:
            return nxt
        p = nxt
    raise NoConvergence(f"power iteration did not converge in {max_iter} iterations")


def stationary_solve(P) -> np.ndarray:
    """Direct solve of (P^T - I) p = 0 with the normalisation row appended."""
    a = _as_array(P)
    n = a.shape[0]
    lhs = np.vstack([a.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(lhs, rhs, rcond=None)
    # one step of iterative refinement keeps the residual at rounding level
    r = rhs - lhs @ p
    dp, *_ = np.linalg.lstsq(lhs, r, rcond=None)
    p = p + dp
    return p / p.sum()


def stationary(P: StochasticMatrix, tol: float = 1e-12, method: str = "solve") -> StationaryDistribution:
    """Left-invariant probability vector of ``P`` with ``||pP - p||_inf <= tol``.

    ``method="solve"`` uses the linear system, ``"power"`` the power iteration.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = _as_array(P)
    if method == "solve":
        p = stationary_solve(a)
        if np.max(np.abs(p @ a - p)) > tol:
            # ill-conditioned chain: polish with the iteration
            p = stationary_power(a, tol=tol * 1e-2)
    elif method == "power":
        p = stationary_power(a, tol=min(tol * 1e-2, 1e-14))
    else:
        raise ValueError(f"unknown method {method!r}")
    if np.any(p <= 0):
        raise NotIrreducible("stationary vector has non-positive entries")
    if np.max(np.abs(p @ a - p)) > tol:
        raise NoConvergence("stationary residual above tolerance")
    p = np.array(p)
    p.setflags(write=False)
    return StationaryDistribution(p)


def random_irreducible(n: int, rng: np.random.Generator, density: float = 0.5) -> StochasticMatrix:
    """Rejection-sample a random irreducible stochastic matrix (test helper)."""
    while True:
        a = rng.random((n, n)) * (rng.random((n, n)) < density)
        rows = a.sum(axis=1)
        if np.any(rows == 0):
            continue
        a = a / rows[:, None]
        # absorb rounding into each row's largest entry
        big = np.argmax(a, axis=1)
        idx = np.arange(n)
        a[idx, big] = 0.0
        a[idx, big] = 1.0 - a.sum(axis=1)
        if not is_irreducible(a):
            continue
        return validate(a)
