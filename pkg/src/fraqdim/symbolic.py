"""Words over the Markov shift, cylinder masses, finite maximal antichains,
chaos-game sampling and Birkhoff averages.

Letters are 0-based.  A word (w_1, ..., w_n) is admissible when
p[w_{k+1}, w_k] > 0 for each consecutive pair: the transition runs from the
*later* letter to the earlier one.  Always go through :func:`transition` for
that lookup.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ._util import rng_stream
from .errors import (
    DepthCapExceeded,
    EpsilonOutOfRange,
    InadmissibleWord,
    LetterOutOfRange,
    SeedRequired,
    TrajectoryTooShort,
)

MAX_WORD_LENGTH = 64
PARTITION_TOL = 1e-12


class MarkovSystem(NamedTuple):
    """Bare (P, p) pair for symbolic work without geometry."""

    P: np.ndarray
    p: np.ndarray


def markov_system(P) -> MarkovSystem:
    from . import markov

    sm = P if isinstance(P, markov.StochasticMatrix) else markov.validate(P)
    return MarkovSystem(sm.entries, markov.stationary(sm).p)


def transition(P, word: Sequence[int], k: int) -> float:
    """p[w_{k+1}, w_k] for 0-based position k (reversed subscript order)."""
    return P[word[k + 1], word[k]]


def is_admissible(letters: Sequence[int], P) -> bool:
    P = np.asarray(getattr(P, "entries", P))
    n = P.shape[0]
    if len(letters) == 0:
        raise LetterOutOfRange("empty word")
    for a in letters:
        if not 0 <= a < n:
            raise LetterOutOfRange(f"letter {a} outside 0..{n - 1}")
    return all(transition(P, letters, k) > 0 for k in range(len(letters) - 1))


@dataclass(frozen=True)
class CylinderMeasureValues:
    p_word: float  # nu[w] = p_{w_n} p_{w_n w_{n-1}} ... p_{w_2 w_1}
    P_word: float  # the same product without the leading p_{w_n}


def word_probability(word: Sequence[int], system) -> CylinderMeasureValues:
    P, p = system.P, system.p
    if not is_admissible(word, P):
        raise InadmissibleWord(f"word {tuple(word)} is not admissible")
    trans = 1.0
    for k in range(len(word) - 2, -1, -1):
        trans *= transition(P, word, k)
    return CylinderMeasureValues(p_word=float(p[word[-1]] * trans), P_word=float(trans))


def p_hat_min(system) -> float:
    """min over the stationary entries and the positive transition entries."""
    P = np.asarray(system.P)
    return float(min(np.min(system.p), np.min(P[P > 0])))


@dataclass(frozen=True)
class Antichain:
    words: tuple  # sorted tuple of word tuples
    kind: str  # "probability", "contraction" or "custom"
    epsilon: float | None = None

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)


def _dfs_antichain(system, key_stem, key_child, eps: float, kind: str) -> Antichain:
    """Collect words w with key(w^-) >= eps > key(w).

    ``key_stem(i)`` is the value attached to the one-letter stem (i) and
    ``key_child(value, w, j)`` the value of w*j given the value of w.
    Keys never increase along extensions.
    """
    P = np.asarray(system.P)
    n = P.shape[0]
    out = []
    stack = [((i,), key_stem(i)) for i in reversed(range(n))]
    while stack:
        word, val = stack.pop()
        if len(word) >= MAX_WORD_LENGTH:
            raise DepthCapExceeded(f"antichain needs words longer than {MAX_WORD_LENGTH}")
        last = word[-1]
        for j in reversed(range(n)):
            if P[j, last] <= 0:
                continue
            child = word + (j,)
            cval = key_child(val, word, j)
            if cval < eps:
                out.append(child)
            else:
                stack.append((child, cval))
    return Antichain(words=tuple(sorted(out)), kind=kind, epsilon=eps)


def antichain_by_probability(eps: float, system) -> Antichain:
    """Gamma(eps) = {w : p_{w^-} >= eps > p_w}; for two-letter w, p_{w^-} = p_{w_1}."""
    P, p = np.asarray(system.P), np.asarray(system.p)
    if not 0.0 < eps < float(np.min(p)):
        raise EpsilonOutOfRange(f"eps={eps} must lie in (0, min p_j = {np.min(p)})")
    # value carried is p_w; extending by j multiplies P_w by p[j, last]
    return _dfs_antichain(
        system,
        key_stem=lambda i: p[i],
        key_child=lambda val, w, j: val / p[w[-1]] * P[j, w[-1]] * p[j],
        eps=eps,
        kind="probability",
    )


def antichain_by_contraction(eps: float, ifs) -> Antichain:
    """Gamma_eps = {w : s_low_{w^-} >= eps > s_low_w}, products over all but the last letter."""
    slow = np.asarray(ifs.s_low)
    if not 0.0 < eps < float(np.min(slow)):
        raise EpsilonOutOfRange(f"eps={eps} must lie in (0, min s_low = {np.min(slow)})")
    return _dfs_antichain(
        ifs,
        key_stem=lambda i: 1.0,
        key_child=lambda val, w, j: val * slow[w[-1]],
        eps=eps,
        kind="contraction",
    )


def antichain_values(words, system) -> np.ndarray:
    return np.array([word_probability(w, system).p_word for w in words])


def verify_antichain(words, system) -> bool:
    """Pairwise non-extension plus partition of unity (to 1e-12)."""
    words = [tuple(w) for w in words]
    if not words:
        return False
    pool = set(words)
    if len(pool) != len(words):
        return False
    for w in words:
        if len(w) < 2 or not is_admissible(w, system.P):
            return False
        if any(w[:m] in pool for m in range(2, len(w))):
            return False
    total = math.fsum(word_probability(w, system).p_word for w in words)
    return abs(total - 1.0) <= PARTITION_TOL


# chains and chaos game --------------------------------------------------------

def sample_chain(system, steps: int, seed: int) -> np.ndarray:
    """Forward chain tau_1 ~ p, tau_{m+1} | tau_m ~ row p[tau_m, :]."""
    if seed is None:
        raise SeedRequired("chain sampling needs an explicit seed")
    P, p = np.asarray(system.P), np.asarray(system.p)
    rng = rng_stream(seed, "chain")
    u = rng.random(steps).tolist()
    cum = [np.cumsum(row).tolist() for row in P]
    for row in cum:
        row[-1] = math.inf
    init = np.cumsum(p).tolist()
    init[-1] = math.inf
    out = [0] * steps
    s = bisect_right(init, u[0])
    out[0] = s
    for m in range(1, steps):
        s = bisect_right(cum[s], u[m])
        out[m] = s
    return np.array(out, dtype=np.int64)


@dataclass(frozen=True)
class Trajectory:
    labels: np.ndarray  # full forward chain, length ``steps``
    points: np.ndarray  # x_m for m >= burnin
    point_labels: np.ndarray  # tau_m for m >= burnin
    burnin: int


def chaos_game(ifs, steps: int, burnin: int, seed: int) -> Trajectory:
    """Chaos game along the forward chain: x_{m+1} = S_{tau_{m+1}}(x_m), x_0 = c_{tau_1}.

    Why this samples mu: nu[(w_1..w_n)] = p_{w_n} prod p_{w_{k+1} w_k} is the
    forward-chain probability of the reversed word (w_n, ..., w_1), and
    x_m = S_{tau_m} o ... o S_{tau_2}(x_1) is the coding-map image of the
    sequence (tau_m, tau_{m-1}, ...).  So after burn-in x_m is a mu-sample
    lying in E_{tau_m} up to the attractor residual.
    """
    if seed is None:
        raise SeedRequired("chaos game needs an explicit seed")
    if burnin < 100 or steps <= burnin:
        raise ValueError("need steps > burnin >= 100")
    labels = sample_chain(ifs, steps, seed)
    pts = np.empty((steps - burnin, ifs.dim))
    x = np.array(ifs.anchors[labels[0]], dtype=float)
    if ifs.is_affine and ifs.dim == 1:
        a = ifs.A[:, 0, 0].tolist()
        b = ifs.b[:, 0].tolist()
        xs = float(x[0])
        lab = labels.tolist()
        col = [0.0] * (steps - burnin)
        for m in range(1, steps):
            t = lab[m]
            xs = a[t] * xs + b[t]
            if m >= burnin:
                col[m - burnin] = xs
        pts[:, 0] = col
    else:
        for m in range(1, steps):
            x = ifs.maps[labels[m]].apply(x[None, :])[0]
            if m >= burnin:
                pts[m - burnin] = x
    return Trajectory(labels=labels, points=pts, point_labels=labels[burnin:].copy(), burnin=burnin)


def markov_entropy(system) -> float:
    """sum_i sum_j p_i p_ij log p_ij with 0 log 0 = 0 (always <= 0)."""
    P, p = np.asarray(system.P), np.asarray(system.p)
    w = p[:, None] * P
    mask = P > 0
    return float(np.sum(w[mask] * np.log(P[mask])))


def lyapunov_sums(ifs) -> tuple[float, float]:
    """(sum p_i log s_low_i, sum p_i log s_high_i)."""
    p = np.asarray(ifs.p)
    return float(np.dot(p, np.log(ifs.s_low))), float(np.dot(p, np.log(ifs.s_high)))


def birkhoff_check(labels, ifs, min_length: int = 100_000) -> tuple[float, float, float]:
    """Ergodic averages along a forward chain.

    Returns (mean log p[tau_m, tau_{m+1}], mean log s_low[tau_m], mean log s_high[tau_m]).
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size < max(min_length, 2):
        raise TrajectoryTooShort(f"need at least {max(min_length, 2)} labels, got {labels.size}")
    P = np.asarray(ifs.P)
    n = P.shape[0]
    pairs = np.bincount(labels[:-1] * n + labels[1:], minlength=n * n).reshape(n, n)
    with np.errstate(divide="ignore"):
        logp = np.where(P > 0, np.log(np.where(P > 0, P, 1.0)), 0.0)
    f_avg = float(np.sum(pairs * logp) / (labels.size - 1))
    counts = np.bincount(labels, minlength=n)
    freq = counts / labels.size
    g_low = float(np.dot(freq, np.log(ifs.s_low)))
    g_high = float(np.dot(freq, np.log(ifs.s_high)))
    return f_avg, g_low, g_high
