"""Cylinder discretisation of mu, ball-measure enclosures and the Frostman check.

Every cylinder sigma carries a representative x_sigma = S_sigma(c_last) and a
radius r_sigma with E_sigma inside the closed ball B(x_sigma, r_sigma).  Those
two numbers are all the enclosures below rely on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from . import symbolic
from ._util import linfit, parallel_map
from .errors import DepthCapReached, FraqdimError

log = logging.getLogger(__name__)

DEFAULT_TOL_GAP = 1e-3
DEFAULT_DEPTH_CAP = 40
SLACK_REL = 1e-13  # floating-point slack on radii, relative to ifs.scale


@dataclass
class Cylinders:
    """Struct-of-arrays batch of cylinders of one system.

    ``trans`` is P_sigma (product of transition entries); the mass is
    ``scale * p[last] * trans``.  Length-1 "cylinders" are the components
    E_i themselves and serve as roots.
    """

    ifs: object
    first: np.ndarray
    last: np.ndarray
    length: np.ndarray
    trans: np.ndarray
    s_high: np.ndarray
    s_low: np.ndarray
    x: np.ndarray
    M: Optional[np.ndarray]
    v: Optional[np.ndarray]
    words: Optional[list] = None
    scale: float = 1.0

    def __len__(self):
        return self.first.size

    @property
    def weight(self) -> np.ndarray:
        return self.scale * self.ifs.p[self.last] * self.trans

    @property
    def radius(self) -> np.ndarray:
        return self.s_high * self.ifs.radii[self.last] + SLACK_REL * self.ifs.scale

    def take(self, idx) -> "Cylinders":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return Cylinders(
            ifs=self.ifs, first=self.first[idx], last=self.last[idx], length=self.length[idx],
            trans=self.trans[idx], s_high=self.s_high[idx], s_low=self.s_low[idx], x=self.x[idx],
            M=None if self.M is None else self.M[idx], v=None if self.v is None else self.v[idx],
            words=None if self.words is None else [self.words[i] for i in idx], scale=self.scale,
        )

    def refine(self) -> "Cylinders":
        """All one-letter extensions sigma*j with p[j, last] > 0."""
        ifs = self.ifs
        P = ifs.P
        parts = []
        for j in range(ifs.n):
            sel = np.flatnonzero(P[j, self.last] > 0)
            if sel.size == 0:
                continue
            last = self.last[sel]
            if self.M is not None:
                M = self.M[sel] @ ifs.A[last]
                v = np.einsum("mij,mj->mi", self.M[sel], ifs.b[last]) + self.v[sel]
                x = M @ ifs.anchors[j] + v
            else:
                M = v = None
                x = None
            words = None
            if self.words is not None:
                words = [self.words[i] + (j,) for i in sel]
            if x is None:
                x = np.array([word_point(ifs, w) for w in words])
            parts.append(Cylinders(
                ifs=ifs, first=self.first[sel], last=np.full(sel.size, j), length=self.length[sel] + 1,
                trans=self.trans[sel] * P[j, last], s_high=self.s_high[sel] * ifs.s_high[last],
                s_low=self.s_low[sel] * ifs.s_low[last], x=x, M=M, v=v, words=words, scale=self.scale,
            ))
        return concat(parts, self)

    def word_list(self) -> list:
        if self.words is None:
            raise FraqdimError("this batch does not track words")
        return self.words


def concat(parts: Sequence[Cylinders], like: Cylinders) -> Cylinders:
    if not parts:
        return like.take(np.zeros(0, dtype=int))
    if len(parts) == 1:
        return parts[0]
    cat = np.concatenate
    return Cylinders(
        ifs=like.ifs, first=cat([c.first for c in parts]), last=cat([c.last for c in parts]),
        length=cat([c.length for c in parts]), trans=cat([c.trans for c in parts]),
        s_high=cat([c.s_high for c in parts]), s_low=cat([c.s_low for c in parts]),
        x=cat([c.x for c in parts]),
        M=None if parts[0].M is None else cat([c.M for c in parts]),
        v=None if parts[0].v is None else cat([c.v for c in parts]),
        words=None if parts[0].words is None else [w for c in parts for w in c.words],
        scale=like.scale,
    )


def word_point(ifs, word) -> np.ndarray:
    """S_{w_1} o ... o S_{w_{n-1}}(c_{w_n})."""
    x = np.array(ifs.anchors[word[-1]], dtype=float)[None, :]
    for a in reversed(word[:-1]):
        x = ifs.maps[a].apply(x)
    return x[0]


def roots(ifs, component: Optional[int] = None, track_words: bool = False) -> Cylinders:
    """The components E_i as length-1 cylinders; ``component`` conditions on E_i."""
    comps = np.arange(ifs.n) if component is None else np.array([component])
    m, k = comps.size, ifs.dim
    affine = ifs.is_affine
    track = track_words or not affine
    return Cylinders(
        ifs=ifs, first=comps.copy(), last=comps.copy(), length=np.ones(m, dtype=int),
        trans=np.ones(m), s_high=np.ones(m), s_low=np.ones(m), x=np.array(ifs.anchors[comps], dtype=float),
        M=np.broadcast_to(np.eye(k), (m, k, k)).copy() if affine else None,
        v=np.zeros((m, k)) if affine else None,
        words=[(int(c),) for c in comps] if track else None,
        scale=1.0 if component is None else 1.0 / float(ifs.p[component]),
    )


def from_words(ifs, words, scale: float = 1.0) -> Cylinders:
    """Cylinders for explicit admissible words (length >= 1)."""
    words = [tuple(int(a) for a in w) for w in words]
    m, k = len(words), ifs.dim
    P = ifs.P
    first = np.array([w[0] for w in words], dtype=int)
    last = np.array([w[-1] for w in words], dtype=int)
    trans = np.empty(m)
    sh = np.empty(m)
    sl = np.empty(m)
    x = np.empty((m, k))
    M = np.empty((m, k, k)) if ifs.is_affine else None
    v = np.empty((m, k)) if ifs.is_affine else None
    for t, w in enumerate(words):
        if not symbolic.is_admissible(w, P):
            raise symbolic.InadmissibleWord(f"word {w} is not admissible")
        tr = 1.0
        for q in range(len(w) - 2, -1, -1):
            tr *= symbolic.transition(P, w, q)
        trans[t] = tr
        idx = list(w[:-1])
        sh[t] = np.prod(ifs.s_high[idx]) if idx else 1.0
        sl[t] = np.prod(ifs.s_low[idx]) if idx else 1.0
        if M is not None:
            mat, off = np.eye(k), np.zeros(k)
            for a in idx:
                off = mat @ ifs.b[a] + off
                mat = mat @ ifs.A[a]
            M[t], v[t] = mat, off
            x[t] = mat @ ifs.anchors[w[-1]] + off
        else:
            x[t] = word_point(ifs, w)
    return Cylinders(ifs=ifs, first=first, last=last, length=np.array([len(w) for w in words], dtype=int),
                     trans=trans, s_high=sh, s_low=sl, x=x, M=M, v=v, words=words, scale=scale)


# discretisation ---------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteApprox:
    points: np.ndarray  # (m, k) representatives x_sigma
    weights: np.ndarray  # p_sigma
    radii: np.ndarray  # r_sigma
    words: tuple
    source: symbolic.Antichain

    def __len__(self):
        return self.weights.size


def discretize(antichain, ifs, component: Optional[int] = None) -> DiscreteApprox:
    """Weighted atoms, one per antichain word.

    With ``component`` only words starting with that letter are kept and the
    weights are divided by p_component (atoms of the conditional measure).
    """
    words = list(antichain.words if isinstance(antichain, symbolic.Antichain) else antichain)
    scale = 1.0
    if component is not None:
        words = [w for w in words if w[0] == component]
        scale = 1.0 / float(ifs.p[component])
    cyl = from_words(ifs, words, scale=scale)
    src = antichain if isinstance(antichain, symbolic.Antichain) else symbolic.Antichain(tuple(words), "custom")
    return DiscreteApprox(points=cyl.x, weights=cyl.weight, radii=cyl.radius, words=tuple(cyl.words), source=src)


# ball measures ------------------------------------------------------------------

@dataclass(frozen=True)
class BallMeasureEnclosure:
    lo: float
    hi: float
    depth_used: int
    depth_cap_reached: bool = False

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _heaviest_covering(weights: np.ndarray, fraction: float) -> np.ndarray:
    """Indices of the largest weights whose sum reaches ``fraction`` of the total."""
    order = np.argsort(-weights, kind="stable")
    csum = np.cumsum(weights[order])
    cut = int(np.searchsorted(csum, fraction * csum[-1])) + 1
    return order[:cut]


def ball_measure(x, r: float, ifs, tol_gap: float = DEFAULT_TOL_GAP, depth_cap: int = DEFAULT_DEPTH_CAP,
                 rel_gap: Optional[float] = None, component: Optional[int] = None,
                 strict: bool = False) -> BallMeasureEnclosure:
    """Two-sided enclosure of mu(B(x, r)) (closed ball).

    Cylinders fully inside count towards both bounds, cylinders fully outside
    are dropped and boundary cylinders are refined heaviest first.  Stops once
    hi - lo <= tol_gap (or <= rel_gap * hi when given).  Reaching
    ``depth_cap`` returns the wide enclosure flagged ``depth_cap_reached``;
    with ``strict=True`` it raises :class:`DepthCapReached` instead.
    """
    if r <= 0:
        raise ValueError("radius must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    cyl = roots(ifs, component)
    inside = []
    frozen = []
    depth_used = 1
    capped = False
    while True:
        rad = cyl.radius
        d = np.linalg.norm(cyl.x - x, axis=1)
        w = cyl.weight
        ins = d + rad <= r
        out = d - rad >= r
        bnd = ~(ins | out)
        inside.append(w[ins])
        cyl = cyl.take(bnd)
        w = w[bnd]
        lo = float(np.sum(np.concatenate(inside)))
        pending = float(np.sum(w))
        hi = lo + pending + float(np.sum(frozen))
        gap = hi - lo
        if len(cyl):
            depth_used = max(depth_used, int(cyl.length.max()))
        if gap <= tol_gap or (rel_gap is not None and gap <= rel_gap * hi) or len(cyl) == 0:
            break
        can = cyl.length < depth_cap
        if not can.all():
            frozen.append(float(np.sum(w[~can])))
            capped = True
            cyl = cyl.take(can)
            w = w[can]
            if len(cyl) == 0:
                break
        pick = _heaviest_covering(w, 0.5)
        rest = np.ones(len(cyl), dtype=bool)
        rest[pick] = False
        cyl = concat([cyl.take(pick).refine(), cyl.take(rest)], cyl)
    lo = min(max(lo, 0.0), 1.0)
    hi = min(max(hi, lo), 1.0)
    enc = BallMeasureEnclosure(lo=lo, hi=hi, depth_used=depth_used, depth_cap_reached=capped)
    if capped and strict:
        raise DepthCapReached(enc)
    return enc


# Frostman -----------------------------------------------------------------------

def frostman_exponent(ifs) -> float:
    """eta = log(P_max) / log(s_min) with P_max over stationary and transition entries.

    When some p_ij = 1 that formula degenerates to 0; then the L-step
    version log(max L-path product) / (L log s_min) is used with the
    smallest L <= N that gives a product below one.
    """
    P, p = ifs.P, ifs.p
    s_min = float(np.min(ifs.s_low))
    pmax = max(float(np.max(p)), float(np.max(P)))
    if pmax < 1.0:
        return math.log(pmax) / math.log(s_min)
    step = P.copy()
    for L in range(2, ifs.n + 2):
        # max over paths of length L of the transition product (max-times power)
        step = np.max(step[:, :, None] * P[None, :, :], axis=1)
        m = float(np.max(step))
        if m < 1.0:
            return math.log(m) / (L * math.log(s_min))
    raise FraqdimError("transition matrix is a permutation: mu has atoms, no Frostman exponent")


@dataclass(frozen=True)
class FrostmanReport:
    eta: float
    max_ratio: float
    trend_slope: float
    rows: tuple = field(default=(), repr=False)  # (eps, lo, hi, ratio) per (point, eps)


def frostman_check(ifs, sample_count: int, eps_grid, seed: int, rel_gap: float = 0.05,
                   points: Optional[np.ndarray] = None) -> FrostmanReport:
    """Empirical sup of mu_hi(B(x, eps)) / eps^eta over sampled support points.

    The trend slope regresses log(max ratio over points) on log eps; a
    clearly negative slope means the ratio blows up as eps shrinks.
    """
    eta = frostman_exponent(ifs)
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))
    if points is None:
        traj = symbolic.chaos_game(ifs, steps=1000 + 20 * sample_count, burnin=1000, seed=seed)
        points = traj.points[::20][:sample_count]

    def one(x):
        return [ball_measure(x, e, ifs, tol_gap=0.0, rel_gap=rel_gap, depth_cap=DEFAULT_DEPTH_CAP) for e in eps_grid]

    encs = parallel_map(one, list(points))
    rows = []
    ratios = np.zeros((len(points), eps_grid.size))
    for a, per_point in enumerate(encs):
        for b, enc in enumerate(per_point):
            ratio = enc.hi / eps_grid[b] ** eta
            ratios[a, b] = ratio
            rows.append((float(eps_grid[b]), enc.lo, enc.hi, ratio))
    per_eps = ratios.max(axis=0)
    good = per_eps > 0
    slope = linfit(np.log(eps_grid[good]), np.log(per_eps[good]))[0] if good.sum() >= 2 else 0.0
    return FrostmanReport(eta=eta, max_ratio=float(ratios.max()), trend_slope=float(slope), rows=tuple(rows))


@lru_cache(maxsize=32)
def tail_constants(ifs) -> tuple[float, float]:
    """(C, eta) for the Frostman tail bound: C = 2 * max sampled ratio.

    Uses a fixed internal seed so results are reproducible.
    """
    eta = frostman_exponent(ifs)
    smin = float(np.min(ifs.s_low))
    eps = ifs.diam * smin ** np.arange(1, 9)
    rep = frostman_check(ifs, sample_count=24, eps_grid=eps, seed=0)
    return 2.0 * rep.max_ratio, eta
