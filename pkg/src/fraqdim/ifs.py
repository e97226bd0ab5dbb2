"""Contractive maps, recurrent IFS container, attractor clouds and separation checks."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import cKDTree

from . import markov
from .errors import (
    DepthZero,
    DimensionMismatch,
    FraqdimError,
    InadmissibleWord,
    NotContractive,
    NotSelfMapping,
    WrongCount,
)

SANITY_PAIRS = 1000
MAX_CLOUD = 1 << 14


class ContractionMap:
    """Common surface: ``apply`` on (m, k) arrays plus declared distortion bounds."""

    dim: int
    is_affine = False

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def declared_bounds(self) -> tuple[float, float]:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Affine(ContractionMap):
    """x -> A x + b."""

    matrix: np.ndarray
    offset: np.ndarray
    is_affine = True

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        b = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if a.shape != (b.size, b.size):
            raise DimensionMismatch(f"matrix {a.shape} does not match offset of length {b.size}")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "offset", b)

    @property
    def dim(self) -> int:
        return self.offset.size

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self.matrix.T + self.offset

    def declared_bounds(self):
        sv = np.linalg.svd(self.matrix, compute_uv=False)
        return float(sv[-1]), float(sv[0])


@dataclass(frozen=True, eq=False)
class Similarity(Affine):
    """x -> s Q x + b with Q orthogonal (identity when omitted)."""

    ratio: float = 1.0
    orthogonal: Optional[np.ndarray] = None

    @classmethod
    def make(cls, ratio: float, offset, orthogonal=None) -> "Similarity":
        b = np.atleast_1d(np.asarray(offset, dtype=float))
        q = np.eye(b.size) if orthogonal is None else np.atleast_2d(np.asarray(orthogonal, dtype=float))
        if q.shape != (b.size, b.size):
            raise DimensionMismatch("orthogonal part has wrong shape")
        if not np.allclose(q.T @ q, np.eye(b.size), atol=1e-12):
            raise FraqdimError("orthogonal part is not orthogonal")
        return cls(matrix=ratio * q, offset=b, ratio=float(ratio), orthogonal=q)

    def declared_bounds(self):
        s = abs(self.ratio)
        return s, s


@dataclass(frozen=True, eq=False)
class UserBounded(ContractionMap):
    """Arbitrary map with declared bounds ``lower*d(x,y) <= d(Sx,Sy) <= upper*d(x,y)``.

    ``func`` must accept and return (m, k) arrays.
    """

    func: Callable[[np.ndarray], np.ndarray]
    lower: float
    upper: float
    dim: int = 1

    def apply(self, x):
        return np.asarray(self.func(np.asarray(x, dtype=float)), dtype=float)

    def declared_bounds(self):
        return float(self.lower), float(self.upper)


def distortion_bounds(m: ContractionMap) -> tuple[float, float]:
    """(s_low, s_high) of a map; singular-value extremes for affine kinds."""
    lo, hi = m.declared_bounds()
    if not (0.0 < lo <= hi < 1.0):
        raise NotContractive(f"distortion bounds ({lo}, {hi}) not inside (0, 1)")
    return lo, hi


@dataclass(frozen=True)
class AttractorApprox:
    clouds: tuple  # one (m_i, k) array per component
    depth: int
    residual: float  # Hausdorff gap bound (max s_high)^depth * diam(X)
    anchors: np.ndarray  # (N, k)
    radii: np.ndarray  # E_j inside B(anchors[j], radii[j])

    @property
    def hausdorff_gap_estimate(self) -> float:
        return self.residual


@dataclass(frozen=True, eq=False)
class RecurrentIFS:
    """The system {X; S_i, p_ij}.  Use :meth:`build`; instances are immutable."""

    maps: tuple
    matrix: markov.StochasticMatrix
    stationary: markov.StationaryDistribution
    box_lo: np.ndarray
    box_hi: np.ndarray
    open_sets: Optional[tuple] = None
    attractor_depth: Optional[int] = None
    s_low: np.ndarray = field(default=None, repr=False)
    s_high: np.ndarray = field(default=None, repr=False)

    @classmethod
    def build(cls, maps: Sequence[ContractionMap], matrix, box, open_sets=None,
              attractor_depth: Optional[int] = None) -> "RecurrentIFS":
        P = matrix if isinstance(matrix, markov.StochasticMatrix) else markov.validate(matrix)
        maps = tuple(maps)
        if len(maps) != P.n:
            raise WrongCount(f"{len(maps)} maps for a {P.n}-state matrix")
        dims = {m.dim for m in maps}
        if len(dims) != 1:
            raise DimensionMismatch(f"maps have mixed dimensions {sorted(dims)}")
        k = dims.pop()
        lo = np.atleast_1d(np.asarray(box[0], dtype=float))
        hi = np.atleast_1d(np.asarray(box[1], dtype=float))
        if lo.shape != (k,) or hi.shape != (k,):
            raise DimensionMismatch("ambient box does not match map dimension")
        if not np.all(hi > lo):
            raise FraqdimError("ambient box must have nonempty interior")
        bounds = np.array([distortion_bounds(m) for m in maps])
        if open_sets is not None:
            open_sets = tuple((np.asarray(u[0], dtype=float).reshape(k), np.asarray(u[1], dtype=float).reshape(k))
                              for u in open_sets)
        if attractor_depth is not None and attractor_depth < 1:
            raise DepthZero("attractor depth must be >= 1")
        for arr in (lo, hi, bounds):
            arr.setflags(write=False)
        ifs = cls(maps=maps, matrix=P, stationary=markov.stationary(P), box_lo=lo, box_hi=hi,
                  open_sets=open_sets, attractor_depth=attractor_depth,
                  s_low=bounds[:, 0].copy(), s_high=bounds[:, 1].copy())
        ifs._check_self_mapping()
        ifs._check_user_bounds()
        return ifs

    # basic geometry -------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.maps)

    @property
    def dim(self) -> int:
        return self.box_lo.size

    @property
    def P(self) -> np.ndarray:
        return self.matrix.entries

    @property
    def p(self) -> np.ndarray:
        return self.stationary.p

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.box_hi - self.box_lo))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.box_lo + self.box_hi)

    @property
    def scale(self) -> float:
        """Magnitude used for floating-point slack on distances."""
        return float(max(np.max(np.abs(self.box_lo)), np.max(np.abs(self.box_hi)))) + self.diam

    @property
    def is_affine(self) -> bool:
        return all(m.is_affine for m in self.maps)

    @cached_property
    def A(self) -> np.ndarray:
        return np.stack([m.matrix for m in self.maps])

    @cached_property
    def b(self) -> np.ndarray:
        return np.stack([m.offset for m in self.maps])

    def corners(self) -> np.ndarray:
        return np.array(list(itertools.product(*zip(self.box_lo, self.box_hi))))

    def _check_self_mapping(self):
        pts = np.vstack([self.corners(), self.center])
        if not self.is_affine:
            rng = np.random.default_rng(0)
            pts = np.vstack([pts, self.box_lo + rng.random((256, self.dim)) * (self.box_hi - self.box_lo)])
        slack = 1e-12 * self.scale
        for i, m in enumerate(self.maps):
            img = m.apply(pts)
            if np.any(img < self.box_lo - slack) or np.any(img > self.box_hi + slack):
                raise NotSelfMapping(f"map {i} sends the ambient box outside itself")

    def _check_user_bounds(self):
        rng = np.random.default_rng(0)
        for i, m in enumerate(self.maps):
            if m.is_affine:
                continue
            x = self.box_lo + rng.random((SANITY_PAIRS, self.dim)) * (self.box_hi - self.box_lo)
            y = self.box_lo + rng.random((SANITY_PAIRS, self.dim)) * (self.box_hi - self.box_lo)
            d = np.linalg.norm(x - y, axis=1)
            dm = np.linalg.norm(m.apply(x) - m.apply(y), axis=1)
            tol = 1e-9 * d + 1e-15
            if np.any(dm < self.s_low[i] * d - tol) or np.any(dm > self.s_high[i] * d + tol):
                raise NotContractive(f"map {i} violates its declared distortion bounds")

    # attractor --------------------------------------------------------------
    def default_depth(self) -> int:
        """Smallest depth with residual <= 1e-3 diam(X), limited by cloud size."""
        if self.attractor_depth is not None:
            return self.attractor_depth
        smax = float(np.max(self.s_high))
        depth = int(np.ceil(np.log(1e-3) / np.log(smax)))
        indeg = int((self.P > 0).sum(axis=0).max())
        if indeg > 1:
            depth = min(depth, int(np.log(MAX_CLOUD) / np.log(indeg)))
        return max(depth, 4)

    @cached_property
    def attractor(self) -> AttractorApprox:
        return attractor_components(self, self.default_depth())

    @property
    def anchors(self) -> np.ndarray:
        return self.attractor.anchors

    @property
    def radii(self) -> np.ndarray:
        return self.attractor.radii


def word_contraction(ifs: RecurrentIFS, word: Sequence[int]) -> tuple[float, float]:
    """Products of (s_low, s_high) over the first ``len(word) - 1`` letters.

    The last letter only names the component the composed map is applied to.
    """
    from .symbolic import is_admissible

    if len(word) < 2:
        raise InadmissibleWord("words have length >= 2")
    if not is_admissible(word, ifs.P):
        raise InadmissibleWord(f"word {tuple(word)} is not admissible")
    idx = list(word[:-1])
    return float(np.prod(ifs.s_low[idx])), float(np.prod(ifs.s_high[idx]))


def _pick_anchor(cloud: np.ndarray) -> int:
    """Cloud point closest to the bounding-box centre (lowest index on ties)."""
    mid = 0.5 * (cloud.min(axis=0) + cloud.max(axis=0))
    d = np.linalg.norm(cloud - mid, axis=1)
    return int(np.flatnonzero(d == d.min())[0])


def attractor_components(ifs: RecurrentIFS, depth: int) -> AttractorApprox:
    """Iterate ``E_i <- U_{j: p_ji > 0} S_i(E_j)`` from the box centre ``depth`` times."""
    if depth < 1:
        raise DepthZero("depth must be >= 1")
    P = ifs.P
    clouds = [ifs.center[None, :].copy() for _ in range(ifs.n)]
    for _ in range(depth):
        new = []
        for i, m in enumerate(ifs.maps):
            src = np.vstack([clouds[j] for j in range(ifs.n) if P[j, i] > 0])
            # np.unique sorts lexicographically, which also fixes the order
            new.append(np.unique(m.apply(src), axis=0))
        clouds = new
    residual = float(np.max(ifs.s_high)) ** depth * ifs.diam
    anchors = np.empty((ifs.n, ifs.dim))
    radii = np.empty(ifs.n)
    for j, c in enumerate(clouds):
        a = c[_pick_anchor(c)]
        anchors[j] = a
        radii[j] = float(np.max(np.linalg.norm(c - a, axis=1))) + residual
        c.setflags(write=False)
    anchors.setflags(write=False)
    radii.setflags(write=False)
    return AttractorApprox(clouds=tuple(clouds), depth=depth, residual=residual, anchors=anchors, radii=radii)


def admissible_image_pairs(ifs: RecurrentIFS) -> list[tuple[int, int]]:
    """All (k, i) with p_ki > 0, i.e. the pieces S_i(E_k)."""
    P = ifs.P
    return [(k, i) for i in range(ifs.n) for k in range(ifs.n) if P[k, i] > 0]


def check_ssc(ifs: RecurrentIFS, attractor: Optional[AttractorApprox] = None) -> float:
    """Lower bound on the minimal gap between admissible pieces S_i(E_k).

    A positive value certifies the strong separation condition; a value
    <= 0 is inconclusive.
    """
    att = attractor if attractor is not None else ifs.attractor
    if att.depth < 4:
        raise FraqdimError("SSC check needs an attractor of depth >= 4")
    pieces = {(k, i): ifs.maps[i].apply(att.clouds[k]) for k, i in admissible_image_pairs(ifs)}
    keys = list(pieces)
    best = np.inf
    for a, b in itertools.combinations(keys, 2):
        tree = cKDTree(pieces[b])
        d, _ = tree.query(pieces[a], k=1)
        best = min(best, float(d.min()))
    return best - 2.0 * att.residual


def _affine_image(m: Affine, lo, hi):
    """Open box (lo, hi) as {M u + c : u in (0,1)^k}."""
    width = np.asarray(hi) - np.asarray(lo)
    return m.matrix * width[None, :], m.apply(np.asarray(lo)[None, :])[0]


def _open_images_intersect(img1, img2) -> bool:
    """Do two open parallelotopes {M u + c : u in (0,1)^k} intersect?

    Solved as an LP maximising the margin t of a common point from both
    boundaries; they intersect iff the optimum is positive.
    """
    (m1, c1), (m2, c2) = img1, img2
    k = c1.size
    # variables: u1 (k), u2 (k), t
    a_eq = np.hstack([m1, -m2, np.zeros((k, 1))])
    b_eq = c2 - c1
    eye = np.eye(k)
    zero = np.zeros((k, k))
    one = np.ones((k, 1))
    a_ub = np.vstack([
        np.hstack([-eye, zero, one]),  # t <= u1
        np.hstack([eye, zero, one]),  # u1 + t <= 1
        np.hstack([zero, -eye, one]),
        np.hstack([zero, eye, one]),
    ])
    b_ub = np.concatenate([np.zeros(k), np.ones(k), np.zeros(k), np.ones(k)])
    cost = np.zeros(2 * k + 1)
    cost[-1] = -1.0
    res = linprog(cost, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (2 * k) + [(None, 1.0)], method="highs")
    return bool(res.status == 0 and -res.fun > 1e-12)


def check_osc(ifs: RecurrentIFS, open_sets=None) -> bool:
    """Numerical open set condition for N user-supplied open boxes.

    Checks S_i(U_j) inside U_i whenever p_ji > 0, and that pieces produced
    by different maps are disjoint: S_i(U_j) and S_l(U_k) for i != l.
    """
    boxes = ifs.open_sets if open_sets is None else open_sets
    if boxes is None or len(boxes) != ifs.n:
        raise WrongCount(f"need exactly {ifs.n} open sets")
    if not ifs.is_affine:
        raise FraqdimError("OSC check supports affine and similarity maps only")
    boxes = [(np.asarray(lo, dtype=float).reshape(ifs.dim), np.asarray(hi, dtype=float).reshape(ifs.dim))
             for lo, hi in boxes]
    if any(np.any(hi <= lo) for lo, hi in boxes):
        return False
    slack = 1e-12 * ifs.scale
    images = {}
    for k, i in admissible_image_pairs(ifs):
        lo, hi = boxes[k]
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        img = ifs.maps[i].apply(corners)
        ulo, uhi = boxes[i]
        if np.any(img < ulo - slack) or np.any(img > uhi + slack):
            return False
        images[(k, i)] = _affine_image(ifs.maps[i], lo, hi)
    for (a, ia), (b, ib) in itertools.combinations(images, 2):
        if ia != ib and _open_images_intersect(images[(a, ia)], images[(b, ib)]):
            return False
    return True


def ssc_open_boxes(ifs: RecurrentIFS, delta: float, attractor: Optional[AttractorApprox] = None) -> list:
    """Bounding boxes of the component clouds inflated by delta/3."""
    att = attractor if attractor is not None else ifs.attractor
    pad = delta / 3.0
    return [(c.min(axis=0) - pad, c.max(axis=0) + pad) for c in att.clouds]
