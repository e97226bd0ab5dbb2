"""Closed-form dimension bounds, finite-scale estimators and the two sandwich validators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import measure, symbolic
from ._util import linfit, parallel_map
from .errors import CurveTooShort, InsufficientResolvedRadii, SSCNotCertified
from .ifs import check_ssc

log = logging.getLogger(__name__)

MAX_REL_WIDTH = 0.1


@dataclass(frozen=True)
class DimensionReport:
    alpha1: float
    alpha2: float
    markov_entropy: float
    lyap_low: float
    lyap_high: float
    d_estimate: Optional[float] = None
    d_stderr: Optional[float] = None
    local_dim_stats: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "markovEntropy": self.markov_entropy,
            "lyapLow": self.lyap_low,
            "lyapHigh": self.lyap_high,
            "dEstimate": self.d_estimate,
            "dStderr": self.d_stderr,
            "localDimStats": self.local_dim_stats,
        }


def alpha_bounds(ifs) -> DimensionReport:
    h = symbolic.markov_entropy(ifs)
    lo, hi = symbolic.lyapunov_sums(ifs)
    return DimensionReport(alpha1=h / lo, alpha2=h / hi, markov_entropy=h, lyap_low=lo, lyap_high=hi)


def special_case_check(ifs, tol: float = 1e-12) -> bool:
    """True when s_low = s_high and every row of P equals p; then both bounds
    collapse to sum p log p / sum p log s (asserted)."""
    P, p = ifs.P, ifs.p
    if not (np.allclose(ifs.s_low, ifs.s_high, rtol=0, atol=tol) and np.allclose(P, p[None, :], rtol=0, atol=tol)):
        return False
    rep = alpha_bounds(ifs)
    target = float(np.dot(p, np.log(p)) / np.dot(p, np.log(ifs.s_low)))
    assert abs(rep.alpha1 - target) <= tol and abs(rep.alpha2 - target) <= tol, (rep, target)
    return True


# quantization dimension --------------------------------------------------------

@dataclass(frozen=True)
class QuantDimEstimate:
    d: float
    stderr: float
    increments: tuple  # two-point estimates log(n2/n1) / (e1 - e2)
    window: tuple  # n values used in the regression


def estimate_quantization_dimension(curve, window: float = 0.5) -> QuantDimEstimate:
    """Slope of log n against -e_n over the largest-n ``window`` fraction of the curve."""
    ns = np.asarray(getattr(curve, "ns", None) if hasattr(curve, "ns") else [c[0] for c in curve], dtype=float)
    es = np.asarray(getattr(curve, "e_best", None) if hasattr(curve, "e_best") else [c[1] for c in curve], dtype=float)
    if ns.size < 4:
        raise CurveTooShort(f"need at least 4 curve entries, got {ns.size}")
    inc = tuple(float(math.log(ns[k + 1] / ns[k]) / (es[k] - es[k + 1])) for k in range(ns.size - 1))
    start = min(int(math.floor(ns.size * (1 - window))), ns.size - 3)
    sel = slice(max(start, 0), None)
    slope, _, err = linfit(-es[sel], np.log(ns[sel]))
    log.debug("incremental estimates %s", inc)
    return QuantDimEstimate(d=slope, stderr=err, increments=inc, window=tuple(int(v) for v in ns[sel]))


# local dimension ------------------------------------------------------------------

@dataclass(frozen=True)
class LocalDimEstimate:
    point: tuple
    slope: float
    r_range: tuple
    enc_width_max: float
    used: int


def default_r_grid(ifs, count: int = 7, top: int = 3) -> np.ndarray:
    """Log grid s^top .. s^(top+count-1) times the ambient diameter, s the mean ratio."""
    s = float(np.exp(np.dot(ifs.p, np.log(ifs.s_high))))
    return ifs.diam * s ** np.arange(top, top + count)


def estimate_local_dimension(x, r_grid, ifs, rel_gap: float = 0.05, depth_cap: int = measure.DEFAULT_DEPTH_CAP,
                             min_used: int = 4) -> LocalDimEstimate:
    """Regression slope of log mu(B(x, r)) on log r over well-resolved radii."""
    r_grid = np.sort(np.asarray(r_grid, dtype=float))
    if r_grid.size < 6:
        raise ValueError("r grid needs at least 6 radii")
    xs, ys, widths = [], [], []
    for r in r_grid:
        enc = measure.ball_measure(x, r, ifs, tol_gap=0.0, rel_gap=rel_gap, depth_cap=depth_cap)
        if enc.lo <= 0 or enc.hi <= 0:
            continue
        rel = (enc.hi - enc.lo) / enc.hi
        if rel > MAX_REL_WIDTH:
            continue
        xs.append(math.log(r))
        ys.append(0.5 * (math.log(enc.lo) + math.log(enc.hi)))
        widths.append(rel)
    if len(xs) < min_used:
        raise InsufficientResolvedRadii(f"only {len(xs)} of {r_grid.size} radii resolved")
    slope = linfit(xs, ys)[0]
    return LocalDimEstimate(point=tuple(float(v) for v in np.atleast_1d(x)), slope=float(slope),
                            r_range=(float(math.exp(min(xs))), float(math.exp(max(xs)))),
                            enc_width_max=float(max(widths)), used=len(xs))


def sample_support(ifs, count: int, seed: int, spacing: int = 25) -> np.ndarray:
    traj = symbolic.chaos_game(ifs, steps=1000 + spacing * count, burnin=1000, seed=seed)
    return traj.points[::spacing][:count]


def local_dimension_table(ifs, count: int, seed: int, r_grid=None) -> list:
    """Per-point estimates in sample order; failures give NaN slopes."""
    r_grid = default_r_grid(ifs) if r_grid is None else r_grid
    pts = sample_support(ifs, count, seed)

    def one(x):
        try:
            return estimate_local_dimension(x, r_grid, ifs)
        except InsufficientResolvedRadii:
            return LocalDimEstimate(tuple(float(v) for v in x), float("nan"), (float("nan"),) * 2, float("nan"), 0)

    return parallel_map(one, list(pts))


def validate_theorem1(ifs, sample_count: int, seed: int, band: float, r_grid=None, table=None) -> float:
    """Fraction of sampled points whose slope lies in [alpha1 (1 - band), alpha2 (1 + band)]."""
    rep = alpha_bounds(ifs)
    rows = table if table is not None else local_dimension_table(ifs, sample_count, seed, r_grid)
    lo, hi = rep.alpha1 * (1 - band), rep.alpha2 * (1 + band)
    good = sum(1 for e in rows if lo <= e.slope <= hi)
    return good / len(rows)


def validate_theorem2(ifs, curve, slack: float, require_ssc: bool = True, window: float = 0.5) -> bool:
    """alpha1 (1 - slack) <= D_hat <= alpha2 (1 + slack)."""
    if require_ssc and check_ssc(ifs) <= 0:
        raise SSCNotCertified("quantization sandwich needs a certified strong separation")
    rep = alpha_bounds(ifs)
    d = estimate_quantization_dimension(curve, window).d
    return rep.alpha1 * (1 - slack) <= d <= rep.alpha2 * (1 + slack)


def quantiles(values: Sequence[float]) -> dict:
    v = np.asarray([x for x in values if np.isfinite(x)], dtype=float)
    if v.size == 0:
        return {}
    qs = np.quantile(v, [0.05, 0.25, 0.5, 0.75, 0.95])
    return {"q05": float(qs[0]), "q25": float(qs[1]), "median": float(qs[2]), "q75": float(qs[3]),
            "q95": float(qs[4]), "count": int(v.size)}
