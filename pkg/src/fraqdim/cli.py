"""Command line entry point: ``fraqdim <subcommand> --config FILE``.

Exit codes: 0 success, 1 usage or config error, 2 a validator outside tolerance.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dims, measure, quantizer, symbolic
from ._util import csv_text, fmt, set_threads
from .config import load
from .errors import ConfigError, FraqdimError, ValidatorFailed
from .ifs import check_osc, check_ssc

log = logging.getLogger("fraqdim")

ANTICHAIN_EPS = (0.3, 0.05, 0.01, 0.001)
DEFAULT_EPS = 0.05


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fraqdim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("stationary", "attractor", "sample", "antichain", "quantize", "dims", "verify", "report"):
        p = sub.add_parser(name)
        p.add_argument("config_pos", nargs="?", metavar="CONFIG")
        p.add_argument("--config", dest="config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        if name in ("antichain", "report"):
            p.add_argument("--eps", type=float)
        if name in ("quantize", "dims", "verify", "report"):
            p.add_argument("--n-list", dest="n_list")
    return ap


# context --------------------------------------------------------------------------

class Run:
    """Config, system and lazily computed shared results for one invocation."""

    def __init__(self, args):
        path = args.config or args.config_pos
        if not path:
            raise UsageError("a config file is required (--config PATH)")
        self.cfg = load(path)
        if args.seed is not None:
            self.cfg.seeds[0] = args.seed
        if getattr(args, "n_list", None):
            try:
                nl = [int(v) for v in args.n_list.split(",") if v.strip()]
            except ValueError:
                raise ConfigError(f"not a comma-separated integer list: {args.n_list!r}", "--n-list")
            if not nl or any(b <= a for a, b in zip(nl, nl[1:])) or nl[0] < 1:
                raise ConfigError("must be strictly increasing positive integers", "--n-list")
            self.cfg.quantization.nList = nl
        self.eps = getattr(args, "eps", None)
        self.out = Path(args.out or self.cfg.output)
        self.ifs = self.cfg.build_system()
        self.seed = self.cfg.seed
        self._curve = None
        self._local = None

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    @property
    def curve(self):
        if self._curve is None:
            self._curve = quantizer.build_curve(self.ifs, self.cfg.quantization.nList,
                                                self.cfg.optimizer_settings(), self.seed)
        return self._curve

    @property
    def local(self):
        if self._local is None:
            self._local = dims.local_dimension_table(self.ifs, self.cfg.dims.sampleCount, self.seed,
                                                     self.cfg.r_grid())
        return self._local


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


# subcommands ------------------------------------------------------------------------

def do_stationary(run: Run) -> int:
    p = run.ifs.p
    resid = float(np.max(np.abs(p @ run.ifs.P - p)))
    for v in p:
        print(fmt(v))
    run.write("stationary.json", _dump({"p": [float(v) for v in p], "residual": resid}))
    return 0


def do_attractor(run: Run) -> int:
    att = run.ifs.attractor
    k = run.ifs.dim
    rows = [(i, *pt) for i, cloud in enumerate(att.clouds) for pt in cloud]
    path = run.write("attractor.csv", csv_text(["component"] + [f"x{j + 1}" for j in range(k)], rows))
    print(f"{sum(len(c) for c in att.clouds)} points at depth {att.depth} -> {path}")
    return 0


def do_sample(run: Run) -> int:
    s = run.cfg.sampling
    traj = symbolic.chaos_game(run.ifs, s.steps, s.burnin, run.seed)
    k = run.ifs.dim
    rows = [(s.burnin + m, int(traj.point_labels[m]), *traj.points[m]) for m in range(traj.points.shape[0])]
    path = run.write("samples.csv", csv_text(["step", "label"] + [f"x{j + 1}" for j in range(k)], rows))
    print(f"{len(rows)} samples -> {path}")
    return 0


def do_antichain(run: Run) -> int:
    eps = run.eps if run.eps is not None else DEFAULT_EPS
    g = symbolic.antichain_by_probability(eps, run.ifs)
    rows = []
    for w in g.words:
        lo, hi = _contraction(run.ifs, w)
        rows.append(("-".join(str(a) for a in w), symbolic.word_probability(w, run.ifs).p_word, lo, hi))
    path = run.write("antichain.csv", csv_text(["word", "p", "s_low", "s_high"], rows))
    print(f"{len(rows)} words at eps={fmt(eps)} -> {path}")
    return 0


def _contraction(ifs, w):
    idx = list(w[:-1])
    return float(np.prod(ifs.s_low[idx])), float(np.prod(ifs.s_high[idx]))


def do_quantize(run: Run) -> int:
    curve = run.curve
    k = run.ifs.dim
    width = max(len(e.codebook) for e in curve.entries) * k
    rows = []
    for e in curve.entries:
        flat = [float(v) for v in e.codebook.points.ravel()]
        rows.append([e.n, e.enclosure.lo, e.enclosure.hi, e.e_best] + flat + [""] * (width - len(flat)))
    header = ["n", "e_lo", "e_hi", "e_best"] + [f"c{j}" for j in range(width)]
    run.write("curve.csv", csv_text(header, rows))
    run.write("codebooks.json", _dump([e.codebook.to_json() for e in curve.entries]))
    for e in curve.entries:
        print(f"n={e.n:<5d} e_best={fmt(e.e_best)}  [{fmt(e.enclosure.lo)}, {fmt(e.enclosure.hi)}]")
    return 0


def do_dims(run: Run) -> int:
    rep = dims.alpha_bounds(run.ifs)
    est = dims.estimate_quantization_dimension(run.curve)
    table = run.local
    stats = dims.quantiles([e.slope for e in table])
    out = rep.to_json()
    out.update({"dEstimate": est.d, "dStderr": est.stderr, "dIncrements": list(est.increments),
                "dWindow": list(est.window), "localDimStats": stats,
                "specialCase": dims.special_case_check(run.ifs)})
    run.write("dims.json", _dump(out))
    k = run.ifs.dim
    rows = [(i, *e.point, e.slope, e.r_range[0], e.r_range[1], e.enc_width_max) for i, e in enumerate(table)]
    run.write("localdims.csv", csv_text(["index"] + [f"x{j + 1}" for j in range(k)]
                                        + ["slope", "r_min", "r_max", "enc_width_max"], rows))
    print(f"alpha1={fmt(rep.alpha1)} alpha2={fmt(rep.alpha2)} D_hat={fmt(est.d)} +- {fmt(est.stderr)}")
    return 0


def verify_rows(run: Run) -> list:
    """(check, status, detail) rows; status is PASS, FAIL or INFO."""
    ifs, cfg = run.ifs, run.cfg
    rows = []

    def add(name, ok, detail):
        rows.append((name, "PASS" if ok else "FAIL", detail))

    p = ifs.p
    resid = float(np.max(np.abs(p @ ifs.P - p)))
    add("stationary", resid <= 1e-12 and bool(np.all(p > 0)), f"residual={resid:.3e}")

    pmin = symbolic.p_hat_min(ifs)
    worst = 0.0
    card_ok = True
    for eps in ANTICHAIN_EPS:
        if not eps < float(np.min(p)):
            continue
        g = symbolic.antichain_by_probability(eps, ifs)
        total = math.fsum(symbolic.antichain_values(g.words, ifs))
        worst = max(worst, abs(total - 1.0))
        card_ok &= len(g) <= 1.0 / (eps * pmin ** 2)
    add("antichain partition", worst <= 1e-12 and card_ok, f"max|sum-1|={worst:.3e}")

    labels = symbolic.sample_chain(ifs, cfg.sampling.birkhoffSteps, run.seed)
    f_avg, g_lo, g_hi = symbolic.birkhoff_check(labels, ifs, min_length=min(100_000, labels.size))
    h = symbolic.markov_entropy(ifs)
    l_lo, l_hi = symbolic.lyapunov_sums(ifs)
    err = max(abs(f_avg - h), abs(g_lo - l_lo), abs(g_hi - l_hi))
    add("birkhoff", err <= 1e-2, f"max error={err:.3e}")

    smin = float(np.min(ifs.s_low))
    fr = measure.frostman_check(ifs, 24, smin ** np.arange(2, 9), run.seed)
    add("frostman", fr.trend_slope >= -0.05, f"eta={fr.eta:.5f} maxRatio={fr.max_ratio:.4g} slope={fr.trend_slope:.4f}")

    rep = dims.alpha_bounds(ifs)
    b = cfg.dims.bands
    frac = dims.validate_theorem1(ifs, cfg.dims.sampleCount, run.seed, b["localDim"], table=run.local)
    add("local dims", frac >= b["localDimFraction"],
        f"fraction={frac:.3f} need>={b['localDimFraction']} band={b['localDim']}")

    curve = run.curve
    dec = all(b2.e_best < a.e_best for a, b2 in zip(curve.entries, curve.entries[1:]))
    add("curve monotone", dec, f"{len(curve)} entries")

    ssc = check_ssc(ifs)
    if len(curve) >= 4:
        est = dims.estimate_quantization_dimension(curve)
        ok = dims.validate_theorem2(ifs, curve, b["quantDim"], require_ssc=False)
        tag = "" if ssc > 0 else " (SSC not certified: calibration only)"
        add("quantization dim", ok,
            f"D_hat={est.d:.5f} alpha=[{rep.alpha1:.5f}, {rep.alpha2:.5f}] slack={b['quantDim']}{tag}")

    mix = quantizer.mixture_lower_rows(ifs, cfg.quantization.mixtureN, cfg.optimizer_settings(), run.seed)
    add("mixture lower bound", all(r.ok for r in mix),
        " ".join(f"{r.name.split()[-1]}:slack={r.slack:.4f}" for r in mix))

    rows.append(("separation", "INFO", f"ssc_gap={ssc:.4g} osc={check_osc(ifs) if ifs.open_sets else 'n/a'}"))
    rows.append(("special case", "INFO", str(dims.special_case_check(ifs))))
    return rows


def verify_text(rows) -> str:
    w = max(len(r[0]) for r in rows)
    return "".join(f"{name:<{w}}  {status:<4}  {detail}\n" for name, status, detail in rows)


def do_verify(run: Run) -> int:
    rows = verify_rows(run)
    text = verify_text(rows)
    run.write("verify.txt", text)
    sys.stdout.write(text)
    if any(r[1] == "FAIL" for r in rows):
        raise ValidatorFailed("one or more validators outside tolerance")
    return 0


def do_report(run: Run) -> int:
    for step in (do_stationary, do_attractor, do_sample, do_antichain, do_quantize, do_dims):
        step(run)
    return do_verify(run)


COMMANDS = {
    "stationary": do_stationary,
    "attractor": do_attractor,
    "sample": do_sample,
    "antichain": do_antichain,
    "quantize": do_quantize,
    "dims": do_dims,
    "verify": do_verify,
    "report": do_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fraqdim: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    set_threads(args.threads)
    try:
        run = Run(args)
        return COMMANDS[args.command](run)
    except ValidatorFailed as exc:
        print(f"fraqdim: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError) as exc:
        print(f"fraqdim: error: {exc}", file=sys.stderr)
        return 1
    except FraqdimError as exc:
        print(f"fraqdim: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        set_threads(None)


if __name__ == "__main__":
    sys.exit(main())
