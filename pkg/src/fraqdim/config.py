"""JSON experiment configs.

Reals may be written as JSON numbers or as fraction strings such as "1/3".
Raw values are kept as written so that parse -> serialize -> parse is exact;
conversion happens in :meth:`ExperimentConfig.build_system`.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, FraqdimError
from .ifs import Affine, RecurrentIFS, Similarity

SCHEMA_VERSION = 1
BUNDLED = ("cantor", "twostate", "affine2d", "uniform")
BAND_KEYS = ("localDim", "localDimFraction", "quantDim")


def to_real(value, where: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"expected a real, got {value!r}", where)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError):
            pass
    raise ConfigError(f"expected a real or fraction string, got {value!r}", where)


def _reals(values, where: str) -> list:
    if not isinstance(values, list):
        raise ConfigError("expected a list", where)
    return [to_real(v, f"{where}[{k}]") for k, v in enumerate(values)]


def _need(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", where)
    if key not in obj:
        raise ConfigError(f"missing field '{key}'", f"{where}.{key}" if where else key)
    return obj[key]


def _int(value, where: str, minimum: int = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", where)
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be >= {minimum}", where)
    return value


@dataclass
class QuantizationSpec:
    nList: list
    restarts: int = 16
    maxIters: int = 200
    floorFactor: Any = 0.5
    atomsPerCell: int = 8
    mixtureN: list = field(default_factory=lambda: [2, 4, 8])


@dataclass
class DimsSpec:
    rGrid: dict
    sampleCount: int = 200
    bands: dict = field(default_factory=lambda: {"localDim": 0.1, "localDimFraction": 0.95, "quantDim": 0.1})


@dataclass
class SamplingSpec:
    steps: int = 10000
    burnin: int = 1000
    birkhoffSteps: int = 1000000


@dataclass
class ExperimentConfig:
    schemaVersion: int
    name: str
    system: dict
    seeds: list
    quantization: QuantizationSpec
    dims: DimsSpec
    output: str
    sampling: SamplingSpec = field(default_factory=SamplingSpec)

    # -- parsing -------------------------------------------------------------
    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("top level must be an object", "")
        ver = _need(raw, "schemaVersion", "")
        if ver != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schemaVersion {ver!r}", "schemaVersion")
        known = {"schemaVersion", "name", "system", "seeds", "quantization", "dims", "output", "sampling"}
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"unknown field '{extra[0]}'", extra[0])
        seeds = _need(raw, "seeds", "")
        if not isinstance(seeds, list) or not seeds:
            raise ConfigError("need a nonempty list of integer seeds", "seeds")
        for k, s in enumerate(seeds):
            _int(s, f"seeds[{k}]", 0)
        q = _need(raw, "quantization", "")
        qs = _section(QuantizationSpec, q, "quantization")
        if not isinstance(qs.nList, list) or not qs.nList:
            raise ConfigError("need a nonempty list", "quantization.nList")
        for k, v in enumerate(qs.nList):
            _int(v, f"quantization.nList[{k}]", 1)
        if any(b <= a for a, b in zip(qs.nList, qs.nList[1:])):
            raise ConfigError("must be strictly increasing", "quantization.nList")
        _int(qs.restarts, "quantization.restarts", 1)
        _int(qs.maxIters, "quantization.maxIters", 1)
        _int(qs.atomsPerCell, "quantization.atomsPerCell", 1)
        if not to_real(qs.floorFactor, "quantization.floorFactor") > 0:
            raise ConfigError("must be positive", "quantization.floorFactor")
        ds = _section(DimsSpec, _need(raw, "dims", ""), "dims")
        _int(ds.sampleCount, "dims.sampleCount", 1)
        for key in ("ratio", "first", "last"):
            _need(ds.rGrid, key, "dims.rGrid")
        if not isinstance(ds.bands, dict):
            raise ConfigError("expected an object", "dims.bands")
        for key in BAND_KEYS:
            if not to_real(_need(ds.bands, key, "dims.bands"), f"dims.bands.{key}") >= 0:
                raise ConfigError("must be nonnegative", f"dims.bands.{key}")
        extra = sorted(set(ds.bands) - set(BAND_KEYS))
        if extra:
            raise ConfigError(f"unknown field {extra[0]!r}", f"dims.bands.{extra[0]}")
        sp = _section(SamplingSpec, raw.get("sampling", {}), "sampling")
        _int(sp.steps, "sampling.steps", 1)
        _int(sp.burnin, "sampling.burnin", 100)
        out = _need(raw, "output", "")
        if not isinstance(out, str):
            raise ConfigError("expected a path string", "output")
        name = raw.get("name", "")
        cfg = cls(schemaVersion=ver, name=name, system=_need(raw, "system", ""), seeds=list(seeds),
                  quantization=qs, dims=ds, output=out, sampling=sp)
        cfg._check_system()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    # -- system ---------------------------------------------------------------
    def _check_system(self) -> None:
        s = self.system
        k = _int(_need(s, "dimension", "system"), "system.dimension", 1)
        maps = _need(s, "maps", "system")
        if not isinstance(maps, list) or len(maps) < 2:
            raise ConfigError("need at least two maps", "system.maps")
        for i, m in enumerate(maps):
            where = f"system.maps[{i}]"
            kind = _need(m, "kind", where)
            if kind == "similarity":
                to_real(_need(m, "ratio", where), f"{where}.ratio")
                if len(_reals(_need(m, "offset", where), f"{where}.offset")) != k:
                    raise ConfigError(f"offset must have {k} entries", f"{where}.offset")
                if "orthogonal" in m:
                    _matrix(m["orthogonal"], k, k, f"{where}.orthogonal")
            elif kind == "affine":
                _matrix(_need(m, "matrix", where), k, k, f"{where}.matrix")
                if len(_reals(_need(m, "offset", where), f"{where}.offset")) != k:
                    raise ConfigError(f"offset must have {k} entries", f"{where}.offset")
            else:
                raise ConfigError(f"unknown map kind {kind!r} (similarity or affine)", f"{where}.kind")
        n = len(maps)
        _matrix(_need(s, "matrix", "system"), n, n, "system.matrix")
        amb = _need(s, "ambient", "system")
        for key in ("lo", "hi"):
            if len(_reals(_need(amb, key, "system.ambient"), f"system.ambient.{key}")) != k:
                raise ConfigError(f"need {k} entries", f"system.ambient.{key}")
        if "openSets" in s and s["openSets"] is not None:
            if not isinstance(s["openSets"], list):
                raise ConfigError("expected a list of boxes", "system.openSets")
            for i, b in enumerate(s["openSets"]):
                for key in ("lo", "hi"):
                    _reals(_need(b, key, f"system.openSets[{i}]"), f"system.openSets[{i}].{key}")

    def build_system(self) -> RecurrentIFS:
        s = self.system
        k = s["dimension"]
        maps = []
        for i, m in enumerate(s["maps"]):
            where = f"system.maps[{i}]"
            off = np.array(_reals(m["offset"], f"{where}.offset"))
            if m["kind"] == "similarity":
                orth = None if "orthogonal" not in m else _matrix(m["orthogonal"], k, k, f"{where}.orthogonal")
                maps.append(Similarity.make(to_real(m["ratio"], f"{where}.ratio"), off, orth))
            else:
                maps.append(Affine(_matrix(m["matrix"], k, k, f"{where}.matrix"), off))
        P = _matrix(s["matrix"], len(maps), len(maps), "system.matrix")
        box = (_reals(s["ambient"]["lo"], "system.ambient.lo"), _reals(s["ambient"]["hi"], "system.ambient.hi"))
        opens = s.get("openSets")
        if opens is not None:
            opens = [(_reals(b["lo"], "lo"), _reals(b["hi"], "hi")) for b in opens]
        try:
            return RecurrentIFS.build(maps, P, box=box, open_sets=opens)
        except ConfigError:
            raise
        except FraqdimError as exc:
            raise ConfigError(f"{type(exc).__name__}: {exc}", "system") from exc

    # -- derived settings -----------------------------------------------------
    @property
    def seed(self) -> int:
        return self.seeds[0]

    def r_grid(self) -> np.ndarray:
        g = self.dims.rGrid
        ratio = to_real(g["ratio"], "dims.rGrid.ratio")
        return ratio ** np.arange(int(g["first"]), int(g["last"]) + 1, dtype=float)

    def optimizer_settings(self):
        from .quantizer import OptimizerSettings

        q = self.quantization
        return OptimizerSettings(restarts=q.restarts, max_iters=q.maxIters,
                                 floor_factor=to_real(q.floorFactor, "quantization.floorFactor"),
                                 atoms_per_cell=q.atomsPerCell)


def _matrix(value, rows: int, cols: int, where: str) -> np.ndarray:
    if not isinstance(value, list) or len(value) != rows:
        raise ConfigError(f"expected {rows} rows", where)
    out = []
    for i, row in enumerate(value):
        r = _reals(row, f"{where}[{i}]")
        if len(r) != cols:
            raise ConfigError(f"expected {cols} columns", f"{where}[{i}]")
        out.append(r)
    return np.array(out)


def _section(kind, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError("expected an object", where)
    names = set(kind.__dataclass_fields__)
    extra = sorted(set(raw) - names)
    if extra:
        raise ConfigError(f"unknown field '{extra[0]}'", f"{where}.{extra[0]}")
    try:
        return kind(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc), where) from exc


def loads(text: str, source: str = "<string>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", "") from exc
    return ExperimentConfig.from_dict(raw)


def bundled_path(name: str):
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in BUNDLED:
        return None
    return resources.files("fraqdim").joinpath("configs").joinpath(f"{stem}.json")


def load(path) -> ExperimentConfig:
    """Read a config file; bare bundled names like ``cantor.json`` resolve to the packaged fixtures."""
    p = Path(path)
    if p.is_file():
        return loads(p.read_text(), str(p))
    bp = bundled_path(str(path)) if p.name == str(path) else None
    if bp is not None and bp.is_file():
        return loads(bp.read_text(), str(path))
    raise ConfigError(f"config file not found: {path}", "")
