"""End-to-end run: inputs -> wind ensembles -> replicates -> fragility tables.

Work is split into chunks of design rows or replicate indices and may be
spread over worker processes; chunk results are reassembled by index, so
outputs do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import multiprocessing as mp
import os
import shutil
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .fragility import (
    DEFAULT_BINS,
    DEFAULT_PERCENTILES,
    Family,
    FitError,
    FragilityFit,
    PercentileRow,
    bin_convergence,
    bin_towers,
    fit_cdf,
    im_grid,
    lognormal_cdf,
    percentile_curves,
    reference_curves,
    select_distribution,
)
from .ingest import (
    DamageState,
    IngestError,
    Track,
    TowerRecord,
    failure_mask,
    interpolate_track,
    parse_towers,
    parse_track,
    tower_arrays,
)
from .uncertainty import (
    STREAM_LHS,
    EnsembleSet,
    Mode,
    derive_seed,
    ensemble_samples,
    lhs_design,
    make_replicate,
    replicate_percentiles,
)
from .windfield import AIR_DENSITY, HOLLAND_B, Rwpm, WindConfig, gust_field_arrays

log = logging.getLogger(__name__)

STATES = (DamageState.COLLAPSE, DamageState.FUNCTIONALITY_DISRUPTION)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_WINDFIELD = 4
EXIT_FIT = 5


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``code`` is the process exit status."""

    def __init__(self, stage: str, code: int, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.code = code
        self.cause = cause


@dataclass
class RunConfig:
    towers_path: str
    track_path: str
    seed: int = 0
    n_lhs: int = 1000
    n_replicates: int = 1000
    n_bins: int = DEFAULT_BINS
    step_minutes: int = 15
    percentiles: tuple = DEFAULT_PERCENTILES
    modes: tuple = ("IM", "FS", "Combined")
    fs_config: dict = field(default_factory=lambda: {"model": "WDE", "cf": 0.90, "gf": 1.58})
    im_grid: dict = field(default_factory=lambda: {"start": 150.0, "stop": 450.0, "step": 1.0})
    convergence_bins: tuple = (5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60)
    n_selection: int = 100
    holland_b: float = HOLLAND_B
    air_density: float = AIR_DENSITY
    towers_format: Optional[str] = None
    output_dir: str = "cyclofrag-out"

    def __post_init__(self):
        self.percentiles = tuple(float(p) for p in self.percentiles)
        self.modes = tuple(Mode(m).value for m in self.modes)
        self.convergence_bins = tuple(int(n) for n in self.convergence_bins)
        self.validate()

    def validate(self):
        for name in ("n_lhs", "n_replicates", "n_bins", "step_minutes", "n_selection"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v}")
        if self.n_bins < 3:
            raise ConfigError("n_bins must be >= 3 for a two-parameter fit")
        ps = self.percentiles
        if not ps or any(not 0 < p < 100 for p in ps) or any(b <= a for a, b in zip(ps, ps[1:])):
            raise ConfigError(f"percentiles must be strictly increasing within (0, 100): {ps}")
        if not self.modes:
            raise ConfigError("at least one uncertainty mode is required")
        try:
            self.wind_config()
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad fs_config: {exc}") from None
        g = self.im_grid
        if not (g.get("step", 0) > 0 and g.get("stop", 0) > g.get("start", 0) > 0):
            raise ConfigError(f"bad im_grid {g}")
        if not (self.holland_b > 0 and self.air_density > 0):
            raise ConfigError("holland_b and air_density must be positive")

    def wind_config(self) -> WindConfig:
        fc = self.fs_config
        return WindConfig(Rwpm(fc["model"]), float(fc["cf"]), float(fc["gf"]))

    def grid(self) -> np.ndarray:
        return im_grid(self.im_grid["start"], self.im_grid["stop"], self.im_grid["step"])

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("towers_path", "track_path"):
            if key not in d:
                raise ConfigError(f"config lacks {key}")
            if base_dir is not None and not os.path.isabs(d[key]):
                d[key] = str(Path(base_dir) / d[key])
        try:
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(doc, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["percentiles"] = list(self.percentiles)
        d["modes"] = list(self.modes)
        d["convergence_bins"] = list(self.convergence_bins)
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- parallel helpers ---------------------------------------------------------

_SHARED: Dict[str, object] = {}


def _invoke(args):
    fn, chunk = args
    return fn(_SHARED, chunk)


def _chunks(n: int, parts: int) -> List[range]:
    parts = max(1, min(parts, n))
    bounds = np.linspace(0, n, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def parallel_map(fn, n_items: int, shared: dict, jobs: int = 1) -> list:
    """Apply ``fn(shared, chunk)`` over index chunks and return results in order."""
    chunks = _chunks(n_items, jobs if jobs > 1 else 1)
    if jobs <= 1 or len(chunks) <= 1:
        return [fn(shared, c) for c in chunks]
    _SHARED.clear()
    _SHARED.update(shared)
    try:
        ctx = mp.get_context("fork")
    except ValueError:  # pragma: no cover - platforms without fork
        ctx = mp.get_context()
    try:
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as ex:
            return list(ex.map(_invoke, [(fn, c) for c in chunks]))
    finally:
        _SHARED.clear()


def _ensemble_chunk(shared, rows):
    return ensemble_samples(shared["design"], shared["track"], shared["lat"], shared["lon"],
                            rows=rows, holland_b=shared["holland_b"], rho=shared["rho"])


def compute_ensembles(track: Track, towers: Sequence[TowerRecord], n_lhs: int, seed: int,
                      jobs: int = 1, holland_b=HOLLAND_B, rho=AIR_DENSITY) -> EnsembleSet:
    design = lhs_design(n_lhs, derive_seed(seed, STREAM_LHS))
    lat, lon = tower_arrays(towers)
    shared = dict(design=design, track=track, lat=lat, lon=lon, holland_b=holland_b, rho=rho)
    parts = parallel_map(_ensemble_chunk, design.n_rows, shared, jobs)
    return EnsembleSet([t.id for t in towers], np.hstack(parts))


def _replicate_chunk(shared, idx):
    out = []
    for i in idx:
        rep = make_replicate(shared["mode"], i, shared["seed"], ensembles=shared.get("ensembles"),
                             fs_wind=shared.get("fs_wind"), percentiles=shared.get("percentiles"))
        winds = rep.winds
        per_state = []
        for state in shared["states"]:
            bins = bin_towers(winds, shared["failed"][state][rep.towers], shared["n_bins"])
            per_state.append((bins, fit_cdf(bins, Family.LOGNORMAL)))
        out.append(per_state)
    return out


def replicate_fits(mode: Mode, n: int, seed: int, failed: Dict[DamageState, np.ndarray],
                   n_bins: int = DEFAULT_BINS, ensembles: Optional[EnsembleSet] = None,
                   fs_wind=None, jobs: int = 1, states=STATES, keep_bins: bool = False):
    """Bin + lognormal fit per replicate and damage state.

    Returns ``{state: [FragilityFit, ...]}`` (and the bin tables when
    ``keep_bins``), ordered by replicate index.
    """
    mode = Mode(mode)
    shared = dict(mode=mode, seed=seed, ensembles=ensembles, fs_wind=fs_wind,
                  percentiles=replicate_percentiles(n, seed) if mode is not Mode.FS else None,
                  failed=failed, n_bins=n_bins, states=tuple(states))
    parts = parallel_map(_replicate_chunk, n, shared, jobs)
    flat = [r for part in parts for r in part]
    fits = {s: [r[k][1] for r in flat] for k, s in enumerate(states)}
    if keep_bins:
        bins = {s: [r[k][0] for r in flat] for k, s in enumerate(states)}
        return fits, bins
    return fits


# -- output writers -----------------------------------------------------------


def _num(x) -> str:
    return "" if x is None else format(float(x), ".10g")


def write_csv(path, header: Sequence[str], rows, config_hash: str, comments: Sequence[str] = ()):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


FITS_HEADER = ("damage_state", "uncertainty_mode", "percentile", "xm_kmh", "beta", "sse", "converged")
CURVES_HEADER = ("im_kmh", "damage_state", "uncertainty_mode", "percentile", "probability")


def fits_rows(table: Dict[tuple, List[PercentileRow]]):
    for (state, mode), rows in table.items():
        for r in rows:
            yield (state.value, mode.value, _num(r.percentile), _num(r.x_m), _num(r.beta),
                   _num(r.sse), str(bool(r.converged)).lower())


def curves_rows(records, grid):
    """``records``: iterable of (state, mode, percentile, x_m, beta)."""
    for state, mode, q, x_m, beta in records:
        prob = lognormal_cdf(grid, x_m, beta)
        for im, p in zip(grid, prob):
            yield (_num(im), state, mode, _num(q), _num(p))


def read_fits(path):
    """Rows of a fits.csv as dicts (comment lines skipped)."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


# -- the pipeline ---------------------------------------------------------------


@dataclass
class RunResult:
    output_dir: Path
    config_hash: str
    percentile_table: Dict[tuple, List[PercentileRow]]
    replicate_fits: Dict[tuple, List[FragilityFit]]
    wall_time: float


def _stage(name, code):
    def wrap(fn):
        def inner(*a, **kw):
            try:
                return fn(*a, **kw)
            except StageError:
                raise
            except Exception as exc:  # noqa: BLE001 - re-raised with stage context
                raise StageError(name, code, exc) from exc
        return inner
    return wrap


@_stage("ingest", EXIT_INGEST)
def _ingest(cfg: RunConfig):
    towers = parse_towers(cfg.towers_path, cfg.towers_format)
    track = interpolate_track(parse_track(cfg.track_path), cfg.step_minutes)
    if len(towers) < cfg.n_bins:
        raise IngestError(f"{len(towers)} towers cannot fill {cfg.n_bins} bins")
    return towers, track


@_stage("windfield", EXIT_WINDFIELD)
def _winds(cfg: RunConfig, towers, track, jobs):
    need_ens = any(m in ("IM", "Combined") for m in cfg.modes)
    ens = None
    if need_ens:
        ens = compute_ensembles(track, towers, cfg.n_lhs, cfg.seed, jobs, cfg.holland_b, cfg.air_density)
    lat, lon = tower_arrays(towers)
    fs_wind = gust_field_arrays(track, cfg.wind_config(), lat, lon, holland_b=cfg.holland_b, rho=cfg.air_density)
    return ens, fs_wind


@_stage("fit", EXIT_FIT)
def _fits(cfg: RunConfig, towers, ens, fs_wind, jobs):
    failed = {s: failure_mask(towers, s) for s in STATES}
    grid = cfg.grid()
    per_mode, table, sel_bins = {}, {}, None
    for m in cfg.modes:
        mode = Mode(m)
        fits, bins = replicate_fits(mode, cfg.n_replicates, cfg.seed, failed, cfg.n_bins,
                                    ensembles=ens, fs_wind=fs_wind, jobs=jobs, keep_bins=True)
        for s in STATES:
            per_mode[(s, mode)] = fits[s]
            table[(s, mode)] = percentile_curves(fits[s], cfg.percentiles, grid)
        if sel_bins is None or mode is Mode.COMBINED:
            sel_bins = bins[DamageState.FUNCTIONALITY_DISRUPTION][: cfg.n_selection]
    n_values = [n for n in cfg.convergence_bins if n <= len(towers)]
    conv = bin_convergence(fs_wind, failed[DamageState.FUNCTIONALITY_DISRUPTION], n_values)
    selection = select_distribution(sel_bins)
    return per_mode, table, conv, selection


def run_pipeline(cfg: RunConfig, jobs: int = 1, output_dir=None) -> RunResult:
    """Run every stage and write the report files.

    Files are assembled in a scratch directory and moved into place only
    when all stages succeed, so a failed run leaves no partial outputs.
    """
    t0 = time.perf_counter()
    out = Path(output_dir or cfg.output_dir)
    chash = cfg.config_hash()
    towers, track = _ingest(cfg)
    log.info("ingested %d towers, %d track steps", len(towers), len(track))
    ens, fs_wind = _winds(cfg, towers, track, jobs)
    per_mode, table, conv, selection = _fits(cfg, towers, ens, fs_wind, jobs)

    out.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        _write_outputs(scratch, cfg, chash, towers, ens, fs_wind, per_mode, table, conv, selection)
        wall = time.perf_counter() - t0
        meta = {
            "tool": "cyclofrag",
            "version": __version__,
            "config_hash": chash,
            "seed": cfg.seed,
            "jobs": jobs,
            "wall_time_s": round(wall, 3),
            "n_towers": len(towers),
            "n_track_steps": len(track),
            "jit": _jit_state(),
            "config": cfg.to_dict(),
        }
        (scratch / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        for f in scratch.iterdir():
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return RunResult(out, chash, table, per_mode, time.perf_counter() - t0)


def _jit_state():
    from ._jit import use_jit
    return bool(use_jit())


def _write_outputs(d: Path, cfg, chash, towers, ens, fs_wind, per_mode, table, conv, selection):
    grid = cfg.grid()
    write_csv(d / "fits.csv", FITS_HEADER, fits_rows(table), chash)
    records = [(s.value, m.value, r.percentile, r.x_m, r.beta)
               for (s, m), rows in table.items() for r in rows]
    write_csv(d / "curves.csv", CURVES_HEADER, curves_rows(records, grid), chash)
    write_csv(
        d / "replicates.csv",
        ("damage_state", "uncertainty_mode", "replicate", "xm_kmh", "beta", "sse", "converged"),
        ((s.value, m.value, i, _num(f.params[0]), _num(f.params[1]), _num(f.sse),
          str(f.converged).lower())
         for (s, m), fits in per_mode.items() for i, f in enumerate(fits)),
        chash,
    )
    if ens is not None:
        summ = ens.summary((0.5, 0.16, 0.84))
        write_csv(d / "ensemble_summary.csv", ("tower_id", "median_kmh", "p16_kmh", "p84_kmh"),
                  ((tid, *map(_num, row)) for tid, row in zip(ens.tower_ids, summ)), chash)
    write_csv(d / "fs_wind.csv", ("tower_id", "gust_kmh"),
              ((t.id, _num(g)) for t, g in zip(towers, fs_wind)), chash)
    write_csv(d / "convergence.csv", ("n_bins", "xm_kmh", "beta", "sse", "converged"),
              ((n, _num(x), _num(b), _num(e), str(c).lower()) for n, x, b, e, c in conv), chash,
              comments=["damage_state=FD wind=fs_config"])
    write_csv(d / "selection.csv", ("family", "wins", "sse_mean", "sse_p16", "sse_p84"),
              ((f.value, w, _num(m), _num(lo), _num(hi)) for f, w, m, lo, hi in selection.summary()),
              chash,
              comments=[f"datasets={len(selection.winners)} flagged={len(selection.flagged)} "
                        f"ties={len(selection.ties)}"])
    co = _median_row(table, DamageState.COLLAPSE)
    fd = _median_row(table, DamageState.FUNCTIONALITY_DISRUPTION)
    write_csv(d / "compare.csv", ("source", "xm_kmh", "beta"),
              ((r.source, _num(r.x_m), _num(r.beta)) for r in reference_curves(co, fd)), chash)


def _median_row(table, state):
    for mode in (Mode.COMBINED, Mode.IM, Mode.FS):
        for r in table.get((state, mode), []):
            if abs(r.percentile - 50.0) < 1e-9:
                return r
    return None
