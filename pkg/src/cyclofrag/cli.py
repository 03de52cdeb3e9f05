"""Command-line entry point.

Every subcommand accepts ``--config``, ``--seed``, ``--jobs`` and ``--out``;
exit status is 0 on success, 2 for configuration problems, 3 for bad
inputs, 4 for wind-field failures and 5 for fitting failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .fragility import (
    DEFAULT_BINS,
    Family,
    FitError,
    PercentileRow,
    bin_convergence,
    bin_towers,
    fit_cdf,
    reference_curves,
    select_distribution,
)
from .ingest import DamageState, IngestError, failure_mask, interpolate_track, parse_towers, parse_track
from .pipeline import (
    CURVES_HEADER,
    EXIT_CONFIG,
    EXIT_FIT,
    EXIT_INGEST,
    EXIT_WINDFIELD,
    FITS_HEADER,
    ConfigError,
    RunConfig,
    StageError,
    _num,
    compute_ensembles,
    curves_rows,
    read_fits,
    replicate_fits,
    run_pipeline,
    write_csv,
)
from .uncertainty import Mode
from .windfield import CalibrationError, Rwpm, WindConfig, gust_field

log = logging.getLogger("cyclofrag")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _setup_logging():
    name = os.environ.get("CYCLOFRAG_LOG", "error").strip().lower()
    logging.basicConfig(level=LOG_LEVELS.get(name, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _default_jobs():
    return os.cpu_count() or 1


# -- argument plumbing --------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="PATH", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: all cores)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")


def _inputs(p):
    p.add_argument("--towers", metavar="PATH", help="towers CSV/GeoJSON (overrides the config)")
    p.add_argument("--track", metavar="PATH", help="track CSV (overrides the config)")


def _gust_input(p):
    p.add_argument("--gusts", metavar="PATH", action="append",
                   help="CSV with id, gust_kmh and a failed or damage column (repeatable)")
    p.add_argument("--state", choices=[s.value for s in DamageState], default="FD")
    p.add_argument("--bins", type=int, default=None, help=f"number of bins (default {DEFAULT_BINS})")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cyclofrag", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"cyclofrag {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline: ensembles, replicates, fits, curves")
    _common(p)
    _inputs(p)

    p = sub.add_parser("windfield", help="peak gust per tower for one wind configuration")
    _common(p)
    _inputs(p)
    p.add_argument("--model", choices=[m.value for m in Rwpm])
    p.add_argument("--cf", type=float)
    p.add_argument("--gf", type=float)

    p = sub.add_parser("sample", help="LHS wind ensembles per tower")
    _common(p)
    _inputs(p)
    p.add_argument("--n-lhs", type=int)

    p = sub.add_parser("fit", help="bin and fit one gust dataset, or run the pipeline")
    _common(p)
    _inputs(p)
    _gust_input(p)
    p.add_argument("--family", choices=[f.value for f in Family], default="LO")

    p = sub.add_parser("curves", help="curve ordinates from a fits.csv")
    _common(p)
    p.add_argument("--fits", metavar="PATH", help="fits.csv (default: <out>/fits.csv)")
    p.add_argument("--grid", nargs=3, type=float, metavar=("START", "STOP", "STEP"))

    p = sub.add_parser("converge", help="lognormal parameters versus number of bins")
    _common(p)
    _inputs(p)
    _gust_input(p)
    p.add_argument("--n", type=int, nargs="+", default=None, help="bin counts to scan")

    p = sub.add_parser("selectdist", help="compare five CDF families by SSE")
    _common(p)
    _inputs(p)
    _gust_input(p)

    p = sub.add_parser("compare", help="literature curves next to the fitted medians")
    _common(p)
    p.add_argument("--fits", metavar="PATH", help="fits.csv holding 50th-percentile rows")

    p = sub.add_parser("demo", help="write a synthetic towers/track/config set")
    _common(p)
    p.add_argument("--n-towers", type=int, default=2000)
    return ap


def _load_config(args, need_inputs=True) -> Optional[RunConfig]:
    towers = getattr(args, "towers", None)
    track = getattr(args, "track", None)
    if args.config:
        cfg = RunConfig.from_json(args.config)
        over = {}
        if towers:
            over["towers_path"] = towers
        if track:
            over["track_path"] = track
        if over:
            cfg = RunConfig.from_dict({**cfg.to_dict(), **over})
    elif towers and track:
        cfg = RunConfig(towers_path=towers, track_path=track)
    elif need_inputs:
        raise ConfigError("give --config or both --towers and --track")
    else:
        return None
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out:
        changes["output_dir"] = args.out
    if changes:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **changes})
    return cfg


def _out_dir(args, cfg: Optional[RunConfig]) -> Path:
    if args.out:
        d = Path(args.out)
    elif cfg is not None:
        d = Path(cfg.output_dir)
    else:
        d = Path(".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _hash(cfg: Optional[RunConfig], extra: dict) -> str:
    """Config hash for subcommands that may run without a config file."""
    import hashlib

    base = cfg.config_hash() if cfg is not None else ""
    blob = json.dumps({"config": base, **extra}, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _ingest(cfg: RunConfig):
    try:
        towers = parse_towers(cfg.towers_path, cfg.towers_format)
        track = interpolate_track(parse_track(cfg.track_path), cfg.step_minutes)
    except (IngestError, OSError, ValueError) as exc:
        raise StageError("ingest", EXIT_INGEST, exc) from exc
    return towers, track


def _fs_wind(cfg: RunConfig, towers, track, config: Optional[WindConfig] = None):
    try:
        return gust_field(track, config or cfg.wind_config(), towers,
                          holland_b=cfg.holland_b, rho=cfg.air_density)
    except (CalibrationError, ValueError) as exc:
        raise StageError("windfield", EXIT_WINDFIELD, exc) from exc


_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


def read_gusts(path, state: DamageState):
    """``(ids, gusts, failed)`` from a gust CSV.

    The failure flag comes from a ``failed`` column (boolean text) or a
    ``damage`` column (none/partial/collapse, mapped through ``state``).
    Without either column ``failed`` is None.
    """
    from .ingest import Damage

    ids, gusts, failed = [], [], []
    try:
        with open(path, newline="") as fh:
            rows = csv.DictReader(line for line in fh if not line.startswith("#"))
            fields = {f.strip().lower() for f in rows.fieldnames or ()}
            if "gust_kmh" not in fields:
                raise IngestError(f"{path}: missing gust_kmh column")
            has_label = bool(fields & {"failed", "damage"})
            for k, row in enumerate(rows, start=1):
                row = {a.strip().lower(): (b or "").strip() for a, b in row.items()}
                try:
                    g = float(row["gust_kmh"])
                except ValueError:
                    raise IngestError(f"bad gust_kmh at row {k}") from None
                if not np.isfinite(g) or g < 0:
                    raise IngestError(f"gust out of range at row {k}")
                if not has_label:
                    hit = None
                elif "failed" in row and row["failed"] != "":
                    v = row["failed"].lower()
                    if v not in _TRUE | _FALSE:
                        raise IngestError(f"bad failed flag at row {k}")
                    hit = v in _TRUE
                else:
                    try:
                        hit = state.reached(Damage.parse(row.get("damage", "")))
                    except ValueError as exc:
                        raise IngestError(f"{exc} at row {k}") from None
                ids.append(row.get("id", str(k)))
                gusts.append(g)
                failed.append(hit)
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    if failed and failed[0] is None:
        return ids, np.array(gusts), None
    return ids, np.array(gusts), np.array(failed, dtype=bool)


def _join_labels(ids, cfg: Optional[RunConfig], state: DamageState):
    if cfg is None:
        raise IngestError("gust file has no failed/damage column; give --towers or --config for labels")
    try:
        towers = parse_towers(cfg.towers_path, cfg.towers_format)
    except OSError as exc:
        raise IngestError(str(exc)) from None
    by_id = {t.id: state.reached(t.damage) for t in towers}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise IngestError(f"{len(missing)} gust ids not among the towers, e.g. {missing[0]!r}")
    return np.array([by_id[i] for i in ids], dtype=bool)


def _gust_datasets(args, cfg):
    """Gust datasets from --gusts files, or the fixed-config field of the inputs."""
    state = DamageState(args.state)
    if args.gusts:
        try:
            out = []
            for p in args.gusts:
                ids, gusts, failed = read_gusts(p, state)
                out.append((gusts, failed if failed is not None else _join_labels(ids, cfg, state)))
            return out
        except IngestError as exc:
            raise StageError("ingest", EXIT_INGEST, exc) from exc
    if cfg is None:
        raise ConfigError("give --gusts or an input configuration")
    towers, track = _ingest(cfg)
    return [(_fs_wind(cfg, towers, track), failure_mask(towers, state))]


def _fit_stage(fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (FitError, ValueError) as exc:
        raise StageError("fit", EXIT_FIT, exc) from exc


# -- subcommands ----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_config(args)
    res = run_pipeline(cfg, jobs=args.jobs or _default_jobs(), output_dir=args.out or cfg.output_dir)
    print(f"wrote {res.output_dir} (config_hash={res.config_hash}, {res.wall_time:.1f} s)")
    return 0


def cmd_windfield(args) -> int:
    cfg = _load_config(args)
    base = cfg.wind_config()
    try:
        wc = WindConfig(Rwpm(args.model) if args.model else base.model,
                        args.cf if args.cf is not None else base.cf,
                        args.gf if args.gf is not None else base.gf)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    towers, track = _ingest(cfg)
    wind = _fs_wind(cfg, towers, track, wc)
    out = _out_dir(args, cfg)
    chash = _hash(cfg, {"model": wc.model.value, "cf": wc.cf, "gf": wc.gf})
    write_csv(out / "windfield.csv", ("id", "gust_kmh", "model", "cf", "gf"),
              ((t.id, _num(g), wc.model.value, _num(wc.cf), _num(wc.gf)) for t, g in zip(towers, wind)),
              chash)
    return 0


def cmd_sample(args) -> int:
    cfg = _load_config(args)
    n_lhs = args.n_lhs or cfg.n_lhs
    if n_lhs < 1:
        raise ConfigError("--n-lhs must be positive")
    towers, track = _ingest(cfg)
    try:
        ens = compute_ensembles(track, towers, n_lhs, cfg.seed, args.jobs or _default_jobs(),
                                cfg.holland_b, cfg.air_density)
    except (CalibrationError, ValueError) as exc:
        raise StageError("windfield", EXIT_WINDFIELD, exc) from exc
    out = _out_dir(args, cfg)
    chash = _hash(cfg, {"n_lhs": n_lhs})
    write_csv(out / "ensembles.csv", ("tower_id", "sample_index", "gust_kmh"),
              ((tid, j, _num(g)) for tid, row in zip(ens.tower_ids, ens.samples) for j, g in enumerate(row)),
              chash)
    summ = ens.summary((0.5, 0.16, 0.84))
    write_csv(out / "ensemble_summary.csv", ("tower_id", "median_kmh", "p16_kmh", "p84_kmh"),
              ((tid, *map(_num, row)) for tid, row in zip(ens.tower_ids, summ)), chash)
    return 0


def _bins_rows(bins):
    return ((_num(m), n, k, _num(r)) for m, n, k, r in bins.rows())


def cmd_fit(args) -> int:
    cfg = _load_config(args, need_inputs=False)
    if not args.gusts:
        if cfg is None:
            raise ConfigError("give --gusts, --config, or both --towers and --track")
        return cmd_run(args)
    n_bins = args.bins or (cfg.n_bins if cfg else DEFAULT_BINS)
    (gusts, failed), = _gust_datasets(args, cfg)[:1]
    family = Family(args.family)
    bins = _fit_stage(bin_towers, gusts, failed, n_bins)
    out = _out_dir(args, cfg)
    chash = _hash(cfg, {"gusts": [str(p) for p in args.gusts], "bins": n_bins, "state": args.state,
                        "family": family.value})
    write_csv(out / "bins.csv", ("mean_gust_kmh", "n_towers", "n_failed", "failure_ratio"),
              _bins_rows(bins), chash, comments=[f"damage_state={args.state}"])
    if bins.n_bins < 3:
        log.warning("%d bins are too few for a two-parameter fit; fits.csv not written", bins.n_bins)
        return 0
    fit = _fit_stage(fit_cdf, bins, family)
    if not fit.converged:
        log.warning("fit did not converge (sse=%g)", fit.sse)
    header = FITS_HEADER if family is Family.LOGNORMAL else (
        "damage_state", "uncertainty_mode", "percentile", "family", "p1", "p2", "sse", "converged")
    if family is Family.LOGNORMAL:
        row = (args.state, "none", "", _num(fit.x_m), _num(fit.beta), _num(fit.sse), str(fit.converged).lower())
    else:
        row = (args.state, "none", "", family.value, _num(fit.params[0]), _num(fit.params[1]),
               _num(fit.sse), str(fit.converged).lower())
    write_csv(out / "fits.csv", header, [row], chash)
    return 0


def cmd_curves(args) -> int:
    cfg = _load_config(args, need_inputs=False)
    out = _out_dir(args, cfg)
    src = Path(args.fits) if args.fits else out / "fits.csv"
    rows = _read_fit_rows(src)
    if args.grid:
        start, stop, step = args.grid
        grid_spec = {"start": start, "stop": stop, "step": step}
    else:
        grid_spec = cfg.im_grid if cfg else {"start": 150.0, "stop": 450.0, "step": 1.0}
    if not (grid_spec["step"] > 0 and grid_spec["stop"] > grid_spec["start"] > 0):
        raise ConfigError(f"bad grid {grid_spec}")
    from .fragility import im_grid

    grid = im_grid(grid_spec["start"], grid_spec["stop"], grid_spec["step"])
    records = [(r["damage_state"], r["uncertainty_mode"], float(r["percentile"] or 50.0),
                float(r["xm_kmh"]), float(r["beta"])) for r in rows]
    chash = _hash(cfg, {"fits": _file_digest(src), "grid": grid_spec})
    write_csv(out / "curves.csv", CURVES_HEADER, curves_rows(records, grid), chash)
    return 0


def _file_digest(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _read_fit_rows(path):
    try:
        rows = read_fits(path)
    except OSError as exc:
        raise StageError("ingest", EXIT_INGEST, IngestError(f"cannot read {path}: {exc}")) from exc
    if rows and not {"xm_kmh", "beta", "damage_state"} <= set(rows[0]):
        raise StageError("ingest", EXIT_INGEST, IngestError(f"{path}: not a lognormal fits table"))
    return rows


def cmd_converge(args) -> int:
    cfg = _load_config(args, need_inputs=False)
    n_values = args.n or (list(cfg.convergence_bins) if cfg else [5, 10, 20, 30, 40, 50, 60])
    (gusts, failed), = _gust_datasets(args, cfg)[:1]
    rows = _fit_stage(bin_convergence, gusts, failed, n_values)
    out = _out_dir(args, cfg)
    chash = _hash(cfg, {"gusts": [str(p) for p in args.gusts or ()], "n": n_values, "state": args.state})
    write_csv(out / "convergence.csv", ("n_bins", "xm_kmh", "beta", "sse", "converged"),
              ((n, _num(x), _num(b), _num(e), str(c).lower()) for n, x, b, e, c in rows), chash,
              comments=[f"damage_state={args.state}"])
    return 0


def cmd_selectdist(args) -> int:
    cfg = _load_config(args, need_inputs=False)
    n_bins = args.bins or (cfg.n_bins if cfg else DEFAULT_BINS)
    state = DamageState(args.state)
    if args.gusts:
        datasets = _gust_datasets(args, cfg)
        bins_list = [_fit_stage(bin_towers, g, f, n_bins) for g, f in datasets]
    else:
        # combined-uncertainty replicates of the configured inputs
        towers, track = _ingest(cfg)
        jobs = args.jobs or _default_jobs()
        try:
            ens = compute_ensembles(track, towers, cfg.n_lhs, cfg.seed, jobs, cfg.holland_b, cfg.air_density)
        except (CalibrationError, ValueError) as exc:
            raise StageError("windfield", EXIT_WINDFIELD, exc) from exc
        _, bins = _fit_stage(replicate_fits, Mode.COMBINED, cfg.n_selection, cfg.seed,
                             {state: failure_mask(towers, state)}, n_bins, ensembles=ens,
                             jobs=jobs, states=(state,), keep_bins=True)
        bins_list = bins[state]
    report = _fit_stage(select_distribution, bins_list)
    out = _out_dir(args, cfg)
    chash = _hash(cfg, {"gusts": [str(p) for p in args.gusts or ()], "bins": n_bins, "state": args.state})
    write_csv(out / "selection.csv", ("family", "wins", "sse_mean", "sse_p16", "sse_p84"),
              ((f.value, w, _num(m), _num(lo), _num(hi)) for f, w, m, lo, hi in report.summary()), chash,
              comments=[f"datasets={len(report.winners)} flagged={len(report.flagged)} ties={len(report.ties)}"])
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args, need_inputs=False)
    out = _out_dir(args, cfg)
    co = fd = None
    src = Path(args.fits) if args.fits else out / "fits.csv"
    if args.fits or src.exists():
        for r in _read_fit_rows(src):
            if r.get("percentile") and abs(float(r["percentile"]) - 50.0) > 1e-9:
                continue
            pr = PercentileRow(50.0, float(r["xm_kmh"]), float(r["beta"]), float(r["sse"] or "nan"),
                               r.get("converged") == "true")
            # prefer the combined-uncertainty rows when several modes are present
            combined = r.get("uncertainty_mode") == Mode.COMBINED.value
            if r["damage_state"] == DamageState.COLLAPSE.value and (co is None or combined):
                co = pr
            elif r["damage_state"] == DamageState.FUNCTIONALITY_DISRUPTION.value and (fd is None or combined):
                fd = pr
    chash = _hash(cfg, {"fits": _file_digest(src) if src.exists() else None})
    write_csv(out / "compare.csv", ("source", "xm_kmh", "beta"),
              ((c.source, _num(c.x_m), _num(c.beta)) for c in reference_curves(co, fd)), chash)
    return 0


def cmd_demo(args) -> int:
    from .ingest import write_towers, write_track
    from .synthetic import make_scenario

    if args.n_towers < DEFAULT_BINS:
        raise ConfigError(f"--n-towers must be at least {DEFAULT_BINS}")
    out = Path(args.out or "cyclofrag-demo")
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    sc = make_scenario(args.n_towers, seed)
    write_towers(out / "towers.csv", sc.towers)
    write_track(out / "track.csv", sc.track)
    cfg = {"towers_path": "towers.csv", "track_path": "track.csv", "seed": seed,
           "n_lhs": 200, "n_replicates": 200, "output_dir": str(out / "results")}
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    print(f"wrote {out}/towers.csv, track.csv and config.json")
    return 0


COMMANDS = {
    "run": cmd_run,
    "windfield": cmd_windfield,
    "sample": cmd_sample,
    "fit": cmd_fit,
    "curves": cmd_curves,
    "converge": cmd_converge,
    "selectdist": cmd_selectdist,
    "compare": cmd_compare,
    "demo": cmd_demo,
}


def main(argv: Optional[List[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.jobs is not None and args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
