"""Command-line entry point: ``srrm {generate,downscale,iterstudy,validate}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Failures print one JSON object on a single stderr line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .clustering import write_memberships
from .config import load_config
from .errors import ConfigError, NumericalError, SRRMError, StageError
from .evaluation import emit_report, evaluate_season
from .grid import FineGrid, write_grid
from .pipeline import iteration_study, processed_days, run_season
from .scene import generate_scene, load_scene, most_heterogeneous_day, save_scene

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "SRRM_OUTPUT_ROOT"

log = logging.getLogger("srrm")


def exit_code_for(exc):
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_DATA


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _default_out(command):
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "srrm_runs")) / command


class Manifest:
    """Collects what a command wrote; saved as ``manifest.json`` in the output directory."""

    def __init__(self, command, cfg, out):
        self.out = Path(out)
        self.data = {
            "command": command,
            "config_sha256": cfg.sha256,
            "seed": cfg.seed,
            "started": _now(),
            "versions": {
                "srrm": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "outputs": [],
            "days": {},
        }

    def add(self, *paths):
        for p in paths:
            p = Path(p)
            self.data["outputs"].append({"path": p.relative_to(self.out).as_posix(), "sha256": _sha256(p)})

    def save(self):
        self.data["finished"] = _now()
        self.data["outputs"].sort(key=lambda o: o["path"])
        path = self.out / "manifest.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _scene(args, cfg):
    if args.scene:
        return load_scene(args.scene)
    return generate_scene(cfg.scene, cfg.tau_omega)


def cmd_generate(args):
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out or _default_out("generate"))
    manifest = Manifest("generate", cfg, out)
    series = generate_scene(cfg.scene, cfg.tau_omega)
    save_scene(series, out)
    manifest.add(*sorted(p for p in out.iterdir() if p.name != "manifest.json"))
    manifest.save()
    print(out)
    return EXIT_OK


def write_day(result, landcover, directory):
    """Per-day artifacts: estimate grid, memberships, selected parameters, cost trace."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows, cols = result.estimate.shape
    write_grid(FineGrid(rows, cols, fields={"TB": result.estimate}, landcover=landcover), d / "estimate.grid")
    write_memberships(result.memberships, d / "membership.txt")
    _write_json(d / "params.json", {
        "day": result.day,
        "n_clusters": result.n_clusters,
        "entropy_weight": result.entropy_weight,
        "absolute_entropy_weight": result.absolute_entropy_weight,
        "ridge_weight": result.ridge_weight,
        "cv_mae": result.cv_score,
        "n_training": int(result.training_mask.sum()),
    })
    with open(d / "cost_trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "cost"])
        w.writerows([i, repr(float(c))] for i, c in enumerate(result.cost_trace))
    return [d / n for n in ("estimate.grid", "membership.txt", "params.json", "cost_trace.csv")]


def cmd_downscale(args):
    cfg = load_config(args.config, seed=args.seed, cadence=args.cadence)
    out = Path(args.out or _default_out("downscale"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("downscale", cfg, out)
    series = _scene(args, cfg)
    days = processed_days(len(series), cfg.pipeline.cadence)
    season = run_season(series, cfg.pipeline, cfg.noise, jobs=args.jobs, days=days)
    for day in days:
        manifest.data["days"][f"{day:03d}"] = season.failures.get(day, "ok")
    if not season.results:
        raise NumericalError(f"every processed day failed: {season.failures}")
    for res in season.results:
        manifest.add(*write_day(res, series[res.day - 1].landcover, out / "days" / f"day_{res.day:03d}"))
    ev = cfg.evaluation
    report = evaluate_season(
        {d: series[d - 1] for d in days},
        season.results,
        subpixel_landcover=series.subpixel_landcover,
        last_harvest_day=series.last_harvest_day,
        threshold=ev.threshold,
        confidence=ev.confidence,
        bins=ev.bins,
    )
    manifest.add(*emit_report(report, out / "report", guide=ev.threshold))
    manifest.save()
    print(out)
    return EXIT_OK


def cmd_iterstudy(args):
    cfg = load_config(args.config, seed=args.seed)
    out = Path(args.out or _default_out("iterstudy"))
    out.mkdir(parents=True, exist_ok=True)
    manifest = Manifest("iterstudy", cfg, out)
    series = _scene(args, cfg)
    day = args.day or cfg.iterstudy.day or most_heterogeneous_day(series)
    if not 1 <= day <= len(series):
        raise ConfigError(f"day {day} outside the scene (1..{len(series)})")
    st = cfg.iterstudy
    rows, sel = iteration_study(
        series[day - 1], cfg.pipeline, cfg.noise, day, every=st.every, max_iterations=st.max_iterations
    )
    path = out / "iterstudy.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "rmse", "sd", "bias", "cost"])
        w.writerows([r["iteration"], repr(r["rmse"]), repr(r["sd"]), repr(r["bias"]), repr(r["cost"])] for r in rows)
    sel_path = out / "selection.json"
    _write_json(sel_path, {
        "day": day,
        "n_clusters": sel.n_clusters,
        "entropy_weight": sel.entropy_weight,
        "ridge_weight": sel.ridge_weight,
        "cv_mae": sel.score,
    })
    manifest.data["days"][f"{day:03d}"] = "ok"
    manifest.add(path, sel_path)
    manifest.save()
    print(path)
    return EXIT_OK


def cmd_validate(args):
    cfg = load_config(args.config, seed=args.seed, cadence=args.cadence)
    print(json.dumps(cfg.resolved(), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="srrm", description="Brightness-temperature downscaling runs.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, help="override the config seed")
        if out:
            p.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV}/<command>)")
        return p

    p = common(sub.add_parser("generate", help="simulate a season and write it to disk"))
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("downscale", help="downscale a season and evaluate it"))
    p.add_argument("--scene", help="scene directory from 'generate' (default: simulate from the config)")
    p.add_argument("--jobs", type=int, default=1, help="days processed in parallel")
    p.add_argument("--cadence", type=int, help="process every n-th day")
    p.set_defaults(func=cmd_downscale)

    p = common(sub.add_parser("iterstudy", help="RMSE against clustering iterations on one day"))
    p.add_argument("--scene", help="scene directory from 'generate' (default: simulate from the config)")
    p.add_argument("--day", type=int, help="1-based day (default: most heterogeneous day)")
    p.set_defaults(func=cmd_iterstudy)

    p = common(sub.add_parser("validate", help="check a config and print resolved settings"), out=False)
    p.add_argument("--cadence", type=int, help="process every n-th day")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(args)
    except (SRRMError, ValueError, ArithmeticError, OSError) as exc:
        code = exit_code_for(exc)
        payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc).replace("\n", " ")}
        if isinstance(exc, StageError):
            payload["stage"] = exc.stage
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
