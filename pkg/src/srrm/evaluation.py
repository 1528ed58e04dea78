"""Error statistics for downscaled fields: RMSE/SD/bias, histogram KL divergence,
an error-threshold proportion test, land-cover stratification and CSV output."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import DomainError
from .grid import BARESOIL, LANDCOVER_NAMES, FineGrid, write_grid

KLD_SMOOTHING = 1e-10


def _errors(true, estimated, mask=None):
    true = np.asarray(true, dtype=float)
    estimated = np.asarray(estimated, dtype=float)
    if true.shape != estimated.shape:
        raise DomainError(f"shape mismatch {true.shape} vs {estimated.shape}")
    e = estimated - true
    if mask is not None:
        e = e[np.asarray(mask, dtype=bool)]
    e = e.ravel()
    if e.size == 0:
        raise DomainError("empty mask")
    return e


def rmse_sd(true, estimated, mask=None):
    """Return ``(rmse, sd, bias)`` of ``estimated - true`` over the masked pixels.

    SD is the population standard deviation, so ``rmse**2 == bias**2 + sd**2``.
    """
    e = _errors(true, estimated, mask)
    bias = float(e.mean())
    rmse = float(np.sqrt(np.mean(e * e)))
    sd = float(np.sqrt(np.mean((e - bias) ** 2)))
    return rmse, sd, bias


def kld_from_densities(p, q, eps=KLD_SMOOTHING):
    """``sum p log(p/q)`` in nats after adding ``eps`` to both and renormalising."""
    p = np.asarray(p, dtype=float) + eps
    q = np.asarray(q, dtype=float) + eps
    p = p / p.sum()
    q = q / q.sum()
    return float(np.sum(p * np.log(p / q)))


def kld(true_values, estimated_values, bins=50, eps=KLD_SMOOTHING):
    """KL divergence of the estimated-value histogram from the true-value histogram.

    Both samples are binned on one grid of ``bins`` equal bins spanning their
    union range.
    """
    a = np.asarray(true_values, dtype=float).ravel()
    b = np.asarray(estimated_values, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise DomainError("kld needs non-empty samples")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if lo == hi:
        return 0.0
    edges = np.linspace(lo, hi, bins + 1)
    p = np.histogram(a, edges)[0] / a.size
    q = np.histogram(b, edges)[0] / b.size
    return max(kld_from_densities(p, q, eps), 0.0)


@dataclass
class ThresholdTest:
    fraction: float
    z: float
    reject: bool
    critical: float
    n: int


def threshold_test(abs_errors, threshold=10.0, confidence=0.95, proportion=0.95):
    """One-sided proportion z-test of H0: P(|e| < threshold) <= proportion."""
    e = np.abs(np.asarray(abs_errors, dtype=float)).ravel()
    if e.size == 0:
        raise DomainError("threshold_test needs at least one error")
    if threshold <= 0:
        raise DomainError("threshold must be > 0")
    n = e.size
    frac = float(np.mean(e < threshold))
    z = (frac - proportion) / np.sqrt(proportion * (1 - proportion) / n)
    crit = float(stats.norm.ppf(confidence))
    return ThresholdTest(frac, float(z), bool(z > crit), crit, n)


def boundary_mask(landcover):
    """Pixels whose 8-neighbourhood holds at least two distinct land covers."""
    lc = np.asarray(landcover)
    padded = np.pad(lc, 1, constant_values=-1)
    r, c = lc.shape
    present = np.zeros((len(LANDCOVER_NAMES),) + lc.shape, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            shifted = padded[1 + dr:1 + dr + r, 1 + dc:1 + dc + c]
            for code in range(len(LANDCOVER_NAMES)):
                present[code] |= shifted == code
    return present.sum(axis=0) >= 2


def stratum_masks(landcover, classes=LANDCOVER_NAMES, subpixel_landcover=None, late_season=False):
    """Boolean masks per stratum.

    Without ``subpixel_landcover`` the strata are the land-cover classes.
    With it, baresoil is split into ``baresoil_A`` (vegetated sub-pixels),
    ``baresoil_B`` (every baresoil pixel once ``late_season``) and
    ``baresoil_C`` (pure baresoil).
    """
    lc = np.asarray(landcover)
    masks = {}
    for code, name in enumerate(LANDCOVER_NAMES):
        if name not in classes:
            continue
        if name == "baresoil" and subpixel_landcover is not None:
            s = subpixel_landcover.shape[0] // lc.shape[0]
            r, c = lc.shape
            blocks = np.asarray(subpixel_landcover).reshape(r, s, c, s)
            vegetated = (blocks != BARESOIL).any(axis=(1, 3))
            bare = lc == BARESOIL
            empty = np.zeros_like(bare)
            masks["baresoil_A"] = empty if late_season else bare & vegetated
            masks["baresoil_B"] = bare if late_season else empty
            masks["baresoil_C"] = empty if late_season else bare & ~vegetated
        else:
            masks[name] = lc == code
    return masks


@dataclass
class StratumRow:
    name: str
    n: int
    rmse: float = float("nan")
    sd: float = float("nan")
    bias: float = float("nan")
    kld: float = float("nan")

    @property
    def empty(self):
        return self.n == 0


def stratify(true, estimated, landcover, classes=LANDCOVER_NAMES, subpixel_landcover=None, late_season=False,
             bins=50):
    """Per-stratum RMSE/SD/bias/KLD rows; strata with no pixels come back marked empty."""
    true = np.asarray(true, dtype=float)
    estimated = np.asarray(estimated, dtype=float)
    rows = []
    for name, mask in stratum_masks(landcover, classes, subpixel_landcover, late_season).items():
        n = int(mask.sum())
        if n == 0:
            rows.append(StratumRow(name, 0))
            continue
        rmse, sd, bias = rmse_sd(true, estimated, mask)
        rows.append(StratumRow(name, n, rmse, sd, bias, kld(true[mask], estimated[mask], bins)))
    return rows


# --------------------------------------------------------------------------- season report


@dataclass
class DayReport:
    day: int
    rmse: float
    sd: float
    bias: float
    n: int
    strata: list
    vegetated: bool
    abs_error: np.ndarray


@dataclass
class EvalReport:
    days: list
    season: list
    overall: StratumRow
    threshold: ThresholdTest
    scatter: dict = field(default_factory=dict)
    period_rmse: dict = field(default_factory=dict)
    boundary_mae: float = float("nan")
    interior_mae: float = float("nan")

    def stratum(self, name):
        for row in self.season:
            if row.name == name:
                return row
        raise KeyError(name)


def day_periods(vegetated_flags):
    """Label each day preseason / vegetated / postharvest from its vegetation flag.

    Bare days before the first vegetated day are preseason, later bare days
    are postharvest.
    """
    flags = list(vegetated_flags)
    first = next((i for i, v in enumerate(flags) if v), len(flags))
    return ["vegetated" if v else ("preseason" if i < first else "postharvest") for i, v in enumerate(flags)]


def _pooled_row(name, true_parts, est_parts, bins):
    tt = np.concatenate(true_parts) if true_parts else np.empty(0)
    ee = np.concatenate(est_parts) if est_parts else np.empty(0)
    if tt.size == 0:
        return StratumRow(name, 0)
    rmse, sd, bias = rmse_sd(tt, ee)
    return StratumRow(name, int(tt.size), rmse, sd, bias, kld(tt, ee, bins))


def evaluate_season(truths, results, subpixel_landcover=None, last_harvest_day=None, threshold=10.0,
                    confidence=0.95, bins=50):
    """Assemble an EvalReport from truth grids (keyed by day) and DownscaleResults.

    Season rows hold the land-cover classes followed by the baresoil
    sub-strata when ``subpixel_landcover`` is given.  A day counts as
    vegetated when any true LAI is positive.
    """
    if not results:
        raise DomainError("no results to evaluate")
    results = sorted(results, key=lambda r: r.day)
    days = []
    pooled = {}
    scatter = {}
    all_true, all_est = [], []
    edge_err, core_err = [], []
    for res in results:
        truth = truths[res.day]
        t = truth["TB"]
        est = res.estimate
        late = last_harvest_day is not None and res.day > last_harvest_day
        rmse, sd, bias = rmse_sd(t, est)
        strata = stratify(t, est, truth.landcover, subpixel_landcover=subpixel_landcover, late_season=late, bins=bins)
        vegetated = bool(np.any(truth["LAI"] > 0)) if "LAI" in truth else True
        err = est - t
        days.append(DayReport(res.day, rmse, sd, bias, t.size, strata, vegetated, np.abs(err)))
        masks = stratum_masks(truth.landcover)
        if subpixel_landcover is not None:
            sub = stratum_masks(truth.landcover, subpixel_landcover=subpixel_landcover, late_season=late)
            masks.update({k: v for k, v in sub.items() if k.startswith("baresoil_")})
        for name, mask in masks.items():
            pt, pe = pooled.setdefault(name, ([], []))
            pt.append(t[mask])
            pe.append(est[mask])
        for code, name in enumerate(LANDCOVER_NAMES):
            mask = truth.landcover == code
            scatter.setdefault(name, []).append(
                np.column_stack([np.full(mask.sum(), res.day), t[mask], est[mask]])
            )
        all_true.append(t.ravel())
        all_est.append(est.ravel())
        edge = boundary_mask(truth.landcover)
        edge_err.append(np.abs(err[edge]))
        core_err.append(np.abs(err[~edge]))

    season = [_pooled_row(name, pt, pe, bins) for name, (pt, pe) in pooled.items()]
    overall = _pooled_row("all", all_true, all_est, bins)
    period_parts = {}
    for label, d, t, e in zip(day_periods(d.vegetated for d in days), days, all_true, all_est):
        period_parts.setdefault(label, []).append(e - t)
    period_rmse = {
        k: float(np.sqrt(np.mean(np.concatenate(period_parts[k]) ** 2))) if k in period_parts else float("nan")
        for k in ("preseason", "vegetated", "postharvest")
    }
    edge_all, core_all = np.concatenate(edge_err), np.concatenate(core_err)
    tt, ee = np.concatenate(all_true), np.concatenate(all_est)
    return EvalReport(
        days=days,
        season=season,
        overall=overall,
        threshold=threshold_test(np.abs(ee - tt), threshold, confidence),
        scatter={k: np.vstack(v) for k, v in scatter.items()},
        period_rmse=period_rmse,
        boundary_mae=float(edge_all.mean()) if edge_all.size else float("nan"),
        interior_mae=float(core_all.mean()) if core_all.size else float("nan"),
    )


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def emit_report(report, out_dir, guide=10.0):
    """Write the report as CSV files plus per-day absolute-error grids.

    Files: ``season.csv`` (one row per day), ``season_by_class.csv`` (one row
    per day and stratum), ``summary.csv`` (season aggregate per stratum),
    ``threshold.csv``, ``scatter_<class>.csv`` and ``absdiff/day_NNN.grid``.
    Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    names = [row.name for row in report.days[0].strata]
    header = ["day", "rmse", "sd", "bias", "n"]
    for name in names:
        header += [f"{name}_rmse", f"{name}_sd", f"{name}_kld"]
    rows = []
    for d in report.days:
        row = [d.day, d.rmse, d.sd, d.bias, d.n]
        for s in d.strata:
            row += [s.rmse, s.sd, s.kld]
        rows.append(row)
    _write_csv(out / "season.csv", header, rows)
    written.append(out / "season.csv")

    by_class = [
        [d.day, s.name, s.n, s.rmse, s.sd, s.bias, s.kld] for d in report.days for s in d.strata
    ]
    _write_csv(out / "season_by_class.csv", ["day", "class", "n", "rmse", "sd", "bias", "kld"], by_class)
    written.append(out / "season_by_class.csv")

    summary = [[s.name, s.n, s.rmse, s.sd, s.bias, s.kld] for s in report.season + [report.overall]]
    _write_csv(out / "summary.csv", ["class", "n", "rmse", "sd", "bias", "kld"], summary)
    written.append(out / "summary.csv")

    t = report.threshold
    _write_csv(
        out / "threshold.csv",
        ["n", "fraction", "z", "critical", "reject", "boundary_mae", "interior_mae", "preseason_rmse",
         "vegetated_rmse", "postharvest_rmse"],
        [[t.n, t.fraction, t.z, t.critical, int(t.reject), report.boundary_mae, report.interior_mae]
         + [report.period_rmse.get(k, float("nan")) for k in ("preseason", "vegetated", "postharvest")]],
    )
    written.append(out / "threshold.csv")

    for name, pairs in report.scatter.items():
        path = out / f"scatter_{name}.csv"
        rows = [[int(d), tv, ev, tv - guide, tv + guide] for d, tv, ev in pairs]
        _write_csv(path, ["day", "true", "estimated", "lower_guide", "upper_guide"], rows)
        written.append(path)

    grid_dir = out / "absdiff"
    grid_dir.mkdir(exist_ok=True)
    for d in report.days:
        path = grid_dir / f"day_{d.day:03d}.grid"
        r, c = d.abs_error.shape
        write_grid(FineGrid(r, c, fields={"ABS_ERROR": d.abs_error}), path)
        written.append(path)
    return written


def read_csv(path):
    """Read a report CSV back as (header, rows of strings)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


__all__ = [
    "rmse_sd",
    "kld",
    "kld_from_densities",
    "threshold_test",
    "boundary_mask",
    "stratify",
    "evaluate_season",
    "emit_report",
    "read_csv",
    "EvalReport",
    "StratumRow",
    "ThresholdTest",
]

