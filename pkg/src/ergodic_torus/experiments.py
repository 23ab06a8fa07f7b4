"""Convergence sweeps, rate fitting, stationary-distance reports and output writers."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .estimators import BatchRun, richardson, simulate_batch
from .noise import derive_stream_id
from .observables import Observable, normalized_dictionary, parse_observable
from .oracle import (OracleError, default_cutoff, gibbs_average, solve_poisson,
                     solve_stationary_density, stationary_average)
from .schemes import SchemeConfig
from .torus import SdeProblem, get_problem

CSV_COLUMNS = ("param", "error", "error_stderr", "value", "oracle", "ci_halfwidth", "repeats")
HORIZON_GUARD = 0.1


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class NoiseDominated(ValueError):
    pass


# --------------------------------------------------------------------------- #
# configuration
# --------------------------------------------------------------------------- #

@dataclass
class SweepConfig:
    problem_id: str = "grad1d"
    scheme_id: str = "explicit_em"
    noise: str | None = None
    observables: list[str] = field(default_factory=lambda: ["cos"])
    delta_grid: list[float] = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025])
    horizon: float = 2.0e4
    horizon_grid: list[float] = field(default_factory=lambda: [125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0])
    delta: float = 0.01
    repeats: int = 64
    n_blocks: int = 32
    seed: int = 0
    burnin: int = 0
    x0: list[float] | None = None
    c_multiplier: float = 2.0
    cutoff: int | None = None
    output: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            get_problem(self.problem_id)
            SchemeConfig(self.scheme_id)
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.noise is not None and self.noise not in ("gaussian", "rademacher", "three_point"):
            raise ConfigError(f"unknown noise kind {self.noise!r}")
        if not self.observables:
            raise ConfigError("observables must be non-empty")
        _check_geometric(self.delta_grid, "delta_grid", decreasing=True)
        _check_geometric(self.horizon_grid, "horizon_grid", decreasing=False)
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.n_blocks < 2:
            raise ConfigError("n_blocks must be >= 2")
        if self.horizon <= 0 or not 0 < self.delta < 1:
            raise ConfigError("horizon must be positive and delta in (0, 1)")
        if self.burnin < 0:
            raise ConfigError("burnin must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        if self.x0 is not None and len(self.x0) != self.problem.d:
            raise ConfigError("x0 has the wrong dimension")

    @property
    def problem(self) -> SdeProblem:
        return get_problem(self.problem_id)

    @property
    def scheme(self) -> SchemeConfig:
        return SchemeConfig(self.scheme_id)

    @property
    def noise_kind(self) -> str:
        return self.noise or self.scheme.default_noise

    @property
    def start(self) -> np.ndarray:
        return np.zeros(self.problem.d) if self.x0 is None else np.asarray(self.x0, dtype=float)

    def observable_list(self) -> list[Observable]:
        try:
            return [parse_observable(o, self.problem.d) for o in self.observables]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SweepConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _check_geometric(grid: Sequence[float], name: str, decreasing: bool) -> None:
    if len(grid) < 1:
        raise ConfigError(f"{name} must be non-empty")
    for a, b in zip(grid, grid[1:]):
        ratio = a / b if decreasing else b / a
        if not math.isclose(ratio, 2.0, rel_tol=1e-9):
            order = "decreasing" if decreasing else "increasing"
            raise ConfigError(f"{name} must be strictly {order} with ratio 2")
    if any(v <= 0 for v in grid):
        raise ConfigError(f"{name} entries must be positive")


# --------------------------------------------------------------------------- #
# rate fitting
# --------------------------------------------------------------------------- #

@dataclass
class GridPoint:
    param: float
    error: float
    error_stderr: float
    value: float
    oracle: float
    ci_halfwidth: float
    repeats: int
    used: bool = True

    def row(self) -> list:
        return [self.param, self.error, self.error_stderr, self.value, self.oracle,
                self.ci_halfwidth, self.repeats]


@dataclass
class RateReport:
    grid: list[GridPoint]
    slope: float
    intercept: float
    fit_quality: float
    reference_value: float
    warnings: list[str] = field(default_factory=list)
    kind: str = ""
    observable: str = ""
    degenerate: bool = False

    @property
    def r2(self) -> float:
        return self.fit_quality

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.fit_quality,
                "warnings": list(self.warnings)}

    def point(self, param: float) -> GridPoint:
        for g in self.grid:
            if math.isclose(g.param, param, rel_tol=1e-9):
                return g
        raise KeyError(param)


@dataclass
class PowerFit:
    slope: float
    intercept: float
    r2: float
    used: list[bool]
    notes: list[str]


def fit_power_law(params: Sequence[float], errors: Sequence[float],
                  stderrs: Sequence[float] | None = None) -> PowerFit:
    """OLS of log error on log param, dropping points with error <= 2 * stderr."""
    params = np.asarray(params, dtype=float)
    errors = np.asarray(errors, dtype=float)
    stderrs = np.zeros_like(errors) if stderrs is None else np.asarray(stderrs, dtype=float)
    notes = []
    used = []
    for p, e, s in zip(params, errors, stderrs):
        if e <= 0:
            notes.append(f"param {p:g}: zero error excluded")
            used.append(False)
        elif e <= 2.0 * s:
            notes.append(f"param {p:g}: error {e:.3g} <= 2 x stderr {s:.3g}, excluded")
            used.append(False)
        else:
            used.append(True)
    mask = np.array(used)
    if mask.sum() < 3:
        raise NoiseDominated("all points noise-dominated")
    x, y = np.log(params[mask]), np.log(errors[mask])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return PowerFit(float(slope), float(intercept), r2, used, notes)


def _report(kind: str, label: str, points: list[GridPoint], oracle: float,
            warnings: list[str] | None = None) -> RateReport:
    fit = fit_power_law([g.param for g in points], [g.error for g in points],
                        [g.error_stderr for g in points])
    for g, u in zip(points, fit.used):
        g.used = u
    return RateReport(points, fit.slope, fit.intercept, fit.r2, oracle,
                      list(warnings or []) + fit.notes, kind, label)


# --------------------------------------------------------------------------- #
# oracle values
# --------------------------------------------------------------------------- #

def reference_values(problem: SdeProblem, observables: Sequence[Observable],
                     cutoff: int | None = None) -> list[float]:
    """Spectral stationary averages, or Gibbs quadrature when no spectral form exists."""
    if problem.drift_poly is not None and problem.diffusion_matrix is not None:
        density = solve_stationary_density(problem, cutoff)
        return [stationary_average(density, o) for o in observables]
    return [gibbs_average(problem, o) for o in observables]


def _boundary_terms(problem: SdeProblem, observables: Sequence[Observable], x0,
                    oracles: Sequence[float], cutoff: int | None) -> list[float | None]:
    """|psi(x0)| per observable, the size of the finite-horizon bias times T."""
    try:
        density = solve_stationary_density(problem, cutoff)
    except OracleError:
        return [None] * len(observables)
    out = []
    for obs, ref in zip(observables, oracles):
        psi = solve_poisson(problem, obs, density.cutoff, density, ref)
        out.append(abs(float(psi(np.asarray(x0, dtype=float)[None, :])[0])))
    return out


# --------------------------------------------------------------------------- #
# simulation plumbing
# --------------------------------------------------------------------------- #

def steps_for(horizon: float, delta: float, n_blocks: int) -> int:
    """Step count for horizon T at step delta, rounded to a multiple of n_blocks."""
    n = max(1, round(horizon / delta / n_blocks)) * n_blocks
    return int(n)


def _run_point(cfg: SweepConfig, observables: Sequence[Observable], delta: float,
               horizon: float, tag: str) -> BatchRun:
    problem, scheme = cfg.problem, cfg.scheme
    ids = [derive_stream_id(cfg.problem_id, cfg.scheme_id, cfg.noise_kind, tag, delta, horizon, r)
           for r in range(cfg.repeats)]
    return simulate_batch(problem, scheme, observables, cfg.start, delta,
                          steps_for(horizon, delta, cfg.n_blocks), cfg.n_blocks, cfg.seed, ids,
                          cfg.noise_kind, cfg.burnin)


def _summaries(run: BatchRun, j: int, c: float):
    """(mean of repeat values, stderr of that mean, c * stderr) for observable j."""
    vals = run.values[:, j]
    R = vals.size
    mean = math.fsum(vals) / R
    if R >= 2:
        stderr = float(np.std(vals, ddof=1)) / math.sqrt(R)
    else:
        bm = run.block_means[0, j]
        stderr = float(np.std(bm, ddof=1)) / math.sqrt(bm.size)
    return mean, stderr, c * stderr


@dataclass
class DeltaSweep:
    """Raw per-delta summaries for every observable; shared by sweeps and extrapolation."""

    config: SweepConfig
    observables: list[Observable]
    oracles: list[float]
    deltas: list[float]
    means: np.ndarray     # (n_delta, n_obs)
    stderrs: np.ndarray
    horizons: list[float]


def run_delta_sweep(cfg: SweepConfig) -> DeltaSweep:
    obs = cfg.observable_list()
    oracles = reference_values(cfg.problem, obs, cfg.cutoff)
    means = np.empty((len(cfg.delta_grid), len(obs)))
    stderrs = np.empty_like(means)
    horizons = []
    for i, delta in enumerate(cfg.delta_grid):
        run = _run_point(cfg, obs, delta, cfg.horizon, "delta")
        horizons.append(run.n_steps * delta)
        for j in range(len(obs)):
            means[i, j], stderrs[i, j], _ = _summaries(run, j, cfg.c_multiplier)
    return DeltaSweep(cfg, obs, oracles, list(cfg.delta_grid), means, stderrs, horizons)


def _horizon_warning(report: RateReport, boundary: float | None, horizon: float) -> str | None:
    if boundary is None:
        return None
    dmin = min(g.param for g in report.grid)
    fitted = math.exp(report.intercept) * dmin**report.slope
    term = boundary / horizon
    if term > HORIZON_GUARD * fitted:
        return (f"horizon_bias: estimated 1/T term {term:.3g} exceeds {HORIZON_GUARD:g} x "
                f"fitted delta-bias {fitted:.3g} at delta={dmin:g}")
    return None


def delta_reports(sweep: DeltaSweep) -> list[RateReport]:
    cfg = sweep.config
    bounds = _boundary_terms(cfg.problem, sweep.observables, cfg.start, sweep.oracles, cfg.cutoff)
    reports = []
    for j, obs in enumerate(sweep.observables):
        ref = sweep.oracles[j]
        pts = [GridPoint(d, float(abs(sweep.means[i, j] - ref)), float(sweep.stderrs[i, j]),
                         float(sweep.means[i, j]), ref, cfg.c_multiplier * float(sweep.stderrs[i, j]),
                         cfg.repeats)
               for i, d in enumerate(sweep.deltas)]
        rep = _report("sweep_delta", obs.label, pts, ref)
        warn = _horizon_warning(rep, bounds[j], min(sweep.horizons))
        if warn:
            rep.warnings.insert(0, warn)
        reports.append(rep)
    return reports


def sweep_delta(cfg: SweepConfig) -> RateReport:
    """Bias of the time average vs delta for the first configured observable."""
    return delta_reports(run_delta_sweep(cfg))[0]


def extrapolate_reports(sweep: DeltaSweep, p: int | None = None) -> list[RateReport]:
    """Richardson-combine consecutive (delta, delta/2) pairs and fit the extrapolated errors."""
    cfg = sweep.config
    p = p or cfg.scheme.claimed_weak_order
    if len(sweep.deltas) < 4:
        raise ConfigError("extrapolation needs at least 4 grid points (3 pairs)")
    r = 2.0**p
    reports = []
    for j, obs in enumerate(sweep.observables):
        ref = sweep.oracles[j]
        pts = []
        for i in range(len(sweep.deltas) - 1):
            coarse, fine = sweep.means[i, j], sweep.means[i + 1, j]
            val = richardson(coarse, fine, p)
            se = math.sqrt((r * sweep.stderrs[i + 1, j]) ** 2 + sweep.stderrs[i, j] ** 2) / (r - 1.0)
            pts.append(GridPoint(sweep.deltas[i], float(abs(val - ref)), float(se), float(val), ref,
                                 cfg.c_multiplier * se, cfg.repeats))
        reports.append(_report("extrapolate", obs.label, pts, ref))
    return reports


def extrapolate_sweep(cfg: SweepConfig) -> RateReport:
    return extrapolate_reports(run_delta_sweep(cfg))[0]


def sweep_time(cfg: SweepConfig) -> RateReport:
    """MSE of the time average against the oracle vs horizon T at fixed delta."""
    obs = cfg.observable_list()[0]
    ref = reference_values(cfg.problem, [obs], cfg.cutoff)[0]
    pts = []
    for T in cfg.horizon_grid:
        run = _run_point(cfg, [obs], cfg.delta, T, "time")
        vals = run.values[:, 0]
        sq = (vals - ref) ** 2
        mse = math.fsum(sq) / sq.size
        se = float(np.std(sq, ddof=1)) / math.sqrt(sq.size) if sq.size > 1 else 0.0
        pts.append(GridPoint(run.n_steps * cfg.delta, mse, se, math.fsum(vals) / vals.size, ref,
                             cfg.c_multiplier * se, cfg.repeats))
    if all(g.error == 0.0 for g in pts):
        for g in pts:
            g.used = False
        return RateReport(pts, 0.0, 0.0, 0.0, ref, ["degenerate: zero MSE at every horizon"],
                          "sweep_time", obs.label, degenerate=True)
    return _report("sweep_time", obs.label, pts, ref)


# --------------------------------------------------------------------------- #
# stationary-distance proxy
# --------------------------------------------------------------------------- #

@dataclass
class DistanceRow:
    delta: float
    errors: dict[str, float]
    ci_halfwidths: dict[str, float]
    stderrs: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def argmax(self) -> str:
        return max(self.errors, key=self.errors.get)


@dataclass
class DistanceReport:
    rows: list[DistanceRow]
    slope: float | None
    intercept: float | None
    r2: float | None
    warnings: list[str] = field(default_factory=list)

    def ratio(self, coarse: float, fine: float) -> float:
        by = {r.delta: r for r in self.rows}
        return by[coarse].max_error / by[fine].max_error

    def to_json(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2,
                "warnings": list(self.warnings),
                "rows": [{"delta": r.delta, "max_error": r.max_error, "argmax": r.argmax,
                          "errors": r.errors, "ci_halfwidths": r.ci_halfwidths} for r in self.rows]}


def distance_report(problem: SdeProblem | str, scheme: SchemeConfig | str, delta_grid: Sequence[float],
                    dictionary: Sequence[Observable] | None, horizon: float, seed: int,
                    repeats: int = 1, noise: str | None = None, x0=None, n_blocks: int = 32,
                    c: float = 2.0, cutoff: int | None = None) -> DistanceReport:
    """Max over a normalized dictionary of |time average - oracle| per delta."""
    problem = get_problem(problem) if isinstance(problem, str) else problem
    scheme = SchemeConfig(scheme) if isinstance(scheme, str) else scheme
    if dictionary is None:
        dictionary = normalized_dictionary(problem.d, 2 * scheme.claimed_weak_order)
    noise = noise or scheme.default_noise
    x0 = np.zeros(problem.d) if x0 is None else np.asarray(x0, dtype=float)
    oracles = reference_values(problem, dictionary, cutoff)
    rows = []
    for delta in delta_grid:
        ids = [derive_stream_id(problem.catalog_id, scheme.kind, noise, "distance", delta, horizon, r)
               for r in range(repeats)]
        run = simulate_batch(problem, scheme, dictionary, x0, delta,
                             steps_for(horizon, delta, n_blocks), n_blocks, seed, ids, noise)
        errs, cis, ses = {}, {}, {}
        for j, obs in enumerate(dictionary):
            mean, se, ci = _summaries(run, j, c)
            errs[obs.label], ses[obs.label], cis[obs.label] = float(abs(mean - oracles[j])), se, ci
        rows.append(DistanceRow(delta, errs, cis, ses))
    warnings = []
    slope = intercept = r2 = None
    if len(rows) >= 3:
        try:
            fit = fit_power_law([r.delta for r in rows], [r.max_error for r in rows],
                                [r.stderrs[r.argmax] for r in rows])
            slope, intercept, r2 = fit.slope, fit.intercept, fit.r2
            warnings += fit.notes
        except NoiseDominated as exc:
            warnings.append(str(exc))
    return DistanceReport(rows, slope, intercept, r2, warnings)


# --------------------------------------------------------------------------- #
# output
# --------------------------------------------------------------------------- #

def write_csv(report: RateReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for g in report.grid:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in g.row()])


def write_json(payload: dict, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_svg(report: RateReport, path, width: int = 480, height: int = 320) -> None:
    """Minimal log-log chart: measured points plus the fitted line."""
    pts = [g for g in report.grid if g.error > 0]
    if not pts:
        Path(path).write_text(f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
                              f'height="{height}"></svg>\n')
        return
    lx = np.log10([g.param for g in pts])
    ly = np.log10([g.error for g in pts])
    fit_y = (report.slope * np.log(10 ** lx) + report.intercept) / math.log(10)
    ally = ly if report.degenerate else np.concatenate([ly, fit_y])
    pad = 40
    x0, x1 = lx.min(), lx.max()
    y0, y1 = ally.min(), ally.max()
    x1 = x1 if x1 > x0 else x0 + 1
    y1 = y1 if y1 > y0 else y0 + 1

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
             f'<text x="{pad}" y="20" font-size="12">{report.kind} {report.observable} '
             f'slope={report.slope:.3f}</text>']
    for g, x, y in zip(pts, lx, ly):
        color = "black" if g.used else "gray"
        parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" fill="{color}"/>')
    if not report.degenerate:
        line = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in zip(lx, fit_y))
        parts.append(f'<polyline points="{line}" fill="none" stroke="steelblue"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_report(report: RateReport, out_dir, stem: str) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / f"{stem}.csv", "json": out / f"{stem}.json", "svg": out / f"{stem}.svg"}
    write_csv(report, paths["csv"])
    write_json(report.to_json(), paths["json"])
    write_svg(report, paths["svg"])
    return paths


__all__ = [
    "CSV_COLUMNS", "ConfigError", "DeltaSweep", "DistanceReport", "DistanceRow", "GridPoint",
    "NoiseDominated", "PowerFit", "RateReport", "SweepConfig", "default_cutoff", "delta_reports",
    "distance_report", "extrapolate_reports", "extrapolate_sweep", "fit_power_law",
    "reference_values", "run_delta_sweep", "steps_for", "sweep_delta", "sweep_time",
    "write_csv", "write_json", "write_report", "write_svg",
]
