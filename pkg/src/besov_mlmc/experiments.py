"""Scenario registry, RMSE protocol, cost fits and CSV output for the MLMC runs."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .fem import MeshLevel, solve_problem
from .mlmc import MlmcResult, RateParams, make_plan, mlmc_estimate
from .prior import (GridField, PriorParams, coefficient_at_midpoints, evaluate_field,
                    sample_field, write_grid_field)
from .trees import TreeParams
from .wavelets import get_family

log = logging.getLogger(__name__)

MAX_RESOLUTION = 11
MAX_TRUNCATION = 12
DUMP_SLOT = 999


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    s: float
    p: float
    kappa: float
    beta: float
    t: float
    r: float
    theta: float = 1.0
    d: int = 2
    wavelet: str = "db5"
    eps_list: tuple[float, ...] = ()
    n_ml: int = 32
    n_ref: int = 8
    eps_ref: float | None = None
    seed: int = 20240101

    def __post_init__(self):
        try:
            self.prior()
            self.rates()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.n_ml < 1 or self.n_ref < 0:
            raise ConfigError("n_ml must be >= 1 and n_ref >= 0")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def prior(self, N: int = 0) -> PriorParams:
        return PriorParams(self.s, self.p, self.kappa, TreeParams(self.d, self.beta), N,
                           get_family(self.wavelet))

    def rates(self) -> RateParams:
        return RateParams(self.t, self.r, self.theta)

    def as_dict(self) -> dict:
        out = asdict(self)
        out["eps_list"] = list(self.eps_list)
        return out


def eps_ladder(r: float, xis) -> tuple[float, ...]:
    return tuple(2.0 ** (-r * xi) for xi in xis)


_TABLE = {
    "smooth_gaussian": dict(s=2.0, p=2.0, kappa=1.0, beta=0.5, t=1.0, r=1.0),
    "rough_gaussian": dict(s=1.5, p=2.0, kappa=1.0, beta=0.5, t=0.5, r=0.5),
    "p_exponential": dict(s=2.0, p=1.6, kappa=1.0, beta=0.75, t=0.75, r=0.75),
}
SCENARIOS = tuple(_TABLE)


def scenario(name: str, full: bool = False, **overrides) -> ScenarioConfig:
    """Built-in scenario at desk scale (or the paper's sizes with ``full``)."""
    if name not in _TABLE:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    base = dict(_TABLE[name])
    r = base["r"]
    if full:
        base.update(eps_list=eps_ladder(r, range(3, 10)), n_ml=256, n_ref=16,
                    eps_ref=2.0 ** (-11 * r))
    else:
        base.update(eps_list=eps_ladder(r, range(3, 7)), n_ml=32, n_ref=8,
                    eps_ref=2.0 ** (-8 * r))
    base.update({k: v for k, v in overrides.items() if v is not None})
    if "eps_list" in base:
        base["eps_list"] = tuple(float(e) for e in base["eps_list"])
    return ScenarioConfig(name=name, **base)


def parse_number(value) -> float:
    """Floats, or powers written as 2^-3 / 2**-3."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().replace("**", "^")
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(text)


def load_config(path, full: bool = False) -> ScenarioConfig:
    """Key-value YAML file; an optional ``scenario`` key selects the base scenario."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold key: value pairs")
    known = {f.name for f in fields(ScenarioConfig)} | {"scenario"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    base = data.pop("scenario", None)
    if "eps_list" in data:
        data["eps_list"] = tuple(parse_number(e) for e in data["eps_list"])
    for key in ("s", "p", "kappa", "beta", "t", "r", "theta", "eps_ref"):
        if key in data and data[key] is not None:
            data[key] = parse_number(data[key])
    try:
        if base is not None:
            return scenario(base, full, **data)
        data.setdefault("name", Path(path).stem)
        cfg = ScenarioConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if not cfg.eps_list:
        cfg = replace(cfg, eps_list=eps_ladder(cfg.r, range(3, 7)))
    if cfg.eps_ref is None:
        cfg = replace(cfg, eps_ref=2.0 ** (-8 * cfg.r))
    return cfg


@dataclass
class RunRecord:
    scenario: str
    kind: str  # "reference" or "mlmc"
    eps: float
    replicate: int
    result: MlmcResult

    @property
    def estimate(self) -> float:
        return self.result.estimate

    @property
    def work(self) -> int:
        return self.result.work


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    records: list[RunRecord]
    skipped: list[float] = field(default_factory=list)

    def reference_value(self) -> float:
        refs = [r.estimate for r in self.records if r.kind == "reference"]
        return float(math.fsum(refs) / len(refs))

    def rmse_table(self) -> list[tuple[float, float]]:
        return rmse_table(self.records)


def rmse(estimates, reference: float) -> float:
    e = np.asarray(estimates, dtype=float)
    return float(math.sqrt(math.fsum((e - reference) ** 2) / len(e)))


def rmse_table(records) -> list[tuple[float, float]]:
    """(eps, RMSE) for every target accuracy, against the mean reference estimate."""
    refs = [r.estimate for r in records if r.kind == "reference"]
    if not refs:
        raise ValueError("no reference records")
    ref = math.fsum(refs) / len(refs)
    out = []
    for eps in sorted({r.eps for r in records if r.kind == "mlmc"}, reverse=True):
        ests = [r.estimate for r in records if r.kind == "mlmc" and r.eps == eps]
        out.append((eps, rmse(ests, ref)))
    return out


def fit_slope(x, y) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


def run_scenario(config: ScenarioConfig, workers: int = 1, progress=None) -> ScenarioRun:
    """Reference estimator (n_ref replicates at eps_ref) then n_ml replicates per eps.

    Streams are keyed by (slot, replicate): slot 0 is the reference, slot i the
    i-th entry of ``eps_list``, so every estimator is independent of the others.
    """
    prior = config.prior()
    rates = config.rates()
    records: list[RunRecord] = []
    skipped = []
    jobs = []
    if config.n_ref > 0:
        jobs.append(("reference", 0, config.eps_ref, config.n_ref))
    for i, eps in enumerate(config.eps_list, start=1):
        jobs.append(("mlmc", i, eps, config.n_ml))
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for kind, slot, eps, n in jobs:
            try:
                plan = make_plan(eps, rates, d=config.d)
            except ValueError as exc:
                log.warning("skipping eps=%g: %s", eps, exc)
                skipped.append(eps)
                continue
            for rep in range(n):
                res = mlmc_estimate(plan, prior, config.seed, (slot, rep), pool=pool)
                records.append(RunRecord(config.name, kind, eps, rep, res))
                if progress:
                    progress(kind, eps, rep, res)
    finally:
        if pool is not None:
            pool.shutdown()
    return ScenarioRun(config, records, skipped)


CSV_COLUMNS = ("scenario", "kind", "eps", "replicate", "level", "N", "h", "M",
               "mean_Y", "var_Y", "work", "rejected", "estimate")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def records_to_csv(run: ScenarioRun) -> str:
    """YAML front matter with the config, then one row per (record, level)."""
    buf = io.StringIO()
    front = {"config": run.config.as_dict(), "columns": list(CSV_COLUMNS),
             "skipped_eps": list(run.skipped)}
    buf.write("---\n")
    buf.write(yaml.safe_dump(front, sort_keys=True))
    buf.write("---\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in run.records:
        for st in rec.result.levels:
            w.writerow([_fmt(v) for v in (rec.scenario, rec.kind, rec.eps, rec.replicate,
                                          st.level, st.N, st.h, st.M, st.mean, st.var,
                                          st.work, st.rejected, rec.estimate)])
    return buf.getvalue()


def timing_csv(run: ScenarioRun) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("kind", "eps", "replicate", "level", "seconds"))
    for rec in run.records:
        for st in rec.result.levels:
            w.writerow((rec.kind, repr(rec.eps), rec.replicate, st.level, f"{st.seconds:.6f}"))
    return buf.getvalue()


def write_run(run: ScenarioRun, path) -> Path:
    """Write the records CSV and a wall-time sidecar (kept apart so the CSV is reproducible)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(records_to_csv(run))
    path.with_suffix(".timing.csv").write_text(timing_csv(run))
    return path


@dataclass
class LoadedRecord:
    scenario: str
    kind: str
    eps: float
    replicate: int
    estimate: float
    work: int
    levels: list[dict]


def read_run(path) -> tuple[dict, list[LoadedRecord]]:
    text = Path(path).read_text()
    if not text.startswith("---\n"):
        raise ValueError(f"{path}: missing front matter")
    _, front, body = text.split("---\n", 2)
    meta = yaml.safe_load(front)
    rows = list(csv.DictReader(io.StringIO(body)))
    grouped: dict[tuple, LoadedRecord] = {}
    for row in rows:
        key = (row["kind"], float(row["eps"]), int(row["replicate"]))
        rec = grouped.get(key)
        if rec is None:
            rec = grouped[key] = LoadedRecord(row["scenario"], row["kind"], float(row["eps"]),
                                              int(row["replicate"]), float(row["estimate"]), 0, [])
        rec.work += int(row["work"])
        rec.levels.append({k: row[k] for k in ("level", "N", "h", "M", "mean_Y", "var_Y")})
    return meta, list(grouped.values())


def predicted_cost(rates: RateParams, d: int = 2) -> tuple[float, int, str]:
    """(exponent of eps, power of log(eps), regime) of the multilevel cost."""
    a = rates.rate
    if abs(2 * a - d) < 1e-12:
        return -2.0, 2, "equal"
    if 2 * a > d:
        return -2.0, 0, "greater"
    return -2.0 - (d - 2 * a) / a, 0, "less"


@dataclass
class ComplexityFit:
    eps: list[float]
    work: list[float]
    slope: float
    corrected_slope: float
    predicted: float
    log_power: int

    def within(self, tol: float) -> bool:
        return abs(self.corrected_slope - self.predicted) <= tol


def complexity_report(records, rates: RateParams, d: int = 2) -> ComplexityFit:
    """Fit log(work) against log(eps) over the multilevel records.

    Records need ``eps`` and ``work`` attributes (``kind`` other than "mlmc" is skipped).

    ``corrected_slope`` divides out the predicted |log eps|^k factor first, so it
    is the number to compare with the predicted exponent.
    """
    by_eps: dict[float, list[float]] = {}
    for r in records:
        if getattr(r, "kind", "mlmc") != "mlmc":
            continue
        by_eps.setdefault(r.eps, []).append(r.work)
    if len(by_eps) < 3:
        raise ValueError(f"need at least 3 eps values, got {len(by_eps)}")
    eps = sorted(by_eps, reverse=True)
    work = [float(np.mean(by_eps[e])) for e in eps]
    predicted, k, _ = predicted_cost(rates, d)
    slope = fit_slope(eps, work)
    corrected = fit_slope(eps, [w / abs(math.log(e)) ** k for w, e in zip(work, eps)])
    return ComplexityFit(eps, work, slope, corrected, predicted, k)


def plan_work(config: ScenarioConfig) -> list[tuple[float, int]]:
    """Deterministic work units of one multilevel estimate per eps (no sampling)."""
    out = []
    for eps in config.eps_list:
        plan = make_plan(eps, config.rates(), d=config.d)
        out.append((eps, sum(plan.work_units())))
    return out


def dump_realization(config: ScenarioConfig, N: int, seed: int):
    """The realization written by ``dump_field_sample`` (streams depend on the seed only)."""
    from .mlmc import sample_generators

    tree_rng, coef_rng = sample_generators(seed, (DUMP_SLOT,), 0, 0)
    return sample_field(config.prior(N), tree_rng, coef_rng)


def dump_field_sample(config: ScenarioConfig, R: int, N: int, seed: int, out_dir,
                      beta: float | None = None, fmt: str = "csv") -> dict[str, Path]:
    """Write b_{T,N} on the 2^R lattice and the FEM solution driven by exp(b).

    The tree uses one uniform per lattice node, so dumps that differ only in
    beta are nested.
    """
    if not 1 <= R <= MAX_RESOLUTION or not 0 <= N <= MAX_TRUNCATION:
        raise ConfigError(f"need 1 <= R <= {MAX_RESOLUTION} and 0 <= N <= {MAX_TRUNCATION}")
    if beta is not None:
        config = replace(config, beta=beta)
    field_ = dump_realization(config, N, seed)
    prior = field_.params
    counts = field_.active.counts()
    b = evaluate_field(field_, R, midpoint=False, t=config.t)
    b.meta["active_per_scale"] = counts.tolist()
    mesh = MeshLevel(R - 1)
    coef = coefficient_at_midpoints(field_, R, t=config.t)
    sol = solve_problem(mesh, coef.values)
    n = mesh.n
    u = GridField(R, sol.lattice_values()[:n, :n], False, {**b.meta, "field": "u"})
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = f"{config.name}_beta{prior.tree.beta:g}_R{R}_N{N}_seed{seed}"
    paths = {"field": out_dir / f"{tag}_b.{fmt}", "solution": out_dir / f"{tag}_u.{fmt}"}
    write_grid_field(paths["field"], b, fmt)
    write_grid_field(paths["solution"], u, fmt)
    log.info("wrote %s (active per scale %s)", tag, counts.tolist())
    return paths


def format_table(rows, headers) -> str:
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    line = "  ".join(str(h).rjust(w) for h, w in zip(headers, widths))
    body = ["  ".join(str(v).rjust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join([line] + body)


def summarize(meta: dict, records) -> str:
    """Text report: RMSE per eps, fitted RMSE slope and cost slope."""
    cfg = meta["config"]
    rates = RateParams(cfg["t"], cfg["r"], cfg["theta"])
    lines = [f"scenario {cfg['name']}  seed {cfg['seed']}"]
    try:
        table = rmse_table(records)
    except ValueError:
        table = []
    if table:
        rows = [(f"{e:.6g}", f"{v:.4g}", f"{v / e:.3f}") for e, v in table]
        lines.append(format_table(rows, ("eps", "rmse", "rmse/eps")))
        if len(table) >= 2:
            lines.append(f"rmse slope {fit_slope(*zip(*table)):.3f}")
    try:
        fit = complexity_report(records, rates, cfg["d"])
        lines.append(f"work slope {fit.slope:.3f} (log-corrected {fit.corrected_slope:.3f}, "
                     f"predicted {fit.predicted:.3f})")
    except ValueError as exc:
        lines.append(f"no cost fit: {exc}")
    return "\n".join(lines)


def progress_printer(stream):
    start = time.perf_counter()

    def report(kind, eps, rep, res):
        stream.write(f"[{time.perf_counter() - start:8.1f}s] {kind} eps={eps:.4g} "
                     f"rep={rep} estimate={res.estimate:.6g}\n")
        stream.flush()

    return report
