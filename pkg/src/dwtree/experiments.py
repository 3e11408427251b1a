"""Experiment grids, summary statistics, and result emission.

This module is the reproduction harness: each experiment kind corresponds to
one of the quantitative laws the simulator exists to check, run over a weight
spec or a one-parameter grid of specs and summarised per grid point.

    DepthLaw           mean d(T_n)/ln n at one or more n (convergent-weight
                       depth constant; the classical RRT value is e)
    BetaGrid           per-parameter depth exponent ln d / ln n at fixed n
                       (power-law depth exploration)
    NuGrid             mean d(T_n)/n at fixed n (linear-depth constant)
    SuperExpRatio      mean (n - d(T_n)) / I_n (the off-path vertex count
                       against its predicted size)
    SuperExpStabilize  n - d(T_n) read at growing checkpoints of a single
                       run, plus the fraction of samples where it has
                       already frozen
    VerifySuite        a named verification suite run through the same
                       config/manifest plumbing

Runs are deterministic given (config, master seed): sample i of grid point p
always draws from stream p * samples + i, and aggregation happens in sample
order, so the emitted CSV is byte-identical regardless of the worker count.
Workers default to the available parallelism; override with the config field,
the --threads CLI flag, or the DWT_THREADS environment variable.
"""

from __future__ import annotations

import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import ConfigError
from .growth import grow_profile
from .weights import UNBOUNDED, WeightSpec, psi, tail_ratio_sum

KINDS = (
    "DepthLaw",
    "BetaGrid",
    "NuGrid",
    "SuperExpRatio",
    "SuperExpStabilize",
    "VerifySuite",
)

# statistic of record per kind (first entry), plus accepted overrides
_STATISTICS = {
    "DepthLaw": ("d_over_ln_n", "depth"),
    "BetaGrid": ("beta_hat",),
    "NuGrid": ("d_over_n",),
    "SuperExpRatio": ("gap_over_In",),
    "SuperExpStabilize": ("n_minus_d",),
    "VerifySuite": ("check_passed",),
}

CSV_HEADER = "param,n,statistic,mean,stderr,samples,seed"

_ENV_THREADS = "DWT_THREADS"


def resolve_threads(threads: int) -> int:
    """Worker count for a run: explicit > 0 wins, then DWT_THREADS, then
    the available parallelism."""
    if threads > 0:
        return threads
    env = os.environ.get(_ENV_THREADS, "").strip()
    if env:
        try:
            val = int(env)
        except ValueError as exc:
            raise ConfigError(f"{_ENV_THREADS} must be an integer, got {env!r}") from exc
        if val > 0:
            return val
    return os.cpu_count() or 1


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """One-parameter family grid: either explicit values or start/stop/step.

    step grids are expanded as start, start+step, ... up to stop inclusive
    (with a small tolerance so 1.1 + 139 * 0.1 still counts as 15.0).
    """

    family: str
    param: str
    start: float | None = None
    stop: float | None = None
    step: float | None = None
    values: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.values is not None:
            if len(self.values) == 0:
                raise ConfigError("grid values must be non-empty")
            return
        if self.start is None or self.stop is None or self.step is None:
            raise ConfigError("grid needs either values or start/stop/step")
        if not (self.step > 0.0 and math.isfinite(self.step)):
            raise ConfigError(f"grid step must be positive, got {self.step!r}")
        if self.stop < self.start:
            raise ConfigError("grid stop must be >= start")

    def value_list(self) -> list[float]:
        if self.values is not None:
            return [float(v) for v in self.values]
        count = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return [round(self.start + i * self.step, 12) for i in range(count)]

    def spec_for(self, value: float) -> WeightSpec:
        return WeightSpec(self.family, {self.param: float(value)})

    def to_dict(self) -> dict:
        out: dict = {"family": self.family, "param": self.param}
        if self.values is not None:
            out["values"] = list(self.values)
        else:
            out.update(start=self.start, stop=self.stop, step=self.step)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        known = {"family", "param", "start", "stop", "step", "values"}
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"grid got unknown keys {extra}")
        vals = data.get("values")
        return cls(
            family=data.get("family", ""),
            param=data.get("param", ""),
            start=data.get("start"),
            stop=data.get("stop"),
            step=data.get("step"),
            values=None if vals is None else tuple(float(v) for v in vals),
        )


def spec_to_dict(spec: WeightSpec) -> dict:
    return {
        "family": spec.family,
        "params": dict(spec.params),
        "scale_log2": spec.scale_log2,
    }


def spec_from_dict(data: dict) -> WeightSpec:
    known = {"family", "params", "scale_log2"}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"weights got unknown keys {extra}")
    return WeightSpec(
        data.get("family", ""),
        dict(data.get("params", {})),
        int(data.get("scale_log2", 0)),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully serializable description of one experiment run.

    Exactly one of `weights` (single-spec kinds) or `grid` (BetaGrid/NuGrid)
    is set; `n_grid` holds checkpoint sizes for DepthLaw (optional) and
    SuperExpStabilize (required, ascending). VerifySuite uses `suite` and
    ignores the simulation fields.
    """

    kind: str
    weights: WeightSpec | None = None
    grid: GridSpec | None = None
    n: int | None = None
    n_grid: tuple[int, ...] | None = None
    samples: int = 50
    seed: int = 0
    threads: int = 0
    out: str | None = None
    statistic: str | None = None
    suite: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; known: {', '.join(KINDS)}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.threads < 0:
            raise ConfigError(f"threads must be >= 0, got {self.threads}")
        if self.statistic is not None and self.statistic not in _STATISTICS[self.kind]:
            raise ConfigError(
                f"statistic {self.statistic!r} not available for {self.kind}; "
                f"choose from {sorted(_STATISTICS[self.kind])}"
            )
        if self.kind == "VerifySuite":
            if not self.suite:
                raise ConfigError("VerifySuite config needs a suite name")
            return
        if self.kind in ("BetaGrid", "NuGrid"):
            if self.grid is None:
                raise ConfigError(f"{self.kind} config needs a grid")
            if self.weights is not None:
                raise ConfigError(f"{self.kind} takes a grid, not a single weights spec")
        else:
            if self.weights is None:
                raise ConfigError(f"{self.kind} config needs a weights spec")
            if self.grid is not None:
                raise ConfigError(f"{self.kind} takes a single weights spec, not a grid")
        ns = self._run_sizes()
        for m in ns:
            if m < 2:
                raise ConfigError(f"n must be >= 2, got {m}")
        if self.n_grid is not None:
            if list(self.n_grid) != sorted(set(self.n_grid)):
                raise ConfigError("n_grid must be strictly ascending")
        if self.kind == "SuperExpStabilize" and (self.n_grid is None or len(self.n_grid) < 2):
            raise ConfigError("SuperExpStabilize needs an ascending n_grid of at least two checkpoints")
        if self.kind in ("BetaGrid", "NuGrid", "SuperExpRatio") and self.n is None:
            raise ConfigError(f"{self.kind} config needs n")

    def _run_sizes(self) -> tuple[int, ...]:
        if self.n_grid is not None:
            return tuple(self.n_grid)
        if self.n is not None:
            return (self.n,)
        raise ConfigError(f"{self.kind} config needs n or n_grid")

    def to_dict(self) -> dict:
        out: dict = {
            "kind": self.kind,
            "samples": self.samples,
            "seed": self.seed,
            "threads": self.threads,
        }
        if self.weights is not None:
            out["weights"] = spec_to_dict(self.weights)
        if self.grid is not None:
            out["grid"] = self.grid.to_dict()
        if self.n is not None:
            out["n"] = self.n
        if self.n_grid is not None:
            out["n_grid"] = list(self.n_grid)
        if self.out is not None:
            out["out"] = self.out
        if self.statistic is not None:
            out["statistic"] = self.statistic
        if self.suite is not None:
            out["suite"] = self.suite
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {
            "kind", "weights", "grid", "n", "n_grid", "samples",
            "seed", "threads", "out", "statistic", "suite",
        }
        extra = sorted(set(data) - known)
        if extra:
            raise ConfigError(f"config got unknown keys {extra}")
        weights = data.get("weights")
        grid = data.get("grid")
        ng = data.get("n_grid")
        return cls(
            kind=data.get("kind", ""),
            weights=None if weights is None else spec_from_dict(weights),
            grid=None if grid is None else GridSpec.from_dict(grid),
            n=None if data.get("n") is None else int(data["n"]),
            n_grid=None if ng is None else tuple(int(v) for v in ng),
            samples=int(data.get("samples", 50)),
            seed=int(data.get("seed", 0)),
            threads=int(data.get("threads", 0)),
            out=data.get("out"),
            statistic=data.get("statistic"),
            suite=data.get("suite"),
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# -- summaries and rows ---------------------------------------------------------


@dataclass(frozen=True)
class StatSummary:
    """Per-grid-point summary: stderr = sqrt(variance / count), and when the
    per-sample values are kept the whole summary is recomputable from them."""

    count: int
    mean: float
    variance: float
    stderr: float
    minimum: float
    maximum: float
    values: tuple[float, ...] | None = None

    @classmethod
    def from_values(cls, values, keep: bool = False) -> "StatSummary":
        vals = [float(v) for v in values]
        if not vals:
            raise ValueError("need at least one value")
        count = len(vals)
        mean = math.fsum(vals) / count
        variance = (
            math.fsum((v - mean) ** 2 for v in vals) / (count - 1) if count > 1 else 0.0
        )
        return cls(
            count=count,
            mean=mean,
            variance=variance,
            stderr=math.sqrt(variance / count),
            minimum=min(vals),
            maximum=max(vals),
            values=tuple(vals) if keep else None,
        )


@dataclass(frozen=True)
class ResultRow:
    """One CSV row: a grid parameter label, the run size, and the summary."""

    param: str
    n: int
    statistic: str
    summary: StatSummary


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[ResultRow]
    wall_time_s: float
    verify_report: object | None = None
    ok: bool = True

    def csv_text(self) -> str:
        # repr() floats: shortest round-trip digits, locale-independent
        lines = [CSV_HEADER]
        for row in self.rows:
            s = row.summary
            lines.append(
                f"{row.param},{row.n},{row.statistic},"
                f"{s.mean!r},{s.stderr!r},{s.count},{self.config.seed}"
            )
        return "\n".join(lines) + "\n"

    def manifest_dict(self) -> dict:
        import numba

        return {
            "config": self.config.to_dict(),
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "numba": numba.__version__,
                "dwtree": __version__,
            },
            "rows": len(self.rows),
            "statistics": sorted({r.statistic for r in self.rows}),
            "ok": self.ok,
            "wall_time_s": self.wall_time_s,  # volatile: the one non-reproducible key
        }

    def manifest_json(self) -> str:
        return json.dumps(self.manifest_dict(), indent=2, sort_keys=True) + "\n"


def emit(result: ExperimentResult, out_stem: str) -> tuple[str, str]:
    """Write <stem>.csv and <stem>.manifest.json; returns the two paths."""
    directory = os.path.dirname(out_stem)
    if directory:
        os.makedirs(directory, exist_ok=True)
    csv_path = out_stem + ".csv"
    manifest_path = out_stem + ".manifest.json"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.csv_text())
    with open(manifest_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.manifest_json())
    return csv_path, manifest_path


# -- runners --------------------------------------------------------------------


def _sample_map(fn, samples: int, threads: int) -> list:
    """fn(i) for i in [0, samples), aggregated in sample-index order.

    Workers only ever own their own runs (stream = f(sample index)), so the
    result is independent of the worker count by construction.
    """
    workers = min(resolve_threads(threads), samples)
    if workers <= 1:
        return [fn(i) for i in range(samples)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(samples)))


def _param_label(spec: WeightSpec) -> str:
    vals = [spec.params[k] for k in sorted(spec.params)]
    if len(vals) == 1 and isinstance(vals[0], (int, float)):
        return repr(float(vals[0]))
    if not vals:
        return spec.family
    return json.dumps(dict(spec.params), sort_keys=True, separators=(",", ":"))


def _run_depth_law(config: ExperimentConfig) -> list[ResultRow]:
    spec = config.weights
    ns = list(config._run_sizes())
    stat = config.statistic or "d_over_ln_n"
    label = _param_label(spec)

    def one(i: int):
        tr = grow_profile(spec, ns[-1], config.seed, stream=i, checkpoints=ns)
        return tuple(cp.d for cp in tr.checkpoints)

    per_sample = _sample_map(one, config.samples, config.threads)
    rows = []
    for col, m in enumerate(ns):
        depths = [row[col] for row in per_sample]
        if stat == "depth":
            vals = [float(d) for d in depths]
        else:
            vals = [d / math.log(m) for d in depths]
        rows.append(ResultRow(label, m, stat, StatSummary.from_values(vals)))
    return rows


def _run_param_grid(config: ExperimentConfig) -> list[ResultRow]:
    grid = config.grid
    n = config.n
    log_n = math.log(n)
    beta = config.kind == "BetaGrid"
    stat = config.statistic or ("beta_hat" if beta else "d_over_n")
    rows = []
    for pi, c in enumerate(grid.value_list()):
        spec = grid.spec_for(c)
        base = pi * config.samples

        def one(i: int, spec=spec, base=base):
            return grow_profile(spec, n, config.seed, stream=base + i).final_depth

        depths = _sample_map(one, config.samples, config.threads)
        if beta:
            vals = [math.log(d) / log_n for d in depths]
        else:
            vals = [d / n for d in depths]
        rows.append(ResultRow(repr(float(c)), n, stat, StatSummary.from_values(vals)))
    return rows


def _require_bounded_psi(spec: WeightSpec, kind: str) -> None:
    if psi(spec, 1) == UNBOUNDED:
        raise ConfigError(
            f"{kind} needs a weight family with bounded influence windows; "
            f"psi is unbounded for {spec.family}"
        )


def _run_superexp_ratio(config: ExperimentConfig) -> list[ResultRow]:
    spec = config.weights
    _require_bounded_psi(spec, config.kind)
    n = config.n
    i_n = tail_ratio_sum(spec, n)
    label = _param_label(spec)

    def one(i: int):
        return grow_profile(spec, n, config.seed, stream=i).final_depth

    depths = _sample_map(one, config.samples, config.threads)
    vals = [(n - d) / i_n for d in depths]
    return [ResultRow(label, n, "gap_over_In", StatSummary.from_values(vals))]


def _run_superexp_stabilize(config: ExperimentConfig) -> list[ResultRow]:
    spec = config.weights
    _require_bounded_psi(spec, config.kind)
    ns = list(config.n_grid)
    label = _param_label(spec)

    def one(i: int):
        tr = grow_profile(spec, ns[-1], config.seed, stream=i, checkpoints=ns)
        return tuple(cp.n - cp.d for cp in tr.checkpoints)

    per_sample = _sample_map(one, config.samples, config.threads)
    rows = []
    for col, m in enumerate(ns):
        vals = [float(gaps[col]) for gaps in per_sample]
        rows.append(ResultRow(label, m, "n_minus_d", StatSummary.from_values(vals)))
    frozen = [1.0 if len(set(gaps)) == 1 else 0.0 for gaps in per_sample]
    rows.append(ResultRow(label, ns[-1], "stabilized_frac", StatSummary.from_values(frozen)))
    return rows


def _run_verify_suite(config: ExperimentConfig) -> tuple[list[ResultRow], object, bool]:
    from .verify import verify

    report = verify(config.suite, seed=config.seed)
    rows = [
        ResultRow(
            check.name,
            config.n or 0,
            "check_passed",
            StatSummary.from_values([1.0 if check.passed else 0.0]),
        )
        for check in report.checks
    ]
    return rows, report, report.passed


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Run one experiment; deterministic given (config, master seed)."""
    start = time.perf_counter()
    report = None
    ok = True
    if config.kind == "DepthLaw":
        rows = _run_depth_law(config)
    elif config.kind in ("BetaGrid", "NuGrid"):
        rows = _run_param_grid(config)
    elif config.kind == "SuperExpRatio":
        rows = _run_superexp_ratio(config)
    elif config.kind == "SuperExpStabilize":
        rows = _run_superexp_stabilize(config)
    else:
        rows, report, ok = _run_verify_suite(config)
    wall = time.perf_counter() - start
    return ExperimentResult(config=config, rows=rows, wall_time_s=wall, verify_report=report, ok=ok)


# -- log-log fits ----------------------------------------------------------------


@dataclass(frozen=True)
class BetaFit:
    """Least-squares fit of ln(depth) against ln(n); residual is the RMS of
    the log-scale residuals."""

    slope: float
    intercept: float
    residual: float


def estimate_beta(series) -> BetaFit:
    """Fit d ~ n^slope from (n, mean depth) pairs.

    Needs at least three points with distinct positive n and positive depth.
    """
    pts = [(float(n), float(d)) for n, d in series]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    for n, d in pts:
        if not (n > 0.0 and d > 0.0):
            raise ValueError(f"points must be positive, got ({n!r}, {d!r})")
    xs = [math.log(n) for n, _ in pts]
    ys = [math.log(d) for _, d in pts]
    xbar = math.fsum(xs) / len(xs)
    ybar = math.fsum(ys) / len(ys)
    sxx = math.fsum((x - xbar) ** 2 for x in xs)
    if sxx == 0.0:
        raise ValueError("all n are equal; the slope is undefined")
    sxy = math.fsum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    residual = math.sqrt(
        math.fsum((y - slope * x - intercept) ** 2 for x, y in zip(xs, ys)) / len(xs)
    )
    return BetaFit(slope=slope, intercept=intercept, residual=residual)
