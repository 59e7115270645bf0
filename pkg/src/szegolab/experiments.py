"""Experiment configs, dispatch, and CSV/JSON reports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .cue import (
    ScaledStatSpec,
    char_fn_mc,
    mock_gaussian_experiment,
    moment_suite,
    truncation_sweep,
)
from .engine import (
    approx_inverse_residual,
    bo_evaluate,
    cancellation_diagnostics,
    companion_trace,
    fredholm_bound_checks,
    heine_determinant,
    lemma_bound_checks,
    random_specs,
    separation_ratio,
    symbol_parts,
    szego_constants,
    toeplitz_log_det,
    widom_check,
)
from .errors import ValidationError
from .rates import ConvergenceRow, fit_log_log, fit_rate
from .symbols import SymbolSpec, build_symbol

EXPERIMENTS = (
    "szego_sweep",
    "bo_check",
    "widom_check",
    "bn_residual",
    "separation",
    "lemma_bounds",
    "cancellation",
    "char_fn",
    "moments",
    "truncation",
    "mock_gaussian",
)
MC_EXPERIMENTS = ("char_fn", "moments", "truncation", "mock_gaussian")
COLUMNS = (
    "experiment",
    "n",
    "quantity",
    "value_re",
    "value_im",
    "stderr_or_bound",
    "target_re",
    "target_im",
    "holds",
    "seed",
    "runtime_ms",
)
DEFAULT_TOLERANCES = {"symbol_tol": None, "fredholm_tol": 1e-12, "identity_tol": 1e-8}


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment invocation.

    ``params`` holds the experiment-specific knobs (``ks``, ``m_list``,
    ``stat``, ``N_offsets``, ``random_specs``, thresholds); see the README
    for the keys each experiment reads.
    """

    experiment: str
    spec: Optional[SymbolSpec]
    n_values: Sequence[int]
    mc: Mapping[str, int] = field(default_factory=lambda: {"samples": 1000, "seed": 0})
    tolerances: Mapping[str, Optional[float]] = field(default_factory=dict)
    output_path: str = "report.csv"
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        object.__setattr__(self, "tolerances", {**DEFAULT_TOLERANCES, **dict(self.tolerances)})
        object.__setattr__(self, "mc", {"samples": 1000, "seed": 0, **dict(self.mc)})
        self.validate()

    # validation -----------------------------------------------------------

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(f"unknown experiment {self.experiment!r}", "experiment")
        ns = self.n_values
        if not ns:
            raise ValidationError("must be nonempty", "n_values")
        for i, n in enumerate(ns):
            if n < 1:
                raise ValidationError(f"must be positive, got {n}", f"n_values[{i}]")
            if i and n <= ns[i - 1]:
                raise ValidationError("must be strictly increasing", f"n_values[{i}]")
        if self.experiment in MC_EXPERIMENTS and int(self.mc["samples"]) < 100:
            raise ValidationError(f"must be at least 100, got {self.mc['samples']}", "mc.samples")
        for key, tol in self.tolerances.items():
            if key not in DEFAULT_TOLERANCES:
                raise ValidationError("unknown tolerance", f"tolerances.{key}")
            if tol is not None and not tol > 0:
                raise ValidationError(f"must be positive, got {tol}", f"tolerances.{key}")
        needs_spec = self.experiment not in ("moments", "mock_gaussian") and "random_specs" not in self.params
        if needs_spec and self.spec is None:
            raise ValidationError("required for this experiment", "spec")
        if self.spec is not None:
            for n in ns:
                try:
                    self.spec.frequencies(n)
                except ValidationError as exc:
                    raise ValidationError(str(exc), "spec") from None
        if self.experiment == "truncation" and self.spec is not None and not self.spec.hermitian:
            raise ValidationError("truncation needs a hermitian spec", "spec.hermitian")
        if self.experiment == "moments":
            ks = self.params.get("ks")
            if not ks or len(set(ks)) != len(ks) or any(int(k) < 1 for k in ks):
                raise ValidationError("must be distinct positive integers", "params.ks")
        if self.experiment == "mock_gaussian":
            try:
                stat_from_dict(self.params.get("stat", {}))
            except ValidationError as exc:
                raise ValidationError(str(exc), "params.stat") from None
        if self.experiment == "cancellation":
            offs = self.params.get("N_offsets", [1])
            if any(int(o) < 1 for o in offs):
                raise ValidationError("offsets must be positive (N > n)", "params.N_offsets")

    # serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "spec": None if self.spec is None else self.spec.to_dict(),
            "n_values": list(self.n_values),
            "mc": dict(self.mc),
            "tolerances": dict(self.tolerances),
            "output_path": self.output_path,
            "params": _plain(self.params),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        if not isinstance(d, Mapping):
            raise ValidationError("config must be a JSON object")
        unknown = set(d) - {"experiment", "spec", "n_values", "mc", "tolerances", "output_path", "params"}
        if unknown:
            raise ValidationError(f"unknown keys {sorted(unknown)}", "config")
        if "experiment" not in d:
            raise ValidationError("missing", "experiment")
        spec = d.get("spec")
        try:
            spec = None if spec is None else SymbolSpec.from_dict(spec)
        except ValidationError as exc:
            path = exc.path or ""
            raise ValidationError(str(exc).split(": ", 1)[-1], path if path.startswith("spec") else f"spec.{path}".rstrip(".")) from None
        try:
            n_values = [int(n) for n in d.get("n_values", [])]
        except (TypeError, ValueError):
            raise ValidationError("must be a list of integers", "n_values") from None
        return cls(
            experiment=d["experiment"],
            spec=spec,
            n_values=n_values,
            mc=d.get("mc", {}),
            tolerances=d.get("tolerances", {}),
            output_path=d.get("output_path", "report.csv"),
            params=d.get("params", {}),
        )

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid JSON: {exc}", path) from None
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form, output path excluded."""
        d = self.to_dict()
        d.pop("output_path")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, seed: Optional[int] = None, n_values: Optional[Sequence[int]] = None) -> "ExperimentConfig":
        mc = dict(self.mc)
        if seed is not None:
            mc["seed"] = int(seed)
        return replace(self, mc=mc, n_values=tuple(n_values) if n_values is not None else self.n_values)


def _plain(obj):
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def stat_from_dict(d: Mapping) -> ScaledStatSpec:
    return ScaledStatSpec(
        family=d.get("family", "bump_derivative"),
        gamma=float(d.get("gamma", 0.5)),
        scale=float(d.get("scale", math.pi)),
        table=tuple(tuple(row) for row in d.get("table", ())),
    )


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    n: int
    quantity: str
    value: complex
    stderr_or_bound: Optional[float] = None
    target: Optional[complex] = None
    holds: bool = True
    seed: Optional[int] = None
    runtime_ms: Optional[float] = None

    def record(self) -> dict:
        v = complex(self.value)
        t = None if self.target is None else complex(self.target)
        return {
            "experiment": self.experiment,
            "n": self.n,
            "quantity": self.quantity,
            "value_re": v.real,
            "value_im": v.imag,
            "stderr_or_bound": self.stderr_or_bound,
            "target_re": None if t is None else t.real,
            "target_im": None if t is None else t.imag,
            "holds": bool(self.holds),
            "seed": self.seed,
            "runtime_ms": self.runtime_ms,
        }


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: List[ReportRow]
    version: str = __version__

    @property
    def all_hold(self) -> bool:
        return all(r.holds for r in self.rows)

    def metadata(self) -> dict:
        return {"config_hash": self.config.config_hash(), "tool_version": self.version}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def to_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in report.rows:
        rec = row.record()
        w.writerow([_fmt(rec[c]) if c not in ("experiment", "quantity") else rec[c] for c in COLUMNS])
    return buf.getvalue()


def _json_number(x):
    if isinstance(x, float) and not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def to_json(report: ExperimentReport) -> str:
    rows = [{k: _json_number(v) for k, v in row.record().items()} for row in report.rows]
    doc = {"metadata": {**report.metadata(), "config": report.config.to_dict()}, "rows": rows}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def emit(report: ExperimentReport, path: str, fmt: str = "csv") -> str:
    """Write the report atomically (temp file + rename) and return the path."""
    if fmt not in ("csv", "json"):
        raise ValidationError(f"unknown format {fmt!r}", "format")
    text = to_csv(report) if fmt == "csv" else to_json(report)
    directory = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="." + fmt)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc
    return path


def _parse_cell(col: str, text: str):
    if text == "":
        return None
    if col in ("experiment", "quantity"):
        return text
    if col == "holds":
        return text == "true"
    if col in ("n", "seed"):
        return int(text)
    return float(text)


def read_report_rows(path: str) -> List[dict]:
    """Rows of a CSV or JSON report as plain records."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if path.endswith(".json"):
        doc = json.loads(text)
        return [{k: (float(v) if isinstance(v, str) and k not in ("experiment", "quantity") else v) for k, v in r.items()} for r in doc["rows"]]
    reader = csv.DictReader(io.StringIO(text))
    return [{c: _parse_cell(c, r[c]) for c in COLUMNS} for r in reader]


def read_report_config(path: str) -> Optional[ExperimentConfig]:
    if not path.endswith(".json"):
        return None
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ExperimentConfig.from_dict(doc["metadata"]["config"])


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def lap(self) -> Optional[float]:
        if not self.enabled:
            return None
        t = time.perf_counter()
        out, self.t0 = 1e3 * (t - self.t0), t
        return out


def _specs(cfg: ExperimentConfig) -> List[tuple]:
    """(label suffix, spec) pairs: the config's spec or a randomized grid."""
    rs = cfg.params.get("random_specs")
    if rs is None:
        return [("", cfg.spec)]
    specs = random_specs(
        int(rs.get("count", 20)),
        int(rs.get("seed", 0)),
        int(rs.get("max_bandwidth", 4)),
        rs.get("high_frequency"),
        float(rs.get("scale", 0.6)),
    )
    return [(f"#{i}", s) for i, s in enumerate(specs)]


def _fit_row(cfg, name, ns, log_values, holds_fn, clock) -> ReportRow:
    fit = fit_log_log(ns, log_values)
    return ReportRow(cfg.experiment, max(ns), name, complex(fit.slope, fit.r2), None, None, holds_fn(fit), None, clock.lap())


def _run_szego_sweep(cfg, clock, threads):
    rows, conv = [], []
    for n in cfg.n_values:
        g = build_symbol(cfg.spec, n)
        target = complex(np.exp(szego_constants(cfg.spec, n).c_total))
        value = toeplitz_log_det(g, n, cfg.tolerances["symbol_tol"]).value
        r = ConvergenceRow.make(n, value, target)
        conv.append(r)
        max_err = cfg.params.get("max_abs_error")
        holds = math.isfinite(r.abs_error) and (max_err is None or n != cfg.n_values[-1] or r.abs_error <= max_err)
        rows.append(ReportRow(cfg.experiment, n, "det_toeplitz", value, r.abs_error, target, holds, None, clock.lap()))
    floor = 10 * (cfg.tolerances["symbol_tol"] or 1e-12)
    fit = fit_rate(conv, floor)
    converged = all(r.abs_error <= floor for r in conv[-1:])
    holds = (fit.available and fit.slope < 0) or (not fit.available and converged)
    rows.append(ReportRow(cfg.experiment, cfg.n_values[-1], "rate_slope", complex(fit.slope, fit.r2), floor, None, holds, None, clock.lap()))
    return rows


def _run_bo_check(cfg, clock, threads):
    rows = []
    tol = cfg.tolerances["identity_tol"]
    for label, spec in _specs(cfg):
        for n in cfg.n_values:
            r = bo_evaluate(spec, n, tol=cfg.tolerances["fredholm_tol"], symbol_tol=cfg.tolerances["symbol_tol"])
            holds = r.rel_discrepancy <= tol and not r.capped
            rows.append(ReportRow(cfg.experiment, n, "bo_identity" + label, r.lhs.value, r.rel_discrepancy, r.rhs.value, holds, None, clock.lap()))
    return rows


def _run_widom_check(cfg, clock, threads):
    rows = []
    tol = cfg.params.get("residual_tol", 1e-10)
    for label, spec in _specs(cfg):
        for n in cfg.n_values:
            res = widom_check(spec, n, cfg.tolerances["symbol_tol"])
            rows.append(ReportRow(cfg.experiment, n, "widom_residual" + label, res, tol, 0, res <= tol, None, clock.lap()))
    return rows


def _run_bn_residual(cfg, clock, threads):
    rows, ns, logs = [], [], []
    det_tol = cfg.params.get("det_tol", 1e-4)
    lo, hi = cfg.params.get("slope_range", [-0.7, -0.3])
    for n in cfg.n_values:
        _, g1, _ = symbol_parts(cfg.spec, n)
        r = approx_inverse_residual(g1, n, cfg.tolerances["symbol_tol"])
        rows.append(ReportRow(cfg.experiment, n, "trace_norm_residual", r.trace_norm_residual, None, None, True, None, clock.lap()))
        last = n == cfg.n_values[-1]
        holds = (not last) or abs(r.det_bn_tna - 1) <= det_tol
        rows.append(ReportRow(cfg.experiment, n, "det_bn_tna", r.det_bn_tna, det_tol, 1, holds, None, clock.lap()))
        ns.append(n)
        logs.append(math.log(r.trace_norm_residual) if r.trace_norm_residual > 0 else -math.inf)
    rows.append(_fit_row(cfg, "trace_norm_slope", ns, logs, lambda f: f.available and lo <= f.slope <= hi, clock))
    return rows


def _run_separation(cfg, clock, threads):
    rows, dist = [], []
    for n in cfg.n_values:
        r = separation_ratio(cfg.spec, n, cfg.tolerances["symbol_tol"])
        d = abs(r.log_ratio)
        dist.append(d)
        rows.append(ReportRow(cfg.experiment, n, "separation_ratio", r.ratio, d, 1, math.isfinite(d), None, clock.lap()))
    trend = len(dist) < 2 or dist[-1] < dist[0] or dist[-1] <= cfg.tolerances["identity_tol"]
    rows.append(ReportRow(cfg.experiment, cfg.n_values[-1], "separation_trend", dist[-1], dist[0], 0, trend, None, clock.lap()))
    return rows


def _run_lemma_bounds(cfg, clock, threads):
    rows = []
    for label, spec in _specs(cfg):
        for n in cfg.n_values:
            checks = lemma_bound_checks(spec, n, cfg.tolerances["symbol_tol"])
            checks += fredholm_bound_checks(spec, n, cfg.tolerances["symbol_tol"])
            for b in checks:
                rows.append(ReportRow(cfg.experiment, n, b.quantity + label, b.value, b.bound, None, b.holds, None, clock.lap()))
    return rows


def _run_cancellation(cfg, clock, threads):
    rows = []
    offsets = [int(o) for o in cfg.params.get("N_offsets", [1])]
    max_slope = cfg.params.get("max_slope", 0.05)
    s_logs = {o: [] for o in offsets}
    c_logs = []
    for n in cfg.n_values:
        _, g1, g2 = symbol_parts(cfg.spec, n)
        for o, r in zip(offsets, cancellation_diagnostics(g1, n, [n + o for o in offsets])):
            s_logs[o].append(r.log_scaled)
            rows.append(ReportRow(cfg.experiment, n, f"log_scaled_S(N=n+{o})", r.log_scaled, None, None, True, None, clock.lap()))
        c = companion_trace(g1, g2, n)
        c_logs.append(c.log_scaled)
        rows.append(ReportRow(cfg.experiment, n, "log_scaled_companion", c.log_scaled, None, None, True, None, clock.lap()))
    ns = list(cfg.n_values)

    def bounded(logs):
        if all(v == -math.inf for v in logs):
            return lambda f: True
        return lambda f: f.available and f.slope <= max_slope

    for o in offsets:
        rows.append(_fit_row(cfg, f"slope_S(N=n+{o})", ns, s_logs[o], bounded(s_logs[o]), clock))
    rows.append(_fit_row(cfg, "slope_companion", ns, c_logs, bounded(c_logs), clock))
    return rows


def _theorem1_target(spec: SymbolSpec) -> float:
    return math.exp(-math.fsum(abs(spec.alpha(j)) ** 2 for j in spec.indices))


def _run_char_fn(cfg, clock, threads):
    rows = []
    seed, samples = int(cfg.mc["seed"]), int(cfg.mc["samples"])
    limit_tol = cfg.params.get("limit_tol")
    for n in cfg.n_values:
        det = heine_determinant(cfg.spec, n, cfg.tolerances["symbol_tol"])
        est = char_fn_mc(cfg.spec, n, samples, seed, threads)
        ok = abs(est.mean - det) <= 3 * est.stderr
        rows.append(ReportRow(cfg.experiment, n, "char_fn_mc", est.mean, est.stderr, det, ok, seed, clock.lap()))
        limit = _theorem1_target(cfg.spec) if cfg.spec.hermitian else None
        holds = limit is None or limit_tol is None or abs(det - limit) <= limit_tol
        rows.append(ReportRow(cfg.experiment, n, "heine_det", det, limit_tol, limit, holds, None, clock.lap()))
    return rows


def _run_moments(cfg, clock, threads):
    rows = []
    seed, samples = int(cfg.mc["seed"]), int(cfg.mc["samples"])
    for n in cfg.n_values:
        for m in moment_suite(n, cfg.params["ks"], samples, seed, threads):
            e = m.estimate
            ok = abs(e.mean - m.target) <= 3 * e.stderr
            rows.append(ReportRow(cfg.experiment, n, f"{m.quantity}(k={m.k},l={m.l})", e.mean, e.stderr, m.target, ok, seed, clock.lap()))
    return rows


def _run_truncation(cfg, clock, threads):
    rows = []
    seed, samples = int(cfg.mc["seed"]), int(cfg.mc["samples"])
    m_list = cfg.params.get("m_list") or list(range(1, max(cfg.spec.indices, default=0) + 1))
    for n in cfg.n_values:
        for r in truncation_sweep(cfg.spec, n, m_list, samples, seed, threads):
            rows.append(ReportRow(cfg.experiment, n, f"truncation(m={r.m})", r.difference, r.stderr, r.bound, r.holds, seed, clock.lap()))
    return rows


def _run_mock_gaussian(cfg, clock, threads):
    rows = []
    seed, samples = int(cfg.mc["seed"]), int(cfg.mc["samples"])
    stat = stat_from_dict(cfg.params.get("stat", {}))
    rel_band = cfg.params.get("rel_band", 0.1)
    asserted = stat.gamma < 1
    for n in cfg.n_values:
        r = mock_gaussian_experiment(stat, n, samples, seed, threads)
        var = r.variance.mean.real
        band = max(3 * r.variance.stderr, rel_band * r.sigma2_soshnikov)
        ok_var = (not asserted) or abs(var - r.sigma2_soshnikov) <= band
        ok_mean = (not asserted) or abs(r.mean.mean) <= 3 * r.mean.stderr
        rows.append(ReportRow(cfg.experiment, n, "variance", var, band, r.sigma2_soshnikov, ok_var, seed, clock.lap()))
        rows.append(ReportRow(cfg.experiment, n, "mean", r.mean.mean, r.mean.stderr, 0, ok_mean, seed, clock.lap()))
        rows.append(ReportRow(cfg.experiment, n, "sigma2_mock", r.sigma2_mock, None, None, True, None, clock.lap()))
        rows.append(ReportRow(cfg.experiment, n, "kurtosis", r.fourth_moment_ratio, None, 3, True, seed, clock.lap()))
    return rows


_DISPATCH: Dict[str, Callable] = {
    "szego_sweep": _run_szego_sweep,
    "bo_check": _run_bo_check,
    "widom_check": _run_widom_check,
    "bn_residual": _run_bn_residual,
    "separation": _run_separation,
    "lemma_bounds": _run_lemma_bounds,
    "cancellation": _run_cancellation,
    "char_fn": _run_char_fn,
    "moments": _run_moments,
    "truncation": _run_truncation,
    "mock_gaussian": _run_mock_gaussian,
}

# rows at one n of these experiments can be recomputed from that n alone
PER_N = {"bo_check", "widom_check", "lemma_bounds", "char_fn", "moments", "truncation", "mock_gaussian"}


def run(cfg: ExperimentConfig, threads: int = 1, timings: bool = False) -> ExperimentReport:
    """Run one experiment. Output is a pure function of ``cfg``.

    With ``timings`` the runtime_ms column is filled in, which makes the
    report differ between runs.
    """
    cfg.validate()
    rows = _DISPATCH[cfg.experiment](cfg, _Clock(timings), threads)
    return ExperimentReport(cfg, rows)


def replay_row(cfg: ExperimentConfig, stored: Mapping, threads: int = 1) -> ReportRow:
    """Recompute the row matching ``stored`` (by n and quantity)."""
    if stored["experiment"] != cfg.experiment:
        raise ValidationError("row does not belong to this config", "experiment")
    sub = cfg.with_overrides(n_values=[stored["n"]]) if cfg.experiment in PER_N else cfg
    for row in run(sub, threads).rows:
        if row.n == stored["n"] and row.quantity == stored["quantity"]:
            return row
    raise ValidationError(f"no row {stored['quantity']!r} at n={stored['n']} in the rerun", "row")


def rows_match(stored: Mapping, fresh: ReportRow) -> bool:
    rec = fresh.record()
    return all(_fmt(_num(stored[c])) == _fmt(_num(rec[c])) for c in COLUMNS if c not in ("runtime_ms", "experiment", "quantity"))


def _num(x):
    if isinstance(x, str):
        return float(x)
    return x
