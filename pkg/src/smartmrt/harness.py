"""Replication driver, performance metrics, reports and the analysis runner."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .baselines import baseline_contrast, fit_wcls, fit_wr
from .design import DesignSpec
from .errors import NumericalError, SmartMrtError, ValidationError
from .estimator import fit_hybrid, fit_rows
from .inference import make_contrast
from .io import read_trial_csv
from .model import ModelSpec, example1_spec, stage_split_spec
from .rows import replicate
from .sim import SimConfig, rep_rng, simulate_one
from .truth import eval_time, true_effect_analytic

__all__ = [
    "ContrastDef",
    "MetricsRow",
    "table_contrasts",
    "scenario_spec",
    "rep_estimates",
    "run_benchmark",
    "compute_metrics",
    "render_report",
    "report",
    "analyze",
    "HYBRID_OPTIONS",
    "FAILURE_LIMIT",
]

log = logging.getLogger(__name__)

FAILURE_LIMIT = 0.01
HYBRID_OPTIONS = {"centering": "stage", "bread": "stacked"}
# variance of the hybrid estimator used for the efficiency ratio: the
# stacked sandwich, and the (beta, eta)-only bread that treats the centering
# constants as known
RATIO_BREADS = ("stacked", "reduced")
REGIME_PAIRS = (((1, 1), (1, -1)), ((1, 1), (-1, 1)), ((1, 1), (-1, -1)),
                ((1, -1), (-1, 1)), ((1, -1), (-1, -1)), ((-1, 1), (-1, -1)))


@dataclass(frozen=True)
class ContrastDef:
    """One row of a results table.

    ``table`` is ``"a"`` (treatment effects, hybrid vs WCLS), ``"b"``
    (regime effects averaged over treatment, hybrid vs WR) or ``"c"``
    (regime effects at fixed treatment, hybrid only).
    """

    table: str
    row: int
    stage: int
    kind: str
    regimes: tuple
    a_fixed: int | None
    label: str

    @property
    def key(self) -> str:
        return f"{self.table}{self.row}"

    @property
    def baseline(self) -> str | None:
        return {"a": "WCLS", "b": "WR"}.get(self.table)


def _pair_label(d, dref, stage):
    if stage == 1:
        return f"d1 = {d[0]} vs {dref[0]}"
    return f"d = ({d[0]}, {d[1]}) vs ({dref[0]}, {dref[1]})"


def table_contrasts() -> list[ContrastDef]:
    """The 29 contrasts of sub-tables (a), (b) and (c)."""
    out = []
    row = 1
    for d1 in (1, -1):
        out.append(ContrastDef("a", row, 1, "IA", ((d1, 1),), None, f"Fix d1 = {d1}"))
        row += 1
    for d in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
        out.append(ContrastDef("a", row, 2, "IA", (d,), None, f"Fix d = ({d[0]}, {d[1]})"))
        row += 1
    for stage in (1, 2):
        out.append(ContrastDef("a", row, stage, "AA", (), None, "Averaging DTR"))
        row += 1
    stage1_pair = ((1, 1), (-1, 1))
    pairs = [(1, stage1_pair)] + [(2, p) for p in REGIME_PAIRS]
    for k, (stage, (d, dref)) in enumerate(pairs, start=1):
        out.append(ContrastDef("b", k, stage, "AD", (d, dref), None, _pair_label(d, dref, stage)))
    k = 1
    for a in (0, 1):
        for stage, (d, dref) in pairs:
            out.append(ContrastDef("c", k, stage, "ID", (d, dref), a,
                                   f"{_pair_label(d, dref, stage)}, a = {a}"))
            k += 1
    return out


def scenario_spec(scenario: str) -> ModelSpec:
    """Working model used for a simulation scenario."""
    return example1_spec() if SimConfig(scenario=scenario).scenario == "I" else stage_split_spec()


def _contrast_rows(k, cdef, method, c, extra=None):
    rec = {"rep": k, "key": cdef.key, "method": method, "estimate": c.estimate, "se": c.se}
    if extra:
        rec.update(extra)
    return rec


def rep_estimates(config: SimConfig, k: int, contrasts=None, hybrid_options=None,
                  domain: str = "benchmark") -> list[dict]:
    """Simulate replicate ``k`` and evaluate every contrast under every method.

    Returns one record per (contrast, method) with ``estimate`` and ``se``.
    Hybrid records also carry ``se_reduced``, the standard error under the
    bread that treats the centering constants as known.
    """
    contrasts = table_contrasts() if contrasts is None else contrasts
    opts = dict(HYBRID_OPTIONS, **(hybrid_options or {}))
    design = config.design()
    spec = scenario_spec(config.scenario)
    data = simulate_one(config, rep_rng(config.seed, k, domain))
    rows = replicate(data, design, spec)
    fits = {b: fit_rows(rows, design, **dict(opts, bread=b)) for b in {opts["bread"], *RATIO_BREADS}}
    main = fits[opts["bread"]]
    wcls = fit_wcls(data, design, spec)
    wr = fit_wr(data, design, spec)
    out = []
    for cdef in contrasts:
        t = eval_time(config, cdef.stage)
        c = make_contrast(cdef.kind, cdef.regimes, cdef.a_fixed, t, main)
        extra = {f"se_{b}": make_contrast(cdef.kind, cdef.regimes, cdef.a_fixed, t, fits[b]).se
                 for b in RATIO_BREADS}
        out.append(_contrast_rows(k, cdef, "hybrid", c, extra))
        if cdef.baseline == "WCLS":
            out.append(_contrast_rows(k, cdef, "WCLS",
                                      baseline_contrast(wcls, cdef.kind, cdef.regimes, cdef.a_fixed, t)))
        elif cdef.baseline == "WR":
            out.append(_contrast_rows(k, cdef, "WR",
                                      baseline_contrast(wr, cdef.kind, cdef.regimes, cdef.a_fixed, t)))
    return out


def _safe_rep(args):
    config, k, contrasts, opts = args
    try:
        return k, rep_estimates(config, k, contrasts, opts), None
    except (SmartMrtError, np.linalg.LinAlgError) as exc:
        return k, [], f"{type(exc).__name__}: {exc}"


@dataclass
class BenchmarkResult:
    """Per-replicate estimates, aggregated metrics and failure log."""

    estimates: pd.DataFrame
    metrics: pd.DataFrame
    failures: list
    config: SimConfig


def run_benchmark(config: SimConfig, contrasts=None, hybrid_options=None, jobs: int = 1,
                  truth=None) -> BenchmarkResult:
    """Simulate ``config.reps`` datasets, fit all methods and aggregate.

    Parameters
    ----------
    config : SimConfig
    contrasts : list of ContrastDef, optional
        Defaults to :func:`table_contrasts`.
    hybrid_options : dict, optional
        Passed to :func:`smartmrt.estimator.fit_rows`.
    jobs : int
        Worker processes.  Results do not depend on this value.
    truth : mapping, optional
        ``key -> true value``; defaults to the analytic truth.

    Raises
    ------
    NumericalError
        More than 1% of replicates failed to fit.
    """
    contrasts = table_contrasts() if contrasts is None else list(contrasts)
    args = [(config, k, contrasts, hybrid_options) for k in range(config.reps)]
    if jobs > 1 and config.reps > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_safe_rep, args, chunksize=max(1, config.reps // (4 * jobs))))
    else:
        results = [_safe_rep(a) for a in args]
    results.sort(key=lambda r: r[0])
    failures = [(k, msg) for k, _, msg in results if msg is not None]
    if failures:
        log.warning("%d of %d replicates failed and were excluded", len(failures), config.reps)
        if len(failures) > FAILURE_LIMIT * config.reps:
            raise NumericalError(
                f"{len(failures)} of {config.reps} replicates failed (limit 1%); first: {failures[0][1]}")
    records = [rec for _, recs, _ in results for rec in recs]
    est = pd.DataFrame.from_records(records)
    if truth is None:
        truth = {c.key: true_effect_analytic(config, c.kind, c.stage, c.regimes, c.a_fixed)
                 for c in contrasts}
    metrics = compute_metrics(est, contrasts, truth)
    return BenchmarkResult(est, metrics, failures, config)


@dataclass(frozen=True)
class MetricsRow:
    table: str
    row: int
    stage: int
    label: str
    method: str
    true: float
    bias: float
    se: float
    mc_sd: float
    cp: float
    mre: float = math.nan
    sd_re: float = math.nan
    mre_reduced: float = math.nan
    sd_re_reduced: float = math.nan
    n_reps: int = 0


METRIC_COLUMNS = [f for f in MetricsRow.__dataclass_fields__]


def compute_metrics(est: pd.DataFrame, contrasts, truth) -> pd.DataFrame:
    """Aggregate per-replicate estimates into one row per (contrast, method).

    ``bias`` is mean(estimate) - true, ``se`` the mean estimated standard
    error, ``mc_sd`` the standard deviation of the estimates, ``cp`` the
    share of 95% Wald intervals covering the truth.  For baseline rows
    ``mre``/``sd_re`` are the mean and standard deviation over replicates of
    ``se_baseline**2 / se_hybrid**2``; ``mre_reduced`` uses the hybrid
    standard error that treats the centering constants as known.
    """
    rows = []
    if est.empty:
        return pd.DataFrame(columns=METRIC_COLUMNS)
    for cdef in contrasts:
        sub = est[est["key"] == cdef.key]
        if sub.empty:
            continue
        hyb = sub[sub["method"] == "hybrid"].sort_values("rep")
        tv = float(truth[cdef.key])
        for method in ("hybrid", cdef.baseline):
            if method is None:
                continue
            m = sub[sub["method"] == method].sort_values("rep")
            e, s = m["estimate"].to_numpy(), m["se"].to_numpy()
            cover = np.abs(e - tv) <= 1.959964 * s
            extra = {}
            if method != "hybrid":
                for suffix, col in (("", "se"), ("_reduced", "se_reduced")):
                    ratio = s ** 2 / hyb[col].to_numpy() ** 2
                    extra[f"mre{suffix}"] = float(ratio.mean())
                    extra[f"sd_re{suffix}"] = float(ratio.std(ddof=1)) if len(ratio) > 1 else math.nan
            rows.append(MetricsRow(
                cdef.table, cdef.row, cdef.stage, cdef.label, method, tv,
                float(e.mean() - tv), float(s.mean()),
                float(e.std(ddof=1)) if len(e) > 1 else math.nan,
                float(cover.mean()), n_reps=len(e), **extra))
    return pd.DataFrame([asdict(r) for r in rows], columns=METRIC_COLUMNS)


_TABLE_LAYOUT = {
    "a": ("WCLS", False),
    "b": ("WR", True),
    "c": (None, False),
}


def render_report(metrics: pd.DataFrame, table: str, fmt: str = "md", digits: int = 2) -> str:
    """Wide table for one sub-table in the column order
    Stage, Contrast, True, then Bias/SE/CP per method, then mRE/sdRE."""
    if table not in _TABLE_LAYOUT:
        raise ValidationError(f"unknown table {table!r}")
    base, with_re = _TABLE_LAYOUT[table]
    cols = ["Stage", "Contrast", "True", "Hybrid Bias", "Hybrid SE", "Hybrid CP"]
    if base:
        cols += [f"{base} Bias", f"{base} SE", f"{base} CP"]
    if with_re:
        cols += ["mRE", "sdRE"]
    sub = metrics[metrics["table"] == table] if len(metrics) else metrics
    body = []
    for row in sorted(set(sub["row"])) if len(sub) else []:
        r = sub[sub["row"] == row]
        h = r[r["method"] == "hybrid"].iloc[0]
        line = [int(h["stage"]), h["label"], h["true"], h["bias"], h["se"], h["cp"]]
        if base:
            b = r[r["method"] == base].iloc[0]
            line += [b["bias"], b["se"], b["cp"]]
            if with_re:
                line += [b["mre"], b["sd_re"]]
        body.append(line)
    frame = pd.DataFrame(body, columns=cols)
    if fmt == "csv":
        return frame.to_csv(index=False)
    if fmt != "md":
        raise ValidationError(f"unknown report format {fmt!r}")

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return "" if math.isnan(v) else f"{v:.{digits}f}"
        return str(v)

    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(cell(v) for v in line) + " |" for line in body]
    return "\n".join(lines) + "\n"


def report(metrics_csv, fmt: str = "md") -> str:
    """Render a metrics CSV written by ``run_benchmark`` as sub-tables."""
    if fmt not in ("md", "csv"):
        raise ValidationError(f"unknown report format {fmt!r}")
    path = Path(metrics_csv)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    metrics = pd.read_csv(path, float_precision="round_trip")
    parts = []
    for table, title in (("a", "(a) treatment effects"), ("b", "(b) regime effects, treatment averaged"),
                         ("c", "(c) regime effects at fixed treatment")):
        text = render_report(metrics, table, fmt)
        parts.append(f"## {title}\n\n{text}" if fmt == "md" else text)
    return "\n".join(parts)


def _contrast_from_config(item: dict, design: DesignSpec):
    try:
        kind = item["kind"]
        regimes = [tuple(int(v) for v in r) for r in item.get("regimes", [])]
        t = int(item["t"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed contrast entry {item!r}") from exc
    return kind, regimes, item.get("a"), t, item.get("label")


def analyze(data_csv, config: dict | str | Path, out=None) -> dict:
    """Fit the hybrid estimator to a trial CSV and evaluate requested contrasts.

    Parameters
    ----------
    data_csv : path-like
    config : dict or path-like
        JSON document with ``design``, ``model``, ``contrasts`` and optional
        ``options`` sections.
    out : path-like, optional
        JSON report path; a markdown table is written next to it with the
        ``.md`` suffix.

    Returns
    -------
    dict
        The JSON report.
    """
    if not isinstance(config, dict):
        path = Path(config)
        if not path.exists():
            raise ValidationError(f"no such config file: {path}")
        try:
            config = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
    unknown = set(config) - {"design", "model", "contrasts", "options"}
    if unknown:
        raise ValidationError(f"unknown config sections: {sorted(unknown)}")
    design = DesignSpec.from_dict(config.get("design", {}))
    if "model" not in config:
        raise ValidationError("config needs a 'model' section")
    spec = ModelSpec.from_dict(config["model"])
    data = read_trial_csv(data_csv, design)
    fit = fit_hybrid(data, design, spec, **config.get("options", {}))
    contrasts = []
    for item in config.get("contrasts", []):
        kind, regimes, a, t, label = _contrast_from_config(item, design)
        c = make_contrast(kind, regimes, a, t, fit, label=label)
        contrasts.append(c.as_dict())
    result = {
        "n": fit.n,
        "coefficients": fit.coef_table(),
        "contrasts": contrasts,
        "condition_numbers": fit.condition_numbers,
        "options": fit.options,
        "spec_echo": dict(fit.spec_echo, model_terms=spec.to_dict(), design=design.to_dict()),
        "warnings": list(data.warnings),
    }
    if out is not None:
        out = Path(out)
        out.write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
        out.with_suffix(".md").write_text(fit_markdown(result))
    return result


def fit_markdown(result: dict, digits: int = 3) -> str:
    """Coefficient and contrast tables (estimate with 95% CI)."""
    lines = ["| Coefficient | Estimate | 95% CI |", "|---|---|---|"]
    for r in result["coefficients"]:
        lines.append(f"| {r['parameter']} | {r['estimate']:.{digits}f} | "
                     f"({r['ci_lo']:.{digits}f}, {r['ci_hi']:.{digits}f}) |")
    if result["contrasts"]:
        lines += ["", "| Contrast | Estimate | SE | 95% CI |", "|---|---|---|---|"]
        for c in result["contrasts"]:
            lines.append(f"| {c['label']} | {c['estimate']:.{digits}f} | {c['se']:.{digits}f} | "
                         f"({c['ci_lo']:.{digits}f}, {c['ci_hi']:.{digits}f}) |")
    return "\n".join(lines) + "\n"


