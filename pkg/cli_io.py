"""
Run settings, stream ingestion, the evaluate workflow and report writing.

An input row at time t carries the outcome Y_t and the two forecasts that
targeted t, issued at t - h. `run_evaluate` re-derives the commit/observe
schedule from that layout: after Y_t is observed the forecasts for t + h are
committed, using only outcomes up to t.
"""
import logging
import math
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import product
from typing import Dict, List, Optional, Tuple
from zipfile import BadZipFile

import pandas as pd

from baselines import BaselineTest, ScoreDiffSeries, run_baseline
from errors import (
    AlternativeInsideNullError,
    ConfigError,
    DegenerateIntervalError,
    InputError,
    MissingColumnError,
    NumericError,
    OrderingError,
    ParseError,
    ScoringDomainError,
    ZeroMassError,
)
from evalue import NEUTRAL, AlternativeKind, AlternativeSpec, OnePeriodEValue, grow_all_scores, grow_lambda, one_period_evalue, resolve_alternative
from scoring import ScoringRule
from sequential import Decision, EProcess, ForecastRecord, MixtureEProcess, stop_rule
from settings_loader import GRID_KEYS, SETTING_KEYS, canonical_key, fold_alternative
from sim import MU_GRID, MA4Design, UniformPartialInfoDesign, parse_method, preset_grid, run_rejection_study

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("t", "y", "p", "q")
MODES = ("evaluate", "simulate")
STOPPING = ("none", "stop_at_alpha")
DESIGNS = ("partial-info", "ma4")

DEFAULT_METHODS = ("e_stopped", "e_unstopped", "t_test")

_NEUTRAL_STEP_ERRORS = (AlternativeInsideNullError, DegenerateIntervalError, ZeroMassError)


def _as_tuple(value):
    if isinstance(value, (list, tuple)):
        return tuple(value)
    return (value,)


def _to_bool(key, value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"Setting '{key}' must be true or false, got {value!r}.")


def _to_number(key, value, kind):
    try:
        number = kind(value)
    except (TypeError, ValueError):
        raise ConfigError(f"Setting '{key}' must be a number, got {value!r}.")
    if kind is int and float(value) != number:
        raise ConfigError(f"Setting '{key}' must be an integer, got {value!r}.")
    return number


@dataclass(frozen=True)
class RunConfig:
    """
    Validated settings of one run. Grid keys hold tuples; in evaluate mode
    each of them must hold a single value.
    """

    mode: str = "evaluate"
    rule: str = "brier"
    lag: Tuple[int, ...] = (1,)
    alternative: Optional[str] = None
    alpha: Tuple[float, ...] = (0.05,)
    condition_column: Optional[str] = "c"
    condition_threshold: Optional[float] = None
    stopping: str = "none"
    all_scores: bool = False
    baselines: bool = True
    bandwidth: Optional[int] = None
    input: Optional[str] = None
    output: Optional[str] = None
    seed: int = 0
    replications: int = 1000
    design: str = "partial-info"
    preset: Optional[str] = None
    mu: Tuple[float, ...] = MU_GRID
    theta: Tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    T: Tuple[int, ...] = (600,)
    k: Tuple[int, ...] = ()
    methods: Tuple[str, ...] = DEFAULT_METHODS
    jobs: int = 1

    @classmethod
    def from_settings(cls, settings):
        values = {}
        settings = fold_alternative({canonical_key(k): v for k, v in settings.items()})
        for raw_key, value in settings.items():
            key = raw_key if raw_key == "T" else str(raw_key).lower()
            if key not in SETTING_KEYS:
                raise ConfigError(f"Unknown setting '{raw_key}'.")
            if isinstance(value, dict):
                raise ConfigError(f"Setting '{key}' must be a scalar, nested sections are not supported.")
            if isinstance(value, (list, tuple)) and key not in GRID_KEYS:
                raise ConfigError(f"Setting '{key}' takes a single value, got a list.")
            if value is None:
                continue
            values[key] = value

        for key, kind in (("lag", int), ("alpha", float), ("mu", float), ("theta", float), ("T", int), ("k", int)):
            if key in values:
                values[key] = tuple(_to_number(key, v, kind) for v in _as_tuple(values[key]))
        if "methods" in values:
            methods = _as_tuple(values["methods"])
            if len(methods) == 1 and "," in str(methods[0]):
                methods = tuple(m.strip() for m in str(methods[0]).split(","))
            values["methods"] = tuple(str(m) for m in methods)
        for key, kind in (("seed", int), ("replications", int), ("jobs", int), ("bandwidth", int),
                          ("condition_threshold", float)):
            if key in values:
                values[key] = _to_number(key, values[key], kind)
        for key in ("all_scores", "baselines"):
            if key in values:
                values[key] = _to_bool(key, values[key])
        for key in ("mode", "rule", "alternative", "condition_column", "stopping", "input", "output",
                    "design", "preset"):
            if key in values:
                values[key] = str(values[key]).strip()

        config = cls(**values)
        config.validate()
        return config

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"Unknown mode '{self.mode}'. Use {' or '.join(MODES)}.")
        if any(h < 1 for h in self.lag):
            raise ConfigError(f"Lag h must be at least 1, got {self.lag}.")
        if any(not 0.0 < a < 1.0 for a in self.alpha):
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.stopping not in STOPPING:
            raise ConfigError(f"Unknown stopping mode '{self.stopping}'. Use none or stop_at_alpha.")
        if self.bandwidth is not None and self.bandwidth < 0:
            raise ConfigError(f"Bandwidth must be nonnegative, got {self.bandwidth}.")
        if self.condition_threshold is not None and not 0.0 <= self.condition_threshold <= 1.0:
            raise ConfigError(f"Condition threshold must lie in [0, 1], got {self.condition_threshold}.")
        if self.jobs < 1 or self.replications < 1:
            raise ConfigError("jobs and replications must be positive integers.")
        if any(k < 1 for k in self.k):
            raise ConfigError(f"k must be a positive integer, got {self.k}.")
        self.scoring_rule()
        self.alternative_spec()
        if self.mode == "evaluate":
            if not self.input:
                raise ConfigError("Evaluate mode requires an input path.")
            for key in ("lag", "alpha"):
                if len(getattr(self, key)) != 1:
                    raise ConfigError(f"Evaluate mode takes a single value for '{key}'.")
        else:
            if self.preset is None and self.design not in DESIGNS:
                raise ConfigError(f"Unknown design '{self.design}'. Use {' or '.join(DESIGNS)}.")
            for method in self.methods:
                parse_method(method)

    @property
    def h(self):
        return self.lag[0]

    @property
    def level(self):
        return self.alpha[0]

    def scoring_rule(self):
        return ScoringRule.from_name(self.rule)

    def alternative_spec(self):
        if self.alternative:
            return AlternativeSpec.from_text(self.alternative)
        if self.mode == "simulate" and self.design == "ma4":
            return AlternativeSpec.forecast_q()
        return AlternativeSpec.convex_mixture(0.5)


# ---------------------------------------------------------------- ingestion

def _read_table(path):
    if not os.path.exists(path):
        raise InputError(f"Input file not found: {path}")
    try:
        if str(path).lower().endswith(".xlsx"):
            df = pd.read_excel(path, dtype=str, engine="openpyxl")
        else:
            df = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise InputError("The input file contains no data.")
    except pd.errors.ParserError as e:
        raise InputError(f"Could not parse {path} as a table: {e}")
    except UnicodeDecodeError:
        raise InputError(f"{path} is not UTF-8 text. Please save it as UTF-8 CSV or .xlsx.")
    except (BadZipFile, ValueError) as e:
        raise InputError(f"Could not read {path}: {e}")
    if df.empty:
        raise InputError("The input file contains no data.")
    df.columns = [str(c).strip().lower() for c in df.columns]
    return df.fillna("")


def _cell_number(value, row, column):
    text = str(value).strip()
    if text == "":
        raise ParseError(row, column, "value is missing")
    try:
        number = float(text)
    except ValueError:
        raise ParseError(row, column, f"'{text}' is not a number")
    if not math.isfinite(number):
        raise ParseError(row, column, f"'{text}' is not a finite number")
    return number


def _cell_binary(value, row, column):
    number = _cell_number(value, row, column)
    if number not in (0.0, 1.0):
        raise ParseError(row, column, f"expected 0 or 1, got {value}")
    return int(number)


def _cell_probability(value, row, column):
    number = _cell_number(value, row, column)
    if not 0.0 < number < 1.0:
        raise ParseError(row, column, f"probability {number} is outside (0, 1)")
    return number


def parse_input(path, condition_column="c"):
    """
    Reads a forecast table (CSV, or .xlsx) into ForecastRecords. Row numbers
    in errors are file line numbers, the header being line 1. A blank y is
    allowed only in trailing rows (outcomes still pending).
    """
    df = _read_table(path)
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if condition_column and condition_column != "c" and condition_column.lower() not in df.columns:
        missing.append(condition_column)
    if missing:
        raise MissingColumnError(missing)
    cond = condition_column.lower() if condition_column and condition_column.lower() in df.columns else None
    has_pi = "pi" in df.columns

    records = []
    pending_seen = False
    for i, row in enumerate(df.to_dict("records")):
        line = i + 2
        t_value = _cell_number(row["t"], line, "t")
        if t_value != int(t_value):
            raise ParseError(line, "t", f"time index {row['t']} is not an integer")
        t = int(t_value)
        if records:
            prev = records[-1].t
            if t == prev:
                raise OrderingError(f"Row {line}: duplicate time index t={t}.")
            if t < prev:
                raise OrderingError(f"Row {line}: time index t={t} comes after t={prev}; rows must be sorted by t.")
            if t != prev + 1:
                raise OrderingError(f"Row {line}: time index jumps from t={prev} to t={t}; rows must be contiguous.")

        if str(row["y"]).strip() == "":
            y = None
            pending_seen = True
        elif pending_seen:
            raise ParseError(line, "y", "outcome given after a pending row; only trailing outcomes may be blank")
        else:
            y = _cell_binary(row["y"], line, "y")

        p = _cell_probability(row["p"], line, "p")
        q = _cell_probability(row["q"], line, "q")
        c = 1
        if cond is not None and str(row[cond]).strip() != "":
            c = _cell_binary(row[cond], line, cond)
        pi = None
        if has_pi and str(row["pi"]).strip() != "":
            pi = _cell_probability(row["pi"], line, "pi")
        records.append(ForecastRecord(t=t, y=y, p=p, q=q, c=c, pi=pi))

    logger.info("Parsed %d records from %s (%d pending)", len(records), path,
                sum(1 for r in records if r.y is None))
    return records


def apply_condition_threshold(records, threshold):
    """Conditional test on c_t = 1{max(p_t, q_t) >= threshold}."""
    out = [replace(r, c=int(max(r.p, r.q) >= threshold)) for r in records]
    logger.info("Filtered %d records down to %d by the condition max(p, q) >= %g",
                len(records), sum(r.c for r in out), threshold)
    return out


# ---------------------------------------------------------------- evaluation

class EvidenceGrade(str, Enum):
    NO = "no"
    POOR = "poor"
    SUBSTANTIAL = "substantial"
    STRONG = "strong"
    VERY_STRONG = "very strong"
    DECISIVE = "decisive"


_GRADE_BOUNDS = (
    (1.0, EvidenceGrade.NO),
    (3.16, EvidenceGrade.POOR),
    (10.0, EvidenceGrade.SUBSTANTIAL),
    (31.6, EvidenceGrade.STRONG),
    (100.0, EvidenceGrade.VERY_STRONG),
)


def grade_evidence(e):
    """Buckets (0,1], (1,3.16], (3.16,10], (10,31.6], (31.6,100], (100,inf); boundaries go to the lower bucket."""
    if math.isnan(e) or e < 0:
        raise ScoringDomainError(f"E-values are nonnegative, got {e}.")
    for bound, grade in _GRADE_BOUNDS:
        if e <= bound:
            return grade
    return EvidenceGrade.DECISIVE


def format_evalue(e):
    """6 significant digits; values above 100 are printed in full."""
    if math.isinf(e):
        return "inf"
    if e > 100.0:
        return repr(float(e))
    return f"{e:.6g}"


@dataclass
class TestReport:
    final_e: float
    anytime_p: float
    stop_time: Optional[int]
    e_path: List[float]
    evidence_grade: EvidenceGrade
    baselines: Dict[str, Optional[float]] = field(default_factory=dict)
    steps: pd.DataFrame = field(default_factory=pd.DataFrame, repr=False)
    n_active: int = 0

    def summary_table(self):
        """One-row table: e-value, grade, anytime p-value and baseline p-values."""
        row = {"n": len(self.e_path), "n_active": self.n_active, "e_value": format_evalue(self.final_e),
               "evidence": self.evidence_grade.value, "anytime_p": f"{self.anytime_p:.6g}",
               "stop_time": "" if self.stop_time is None else self.stop_time}
        for name, p_value in self.baselines.items():
            row[f"p_{name}"] = "NA" if p_value is None else f"{p_value:.6g}"
        return pd.DataFrame([row])


def _step_pairs(config, rule, alt, record, history):
    """One-period e-values of every alternative component for one step."""
    etas = resolve_alternative(alt, record, history)
    etas = etas if isinstance(etas, tuple) else (etas,)
    pairs = []
    for eta in etas:
        if record.c == 0:
            pairs.append(NEUTRAL)
            continue
        try:
            if config.all_scores:
                e0 = grow_all_scores(record.p, record.q, eta, 0)
                e1 = grow_all_scores(record.p, record.q, eta, 1)
                pairs.append(OnePeriodEValue(e0, e1, 1.0 - min(e0, e1)))
            else:
                pairs.append(one_period_evalue(rule, record.p, record.q, grow_lambda(rule, record.p, record.q, eta)))
        except _NEUTRAL_STEP_ERRORS as e:
            logger.debug("Step t=%d gets the neutral e-value: %s", record.t, e)
            pairs.append(NEUTRAL)
    return pairs


def _run_baselines(config, rule, observed):
    results = {}
    if not config.baselines:
        return results
    series = ScoreDiffSeries.from_forecasts(
        rule, [r.p for r in observed], [r.q for r in observed], [r.y for r in observed],
        h=config.h, c=[r.c for r in observed],
    )
    for test in BaselineTest:
        try:
            results[test.value] = run_baseline(test, series, config.bandwidth)
        except NumericError as e:
            logger.warning("Warning: %s skipped: %s", test.value, e)
            results[test.value] = None
    return results


def run_evaluate(config, records=None):
    """
    Runs the sequential e-process over the input stream and the configured
    baselines on the same score differences.
    """
    if records is None:
        records = parse_input(config.input, config.condition_column)
    if config.condition_threshold is not None:
        records = apply_condition_threshold(records, config.condition_threshold)
    rule = config.scoring_rule()
    alt = config.alternative_spec()
    h, alpha = config.h, config.level
    if alt.kind is AlternativeKind.ORACLE and alt.column == "pi" and any(r.pi is None for r in records):
        raise MissingColumnError(["pi"])

    observed = [r for r in records if r.y is not None]
    n_components = len(alt.components())
    proc = MixtureEProcess(h, n_components, rule) if n_components > 1 else EProcess(h, rule)
    committed = {}
    stopped = False
    stop_time = None

    def commit(j):
        rec = records[j]
        pairs = [NEUTRAL] * n_components if stopped else _step_pairs(config, rule, alt, rec, records[:max(j - h + 1, 0)])
        committed[j] = pairs
        if n_components > 1:
            proc.commit_pairs(rec, pairs)
        else:
            proc.commit_pair(rec, pairs[0])

    for j in range(min(h, len(records))):
        commit(j)

    rows = []
    for i, rec in enumerate(observed):
        e_t = proc.observe(rec.y, rec.t)
        row = {"t": rec.t, "y": rec.y, "p": rec.p, "q": rec.q, "c": rec.c, "h": h}
        pairs = committed.pop(i)
        if n_components == 1:
            row.update({"e0": pairs[0].e0, "e1": pairs[0].e1, "lambda": pairs[0].lam})
        else:
            for m, pair in enumerate(pairs, start=1):
                row.update({f"e0_{m}": pair.e0, f"e1_{m}": pair.e1, f"lambda_{m}": pair.lam})
        row.update({"e_t": e_t, "anytime_p": proc.p_anytime})
        rows.append(row)

        if config.stopping == "stop_at_alpha" and not stopped:
            decision = stop_rule(proc, alpha, len(observed))
            if decision is Decision.STOP_REJECT:
                stopped = True
                stop_time = rec.t
                logger.info("Rejected at t=%d with e=%s", rec.t, format_evalue(e_t))
        if i + h < len(records):
            commit(i + h)

    final_e = proc.e_current
    report = TestReport(
        final_e=final_e,
        anytime_p=proc.p_anytime,
        stop_time=stop_time,
        e_path=list(proc.e_path),
        evidence_grade=grade_evidence(final_e),
        baselines=_run_baselines(config, rule, observed),
        steps=pd.DataFrame(rows),
        n_active=sum(r.c for r in observed),
    )
    logger.info("Evaluated %d steps (%d active): e=%s", len(observed), report.n_active, format_evalue(final_e))
    return report


# ---------------------------------------------------------------- reports

def write_table(df, path):
    """CSV with full float precision, or Excel (.xlsx) through openpyxl."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if str(path).lower().endswith(".xlsx"):
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            df.to_excel(writer, index=False)
    else:
        df.to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %d rows to %s", len(df), path)


def write_steps(report, path):
    write_table(report.steps, path)


def _pair_columns(columns):
    if {"e0", "e1"} <= set(columns):
        return [("e0", "e1")]
    pairs = []
    m = 1
    while f"e0_{m}" in columns and f"e1_{m}" in columns:
        pairs.append((f"e0_{m}", f"e1_{m}"))
        m += 1
    if not pairs:
        raise MissingColumnError(["e0", "e1"])
    return pairs


def _report_lag(df, lag):
    if "h" not in df.columns:
        return 1 if lag is None else lag
    recorded = set(int(v) for v in df["h"].dropna())
    if len(recorded) != 1:
        raise ParseError(2, "h", f"expected one lag for the whole report, found {sorted(recorded)}")
    h = recorded.pop()
    if lag is not None and lag != h:
        raise ConfigError(f"Report was written with lag h={h}, but --lag {lag} was given.")
    return h


def replay_steps(path, lag=None):
    """
    Re-reduces a per-step report (one-period e-values and outcomes) to its
    e-value path, so archived results can be extended with newer data.
    The lag comes from the report's h column; `lag` must agree with it.
    Returns (final_e, e_path).
    """
    if not os.path.exists(path):
        raise InputError(f"Per-step report not found: {path}")
    if str(path).lower().endswith(".xlsx"):
        df = pd.read_excel(path, engine="openpyxl")
    else:
        df = pd.read_csv(path)
    df.columns = [str(c).strip().lower() for c in df.columns]
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise MissingColumnError(missing)
    columns = _pair_columns(df.columns)
    lag = _report_lag(df, lag)
    proc = MixtureEProcess(lag, len(columns)) if len(columns) > 1 else EProcess(lag)

    records = []
    for i, row in enumerate(df.to_dict("records")):
        line = i + 2
        c = int(row["c"]) if "c" in df.columns else 1
        rec = ForecastRecord(t=int(row["t"]), y=_cell_binary(row["y"], line, "y"),
                             p=_cell_probability(row["p"], line, "p"),
                             q=_cell_probability(row["q"], line, "q"), c=c)
        pairs = [OnePeriodEValue(float(row[a]), float(row[b]), 1.0 - min(float(row[a]), float(row[b])))
                 for a, b in columns]
        if len(pairs) > 1:
            proc.commit_pairs(rec, pairs)
        else:
            proc.commit_pair(rec, pairs[0])
        records.append(rec)
    for rec in records:
        proc.observe(rec.y, rec.t)
    return proc.e_current, list(proc.e_path)


# ---------------------------------------------------------------- simulation

def simulation_grid(config):
    """(designs, methods) groups for simulate mode."""
    if config.preset:
        return preset_grid(config.preset, config.seed)
    rule = config.scoring_rule()
    alts = [AlternativeSpec.equispaced(k) for k in config.k] or [config.alternative_spec()]
    if config.design == "partial-info":
        if config.lag != (1,):
            raise ConfigError("The partial-information design has lag 1 only.")
        designs = [UniformPartialInfoDesign(mu, T, rule=rule, alt=alt, alpha=alpha, seed=config.seed,
                                            all_scores=config.all_scores)
                   for alt, alpha, T, mu in product(alts, config.alpha, config.T, config.mu)]
    else:
        designs = [MA4Design(theta, T, h=h, alpha=alpha, seed=config.seed, rule=rule, alt=alt,
                             all_scores=config.all_scores)
                   for alt, alpha, T, h, theta in product(alts, config.alpha, config.T, config.lag, config.theta)]
    return [(designs, list(config.methods))]


def run_simulate(config):
    tables = [run_rejection_study(designs, config.replications, methods, n_jobs=config.jobs)
              for designs, methods in simulation_grid(config)]
    return pd.concat(tables, ignore_index=True)
