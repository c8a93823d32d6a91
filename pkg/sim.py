"""
Monte Carlo designs and the rejection-rate study runner.

Two designs are available:

* partial information: p_t, q_t ~ Unif(0, 1) independently and the event
  probability moves from p_t (mu = 0) through the null boundary (mu = 0.5) to
  q_t (mu = 1);
* MA(4) time series: Y_t = 1{Z_t > 0}, Z_t = eps_t + theta * sum_{j=1..4} eps_{t-j},
  comparing the ideal lag-h forecast q with the ideal lag-(h+1) forecast p.

Every replication draws from its own counter-based Philox stream seeded with
(seed, replication index), so tables are reproducible and all methods within a
replication see the same data.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import ClassVar

import numpy as np
import pandas as pd
from scipy import stats

from baselines import BaselineTest, ScoreDiffSeries, equispaced_stops, optional_stop_test, run_baseline
from errors import ConfigError, NumericError
from evalue import AlternativeSpec, all_scores_pairs, alternative_array, grow_pairs
from scoring import RuleKind, ScoringRule, has_mass, kappa
from sequential import ForecastRecord, e_path_from_factors, first_rejection, inflation_path

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "philox"
PROB_FLOOR = 1e-12

E_METHODS = ("e_stopped", "e_unstopped")
P_METHODS = ("t_test", "wilcoxon", "dm_test")
OPTIONAL_STOP_PREFIX = "t_test_optional_stop:"

MU_GRID = tuple(round(0.1 * i, 1) for i in range(11))


def replication_rng(seed, replication_index):
    """Philox generator for one replication; draws within it follow a fixed order."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replication_index)])))


@dataclass(frozen=True)
class UniformPartialInfoDesign:
    mu: float
    T: int
    rule: ScoringRule = field(default_factory=ScoringRule.brier)
    alt: AlternativeSpec = field(default_factory=lambda: AlternativeSpec.equispaced(1))
    alpha: float = 0.05
    seed: int = 0
    all_scores: bool = False

    # Forecasts target the next outcome only.
    h: ClassVar[int] = 1

    def __post_init__(self):
        if not 0.0 <= self.mu <= 1.0:
            raise ConfigError(f"mu must lie in [0, 1], got {self.mu}.")
        if self.T < 2:
            raise ConfigError(f"Horizon T must be at least 2, got {self.T}.")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}.")

    def params(self):
        return {"design": "partial-info", "mu": self.mu, "theta_ma": np.nan, "T": self.T, "h": 1,
                "rule": self.rule.name, "alternative": self.alt.label, "all_scores": self.all_scores,
                "alpha": self.alpha}


@dataclass(frozen=True)
class MA4Design:
    theta_ma: float
    T: int
    h: int = 1
    alpha: float = 0.05
    seed: int = 0
    rule: ScoringRule = field(default_factory=ScoringRule.brier)
    alt: AlternativeSpec = field(default_factory=AlternativeSpec.forecast_q)
    all_scores: bool = False

    def __post_init__(self):
        if self.h not in (1, 2, 3):
            raise ConfigError(f"The MA(4) design compares lags 1 to 3, got h={self.h}.")
        if self.T < 2:
            raise ConfigError(f"Horizon T must be at least 2, got {self.T}.")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}.")

    def params(self):
        return {"design": "ma4", "mu": np.nan, "theta_ma": self.theta_ma, "T": self.T, "h": self.h,
                "rule": self.rule.name, "alternative": self.alt.label, "all_scores": self.all_scores,
                "alpha": self.alpha}


def partial_info_probability(rule, mu, p, q):
    """
    Event probability for the partial-information design. For the Brier score
    this is mu*q + (1-mu)*p; for other rules it interpolates linearly through
    p (mu=0), the null boundary kappa (mu=0.5) and q (mu=1).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if rule.kind is RuleKind.BRIER:
        return mu * q + (1.0 - mu) * p
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    r = (p + q) / 2.0
    usable = (p != q) & has_mass(rule, lo, hi)
    if np.any(usable):
        r[usable] = kappa(rule, lo[usable], hi[usable])
    if mu <= 0.5:
        return p + (mu / 0.5) * (r - p)
    return r + ((mu - 0.5) / 0.5) * (q - r)


def _uniform_arrays(design, replication_index):
    rng = replication_rng(design.seed, replication_index)
    p = np.clip(rng.random(design.T), PROB_FLOOR, 1.0 - PROB_FLOOR)
    q = np.clip(rng.random(design.T), PROB_FLOOR, 1.0 - PROB_FLOOR)
    u = rng.random(design.T)
    pi = partial_info_probability(design.rule, design.mu, p, q)
    y = (u < pi).astype(int)
    return {"p": p, "q": q, "pi": pi, "y": y, "c": np.ones(design.T, dtype=int)}


def ma4_forecast(eps, theta_ma, lag, t_index):
    """
    Ideal lag-`lag` probability of Z_t > 0 given the innovations eps_{t-j},
    j = lag..4: Phi(theta * sum eps_{t-j} / sqrt(1 + (lag-1) theta^2)).
    """
    known = theta_ma * sum(eps[t_index - j] for j in range(lag, 5))
    scale = math.sqrt(1.0 + (lag - 1) * theta_ma ** 2)
    return stats.norm.cdf(known / scale)


def _ma4_arrays(design, replication_index):
    rng = replication_rng(design.seed, replication_index)
    eps = rng.standard_normal(design.T + 4)
    t_index = np.arange(4, design.T + 4)
    z = eps[t_index] + design.theta_ma * sum(eps[t_index - j] for j in range(1, 5))
    q = np.clip(ma4_forecast(eps, design.theta_ma, design.h, t_index), PROB_FLOOR, 1.0 - PROB_FLOOR)
    p = np.clip(ma4_forecast(eps, design.theta_ma, design.h + 1, t_index), PROB_FLOOR, 1.0 - PROB_FLOOR)
    y = (z > 0).astype(int)
    c = (p != q).astype(int)
    return {"p": p, "q": q, "pi": q.copy(), "y": y, "c": c}


def stream_arrays(design, replication_index):
    if isinstance(design, MA4Design):
        return _ma4_arrays(design, replication_index)
    return _uniform_arrays(design, replication_index)


def _records(arrays):
    return [
        ForecastRecord(t=i + 1, y=int(arrays["y"][i]), p=float(arrays["p"][i]), q=float(arrays["q"][i]),
                       c=int(arrays["c"][i]), pi=float(arrays["pi"][i]))
        for i in range(arrays["y"].size)
    ]


def gen_uniform_partial_info(design, replication_index):
    return _records(_uniform_arrays(design, replication_index))


def gen_ma4(design, replication_index):
    return _records(_ma4_arrays(design, replication_index))


def e_value_path(design, arrays):
    """
    e_t path and stopping inflation for one replication; k-mixtures average
    the component paths and take the largest component inflation.
    """
    p, q, y, c = arrays["p"], arrays["q"], arrays["y"], arrays["c"]
    paths, inflations = [], []
    for comp in design.alt.components():
        eta = alternative_array(comp, p, q, arrays.get("pi"))
        if design.all_scores:
            e0, e1, _ = all_scores_pairs(p, q, eta, active=c == 1)
        else:
            e0, e1, _ = grow_pairs(design.rule, p, q, eta, active=c == 1)
        paths.append(e_path_from_factors(np.where(y == 1, e1, e0), design.h))
        inflations.append(inflation_path(np.minimum(e0, e1), design.h))
    return np.mean(paths, axis=0), np.max(inflations, axis=0)


def parse_method(method):
    if method in E_METHODS or method in P_METHODS:
        return method, None
    if method.startswith(OPTIONAL_STOP_PREFIX):
        try:
            n_stops = int(method[len(OPTIONAL_STOP_PREFIX):])
        except ValueError:
            raise ConfigError(f"Invalid number of stops in method '{method}'.")
        if n_stops < 0:
            raise ConfigError(f"Number of stops must be nonnegative in '{method}'.")
        return OPTIONAL_STOP_PREFIX, n_stops
    raise ConfigError(
        f"Unknown method '{method}'. Use e_stopped, e_unstopped, t_test, wilcoxon, dm_test "
        f"or {OPTIONAL_STOP_PREFIX}<n>."
    )


def _p_value_or_none(test, series, bandwidth=None):
    try:
        return run_baseline(test, series, bandwidth)
    except NumericError as e:
        logger.debug("Baseline %s skipped: %s", test, e)
        return None


def replicate(design, replication_index, methods):
    """Rejection decisions of every method on one replication."""
    arrays = stream_arrays(design, replication_index)
    decisions = {}
    if any(m in E_METHODS for m in methods):
        e_path, inflation = e_value_path(design, arrays)
        if "e_unstopped" in methods:
            decisions["e_unstopped"] = bool(e_path[-1] >= 1.0 / design.alpha)
        if "e_stopped" in methods:
            decisions["e_stopped"] = first_rejection(e_path, design.alpha, inflation) is not None

    series = ScoreDiffSeries.from_forecasts(design.rule, arrays["p"], arrays["q"], arrays["y"],
                                            h=design.h, c=arrays["c"])
    for method in methods:
        kind, n_stops = parse_method(method)
        if kind in E_METHODS:
            continue
        if kind in P_METHODS:
            p_value = _p_value_or_none(BaselineTest(kind), series)
            decisions[method] = p_value is not None and p_value <= design.alpha
        else:
            try:
                result = optional_stop_test(series, BaselineTest.T_TEST, equispaced_stops(len(series), n_stops),
                                            design.alpha)
                decisions[method] = result.reject
            except NumericError as e:
                logger.debug("Optional-stop t-test skipped: %s", e)
                decisions[method] = False
    return decisions


def _run_chunk(design, methods, start, stop):
    out = np.zeros((stop - start, len(methods)), dtype=bool)
    for i, r in enumerate(range(start, stop)):
        decisions = replicate(design, r, methods)
        out[i] = [decisions[m] for m in methods]
    return out


def run_rejection_study(design_grid, R, methods, n_jobs=1, chunk_size=250):
    """
    Rejection rate and Monte Carlo standard error of every method at every
    design. Identical (seed, grid) gives an identical table for any n_jobs.
    """
    if R < 1:
        raise ConfigError(f"Number of replications must be at least 1, got {R}.")
    methods = list(methods)
    for m in methods:
        parse_method(m)
    designs = list(design_grid)
    tasks = [(d, start, min(start + chunk_size, R)) for d in designs for start in range(0, R, chunk_size)]
    logger.info("Running %d designs x %d replications (%d chunks, %d jobs)", len(designs), R, len(tasks), n_jobs)

    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_run_chunk, d, methods, a, b) for d, a, b in tasks]
            chunks = [f.result() for f in futures]
    else:
        chunks = [_run_chunk(d, methods, a, b) for d, a, b in tasks]

    rows = []
    per_design = len(range(0, R, chunk_size))
    for i, design in enumerate(designs):
        hits = np.concatenate(chunks[i * per_design:(i + 1) * per_design], axis=0)
        for j, method in enumerate(methods):
            rate = float(hits[:, j].mean())
            rows.append({**design.params(), "method": method, "rate": rate,
                         "stderr": math.sqrt(rate * (1.0 - rate) / R), "R": R,
                         "seed": design.seed, "rng": RNG_ALGORITHM})
        logger.info("Design %d/%d done: %s", i + 1, len(designs), design.params())
    return pd.DataFrame(rows)


PRESETS = ("partial-info", "partial-info-sweep", "ma4", "ma4-sweep")
_RULES = ("brier", "spherical", "logarithmic")
_OPTIONAL_STOPS = tuple(f"{OPTIONAL_STOP_PREFIX}{n}" for n in (1, 3, 5))


def preset_grid(name, seed=0):
    """
    Named design grids as a list of (designs, methods) groups; methods that do
    not depend on the alternative run only once per design point.
    """
    if name == "partial-info":
        base = [UniformPartialInfoDesign(mu, 600, alt=AlternativeSpec.equispaced(1), seed=seed) for mu in MU_GRID]
        alts = [UniformPartialInfoDesign(mu, 600, alt=alt, seed=seed)
                for alt in (AlternativeSpec.truth(), AlternativeSpec.forecast_q(), AlternativeSpec.equispaced(5))
                for mu in MU_GRID]
        return [(base, ["e_stopped", "e_unstopped", "t_test", *_OPTIONAL_STOPS]),
                (alts, ["e_stopped", "e_unstopped"])]
    if name == "partial-info-sweep":
        alphas, horizons = (0.001, 0.01, 0.05), (150, 300, 600, 1200, 2400)
        by_rule = [UniformPartialInfoDesign(mu, T, rule=ScoringRule.from_name(rule), alpha=alpha, seed=seed)
                   for rule, alpha, T, mu in product(_RULES, alphas, horizons, MU_GRID)]
        alternatives = (AlternativeSpec.truth(), AlternativeSpec.forecast_q(),
                        AlternativeSpec.equispaced(3), AlternativeSpec.equispaced(5))
        by_alt = [UniformPartialInfoDesign(mu, T, alt=alt, alpha=alpha, seed=seed)
                  for alt, alpha, T, mu in product(alternatives, alphas, horizons, MU_GRID)]
        return [(by_rule, ["e_stopped", "t_test", "wilcoxon", *_OPTIONAL_STOPS]),
                (by_alt, ["e_stopped"])]
    if name == "ma4":
        designs = [MA4Design(theta, T, h=h, seed=seed)
                   for T, h, theta in product((300, 600, 1200), (1, 2, 3), (0.25, 0.5, 0.75, 1.0))]
        return [(designs, ["e_stopped", "dm_test"])]
    if name == "ma4-sweep":
        designs = [MA4Design(theta, T, h=h, alpha=alpha, rule=ScoringRule.from_name(rule), seed=seed)
                   for rule, alpha, T, h, theta in product(_RULES, (0.001, 0.01, 0.05), (300, 600, 1200, 2400),
                                                           (1, 2, 3), (0.25, 0.5, 0.75, 1.0))]
        return [(designs, ["e_stopped", "dm_test"])]
    raise ConfigError(f"Unknown preset '{name}'. Available presets: {', '.join(PRESETS)}.")
