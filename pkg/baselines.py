"""
Classical p-value tests on score differences d_t = S(p_t, y_t) - S(q_t, y_t).

All tests are one-sided: small p-values are evidence that q outperforms p
(positive mean score difference). None of them is valid under optional
stopping; `optional_stop_test` exists to show how far the rejection rate
inflates when they are used that way.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import List, NamedTuple, Optional

import numpy as np
from scipy import stats
from statsmodels.stats.sandwich_covariance import S_hac_simple, weights_bartlett

from errors import ConfigError, DegenerateVarianceError, ScoringDomainError, TooFewObservationsError
from scoring import score_diff

logger = logging.getLogger(__name__)

WILCOXON_EXACT_MAX_N = 25
DM_MIN_LENGTH = 10


@dataclass(frozen=True)
class ScoreDiffSeries:
    values: np.ndarray
    h: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(values)):
            raise ScoringDomainError("Score differences must be finite.")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_forecasts(cls, rule, p, q, y, h=1, c=None):
        """Score differences of the steps with c = 1 (all steps when c is None)."""
        d = np.atleast_1d(score_diff(rule, np.asarray(p, dtype=float), np.asarray(q, dtype=float), np.asarray(y)))
        if c is not None:
            d = d[np.asarray(c) == 1]
        return cls(d, h)

    def __len__(self):
        return self.values.size

    def head(self, n):
        return ScoreDiffSeries(self.values[:n], self.h)


class BaselineTest(str, Enum):
    T_TEST = "t_test"
    WILCOXON = "wilcoxon"
    DM = "dm_test"


def t_test_one_sided(series):
    d = series.values
    if d.size < 2:
        raise TooFewObservationsError("The t-test needs at least 2 score differences.")
    if np.var(d, ddof=1) == 0.0:
        raise DegenerateVarianceError("Score differences have zero sample variance.")
    return float(stats.ttest_1samp(d, 0.0, alternative="greater").pvalue)


def _exact_signed_rank_pvalue(d):
    """
    P(W+ >= observed) under random signs, with midranks for tied magnitudes.
    Doubled midranks are integers, so the null is a subset-sum count.
    """
    ranks = np.rint(2.0 * stats.rankdata(np.abs(d))).astype(int)
    counts = np.zeros(ranks.sum() + 1)
    counts[0] = 1.0
    for r in ranks:
        counts[r:] = counts[r:] + counts[:-r].copy()
    observed = ranks[d > 0].sum()
    return float(counts[observed:].sum() / 2.0 ** d.size)


def wilcoxon_one_sided(series):
    """
    Signed-rank test. Up to 25 nonzero differences the null is enumerated
    exactly, ties included; longer series use the normal approximation
    with continuity correction.
    """
    d = series.values[series.values != 0.0]
    if d.size < 5:
        raise TooFewObservationsError(
            f"Wilcoxon's test needs at least 5 nonzero score differences, got {d.size}."
        )
    if d.size <= WILCOXON_EXACT_MAX_N:
        return _exact_signed_rank_pvalue(d)
    result = stats.wilcoxon(d, alternative="greater", method="approx", correction=True)
    return float(result.pvalue)


def hac_variance(values, bandwidth):
    """Long-run variance with Bartlett weights 1 - j/(m+1), j = 1..m."""
    d = np.asarray(values, dtype=float)
    s = S_hac_simple(d - d.mean(), nlags=int(bandwidth), weights_func=weights_bartlett)
    return float(np.asarray(s).ravel()[0]) / d.size


def dm_test(series, bandwidth=None):
    """Diebold-Mariano statistic against the standard normal; default bandwidth h - 1."""
    d = series.values
    if d.size < DM_MIN_LENGTH:
        raise TooFewObservationsError(
            f"The Diebold-Mariano test needs at least {DM_MIN_LENGTH} score differences, got {d.size}."
        )
    m = max(series.h - 1, 0) if bandwidth is None else int(bandwidth)
    if m < 0:
        raise ConfigError(f"Bandwidth must be nonnegative, got {m}.")
    variance = hac_variance(d, m)
    if not variance > 0.0:
        raise DegenerateVarianceError(f"HAC variance estimate is not positive ({variance:.3g}).")
    statistic = d.mean() / math.sqrt(variance / d.size)
    return float(stats.norm.sf(statistic))


def run_baseline(test, series, bandwidth=None):
    test = BaselineTest(test)
    if test is BaselineTest.T_TEST:
        return t_test_one_sided(series)
    if test is BaselineTest.WILCOXON:
        return wilcoxon_one_sided(series)
    return dm_test(series, bandwidth)


def equispaced_stops(T, n):
    """n stop points spread evenly strictly between 1 and T."""
    return [int(math.floor(T * j / (n + 1) + 0.5)) for j in range(1, n + 1)]


class OptionalStopResult(NamedTuple):
    reject: bool
    stop_time: Optional[int]
    p_values: List[float]


def optional_stop_test(series, test, stop_points, alpha, bandwidth=None):
    """
    Looks at the p-value at every stop point and at the horizon and rejects the
    first time it falls to alpha or below. Invalid by construction.
    """
    stop_points = list(stop_points)
    if stop_points != sorted(stop_points) or (stop_points and stop_points[-1] > len(series)):
        raise ConfigError("Stop points must be sorted and within the horizon.")
    looks = [s for s in stop_points if s < len(series)] + [len(series)]
    p_values = []
    for n in looks:
        p = run_baseline(test, series.head(n), bandwidth)
        p_values.append(p)
        if p <= alpha:
            return OptionalStopResult(True, n, p_values)
    return OptionalStopResult(False, None, p_values)
