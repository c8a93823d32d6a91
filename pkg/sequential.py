"""
Sequential e-processes for forecasts issued h steps ahead.

Step t refers to the outcome Y_t and the forecasts p_t, q_t targeting it,
which were issued h steps earlier. The one-period e-value of a step is frozen
when the forecasts are issued (`commit_step`) and multiplied in once the
outcome arrives (`observe`). Steps are split into h offset classes by t mod h;
each class accumulates a product supermartingale M^[k] and the e-process is
their average,

    e_t = (1/h) * sum_k M^[k]_t.

At wall time t, after observing Y_t, the steps t+1, ..., t+h-1 are committed
but unresolved. Stopping at t is safe at level alpha only if e_t beats 1/alpha
inflated by the worst case of those pending steps.
"""
import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from errors import ConfigError, LagMismatchError, OrderingError, ScoringDomainError, TooFewObservationsError
from evalue import NEUTRAL, one_period_evalue

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForecastRecord:
    """
    One step: outcome y of the event at time t (None while pending), the two
    forecasts for it, and the condition flag c. `pi` is the true event
    probability when known (simulations).
    """

    t: int
    y: Optional[int]
    p: float
    q: float
    c: int = 1
    pi: Optional[float] = None

    def __post_init__(self):
        if not (0.0 < self.p < 1.0 and 0.0 < self.q < 1.0):
            raise ScoringDomainError(f"Forecasts at t={self.t} must lie in (0, 1), got p={self.p}, q={self.q}.")
        if self.c not in (0, 1):
            raise ScoringDomainError(f"Condition flag at t={self.t} must be 0 or 1, got {self.c}.")
        if self.y not in (0, 1, None):
            raise ScoringDomainError(f"Outcome at t={self.t} must be 0 or 1, got {self.y}.")


class Decision(str, Enum):
    CONTINUE = "continue"
    STOP_REJECT = "stop_reject"
    STOP_HORIZON = "stop_horizon"


class EProcess:
    """
    Lag-h e-process. Single writer: commits and observations must arrive in
    strictly increasing, contiguous time order.
    """

    def __init__(self, h=1, rule=None):
        if int(h) != h or h < 1:
            raise ConfigError(f"Lag h must be a positive integer, got {h}.")
        self.h = int(h)
        self.rule = rule
        self._log_m = np.zeros(self.h)
        self._dead = np.zeros(self.h, dtype=bool)
        self._pending = deque()
        self._last_committed = None
        self.last_observed = None
        self.history = []
        self.e_path = []
        self.e_current = 1.0
        self.log_e_current = 0.0
        self.p_anytime = 1.0

    @property
    def n_observed(self):
        return len(self.e_path)

    @property
    def offset_products(self):
        """M^[k] indexed by t mod h; exactly 0 once a factor of 0 has been hit."""
        with np.errstate(over="ignore"):
            return np.where(self._dead, 0.0, np.exp(self._log_m))

    @property
    def pending(self):
        return list(self._pending)

    def commit_step(self, rec, lam):
        """Freezes the one-period e-value with parameter lam for step rec.t; lam is forced to 0 when c = 0."""
        if rec.c == 0 or lam == 0.0:
            pair = NEUTRAL
        else:
            if self.rule is None:
                raise ConfigError("commit_step needs an EProcess built with a scoring rule.")
            pair = one_period_evalue(self.rule, rec.p, rec.q, lam)
        self.commit_pair(rec, pair)

    def commit_pair(self, rec, pair):
        if self._last_committed is not None and rec.t != self._last_committed + 1:
            raise OrderingError(
                f"Step t={rec.t} committed after t={self._last_committed}; time indices must be contiguous."
            )
        if pair.e0 < 0 or pair.e1 < 0:
            raise ScoringDomainError(f"E-values must be nonnegative, got ({pair.e0}, {pair.e1}).")
        if rec.c == 0:
            pair = NEUTRAL
        self._pending.append((rec.t, pair))
        self._last_committed = rec.t

    def observe(self, y, t=None):
        """Resolves the oldest committed step with outcome y and returns the new e_t."""
        if not self._pending:
            raise OrderingError("No committed step is waiting for an outcome.")
        step_t, pair = self._pending[0]
        if t is not None and t != step_t:
            raise OrderingError(f"Outcome for t={t} arrived but step t={step_t} is due.")
        if y not in (0, 1):
            raise ScoringDomainError(f"Outcome at t={step_t} must be 0 or 1, got {y}.")
        self._pending.popleft()

        factor = pair(y)
        k = step_t % self.h
        if factor == 0.0:
            self._dead[k] = True
        else:
            self._log_m[k] += math.log(factor)
        self.history.append((step_t, pair, y))
        self.last_observed = step_t

        alive = ~self._dead
        if np.any(alive):
            self.log_e_current = float(logsumexp(self._log_m[alive]) - math.log(self.h))
            self.e_current = math.exp(self.log_e_current) if self.log_e_current < 709.0 else math.inf
        else:
            self.log_e_current = -math.inf
            self.e_current = 0.0
        self.e_path.append(self.e_current)

        bound = self.inflation() / self.e_current if self.e_current > 0 else math.inf
        self.p_anytime = min(self.p_anytime, bound, 1.0)
        return self.e_current

    def inflation(self):
        """max over committed steps t+1..t+h-1 of 1 / (worst-case one-period e-value)."""
        if self.last_observed is None:
            return 1.0
        horizon = self.last_observed + self.h - 1
        factor = 1.0
        for step_t, pair in self._pending:
            if step_t > horizon:
                break
            if pair.worst == 0.0:
                return math.inf
            factor = max(factor, 1.0 / pair.worst)
        return factor

    def recompute_offset_products(self):
        """Offset products rebuilt from the resolved history, for consistency checks."""
        products = np.ones(self.h)
        for step_t, pair, y in self.history:
            products[step_t % self.h] *= pair(y)
        return products


class MixtureEProcess:
    """Average of component e-processes sharing outcomes (k-mixture alternatives)."""

    def __init__(self, h, n_components, rule=None):
        if n_components < 1:
            raise ConfigError("A mixture needs at least one component.")
        self.components = [EProcess(h, rule) for _ in range(n_components)]
        self.h = self.components[0].h
        self.e_path = []
        self.e_current = 1.0
        self.p_anytime = 1.0

    @property
    def n_observed(self):
        return len(self.e_path)

    @property
    def last_observed(self):
        return self.components[0].last_observed

    def commit_pairs(self, rec, pairs):
        if len(pairs) != len(self.components):
            raise ConfigError(f"Expected {len(self.components)} pairs, got {len(pairs)}.")
        for proc, pair in zip(self.components, pairs):
            proc.commit_pair(rec, pair)

    def observe(self, y, t=None):
        self.e_current = merge_average([proc.observe(y, t) for proc in self.components])
        self.e_path.append(self.e_current)
        bound = self.inflation() / self.e_current if self.e_current > 0 else math.inf
        self.p_anytime = min(self.p_anytime, bound, 1.0)
        return self.e_current

    def inflation(self):
        return max(proc.inflation() for proc in self.components)


def stop_rule_lag1(proc, alpha, T_max):
    if proc.h != 1:
        raise LagMismatchError(f"stop_rule_lag1 needs lag 1, the process has lag {proc.h}.")
    if not proc.e_path:
        return Decision.CONTINUE
    if proc.e_current >= 1.0 / alpha:
        return Decision.STOP_REJECT
    if proc.n_observed >= T_max:
        return Decision.STOP_HORIZON
    return Decision.CONTINUE


def stop_rule_lag_h(proc, alpha, T_max):
    """
    Rejects once e_t reaches 1/alpha inflated by the pending steps' worst cases.
    Stopping then means committing only neutral steps; after the pending steps
    resolve, the e-value is at least 1/alpha whatever the outcomes.
    """
    if proc.h < 2:
        raise LagMismatchError("stop_rule_lag_h needs lag h >= 2; use stop_rule_lag1.")
    if not proc.e_path:
        return Decision.CONTINUE
    if proc.e_current >= proc.inflation() / alpha:
        return Decision.STOP_REJECT
    if proc.n_observed >= T_max:
        return Decision.STOP_HORIZON
    return Decision.CONTINUE


def stop_rule(proc, alpha, T_max):
    """Dispatches on the lag of the process."""
    if proc.h == 1:
        return stop_rule_lag1(proc, alpha, T_max)
    return stop_rule_lag_h(proc, alpha, T_max)


def anytime_p(proc):
    return proc.p_anytime


def merge_average(evalues):
    values = list(evalues)
    if not values:
        raise TooFewObservationsError("Cannot average an empty list of e-values.")
    return float(np.mean(values))


def e_path_from_factors(factors, h=1):
    """
    e_t for every t of a stream from its realized one-period e-values, with
    the same offset classes as EProcess (position mod h).
    """
    f = np.asarray(factors, dtype=float)
    with np.errstate(divide="ignore"):
        lf = np.log(f)
    offsets = np.arange(f.size) % h
    log_m = np.stack([np.cumsum(np.where(offsets == k, lf, 0.0)) for k in range(h)])
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp(logsumexp(log_m, axis=0) - math.log(h))


def inflation_path(worst, h=1):
    """Per-position stopping inflation: max of 1/worst over the next h-1 positions."""
    worst = np.asarray(worst, dtype=float)
    with np.errstate(divide="ignore"):
        inv = 1.0 / worst
    out = np.ones(worst.size)
    for d in range(1, h):
        shifted = np.ones(worst.size)
        shifted[: worst.size - d] = inv[d:]
        out = np.maximum(out, shifted)
    return out


def first_rejection(e_path, alpha, inflation=None):
    """Index of the first t with e_t >= inflation_t / alpha, or None."""
    e_path = np.asarray(e_path, dtype=float)
    threshold = (1.0 if inflation is None else np.asarray(inflation, dtype=float)) / alpha
    hits = np.flatnonzero(e_path >= threshold)
    return int(hits[0]) if hits.size else None


def anytime_p_path(e_path, inflation=None):
    """Running anytime-valid p-values for a whole e-path."""
    e_path = np.asarray(e_path, dtype=float)
    infl = np.ones(e_path.size) if inflation is None else np.asarray(inflation, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        bounds = np.where(e_path > 0, infl / e_path, np.inf)
    return np.minimum(np.minimum.accumulate(bounds), 1.0)
