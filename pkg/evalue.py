"""
One-period e-values for testing whether forecast p dominates forecast q.

For a consistent score S and p != q, every e-value for the null "p has no
larger expected score than q" is of the form

    E_{p,q;lambda}(y) = 1 + lambda * d_{p,q}(y) / |d_{p,q}(1{p > q})|,

lambda in [0, 1]. The growth-rate optimal choice against an alternative
probability pi1 is a likelihood ratio against the null boundary kappa. Against
dominance for all scores at once, the optimal e-value is the likelihood ratio
against p itself.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import optimize

from errors import AlternativeInsideNullError, ConfigError, DegenerateIntervalError, ScoringDomainError, ZeroMassError
from scoring import has_mass, kappa, null_interval, score_diff

logger = logging.getLogger(__name__)

LAMBDA_EPS = 1e-12


@dataclass(frozen=True)
class OnePeriodEValue:
    """Values of a one-period e-value at y = 0 and y = 1, with its lambda."""

    e0: float
    e1: float
    lam: float

    def __call__(self, y):
        return self.e1 if y else self.e0

    @property
    def worst(self):
        """Value at the outcome that favours p, equal to 1 - lambda."""
        return min(self.e0, self.e1)


NEUTRAL = OnePeriodEValue(1.0, 1.0, 0.0)


def _check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        raise ScoringDomainError(f"lambda must lie in [0, 1], got {lam}.")


def _check_pi(pi1):
    if not 0.0 <= pi1 <= 1.0:
        raise ScoringDomainError(f"Alternative probability must lie in [0, 1], got {pi1}.")


def clamp_lambda(lam):
    """Keeps log e-values finite in diagnostics; never applied to reported e-values."""
    return min(max(lam, LAMBDA_EPS), 1.0 - LAMBDA_EPS)


def e_lambda(rule, p, q, lam, y):
    _check_lambda(lam)
    if y not in (0, 1):
        raise ScoringDomainError("Outcomes must be binary (0 or 1).")
    if lam == 0.0:
        return 1.0
    if p == q:
        raise DegenerateIntervalError("Forecasts p and q coincide; only lambda = 0 is defined.")
    bad = 1 if p > q else 0
    denom = abs(score_diff(rule, p, q, bad))
    if denom == 0.0:
        raise ZeroMassError("Mixing measure has no mass between the two forecasts.")
    return 1.0 + lam * score_diff(rule, p, q, y) / denom


def one_period_evalue(rule, p, q, lam):
    return OnePeriodEValue(e_lambda(rule, p, q, lam, 0), e_lambda(rule, p, q, lam, 1), float(lam))


def grow_lambda(rule, p, q, pi1):
    """
    Growth-rate optimal lambda against the alternative pi1. An alternative
    exactly on the null boundary gives lambda = 0.
    """
    _check_pi(pi1)
    null = null_interval(rule, p, q)
    if null.strictly_inside(pi1):
        raise AlternativeInsideNullError(
            f"Alternative {pi1} lies inside the null interval [{null.lower:.6g}, {null.upper:.6g}]."
        )
    if pi1 == null.boundary:
        return 0.0
    d0 = score_diff(rule, p, q, 0)
    d1 = score_diff(rule, p, q, 1)
    if p < q:
        lam = pi1 + (1.0 - pi1) * d0 / d1
    else:
        lam = (1.0 - pi1) + pi1 * d1 / d0
    return float(min(max(lam, 0.0), 1.0))


def grow_evalue(rule, p, q, pi1, y):
    _check_pi(pi1)
    null = null_interval(rule, p, q)
    if null.strictly_inside(pi1):
        raise AlternativeInsideNullError(
            f"Alternative {pi1} lies inside the null interval [{null.lower:.6g}, {null.upper:.6g}]."
        )
    k = null.boundary
    return (1.0 - pi1) / (1.0 - k) if y == 0 else pi1 / k


def grow_all_scores(p, q, pi1, y):
    """Likelihood ratio against p; valid for dominance with respect to every consistent score."""
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ScoringDomainError("Forecasts must lie in (0, 1).")
    if p == q:
        raise DegenerateIntervalError("Forecasts p and q coincide; there is nothing to compare.")
    _check_pi(pi1)
    if (p < q and not pi1 > p) or (p > q and not pi1 < p):
        raise AlternativeInsideNullError(
            f"Alternative {pi1} must lie strictly on the side of q relative to p={p}."
        )
    return (1.0 - pi1) / (1.0 - p) if y == 0 else pi1 / p


def _growth_rate(rule, p, q, lam, pi1):
    """Expected log e-value under pi1 as a function of lambda (concave, zero at lambda = 0)."""
    if lam == 0.0:
        return 0.0
    lam = clamp_lambda(lam)
    e0 = e_lambda(rule, p, q, lam, 0)
    e1 = e_lambda(rule, p, q, lam, 1)
    return (1.0 - pi1) * math.log(e0) + pi1 * math.log(e1)


def _numeric_grow_lambda(rule, p, q, pi1, grid_size=10_000):
    """Grid search refined by bounded scalar minimization; reference for grow_lambda."""
    grid = np.linspace(0.0, 1.0 - LAMBDA_EPS, grid_size)
    values = np.array([_growth_rate(rule, p, q, lam, pi1) for lam in grid])
    i = int(np.argmax(values))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid_size - 1)]
    if hi <= lo:
        return float(grid[i])
    res = optimize.minimize_scalar(
        lambda lam: -_growth_rate(rule, p, q, lam, pi1),
        bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
    )
    return float(res.x) if -res.fun >= values[i] else float(grid[i])


def grow_pairs(rule, p, q, eta, active=None):
    """
    Vectorized GROW pairs for a whole stream. Steps that are inactive, have
    p == q, carry no mixing mass, or whose alternative does not lie strictly
    outside the null get the neutral pair (1, 1) with lambda 0.

    Returns (e0, e1, lam) arrays.
    """
    p, q, eta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, q, eta)))
    active = np.ones(p.shape, dtype=bool) if active is None else np.broadcast_to(np.asarray(active, dtype=bool), p.shape)
    lo, hi = np.minimum(p, q), np.maximum(p, q)
    usable = active & (p != q)
    usable &= has_mass(rule, lo, hi)
    k = np.full(p.shape, 0.5)
    if np.any(usable):
        k[usable] = kappa(rule, lo[usable], hi[usable])
    outside = usable & np.where(p < q, eta > k, eta < k)
    e0 = np.where(outside, (1.0 - eta) / (1.0 - k), 1.0)
    e1 = np.where(outside, eta / k, 1.0)
    lam = np.where(outside, 1.0 - np.minimum(e0, e1), 0.0)
    return e0, e1, lam


def all_scores_pairs(p, q, eta, active=None):
    """Vectorized likelihood-ratio pairs against p; neutral where eta is not on q's side."""
    p, q, eta = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (p, q, eta)))
    active = np.ones(p.shape, dtype=bool) if active is None else np.broadcast_to(np.asarray(active, dtype=bool), p.shape)
    outside = active & (p != q) & np.where(p < q, eta > p, eta < p)
    safe_p = np.where(outside, p, 0.5)
    e0 = np.where(outside, (1.0 - eta) / (1.0 - safe_p), 1.0)
    e1 = np.where(outside, eta / safe_p, 1.0)
    lam = np.where(outside, 1.0 - np.minimum(e0, e1), 0.0)
    return e0, e1, lam


class AlternativeKind(str, Enum):
    FIXED = "fixed"
    CONVEX_MIXTURE = "xi"
    K_MIXTURE = "k"
    ORACLE = "oracle"


@dataclass(frozen=True)
class AlternativeSpec:
    """Rule producing the alternative probability eta_t for each step."""

    kind: AlternativeKind
    pi1: Optional[float] = None
    xi: Optional[float] = None
    xis: Tuple[float, ...] = ()
    column: Optional[str] = None
    fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind is AlternativeKind.FIXED and (self.pi1 is None or not 0.0 < self.pi1 < 1.0):
            raise ConfigError(f"Fixed alternative must lie in (0, 1), got {self.pi1}.")
        if self.kind is AlternativeKind.CONVEX_MIXTURE and (self.xi is None or not 0.0 < self.xi < 1.0):
            raise ConfigError(f"Mixture weight xi must lie in (0, 1), got {self.xi}.")
        if self.kind is AlternativeKind.K_MIXTURE:
            if not self.xis:
                raise ConfigError("A k-mixture needs at least one weight.")
            if len(set(self.xis)) != len(self.xis):
                raise ConfigError("k-mixture weights must be distinct.")
            if any(not 0.0 < xi < 1.0 for xi in self.xis):
                raise ConfigError("k-mixture weights must lie in (0, 1).")
        if self.kind is AlternativeKind.ORACLE and self.fn is None and self.column is None:
            raise ConfigError("An oracle alternative needs a function or a column.")

    @classmethod
    def fixed(cls, pi1):
        return cls(AlternativeKind.FIXED, pi1=float(pi1))

    @classmethod
    def convex_mixture(cls, xi):
        return cls(AlternativeKind.CONVEX_MIXTURE, xi=float(xi))

    @classmethod
    def k_mixture(cls, xis):
        return cls(AlternativeKind.K_MIXTURE, xis=tuple(float(x) for x in xis))

    @classmethod
    def equispaced(cls, k):
        """k equispaced weights l / (k + 1); k = 1 is the single mixture xi = 0.5."""
        if k < 1:
            raise ConfigError(f"k must be a positive integer, got {k}.")
        if k == 1:
            return cls.convex_mixture(0.5)
        return cls.k_mixture([l / (k + 1) for l in range(1, k + 1)])

    @classmethod
    def oracle(cls, fn, column=None):
        return cls(AlternativeKind.ORACLE, fn=fn, column=column)

    @classmethod
    def truth(cls):
        """eta_t = true event probability (simulations only)."""
        return cls(AlternativeKind.ORACLE, column="pi")

    @classmethod
    def forecast_q(cls):
        """eta_t = q_t."""
        return cls(AlternativeKind.ORACLE, column="q")

    @classmethod
    def from_text(cls, text):
        """Parses 'q', 'pi', 'xi:<w>', 'k:<n>' or 'fixed:<pi1>'."""
        name = str(text).strip().lower()
        try:
            if name == "q":
                return cls.forecast_q()
            if name in ("pi", "truth"):
                return cls.truth()
            if name.startswith("xi:"):
                return cls.convex_mixture(float(name[3:]))
            if name.startswith("k:"):
                return cls.equispaced(int(name[2:]))
            if name.startswith("fixed:"):
                return cls.fixed(float(name[6:]))
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"Invalid alternative '{text}': {e}")
        raise ConfigError(f"Unknown alternative '{text}'. Use q, pi, xi:<w>, k:<n> or fixed:<pi1>.")

    @property
    def label(self):
        if self.kind is AlternativeKind.FIXED:
            return f"fixed:{self.pi1:g}"
        if self.kind is AlternativeKind.CONVEX_MIXTURE:
            return f"xi:{self.xi:g}"
        if self.kind is AlternativeKind.K_MIXTURE:
            return f"k:{len(self.xis)}"
        return self.column or "oracle"

    def components(self):
        """Single-eta alternatives whose e-processes are averaged."""
        if self.kind is AlternativeKind.K_MIXTURE:
            return [AlternativeSpec.convex_mixture(xi) for xi in self.xis]
        return [self]


def _convex(xi, p, q):
    return xi * (p + q) / 2.0 + (1.0 - xi) * q


def resolve_alternative(spec, record, history=()):
    """
    Alternative probability for one step. `history` holds only records
    strictly before the current one. K-mixtures return one eta per weight.
    """
    if spec.kind is AlternativeKind.FIXED:
        return spec.pi1
    if spec.kind is AlternativeKind.CONVEX_MIXTURE:
        return _convex(spec.xi, record.p, record.q)
    if spec.kind is AlternativeKind.K_MIXTURE:
        return tuple(_convex(xi, record.p, record.q) for xi in spec.xis)
    if spec.fn is not None:
        return float(spec.fn(record, history))
    value = getattr(record, spec.column)
    if value is None:
        raise ConfigError(f"Oracle column '{spec.column}' is not available for record t={record.t}.")
    return float(value)


def alternative_array(spec, p, q, pi=None):
    """Vectorized eta for a single-component alternative over a whole stream."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if spec.kind is AlternativeKind.FIXED:
        return np.full(p.shape, spec.pi1)
    if spec.kind is AlternativeKind.CONVEX_MIXTURE:
        return _convex(spec.xi, p, q)
    if spec.kind is AlternativeKind.ORACLE and spec.column == "q":
        return q.copy()
    if spec.kind is AlternativeKind.ORACLE and spec.column == "pi":
        if pi is None:
            raise ConfigError("The true-probability alternative needs known probabilities.")
        return np.asarray(pi, dtype=float)
    raise ConfigError(f"Alternative '{spec.label}' cannot be evaluated on whole arrays.")
