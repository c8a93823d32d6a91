"""
Consistent scoring functions for binary-event probability forecasts.

Every consistent score is a mixture of elementary scores
S_theta(p, y) = (theta - y) * (1{p > theta} - 1{y > theta}) over a mixing
measure nu on (0, 1). The boundary of the null hypothesis "p scores no worse
than q in expectation" is the nu-weighted mean of theta over the interval
between the two forecasts, kappa_nu([a, b)).

Functions accept scalars or numpy arrays and return the same shape.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import integrate

from errors import (
    ConfigError,
    DegenerateIntervalError,
    ScoringDomainError,
    ZeroMassError,
)

logger = logging.getLogger(__name__)

QUAD_EPSREL = 1e-10
QUAD_EPSABS = 1e-14
QUAD_LIMIT = 200

# Fixed grid for the sanity check of custom mixing densities.
_DENSITY_CHECK_GRID = np.linspace(0.005, 0.995, 199)


class RuleKind(str, Enum):
    BRIER = "brier"
    LOGARITHMIC = "logarithmic"
    SPHERICAL = "spherical"
    ELEMENTARY = "elementary"
    CUSTOM = "custom"


@dataclass(frozen=True)
class ScoringRule:
    """A consistent scoring function, identified by its mixing measure."""

    kind: RuleKind
    theta: Optional[float] = None
    density: Optional[Callable[[float], float]] = field(default=None, compare=False, repr=False)
    label: str = ""

    def __post_init__(self):
        if self.kind is RuleKind.ELEMENTARY:
            if self.theta is None or not 0.0 < self.theta < 1.0:
                raise ScoringDomainError(f"Elementary score needs theta in (0, 1), got {self.theta}.")
        if self.kind is RuleKind.CUSTOM:
            if self.density is None:
                raise ScoringDomainError("A custom mixture needs a mixing density.")
            _check_density(self.density)

    @classmethod
    def brier(cls):
        return cls(RuleKind.BRIER)

    @classmethod
    def logarithmic(cls):
        return cls(RuleKind.LOGARITHMIC)

    @classmethod
    def spherical(cls):
        return cls(RuleKind.SPHERICAL)

    @classmethod
    def elementary(cls, theta):
        return cls(RuleKind.ELEMENTARY, theta=float(theta))

    @classmethod
    def custom(cls, density, label="custom"):
        return cls(RuleKind.CUSTOM, density=density, label=label)

    @classmethod
    def from_name(cls, text):
        """
        Parses a rule name as used in settings files and on the command line:
        'brier', 'logarithmic' (or 'log'), 'spherical', 'elementary:<theta>'.
        """
        name = str(text).strip().lower()
        if name == "brier":
            return cls.brier()
        if name in ("log", "logarithmic"):
            return cls.logarithmic()
        if name == "spherical":
            return cls.spherical()
        if name.startswith("elementary:"):
            try:
                theta = float(name.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"Invalid elementary threshold in rule '{text}'.")
            return cls.elementary(theta)
        raise ConfigError(
            f"Unknown scoring rule '{text}'. Use brier, logarithmic, spherical or elementary:<theta>."
        )

    @property
    def name(self):
        if self.kind is RuleKind.ELEMENTARY:
            return f"elementary:{self.theta:g}"
        if self.kind is RuleKind.CUSTOM:
            return self.label or "custom"
        return self.kind.value


def _check_density(density):
    try:
        values = np.array([float(density(x)) for x in _DENSITY_CHECK_GRID])
    except Exception as e:
        raise ScoringDomainError(f"Mixing density could not be evaluated: {e}")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ScoringDomainError("Mixing density must be finite and nonnegative on (0, 1).")
    mass, _ = integrate.quad(density, _DENSITY_CHECK_GRID[0], _DENSITY_CHECK_GRID[-1], limit=QUAD_LIMIT)
    if not np.isfinite(mass) or mass <= 0:
        raise ScoringDomainError("Mixing density must have positive finite mass on interior intervals.")


def mixing_density(rule):
    """Lebesgue density of the mixing measure of a named rule (None for point masses)."""
    if rule.kind is RuleKind.BRIER:
        return lambda theta: 2.0
    if rule.kind is RuleKind.LOGARITHMIC:
        return lambda theta: 1.0 / (theta * (1.0 - theta))
    if rule.kind is RuleKind.SPHERICAL:
        return lambda theta: (2.0 * theta ** 2 - 2.0 * theta + 1.0) ** -1.5
    if rule.kind is RuleKind.CUSTOM:
        return rule.density
    return None


def spherical_norm(p):
    """Euclidean norm of the probability vector (p, 1 - p)."""
    return np.sqrt(2.0 * np.square(p) - 2.0 * p + 1.0)


def _as_output(values):
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return float(values)
    return values


def _check_outcomes(y):
    y = np.asarray(y, dtype=float)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ScoringDomainError("Outcomes must be binary (0 or 1).")
    return y


def _check_probabilities(p, open_interval=False, what="p"):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ScoringDomainError(f"Forecast {what} must lie in [0, 1].")
    if open_interval and np.any((p == 0.0) | (p == 1.0)):
        raise ScoringDomainError(f"Logarithmic score is undefined at {what} in {{0, 1}}.")
    return p


def elementary_score(theta, p, y):
    """Elementary score: theta if y = 0 and p > theta; 1 - theta if y = 1 and p <= theta; else 0."""
    if not 0.0 < theta < 1.0:
        raise ScoringDomainError(f"Elementary score needs theta in (0, 1), got {theta}.")
    p = _check_probabilities(p)
    y = _check_outcomes(y)
    out = (theta - y) * ((p > theta).astype(float) - (y > theta).astype(float))
    return _as_output(out)


def _custom_score(density, p, y):
    if y == 0.0:
        if p == 0.0:
            return 0.0
        value, _ = integrate.quad(lambda t: t * density(t), 0.0, p,
                                  epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
    else:
        if p == 1.0:
            return 0.0
        value, _ = integrate.quad(lambda t: (1.0 - t) * density(t), p, 1.0,
                                  epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
    return value


def score(rule, p, y):
    p = _check_probabilities(p, open_interval=rule.kind is RuleKind.LOGARITHMIC)
    y = _check_outcomes(y)
    if rule.kind is RuleKind.BRIER:
        out = (p - y) ** 2
    elif rule.kind is RuleKind.LOGARITHMIC:
        out = -np.log(np.abs(1.0 - y - p))
    elif rule.kind is RuleKind.SPHERICAL:
        out = 1.0 - np.abs(1.0 - y - p) / spherical_norm(p)
    elif rule.kind is RuleKind.ELEMENTARY:
        out = elementary_score(rule.theta, p, y)
    else:
        p, y = np.broadcast_arrays(p, y)
        out = np.vectorize(lambda a, b: _custom_score(rule.density, a, b), otypes=[float])(p, y)
    return _as_output(out)


def score_diff(rule, p, q, y):
    """d_{p,q}(y) = S(p, y) - S(q, y); negative values favour p."""
    return _as_output(np.asarray(score(rule, p, y)) - np.asarray(score(rule, q, y)))


def _custom_kappa(density, a, b):
    mass, _ = integrate.quad(density, a, b, epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
    if mass <= 0.0:
        raise ZeroMassError(f"Mixing measure has no mass on [{a}, {b}).")
    first, _ = integrate.quad(lambda t: t * density(t), a, b,
                              epsrel=QUAD_EPSREL, epsabs=QUAD_EPSABS, limit=QUAD_LIMIT)
    return first / mass


def kappa(rule, a, b):
    """
    nu-weighted mean of theta over [a, b), the boundary of the null interval.
    Closed forms for the named rules, adaptive quadrature for custom mixtures.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a <= 0.0) or np.any(b >= 1.0):
        raise ScoringDomainError("kappa needs 0 < a < b < 1.")
    if np.any(a >= b):
        raise DegenerateIntervalError("kappa needs a < b (half-open interval [a, b)).")

    if rule.kind is RuleKind.BRIER:
        out = (a + b) / 2.0
    elif rule.kind is RuleKind.LOGARITHMIC:
        out = np.log((1.0 - a) / (1.0 - b)) / np.log(b * (1.0 - a) / (a * (1.0 - b)))
    elif rule.kind is RuleKind.SPHERICAL:
        na, nb = spherical_norm(a), spherical_norm(b)
        out = ((b - 1.0) * na - (a - 1.0) * nb) / ((2.0 * b - 1.0) * na - (2.0 * a - 1.0) * nb)
    elif rule.kind is RuleKind.ELEMENTARY:
        inside = (a <= rule.theta) & (rule.theta < b)
        if not np.all(inside):
            raise ZeroMassError(f"Point mass at theta={rule.theta} lies outside the interval.")
        out = np.full(np.broadcast(a, b).shape, rule.theta)
    else:
        a, b = np.broadcast_arrays(a, b)
        out = np.vectorize(lambda lo, hi: _custom_kappa(rule.density, lo, hi), otypes=[float])(a, b)

    # Closed forms lose a few ulps when a and b nearly coincide.
    out = np.clip(out, a, np.nextafter(b, 0.0))
    return _as_output(out)


class NullInterval(NamedTuple):
    """Closed interval of event probabilities under which p is no worse than q."""

    lower: float
    upper: float

    @property
    def boundary(self):
        return self.upper if self.lower == 0.0 else self.lower

    def contains(self, pi):
        return self.lower <= pi <= self.upper

    def strictly_inside(self, pi):
        """In the null but not on its boundary kappa."""
        return self.contains(pi) and pi != self.boundary


def null_interval(rule, p, q):
    p, q = float(p), float(q)
    if p == q:
        raise DegenerateIntervalError("Forecasts p and q coincide; there is nothing to compare.")
    if p < q:
        return NullInterval(0.0, kappa(rule, p, q))
    return NullInterval(kappa(rule, q, p), 1.0)


def has_mass(rule, a, b):
    """Mask of intervals [a, b) on which the mixing measure is positive."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if rule.kind is RuleKind.ELEMENTARY:
        return (a <= rule.theta) & (rule.theta < b)
    return np.broadcast_to(a < b, np.broadcast(a, b).shape)
