import unittest
import sys
import os

import numpy as np
from scipy import integrate

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from errors import ConfigError, DegenerateIntervalError, ScoringDomainError, ZeroMassError
from scoring import (
    RuleKind,
    ScoringRule,
    elementary_score,
    has_mass,
    kappa,
    mixing_density,
    null_interval,
    score,
    score_diff,
)

NAMED_RULES = [ScoringRule.brier(), ScoringRule.logarithmic(), ScoringRule.spherical()]


def quad_kappa(rule, a, b):
    density = mixing_density(rule)
    mass, _ = integrate.quad(density, a, b, epsabs=1e-14, epsrel=1e-12)
    first, _ = integrate.quad(lambda t: t * density(t), a, b, epsabs=1e-14, epsrel=1e-12)
    return first / mass


class TestScores(unittest.TestCase):

    def test_brier_score_difference(self):
        rule = ScoringRule.brier()
        self.assertAlmostEqual(score(rule, 0.2, 0), 0.04)
        self.assertAlmostEqual(score_diff(rule, 0.2, 0.6, 0), -0.32)
        self.assertAlmostEqual(score_diff(rule, 0.2, 0.6, 1), 0.48)

    def test_logarithmic_and_spherical(self):
        self.assertAlmostEqual(score(ScoringRule.logarithmic(), 0.25, 1), -np.log(0.25))
        self.assertAlmostEqual(score(ScoringRule.logarithmic(), 0.25, 0), -np.log(0.75))
        self.assertAlmostEqual(score(ScoringRule.spherical(), 0.5, 1), 1.0 - 0.5 / np.sqrt(0.5))

    def test_log_score_rejects_certain_forecasts(self):
        with self.assertRaises(ScoringDomainError):
            score(ScoringRule.logarithmic(), 0.0, 1)

    def test_non_binary_outcome(self):
        with self.assertRaises(ScoringDomainError):
            score(ScoringRule.brier(), 0.3, 0.5)

    def test_elementary_score(self):
        self.assertAlmostEqual(elementary_score(0.5, 0.7, 0), 0.5)
        self.assertAlmostEqual(elementary_score(0.5, 0.3, 1), 0.5)
        self.assertAlmostEqual(elementary_score(0.5, 0.7, 1), 0.0)
        self.assertAlmostEqual(elementary_score(0.5, 0.3, 0), 0.0)

    def test_vectorized(self):
        p = np.array([0.1, 0.4, 0.9])
        y = np.array([0, 1, 1])
        np.testing.assert_allclose(score(ScoringRule.brier(), p, y), (p - y) ** 2)

    def test_custom_constant_density_matches_brier(self):
        rule = ScoringRule.custom(lambda t: 2.0, label="flat")
        for p in (0.1, 0.35, 0.8):
            for y in (0, 1):
                self.assertAlmostEqual(score(rule, p, y), (p - y) ** 2, places=10)
        self.assertAlmostEqual(kappa(rule, 0.2, 0.6), 0.4, places=10)

    def test_custom_density_must_be_nonnegative(self):
        with self.assertRaises(ScoringDomainError):
            ScoringRule.custom(lambda t: t - 0.5)

    def test_mixture_representation(self):
        # S(p, y) - S(q, y) = int 1{min <= theta < max} sign(p - q) (theta - y) dnu(theta)
        for rule in NAMED_RULES:
            density = mixing_density(rule)
            for p, q in ((0.2, 0.6), (0.7, 0.3), (0.05, 0.5)):
                for y in (0, 1):
                    integral, _ = integrate.quad(lambda t: (t - y) * density(t), min(p, q), max(p, q),
                                                 epsabs=1e-13, epsrel=1e-12)
                    self.assertAlmostEqual(score_diff(rule, p, q, y), np.sign(p - q) * integral, places=8,
                                           msg=f"{rule.name} p={p} q={q} y={y}")


class TestKappa(unittest.TestCase):

    def test_closed_forms_match_quadrature(self):
        grid = np.linspace(0.02, 0.98, 15)
        for rule in NAMED_RULES:
            for a in grid:
                for b in grid:
                    if a >= b:
                        continue
                    self.assertLessEqual(abs(kappa(rule, a, b) - quad_kappa(rule, a, b)), 1e-8,
                                         msg=f"{rule.name} a={a} b={b}")

    def test_brier_midpoint(self):
        self.assertAlmostEqual(kappa(ScoringRule.brier(), 0.2, 0.6), 0.4)

    def test_kappa_inside_interval(self):
        for rule in NAMED_RULES:
            k = kappa(rule, 0.3, 0.3000001)
            self.assertGreaterEqual(k, 0.3)
            self.assertLess(k, 0.3000001)

    def test_vectorized_kappa(self):
        a = np.array([0.1, 0.2])
        b = np.array([0.5, 0.9])
        np.testing.assert_allclose(kappa(ScoringRule.brier(), a, b), (a + b) / 2)

    def test_degenerate_interval(self):
        with self.assertRaises(DegenerateIntervalError):
            kappa(ScoringRule.brier(), 0.4, 0.4)

    def test_elementary_outside_interval(self):
        rule = ScoringRule.elementary(0.7)
        self.assertAlmostEqual(kappa(rule, 0.5, 0.8), 0.7)
        with self.assertRaises(ZeroMassError):
            kappa(rule, 0.1, 0.5)
        np.testing.assert_array_equal(has_mass(rule, np.array([0.5, 0.1]), np.array([0.8, 0.5])), [True, False])

    def test_domain(self):
        with self.assertRaises(ScoringDomainError):
            kappa(ScoringRule.brier(), 0.0, 0.5)


class TestNullInterval(unittest.TestCase):

    def test_orientation(self):
        rule = ScoringRule.brier()
        lower, upper = null_interval(rule, 0.2, 0.6)
        self.assertEqual(lower, 0.0)
        self.assertAlmostEqual(upper, 0.4)
        lower, upper = null_interval(rule, 0.6, 0.2)
        self.assertAlmostEqual(lower, 0.4)
        self.assertEqual(upper, 1.0)

    def test_boundary_and_inside(self):
        null = null_interval(ScoringRule.brier(), 0.2, 0.6)
        self.assertAlmostEqual(null.boundary, 0.4)
        self.assertTrue(null.strictly_inside(0.3))
        self.assertFalse(null.strictly_inside(null.boundary))
        self.assertFalse(null.contains(0.5))

    def test_equal_forecasts(self):
        with self.assertRaises(DegenerateIntervalError):
            null_interval(ScoringRule.brier(), 0.3, 0.3)


class TestRuleNames(unittest.TestCase):

    def test_from_name(self):
        self.assertIs(ScoringRule.from_name("log").kind, RuleKind.LOGARITHMIC)
        self.assertIs(ScoringRule.from_name(" Spherical ").kind, RuleKind.SPHERICAL)
        rule = ScoringRule.from_name("elementary:0.3")
        self.assertEqual(rule.theta, 0.3)
        self.assertEqual(rule.name, "elementary:0.3")

    def test_unknown_name(self):
        with self.assertRaises(ConfigError):
            ScoringRule.from_name("crps")
        with self.assertRaises(ConfigError):
            ScoringRule.from_name("elementary:abc")


if __name__ == '__main__':
    unittest.main()
