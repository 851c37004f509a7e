import os
import unittest
from fractions import Fraction
from math import comb
from unittest.mock import patch

from mpmath import mp, mpf
from pydantic import ValidationError

from gerrymander.errors import (
    ContractViolation,
    InsufficientDataError,
    PredictionUnavailable,
    RankDeficiencyError,
)
from gerrymander.series.analysis import PRECISION, SeriesSample, fit_subdominant, normalize_lattice
from gerrymander.series.diffapprox import (
    DAConfig,
    DiffApproximant,
    Prediction,
    SingularityEstimate,
    default_grid,
    extend_for_ratio_analysis,
    fit_da,
    mark_defective,
    physical_root,
    predict_coefficients,
    singularities,
    solve_exact,
    to_fraction,
)
from gerrymander.utils import fixture_path, read_bfile

FIRST_ORDER = DAConfig(order=1, degrees=[1, 1])

# configurations whose matching systems are nonsingular on the central binomials
BINOMIAL_GRID = [
    DAConfig(order=1, degrees=[1, 1], inhomogeneous=-1),
    DAConfig(order=1, degrees=[1, 1], inhomogeneous=0),
    DAConfig(order=1, degrees=[1, 1], inhomogeneous=1),
    DAConfig(order=1, degrees=[1, 2], inhomogeneous=-1),
]


def _series(values):
    return SeriesSample.from_values(values, start=0)


def _approximant(roots):
    return DiffApproximant(config=FIRST_ORDER, q=[[Fraction(0), Fraction(-1)], [Fraction(1), Fraction(-4)]], p=[],
                           singularities=[SingularityEstimate(z=complex(z)) for z in roots])


class TestConfig(unittest.TestCase):

    def test_size_and_validation(self):
        self.assertEqual(FIRST_ORDER.size, 3)
        self.assertEqual(DAConfig(order=2, degrees=[3, 3, 4], inhomogeneous=2).size, 15)
        with self.assertRaises(ValidationError):
            DAConfig(order=0, degrees=[1])
        with self.assertRaises(ValidationError):
            DAConfig(order=2, degrees=[1, 1])
        with self.assertRaises(ValidationError):
            DAConfig(order=1, degrees=[1, 1], inhomogeneous=-2)

    def test_default_grid(self):
        grid = default_grid(20)
        self.assertTrue(grid)
        self.assertEqual({cfg.order for cfg in grid}, {1, 2, 3})
        for cfg in grid:
            with self.subTest(cfg=cfg.label):
                self.assertTrue(10 <= cfg.size <= 20)
                self.assertLessEqual(max(cfg.degrees) - min(cfg.degrees), 1)

    def test_to_fraction(self):
        self.assertEqual(to_fraction(mpf(0.375)), Fraction(3, 8))
        self.assertEqual(to_fraction(mpf(12)), Fraction(12))
        self.assertEqual(to_fraction(7), Fraction(7))
        with self.assertRaises(ContractViolation):
            to_fraction("7")


class TestFit(unittest.TestCase):

    def test_simple_pole(self):
        """1/(1-2z): root 1/2 with exponent 1"""
        da = fit_da(_series([2**n for n in range(10)]), FIRST_ORDER)
        self.assertEqual(da.q, [[0, -2], [1, -2]])
        singularities(da)
        root = physical_root(da)
        self.assertAlmostEqual(root.z.real, 0.5, places=12)
        self.assertAlmostEqual(root.gamma.real, 1.0, places=10)

    def test_algebraic_singularities(self):
        cases = [
            ([comb(2 * n, n) for n in range(30)], 0.25, 0.5),
            ([(2 * n + 1) * comb(2 * n, n) for n in range(30)], 0.25, 1.5),
            ([n + 1 for n in range(30)], 1.0, 2.0),
        ]
        for values, zc, gamma in cases:
            with self.subTest(zc=zc, gamma=gamma):
                da = fit_da(_series(values), FIRST_ORDER)
                singularities(da)
                root = physical_root(da)
                self.assertLess(abs(root.z - zc), 1e-10)
                self.assertLess(abs(root.gamma - gamma), 1e-8)
                self.assertFalse(root.multiple)

    def test_two_poles(self):
        values = [(1 + 2 * (-2) ** n) // 3 for n in range(12)]
        da = fit_da(_series(values), DAConfig(order=1, degrees=[2, 2]))
        roots = sorted(e.z.real for e in singularities(da))
        self.assertAlmostEqual(roots[0], -0.5, places=12)
        self.assertAlmostEqual(roots[1], 1.0, places=12)
        self.assertEqual(da.extend(values[:5], 7), [Fraction(v) for v in values[5:]])

    def test_regenerate_reproduces_input(self):
        values = [comb(2 * n, n) for n in range(30)]
        da = fit_da(_series(values), FIRST_ORDER)
        self.assertEqual(da.regenerate(30, values), [Fraction(v) for v in values])
        self.assertEqual(da.extend(values[:10], 5), [Fraction(v) for v in values[10:15]])

    def test_no_singularity(self):
        da = fit_da(_series([3**n for n in range(10)]), DAConfig(order=1, degrees=[1, 0]))
        self.assertEqual(singularities(da), [])
        self.assertIsNone(physical_root(da))

    def test_singular_system(self):
        with self.assertRaises(RankDeficiencyError) as ctx:
            fit_da(_series([2**n for n in range(10)]), DAConfig(order=1, degrees=[2, 2]))
        self.assertEqual(ctx.exception.deficient_rows, 1)

    def test_exact_solve_over_rationals(self):
        matrix = [[Fraction(1, 2), Fraction(1, 3)], [Fraction(1, 4), Fraction(1)]]
        solution = solve_exact(matrix, [Fraction(1), Fraction(1)])
        self.assertEqual(solution, [Fraction(8, 5), Fraction(3, 5)])
        self.assertTrue(all(isinstance(v, Fraction) for v in solution))

    def test_rank_one_system(self):
        matrix = [[Fraction(k * j) for j in (1, 2, 3)] for k in (1, 2, 3)]
        with self.assertRaises(RankDeficiencyError) as ctx:
            solve_exact(matrix, [Fraction(1)] * 3)
        self.assertEqual(ctx.exception.deficient_rows, 2)


    def test_too_short(self):
        with self.assertRaises(InsufficientDataError):
            fit_da(_series([1, 2]), FIRST_ORDER)


class TestDefects(unittest.TestCase):

    def test_root_inside_consensus_radius(self):
        das = [_approximant([0.25]) for _ in range(4)] + [_approximant([0.125, 0.25]), _approximant([0.1 + 0.1j, 0.25])]
        survivors = mark_defective(das)
        self.assertEqual(len(survivors), 4)
        self.assertTrue(das[4].defective)
        self.assertTrue(das[5].defective)

    def test_outlying_physical_root(self):
        das = [_approximant([0.25]) for _ in range(19)] + [_approximant([0.26])]
        survivors = mark_defective(das)
        self.assertEqual(len(survivors), 19)
        self.assertTrue(das[-1].defective)

    def test_clean_population(self):
        das = [_approximant([0.25 + 1e-9 * i]) for i in range(6)]
        self.assertEqual(len(mark_defective(das)), 6)

    def test_missing_physical_root(self):
        das = [_approximant([0.25]), _approximant([0.25]), _approximant([-0.5])]
        self.assertEqual(len(mark_defective(das)), 2)

    @patch("builtins.print")
    def test_small_population_not_filtered(self, mock_print):
        das = [_approximant([0.25]), _approximant([0.1])]
        self.assertEqual(len(mark_defective(das)), 2)
        mock_print.assert_called_once()


class TestPrediction(unittest.TestCase):

    @patch("builtins.print")
    def test_geometric_prediction_exact(self, mock_print):
        s = _series([3**n for n in range(12)])
        predictions = predict_coefficients(s, grid=[FIRST_ORDER], count=6)
        self.assertEqual([p.index for p in predictions], list(range(12, 18)))
        for p in predictions:
            with self.subTest(index=p.index):
                self.assertEqual(p.value, 3**p.index)
                self.assertEqual(p.digits, float(PRECISION))
                self.assertEqual(p.contributors, 1)

    def test_binomial_prediction_agrees(self):
        s = _series([comb(2 * n, n) for n in range(20)])
        predictions = predict_coefficients(s, grid=BINOMIAL_GRID, count=5, threads=2)
        for p in predictions:
            with self.subTest(index=p.index):
                self.assertEqual(p.value, comb(2 * p.index, p.index))
                self.assertEqual(p.contributors, 4)
                self.assertEqual(p.std, 0.0)

    def test_extension_for_ratio_analysis(self):
        s = _series([comb(2 * n, n) for n in range(20)])
        extended = extend_for_ratio_analysis(s, 5, grid=BINOMIAL_GRID)
        self.assertEqual(len(extended), 25)
        self.assertEqual(extended.exact_count, 20)
        self.assertEqual(extended.values[-1], comb(48, 24))

    @patch("gerrymander.series.diffapprox.predict_coefficients")
    def test_extension_stops_at_poor_prediction(self, mock_predict):
        mock_predict.return_value = [
            Prediction(index=20, value=mpf(1), std=0.0, digits=9.0, contributors=5),
            Prediction(index=21, value=mpf(2), std=0.1, digits=3.0, contributors=5),
            Prediction(index=22, value=mpf(3), std=0.0, digits=9.0, contributors=5),
        ]
        extended = extend_for_ratio_analysis(_series(list(range(1, 21))), 3, min_digits=5)
        self.assertEqual(extended.indices[-1], 20)
        self.assertEqual(len(extended), 21)

    @patch("builtins.print")
    def test_normalised_lattice_extension(self, mock_print):
        """lam^(L²+dL+e) is geometric once divided by lam^(L²); extending then fitting recovers d and e"""
        lam, d, e = mpf("1.7445498"), mpf("-4.04354"), mpf(8)
        sides = range(2, 15)
        with mp.workdps(PRECISION):
            raw = SeriesSample(indices=list(sides), values=[lam ** (n * n + d * n + e) for n in sides])
        extended = extend_for_ratio_analysis(normalize_lattice(raw, lam), 20, grid=[FIRST_ORDER])
        self.assertEqual(len(extended), 33)
        self.assertEqual(extended.exact_count, 13)
        self.assertEqual(extended.indices[-1], 34)
        with mp.workdps(PRECISION):
            for n, v in zip(extended.indices[13:], extended.values[13:]):
                with self.subTest(side=n):
                    self.assertLess(abs(v / lam ** (d * n + e) - 1), mpf(10) ** -30)
        fit = fit_subdominant(extended, lam)
        self.assertEqual(fit.terms, 33)
        self.assertLess(abs(fit.d.value - float(d)), 1e-9)
        self.assertLess(abs(fit.h.value), 1e-9)
        self.assertLess(abs(fit.e.value - float(e)), 1e-6)

    def test_unavailable_when_every_fit_fails(self):

        with patch("builtins.print"):
            with self.assertRaises(PredictionUnavailable):
                predict_coefficients(_series([2**n for n in range(12)]), grid=[DAConfig(order=1, degrees=[2, 2])])

    def test_needs_enough_terms(self):
        with self.assertRaises(InsufficientDataError):
            predict_coefficients(_series([1, 2, 4, 8, 16]))

    @unittest.skipUnless(os.path.exists(fixture_path("A116485.b")), "A116485.b not bundled")
    def test_third_order_ratio_prediction(self):
        """Ratios continued from the first 17 terms against the published exact r_18 and r_39"""
        with open(fixture_path("A116485.b")) as f:
            self.assertTrue(f.readline().startswith("#"), "fixture must open with its provenance")
        reference = read_bfile(fixture_path("A116485.b"))
        s = SeriesSample(indices=reference.indices[:17], values=reference.values[:17])
        predicted = predict_coefficients(s, grid=default_grid(len(s), orders=(3,)), count=22)
        terms = list(s.values) + [p.value for p in predicted]
        # r_k is term k over term k-1, counting terms from 1
        for k, exact, bound in [(18, "10.65465504", 1e-5), (39, "12.52743256", 5e-2)]:
            with self.subTest(k=k):
                ratio = mpf(terms[k - 1]) / mpf(terms[k - 2])
                self.assertLess(abs(ratio / mpf(exact) - 1), bound)


if __name__ == "__main__":
    unittest.main()
