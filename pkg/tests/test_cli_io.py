import unittest
import sys
import os
import tempfile

import numpy as np
import pandas as pd

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from cli_io import (
    EvidenceGrade,
    RunConfig,
    apply_condition_threshold,
    format_evalue,
    grade_evidence,
    parse_input,
    replay_steps,
    run_evaluate,
    simulation_grid,
    write_steps,
    write_table,
)
from errors import ConfigError, InputError, MissingColumnError, OrderingError, ParseError
from sequential import ForecastRecord


def make_records(n=60, seed=0, lean=0.75):
    """Stream where q tracks the event probability better than p."""
    rng = np.random.default_rng(seed)
    records = []
    for t in range(1, n + 1):
        pi = rng.uniform(0.1, 0.9)
        q = float(np.clip(pi + rng.normal(0, 0.03), 0.02, 0.98))
        p = float(np.clip(pi + rng.choice([-1, 1]) * lean * 0.3, 0.02, 0.98))
        records.append(ForecastRecord(t=t, y=int(rng.uniform() < pi), p=p, q=q))
    return records


class TempDirTestCase(unittest.TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.tmp, name)
        with open(path, 'w') as f:
            f.write(text)
        return path


class TestParseInput(TempDirTestCase):

    def test_minimal_row(self):
        records = parse_input(self.write("a.csv", "t,y,p,q\n1,0,0.2,0.6\n"))
        self.assertEqual(records, [ForecastRecord(t=1, y=0, p=0.2, q=0.6, c=1)])

    def test_condition_and_pending_rows(self):
        path = self.write("b.csv", "t,y,p,q,c\n1,1,0.2,0.6,0\n2,0,0.3,0.4,1\n3,,0.5,0.6,1\n")
        records = parse_input(path)
        self.assertEqual([r.c for r in records], [0, 1, 1])
        self.assertIsNone(records[2].y)

    def test_probability_out_of_range_names_the_row(self):
        path = self.write("c.csv", "t,y,p,q\n1,0,0.2,0.6\n2,1,1.0,0.6\n")
        with self.assertRaises(ParseError) as ctx:
            parse_input(path)
        self.assertEqual(ctx.exception.row, 3)
        self.assertEqual(ctx.exception.column, "p")

    def test_not_a_number(self):
        with self.assertRaises(ParseError):
            parse_input(self.write("d.csv", "t,y,p,q\n1,0,abc,0.6\n"))

    def test_duplicate_and_unsorted_t(self):
        with self.assertRaises(OrderingError):
            parse_input(self.write("e.csv", "t,y,p,q\n1,0,0.2,0.6\n1,1,0.2,0.6\n"))
        with self.assertRaises(OrderingError):
            parse_input(self.write("f.csv", "t,y,p,q\n2,0,0.2,0.6\n1,1,0.2,0.6\n"))
        with self.assertRaises(OrderingError):
            parse_input(self.write("g.csv", "t,y,p,q\n1,0,0.2,0.6\n3,1,0.2,0.6\n"))

    def test_missing_column(self):
        with self.assertRaises(MissingColumnError) as ctx:
            parse_input(self.write("h.csv", "t,y,p\n1,0,0.2\n"))
        self.assertEqual(ctx.exception.missing, ["q"])

    def test_empty_file(self):
        with self.assertRaises(InputError):
            parse_input(self.write("i.csv", ""))
        with self.assertRaises(InputError):
            parse_input(self.write("j.csv", "t,y,p,q\n"))

    def test_outcome_after_pending_row(self):
        with self.assertRaises(ParseError):
            parse_input(self.write("k.csv", "t,y,p,q\n1,,0.2,0.6\n2,1,0.2,0.6\n"))

    def test_ragged_row_is_input_error(self):
        with self.assertRaises(InputError):
            parse_input(self.write("ragged.csv", "t,y,p,q\n1,0,0.2,0.6\n2,1,0.3,0.5,9,9\n"))

    def test_non_utf8_bytes_are_input_error(self):
        path = os.path.join(self.tmp, "latin.csv")
        with open(path, "wb") as f:
            f.write(b"\xff\xfet,y,p,q\n1,0,0.2,0.6\n")
        with self.assertRaises(InputError):
            parse_input(path)

    def test_broken_workbook_is_input_error(self):
        with self.assertRaises(InputError):
            parse_input(self.write("broken.xlsx", "not a zip archive"))

    def test_excel_input(self):
        path = os.path.join(self.tmp, "in.xlsx")
        pd.DataFrame({"t": [1, 2], "y": [0, 1], "p": [0.2, 0.3], "q": [0.6, 0.7]}).to_excel(
            path, index=False, engine="openpyxl")
        records = parse_input(path)
        self.assertEqual([r.y for r in records], [0, 1])
        self.assertAlmostEqual(records[1].q, 0.7)

    def test_condition_threshold(self):
        records = [ForecastRecord(t=1, y=0, p=0.2, q=0.4), ForecastRecord(t=2, y=1, p=0.2, q=0.6)]
        self.assertEqual([r.c for r in apply_condition_threshold(records, 0.5)], [0, 1])


class TestEvidence(unittest.TestCase):

    def test_examples(self):
        self.assertIs(grade_evidence(0.9), EvidenceGrade.NO)
        self.assertIs(grade_evidence(10), EvidenceGrade.SUBSTANTIAL)
        self.assertIs(grade_evidence(150), EvidenceGrade.DECISIVE)

    def test_boundaries_go_to_lower_bucket(self):
        self.assertIs(grade_evidence(1.0), EvidenceGrade.NO)
        self.assertIs(grade_evidence(3.16), EvidenceGrade.POOR)
        self.assertIs(grade_evidence(31.6), EvidenceGrade.STRONG)
        self.assertIs(grade_evidence(100.0), EvidenceGrade.VERY_STRONG)
        self.assertIs(grade_evidence(0.0), EvidenceGrade.NO)

    def test_monotone(self):
        order = list(EvidenceGrade)
        values = np.geomspace(0.01, 1e4, 200)
        ranks = [order.index(grade_evidence(e)) for e in values]
        self.assertEqual(ranks, sorted(ranks))

    def test_format(self):
        self.assertEqual(format_evalue(3.14159265), "3.14159")
        self.assertEqual(format_evalue(123456.789012), "123456.789012")
        self.assertEqual(format_evalue(float("inf")), "inf")


class TestRunConfig(unittest.TestCase):

    def test_defaults_and_overrides(self):
        config = RunConfig.from_settings({"input": "x.csv", "alpha": "0.01", "lag": 2, "xi": 0.5})
        self.assertEqual(config.level, 0.01)
        self.assertEqual(config.h, 2)
        self.assertEqual(config.alternative, "xi:0.5")

    def test_k_in_evaluate_mode(self):
        config = RunConfig.from_settings({"input": "x.csv", "k": 3})
        self.assertEqual(len(config.alternative_spec().xis), 3)

    def test_invalid(self):
        for settings in ({"input": "x.csv", "colour": "red"},
                         {"input": "x.csv", "rule": {"name": "brier"}},
                         {"input": "x.csv", "rule": ["brier", "log"]},
                         {"input": "x.csv", "alpha": 1.5},
                         {"input": "x.csv", "lag": 0},
                         {"input": "x.csv", "stopping": "sometimes"},
                         {"mode": "evaluate"},
                         {"input": "x.csv", "alternative": "xi:2"},
                         {"input": "x.csv", "alternative": "q", "xi": 0.5},
                         {"input": "x.csv", "xi": 0.5, "k": 3}):
            with self.assertRaises(ConfigError, msg=str(settings)):
                RunConfig.from_settings(settings)

    def test_simulate_grid(self):
        config = RunConfig.from_settings({"mode": "simulate", "design": "ma4", "theta": [0.5, 1.0], "T": 300,
                                          "lag": [1, 2], "methods": "e_stopped,dm_test"})
        designs, methods = simulation_grid(config)[0]
        self.assertEqual(len(designs), 4)
        self.assertEqual(methods, ["e_stopped", "dm_test"])
        self.assertEqual(designs[0].alt.label, "q")


class TestRunEvaluate(TempDirTestCase):

    def config(self, **kwargs):
        kwargs.setdefault("input", "memory")
        return RunConfig(**kwargs)

    def test_all_inactive_gives_no_evidence(self):
        records = [ForecastRecord(t=t, y=t % 2, p=0.2, q=0.6, c=0) for t in range(1, 11)]
        report = run_evaluate(self.config(), records)
        self.assertEqual(report.final_e, 1.0)
        self.assertIs(report.evidence_grade, EvidenceGrade.NO)
        self.assertEqual(report.n_active, 0)
        self.assertIsNone(report.baselines["t_test"])

    def test_convex_mixture_step(self):
        report = run_evaluate(self.config(alternative="xi:0.5"), [ForecastRecord(t=1, y=1, p=0.2, q=0.6)])
        row = report.steps.iloc[0]
        self.assertAlmostEqual(row["e0"], 0.5 / 0.6)
        self.assertAlmostEqual(row["e1"], 1.25)
        self.assertAlmostEqual(report.final_e, 1.25)

    def test_all_scores_with_q(self):
        records = [ForecastRecord(t=1, y=0, p=0.2, q=0.6), ForecastRecord(t=2, y=1, p=0.2, q=0.6)]
        report = run_evaluate(self.config(alternative="q", all_scores=True), records)
        np.testing.assert_allclose(report.steps["e0"], [0.5, 0.5])
        np.testing.assert_allclose(report.steps["e1"], [3.0, 3.0])
        self.assertAlmostEqual(report.final_e, 1.5)

    def test_steps_columns(self):
        report = run_evaluate(self.config(), make_records(20))
        self.assertEqual(list(report.steps.columns),
                         ["t", "y", "p", "q", "c", "h", "e0", "e1", "lambda", "e_t", "anytime_p"])
        report = run_evaluate(self.config(alternative="k:2"), make_records(20))
        self.assertIn("e1_2", report.steps.columns)

    def test_baselines_reported(self):
        report = run_evaluate(self.config(), make_records(80))
        self.assertEqual(set(report.baselines), {"t_test", "wilcoxon", "dm_test"})
        self.assertTrue(all(0.0 <= v <= 1.0 for v in report.baselines.values()))

    def test_pending_rows_are_not_observed(self):
        records = make_records(10)
        records[-1] = ForecastRecord(t=10, y=None, p=records[-1].p, q=records[-1].q)
        report = run_evaluate(self.config(lag=(2,)), records)
        self.assertEqual(len(report.e_path), 9)

    def test_stop_at_alpha_freezes_evidence(self):
        records = make_records(300, seed=1, lean=1.0)
        report = run_evaluate(self.config(lag=(2,), alpha=(0.1,), stopping="stop_at_alpha"), records)
        self.assertIsNotNone(report.stop_time)
        after = report.steps[report.steps["t"] > report.stop_time + 1]
        self.assertTrue((after["lambda"] == 0.0).all())
        self.assertGreaterEqual(report.final_e, 10.0 * (1 - 1e-12))
        self.assertTrue(np.allclose(after["e_t"], report.final_e))

    def test_round_trip(self):
        for lag, alternative in ((1, "xi:0.5"), (2, "q"), (3, "k:3")):
            report = run_evaluate(self.config(lag=(lag,), alternative=alternative), make_records(120, seed=lag))
            path = os.path.join(self.tmp, f"steps_{lag}.csv")
            write_steps(report, path)
            final_e, e_path = replay_steps(path, lag)
            self.assertAlmostEqual(final_e, report.final_e, delta=1e-9 * max(1.0, report.final_e))
            self.assertEqual(len(e_path), len(report.e_path))

    def test_replay_reads_lag_from_report(self):
        report = run_evaluate(self.config(lag=(2,), alternative="q"), make_records(80, seed=3))
        path = os.path.join(self.tmp, "lag2.csv")
        write_steps(report, path)
        self.assertTrue((pd.read_csv(path)["h"] == 2).all())
        final_e, _ = replay_steps(path)
        self.assertAlmostEqual(final_e, report.final_e, delta=1e-9 * max(1.0, report.final_e))
        with self.assertRaises(ConfigError):
            replay_steps(path, 1)

    def test_excel_report(self):
        report = run_evaluate(self.config(), make_records(15))
        path = os.path.join(self.tmp, "steps.xlsx")
        write_table(report.steps, path)
        final_e, _ = replay_steps(path, 1)
        self.assertAlmostEqual(final_e, report.final_e)

    def test_summary_table(self):
        report = run_evaluate(self.config(), make_records(40))
        table = report.summary_table()
        self.assertEqual(table["e_value"].iloc[0], format_evalue(report.final_e))
        self.assertIn("p_dm_test", table.columns)


if __name__ == '__main__':
    unittest.main()
