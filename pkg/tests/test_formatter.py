import unittest

import numpy as np

from formatter import (format_number, to_csv, heading, table, equilibrium_text, verify_text, plot_script,
                       profile_csv)
from model import BiophysicalParams, steady_state_profile
from scenario import Profile


class TestFormatter(unittest.TestCase):
    def test_format_number(self):
        self.assertEqual(format_number(True), "true")
        self.assertEqual(format_number(np.int64(7)), "7")
        self.assertEqual(format_number(0.1), "0.10000000000000001")
        self.assertEqual(format_number(float("nan")), "nan")

    def test_csv_layout(self):
        text = to_csv(("t", "l"), [(0.0, 0.25), (0.5, 1.5)])
        self.assertEqual(text, "t,l\n0,0.25\n0.5,1.5\n")

    def test_profile_csv_columns(self):
        x = np.linspace(0.0, 1.0, 3)
        text = profile_csv(Profile(t=0.0, x=x, c=x, c_hat=x, c_eq=x))
        self.assertTrue(text.startswith("x,c,c_hat,c_eq\n"))
        self.assertEqual(len(text.splitlines()), 4)

    def test_heading_and_table(self):
        self.assertEqual(heading("Gains", "-"), "Gains\n-----\n")
        lines = table(("a", "b"), [(1.0, "x")]).splitlines()
        self.assertEqual(len(lines), 3)
        self.assertTrue(lines[2].endswith("x"))

    def test_equilibrium_text_shows_tip_value(self):
        params = BiophysicalParams.nominal()
        text = equilibrium_text(steady_state_profile(params, 12e-6), params)
        self.assertIn("c_eq(l_s) = 0.0119 mol/m^3", text)
        self.assertIn("l_s = 12 um", text)

    def test_verify_text_counts(self):
        text = verify_text([("one", True, "ok"), ("two", False, "bad")])
        self.assertIn("[PASS] one: ok", text)
        self.assertIn("[FAIL] two: bad", text)
        self.assertIn("1 passed, 1 failed", text)

    def test_plot_script_names_its_inputs(self):
        script = plot_script("plot_trace.py", "out/trace.csv", ["out/profile_000.csv"], 12e-6)
        self.assertIn("'out/trace.csv'", script)
        self.assertIn("['out/profile_000.csv']", script)
        compile(script, "plot_trace.py", "exec")


if __name__ == '__main__':
    unittest.main()
