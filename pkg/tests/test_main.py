import io
import os
import tempfile
import unittest
from contextlib import redirect_stdout, redirect_stderr
from unittest import mock

from main import main, EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY

SMALL_RUN = """
[initial]
l0 = "{l0}"
c0 = "{c0}"

[numerics]
n = 16
dt = "0.1 s"
output_every = "0.1 s"
profile_every = "0.5 s"
kernel_grid_n = 17

[run]
t_final = "1 s"
mode = "plant-only"
"""


class TestMain(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = self.tmp.name

    def tearDown(self):
        self.tmp.cleanup()

    def write_config(self, l0="1 um", c0="2 c_inf"):
        path = os.path.join(self.out, "run.toml")
        with open(path, "w", encoding="utf-8") as f:
            f.write(SMALL_RUN.format(l0=l0, c0=c0))
        return path

    def run_main(self, *argv):
        stdout, stderr = io.StringIO(), io.StringIO()
        with redirect_stdout(stdout), redirect_stderr(stderr):
            code = main(list(argv))
        return code, stdout.getvalue(), stderr.getvalue()

    def test_steady_prints_tip_value(self):
        code, stdout, _ = self.run_main("steady", "--out", self.out)
        self.assertEqual(code, EXIT_OK)
        self.assertIn("c_eq(l_s) = 0.0119", stdout)

    def test_strict_gains_rejects_nominal_k(self):
        code, _, stderr = self.run_main("steady", "--strict-gains")
        self.assertEqual(code, EXIT_CONFIG)
        self.assertIn("k1", stderr)

    def test_missing_config(self):
        code, _, _ = self.run_main("simulate", os.path.join(self.out, "nope.toml"), "--out", self.out)
        self.assertEqual(code, EXIT_CONFIG)

    def test_simulate_writes_outputs(self):
        code, _, _ = self.run_main("simulate", "--config", self.write_config(), "--out", self.out)
        self.assertEqual(code, EXIT_OK)
        for name in ("trace.csv", "profile_000.csv", "profile_002.csv", "plot_trace.py"):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)), name)
        with open(os.path.join(self.out, "trace.csv"), encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertTrue(lines[0].startswith("t,l,c_c,y1,y2,U,q_s"))
        self.assertEqual(len(lines), 12)

    def test_kernel_writes_tables_and_report(self):
        code, stdout, _ = self.run_main("kernel", self.write_config(), "--out", self.out)
        self.assertEqual(code, EXIT_OK)
        for name in ("kernel_P.npz", "kernel_Q.npz", "kernel_report.txt"):
            self.assertTrue(os.path.exists(os.path.join(self.out, name)), name)
        self.assertIn("Kernel P", stdout)
        self.assertIn("Kernel Q", stdout)

    def test_numerical_failure_exit_code(self):
        path = self.write_config(l0="23.95 um", c0="10 c_inf")
        code, _, stderr = self.run_main("simulate", path, "--out", self.out)
        self.assertEqual(code, EXIT_NUMERICAL)
        self.assertIn("KernelDomainError", stderr)

    def test_failed_suite_exit_code(self):
        results = [("kernel order", True, "ok"), ("grid refinement", False, "change 2.2e-01")]
        with mock.patch("verify.run_all", return_value=results):
            code, stdout, stderr = self.run_main("verify", "--out", self.out)
        self.assertEqual(code, EXIT_VERIFY)
        self.assertIn("[FAIL] grid refinement", stdout)
        self.assertIn("1 of 2 suites failed: grid refinement", stderr)
        self.assertTrue(os.path.exists(os.path.join(self.out, "verify_report.txt")))

    def test_passing_suites_exit_cleanly(self):
        with mock.patch("verify.run_all", return_value=[("kernel order", True, "ok")]):
            code, _, _ = self.run_main("verify", "--out", self.out)
        self.assertEqual(code, EXIT_OK)


if __name__ == '__main__':
    unittest.main()
