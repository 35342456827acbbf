"""Tests for the gp-ada command line and the benchmark harness."""

import csv
import io
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout

from dotenv import load_dotenv

from gp_ada.bench import BENCH_HEADER, run_bench, write_bench
from gp_ada.cli import main
from gp_ada.data import Domain, load_dataset
from gp_ada.loop import read_metrics

SMALL = [
    "--set", "synth_num_classes=3",
    "--set", "synth_dim=4",
    "--set", "synth_per_class=20",
    "--set", "rounds=2",
    "--set", "budget_fraction=0.1",
    "--set", "warmup_epochs=1",
    "--set", "epochs_per_round=1",
]


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


class TestCommands(unittest.TestCase):
    """Test each subcommand end to end on a small synthetic problem."""

    def setUp(self):
        self.test_dir = tempfile.mkdtemp(prefix="gp_ada_cli_")

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def call(self, *args):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            code = main(list(args))
        return code, out.getvalue(), err.getvalue()

    def test_synth(self):
        code, out, _ = self.call("synth", "--out", self.test_dir, *SMALL)
        self.assertEqual(code, 0)
        path = os.path.join(self.test_dir, "dataset.csv")
        self.assertIn(path, out)
        dataset = load_dataset(path)
        self.assertEqual(len(dataset.ids(Domain.SOURCE)), 60)
        self.assertEqual(len(dataset.ids(Domain.TARGET)), 60)

    def test_run_two_strategies(self):
        for strategy in ("random", "gpas_plcs_ucs"):
            code, _, err = self.call("run", "--out", self.test_dir, "--strategy", strategy, "--seed", "2", *SMALL)
            self.assertEqual(code, 0, err)
        random_rows = read_metrics(os.path.join(self.test_dir, "metrics_random.csv"))
        full_rows = read_metrics(os.path.join(self.test_dir, "metrics_gpas_plcs_ucs.csv"))
        self.assertEqual([m.round for m in random_rows], [m.round for m in full_rows])
        self.assertEqual([m.budget_spent for m in random_rows], [m.budget_spent for m in full_rows])
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "model_random.csv")))

    def test_run_from_dataset_file_then_eval(self):
        self.call("synth", "--out", self.test_dir, *SMALL)
        data = os.path.join(self.test_dir, "dataset.csv")
        common = [
            "--out", self.test_dir,
            "--set", f"dataset={data}",
            "--set", "rounds=2",
            "--set", "budget_fraction=0.1",
            "--set", "warmup_epochs=1",
            "--set", "epochs_per_round=1",
        ]
        code, _, err = self.call("run", "--strategy", "gpas", *common)
        self.assertEqual(code, 0, err)
        checkpoint = os.path.join(self.test_dir, "model_gpas.csv")
        code, out, _ = self.call("eval", "--checkpoint", checkpoint, *common)
        self.assertEqual(code, 0)
        reported = float(out.strip().rsplit(" ", 1)[1])
        final = read_metrics(os.path.join(self.test_dir, "metrics_gpas.csv"))[-1].target_accuracy
        self.assertAlmostEqual(reported, final, delta=1e-4)

    def test_gp_probe(self):
        code, _, err = self.call("gp-probe", "--out", self.test_dir, *SMALL)
        self.assertEqual(code, 0, err)
        rows = read_rows(os.path.join(self.test_dir, "gp_probe.csv"))
        self.assertEqual(rows[0], ["id", "pseudo_label", "posterior_variance"])
        ids = [int(row[0]) for row in rows[1:]]
        # 60 target samples minus the 12-sample holdout
        self.assertEqual(len(ids), 48)
        self.assertEqual(ids, sorted(ids))
        self.assertTrue(all(float(row[2]) >= 0 for row in rows[1:]))

    def test_report(self):
        self.call("run", "--out", self.test_dir, "--strategy", "gpas", *SMALL)
        metrics = os.path.join(self.test_dir, "metrics_gpas.csv")
        code, _, err = self.call("report", metrics, "--out", self.test_dir)
        self.assertEqual(code, 0, err)
        self.assertTrue(os.path.exists(os.path.join(self.test_dir, "accuracy.svg")))

    def test_sweep(self):
        code, _, err = self.call(
            "sweep", "--param", "budget_fraction", "--values", "0,0.1", "--out", self.test_dir, *SMALL
        )
        self.assertEqual(code, 0, err)
        rows = read_rows(os.path.join(self.test_dir, "sweep_budget_fraction.csv"))
        self.assertEqual(rows[0], ["value", "final_accuracy", "budget_spent", "plcs_total"])
        self.assertEqual([(row[0], row[2]) for row in rows[1:]], [("0", "0"), ("0.1", "4")])

    def test_bench(self):
        code, _, err = self.call(
            "bench", "--num-unlabeled", "100", "--dim", "8", "--classes", "4", "--rounds", "2",
            "--out", self.test_dir,
        )
        self.assertEqual(code, 0, err)
        rows = read_rows(os.path.join(self.test_dir, "bench.csv"))
        self.assertEqual(rows[0], BENCH_HEADER)
        self.assertEqual(len(rows), 1 + 4 * 2)
        self.assertEqual({row[0] for row in rows[1:]}, {"gpas", "gpas_plcs", "entropy", "random"})
        self.assertEqual([row[2] for row in rows[1:3]], ["100", "98"])

    def test_error_is_one_line(self):
        code, _, err = self.call("run", "--out", self.test_dir, "--strategy", "clue", *SMALL)
        self.assertEqual(code, 1)
        self.assertTrue(err.startswith("gp-ada: error: "))
        self.assertEqual(len(err.strip().splitlines()), 1)

    def test_missing_dataset(self):
        code, _, err = self.call("run", "--set", f"dataset={os.path.join(self.test_dir, 'none.csv')}")
        self.assertEqual(code, 1)
        self.assertIn("not found", err)

    def test_undecodable_inputs_are_one_line_errors(self):
        binary = os.path.join(self.test_dir, "binary.csv")
        with open(binary, "wb") as f:
            f.write(b"\xff\xfe\x00\x01\n")
        for args in (
            ("run", "--out", self.test_dir, "--set", f"dataset={binary}"),
            ("eval", "--checkpoint", binary, "--out", self.test_dir, *SMALL),
            ("report", binary, "--out", self.test_dir),
            ("run", "--config", binary, "--out", self.test_dir),
        ):
            with self.subTest(command=args[0]):
                code, _, err = self.call(*args)
                self.assertEqual(code, 1)
                self.assertTrue(err.startswith("gp-ada: error: "))
                self.assertEqual(len(err.strip().splitlines()), 1)

    def test_argument_error(self):
        with self.assertRaises(SystemExit) as ctx, redirect_stderr(io.StringIO()):
            main(["eval"])
        self.assertEqual(ctx.exception.code, 2)

    def test_bad_sweep_param(self):
        code, _, _ = self.call("sweep", "--param", "strategy", "--values", "gpas", "--out", self.test_dir)
        self.assertEqual(code, 1)


class TestQueryTime(unittest.TestCase):
    """GPAS selection time at N=5000, d=64, C=10."""

    def setUp(self):
        load_dotenv()
        if os.environ.get("GP_ADA_SLOW_TESTS") != "1":
            self.skipTest("GP_ADA_SLOW_TESTS=1 not set")
        self.test_dir = tempfile.mkdtemp(prefix="gp_ada_bench_")

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_gpas_round_under_ten_seconds(self):
        rows = run_bench(num_unlabeled=5000, dim=64, num_classes=10, rounds=3)
        path = os.path.join(self.test_dir, "bench.csv")
        write_bench(rows, path)
        self.assertEqual(len(read_rows(path)), 1 + 4 * 3)
        for row in rows:
            if row.strategy == "gpas":
                if row.round == 1:
                    self.assertEqual(row.num_unlabeled, 5000)
                self.assertLess(row.selection_ms, 10_000)


if __name__ == "__main__":
    unittest.main()
