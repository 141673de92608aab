import os
import unittest
from tempfile import TemporaryDirectory

from propssl.exceptions import DataError
from propssl.storage import Storage


class TestStorage(unittest.TestCase):
    def setUp(self) -> None:
        self.__tmpdir = TemporaryDirectory()
        self.storage = Storage(self.__tmpdir.__enter__())

    def tearDown(self) -> None:
        self.__tmpdir.__exit__(None, None, None)

    def test_overwrite(self):
        path = self.storage.write_text("runs/a/summary.txt", "first")
        self.assertEqual(path, self.storage.path("runs/a/summary.txt"))
        self.storage.write_text("runs/a/summary.txt", "second")
        self.assertEqual(self.storage.read_text("runs/a/summary.txt"), "second")
        # no temporary files left behind
        self.assertEqual(os.listdir(os.path.dirname(path)), ["summary.txt"])

    def test_sub(self):
        sub = self.storage.sub("runs/a")
        sub.write_key_values("summary.txt", {"best_epoch": 3, "acc": [0.5, 0.25]})
        self.assertTrue(self.storage.exists("runs/a/summary.txt"))
        self.assertEqual(
            self.storage.read_key_values("runs/a/summary.txt"),
            {"best_epoch": "3", "acc": "0.5,0.25"},
        )

    def test_csv(self):
        self.storage.write_csv("metrics.csv", [{"epoch": 0, "lr": 0.03}])
        df = self.storage.read_csv("metrics.csv", required_columns=["epoch"])
        self.assertEqual(df["lr"].tolist(), [0.03])
        with self.assertRaisesRegex(DataError, "missing column 'loss_sup'"):
            self.storage.read_csv("metrics.csv", required_columns=["loss_sup"])

    def test_missing_file(self):
        self.assertFalse(self.storage.exists("metrics.csv"))
        self.assertRaisesRegex(
            DataError, "missing file", self.storage.read_text, "metrics.csv"
        )

    def test_find(self):
        for name in ("runs/b/seed_2", "runs/b/seed_1", "other"):
            self.storage.sub(name).write_text("metrics.csv", "epoch\n")
        self.storage.write_text("metrics.csv", "epoch\n")
        self.storage.write_text("runs/b/notes.txt", "")
        self.assertEqual(
            self.storage.find("metrics.csv"),
            ["", "other", "runs/b/seed_1", "runs/b/seed_2"],
        )
