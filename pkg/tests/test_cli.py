"""
Tests for CLI entry points.

These tests focus on:
- exit codes (0 success, 1 invalid input, 2 missing input)
- render-sps on a small SPS file written to a temporary directory
"""

import tempfile
import unittest
from pathlib import Path

import numpy as np

from doanet.cli import build_parser, main
from doanet.geometry import build_sps_grid
from doanet.model import Direction
from doanet.storage import read_csv, write_array


def _exit_code(argv: list[str]) -> int:
    try:
        main(argv)
    except SystemExit as exc:
        return 0 if exc.code is None else int(exc.code)
    raise AssertionError("main() returned without SystemExit")


class TestParser(unittest.TestCase):
    def test_version_and_missing_command(self) -> None:
        self.assertEqual(_exit_code(["--version"]), 0)
        self.assertEqual(_exit_code([]), 2)

    def test_shared_flags_follow_the_subcommand(self) -> None:
        args = build_parser().parse_args(["eval", "--seed", "5", "--workers", "2", "--mode", "top-o", "-v"])
        self.assertEqual((args.command, args.seed, args.workers, args.mode), ("eval", 5, 2, "top-o"))
        self.assertTrue(args.verbose)
        self.assertEqual(build_parser().parse_args(["infer"]).mode, "both")

    def test_unknown_mode_is_rejected(self) -> None:
        self.assertEqual(_exit_code(["infer", "--mode", "argmax"]), 2)

    def test_scale_presets(self) -> None:
        self.assertEqual(build_parser().parse_args(["train", "--scale", "paper"]).scale, "paper")
        self.assertEqual(_exit_code(["prepare", "--scale", "huge"]), 1)


class TestExitCodes(unittest.TestCase):
    def test_missing_config_file(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            self.assertEqual(_exit_code(["prepare", "--config", str(Path(d) / "absent.ini")]), 2)

    def test_invalid_config_value(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "bad.ini"
            p.write_text("[dataset]\noverlaps = 5\n", encoding="utf-8")
            self.assertEqual(_exit_code(["prepare", "--config", str(p)]), 1)

    def test_train_without_data(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            p = Path(d) / "exp.ini"
            p.write_text(
                f"[paths]\ndata_dir = {d}/data\nwork_dir = {d}/work\nresults_dir = {d}/results\n",
                encoding="utf-8",
            )
            self.assertEqual(_exit_code(["train", "--config", str(p)]), 2)


class TestRenderSps(unittest.TestCase):
    def _write_sps(self, root: Path) -> Path:
        grid = build_sps_grid()
        values = np.full((6, len(grid)), 0.1, dtype=np.float32)
        for t in range(6):
            values[t, grid.index_of(Direction(10.0 * t, 20.0))] = 5.0
        return write_array(root / "sps.bin", values, "SPS_")

    def test_heatmaps_and_peaks(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            sps = self._write_sps(Path(d))
            out = Path(d) / "img"
            self.assertEqual(_exit_code(["render-sps", str(sps), "--out", str(out), "--frames", "2:5"]), 0)
            self.assertEqual(sorted(p.name for p in out.glob("*.pgm")), [
                "sps_frame00002.pgm", "sps_frame00003.pgm", "sps_frame00004.pgm",
            ])
            rows = read_csv(out / "sps_peaks.csv")
        self.assertEqual([r["frame"] for r in rows], ["2", "3", "4"])
        self.assertEqual([r["azimuth_deg"] for r in rows], ["20", "30", "40"])
        self.assertTrue(all(r["elevation_deg"] == "20" for r in rows))

    def test_bad_arguments(self) -> None:
        with tempfile.TemporaryDirectory() as d:
            sps = self._write_sps(Path(d))
            out = str(Path(d) / "img")
            self.assertEqual(_exit_code(["render-sps", str(sps), "--out", out, "--peaks", "0"]), 1)
            self.assertEqual(_exit_code(["render-sps", str(sps), "--out", out, "--frames", "4:2"]), 1)
            self.assertEqual(_exit_code(["render-sps", str(sps), "--out", out, "--frames", "0:99"]), 1)
            self.assertEqual(_exit_code(["render-sps", str(Path(d) / "nope.bin"), "--out", out]), 2)


if __name__ == "__main__":
    unittest.main()
