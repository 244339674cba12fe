import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parents[1] / "benchmarks"))

import bench_engine  # noqa: E402


def test_benchmark_runs_and_backends_agree(capsys):
    assert bench_engine.main(["--size", "6", "--channels", "2", "--repeat", "1"]) == 0
    assert "MMAC/s" in capsys.readouterr().out
