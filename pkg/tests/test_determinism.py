"""Outputs must not depend on the number of worker threads."""

import os
import subprocess
import sys

import pytest

SWEEP = ["sweep-delta", "--problem", "grad1d", "--scheme", "explicit_em", "--deltas", "0.4,0.2,0.1",
         "--horizon", "4000", "--repeats", "16", "--seed", "42", "--observable", "cos",
         "--observable", "cos2"]
SIMULATE = ["simulate", "--problem", "hypo2d", "--scheme", "weak2", "--observable", "cos[0,1]",
            "--delta", "0.05", "--steps", "64000", "--seed", "9", "--stream", "3", "--header"]


def _run(args, threads: int, out=None):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    cmd = [sys.executable, "-m", "ergodic_torus.cli", "--threads", str(threads)] + args
    if out is not None:
        cmd += ["--out", str(out)]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, timeout=600)
    assert proc.returncode == 0, proc.stderr
    assert "Warning" not in proc.stderr, proc.stderr
    return proc.stdout


@pytest.mark.parametrize("stem", ["sweep-delta_cos", "sweep-delta_cos2"])
def test_sweep_csv_byte_identical_across_threads(tmp_path, stem):
    _run(SWEEP, 1, tmp_path / "t1")
    _run(SWEEP, 8, tmp_path / "t8")
    a = (tmp_path / "t1" / f"{stem}.csv").read_bytes()
    b = (tmp_path / "t8" / f"{stem}.csv").read_bytes()
    assert a == b and len(a) > 0


def test_simulate_row_identical_across_threads():
    assert _run(SIMULATE, 1) == _run(SIMULATE, 8)
