import os
import subprocess
import sys

import numpy as np
import pytest

from bodyseg.model import SegNet, build_model


@pytest.fixture(scope="session")
def shared_model() -> SegNet:
    """One seeded model for read-only tests; never train through it."""
    return build_model(1)


@pytest.fixture
def rng():
    from bodyseg.rng import RngStream

    return RngStream(1234)


def run_cli(args, cwd=None, threads=1):
    """Run the CLI in a subprocess with a capped BLAS pool; returns
    (exit code, stdout, stderr)."""
    env = dict(os.environ)
    cmd = [sys.executable, "-m", "bodyseg.cli", *map(str, args)]
    if threads is not None:
        cmd += ["--threads", str(threads)]
    proc = subprocess.run(cmd, capture_output=True, text=True, cwd=cwd, env=env)
    return proc.returncode, proc.stdout, proc.stderr


def brute_force_pool2x2(x: np.ndarray):
    """Reference pooling by explicit window enumeration."""
    n, c, h, w = x.shape
    y = np.empty((n, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((n, c, h // 2, w // 2), dtype=np.int64)
    for ni in range(n):
        for ci in range(c):
            for yi in range(h // 2):
                for xi in range(w // 2):
                    window = x[ni, ci, 2 * yi : 2 * yi + 2, 2 * xi : 2 * xi + 2]
                    flat = window.ravel()
                    best = int(np.argmax(flat))
                    y[ni, ci, yi, xi] = flat[best]
                    idx[ni, ci, yi, xi] = best
    return y, idx
