import math

import numpy as np
import pytest


def trilinear_oracle(arr, p):
    """Scalar trilinear interpolation: clamp, then sum of 8 weighted corners."""
    n = arr.shape[:3]
    q = [min(max(float(p[a]), 0.0), n[a] - 1.0) for a in range(3)]
    lo = [min(int(math.floor(q[a])), max(n[a] - 2, 0)) for a in range(3)]
    total = 0.0
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx, w = [], 1.0
                for a, d in enumerate((dx, dy, dz)):
                    i = min(lo[a] + d, n[a] - 1)
                    t = q[a] - lo[a]
                    w *= t if d else 1.0 - t
                    idx.append(i)
                total = total + w * arr[tuple(idx)]
    return total


def central_difference(f, x, idx, h=1e-5):
    xp = x.copy()
    xm = x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def relative_error(a, b):
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0 else abs(a - b) / scale


def gradient_check(f, grad, x, rng, n=20, h=1e-5):
    """Max relative error of ``grad`` vs central differences at ``n`` random coordinates."""
    worst = 0.0
    for _ in range(n):
        idx = tuple(int(rng.integers(0, s)) for s in x.shape)
        worst = max(worst, relative_error(grad[idx], central_difference(f, x, idx, h)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.append(f"criterion {number} [{title}]: {'PASS' if ok else 'FAIL'}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
