import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def central_difference(f, arrays, step=1e-3):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of every array (64-bit)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a, dtype=np.float64)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + step
            up = f()
            a[idx] = old - step
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric):
    """Largest per-coordinate |a - n| / max(1e-6, |n|)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(np.asarray(a, np.float64) - n) / np.maximum(1e-6, np.abs(n))
        worst = max(worst, float(err.max()))
    return worst


def reference_scan(xs, f):
    """Odd-even prefix scan written as plain recursion over values."""
    n = len(xs)
    if n < 2:
        return list(xs)
    odd = reference_scan([f(xs[2 * j], xs[2 * j + 1]) for j in range(n // 2)], f)
    out = [None] * n
    out[0] = xs[0]
    for j, v in enumerate(odd):
        out[2 * j + 1] = v
    for j in range(1, (n + 1) // 2):
        out[2 * j] = f(odd[j - 1], xs[2 * j])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# acceptance criteria report one verdict line each at the end of the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
