import numpy as np
import pytest

from dafec.numerics import Tensor, finite_diff_grad


def rel_err(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grad(fn, x0, eps=1e-6):
    """Reverse-mode gradient of scalar ``fn(Tensor)`` at ``x0`` vs central differences."""
    x = Tensor(np.array(x0, dtype=float), requires_grad=True)
    out = fn(x)
    out.backward()
    fd = finite_diff_grad(lambda p: fn(Tensor(p)).item(), x0, eps)
    return rel_err(x.grad, fd)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    from dafec.synthetic import SyntheticSpec, generate_synthetic

    return generate_synthetic(SyntheticSpec(seed=3))


@pytest.fixture(scope="session")
def small_cfg():
    from dafec.pipeline import desk_config

    return desk_config(total_iters=40, anneal_T=30, episodes=50)


# acceptance results, printed as one line per criterion after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
