import numpy as np
import pytest


def central_difference(loss_fn, arrays, eps=1e-6):
    """Numerical gradient of ``loss_fn()`` w.r.t. every entry of ``arrays`` (mutated in place)."""
    out = []
    for p in arrays:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = loss_fn()
            p[idx] = old - eps
            down = loss_fn()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a) + np.linalg.norm(n), 1e-12))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion; printed at the end of the session."""
    entry = {"name": request.node.name, "passed": False, "detail": ""}
    ACCEPTANCE.append(entry)

    def record(passed, detail=""):
        entry["passed"], entry["detail"] = bool(passed), detail
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for e in ACCEPTANCE:
        verdict = "PASS" if e["passed"] else "FAIL"
        terminalreporter.write_line(f"{verdict}  {e['name']}  {e['detail']}")
