import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, index=0, scale=50.0):
    from ghosteval.model import Pose

    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(index=index, rotation=q, translation=rng.uniform(-scale, scale, 3))


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance(pytestconfig):
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE, key=lambda x: str(x[0])):
            terminalreporter.write_line(line)
