import numpy as np
import pytest

from clockens.decomposition import build_transform
from clockens.ensemble import assemble_system
from clockens.filters import steady_gains
from clockens.harness import load_config
from clockens.stability import weight_long_term, weight_short_term


@pytest.fixture(scope="session")
def cfg():
    return load_config("paper_sec5")


@pytest.fixture(scope="session")
def spec(cfg):
    return cfg.ensemble_spec()


@pytest.fixture(scope="session")
def sysm(spec):
    return assemble_system(spec)


@pytest.fixture(scope="session")
def q0(spec):
    return weight_short_term(spec.sigma_diag(1))


@pytest.fixture(scope="session")
def qinf(spec):
    return weight_long_term(spec.sigma_diag(2), spec.N, spec.M)


@pytest.fixture(scope="session")
def bundle(spec, q0):
    return build_transform(spec, q0)


@pytest.fixture(scope="session")
def gains(bundle, sysm, spec):
    return steady_gains(bundle, sysm.Q, spec.r)


def rel(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# criterion number -> list of (part, passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list] = {}
N_CRITERIA = 9


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        parts = ACCEPTANCE.get(n)
        if not parts:
            terminalreporter.write_line(f"criterion {n}: NOT RUN")
            continue
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({d})" for name, ok, d in parts)
        terminalreporter.write_line(f"criterion {n}: {status} - {detail}")
