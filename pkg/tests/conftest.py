import numpy as np
import pytest
from hypothesis import settings

from clpt.problems import build_single_qubit_problem, build_two_qubit_problem

settings.register_profile("clpt", max_examples=40, deadline=None)
settings.load_profile("clpt")


@pytest.fixture(scope="session")
def qubit():
    return build_single_qubit_problem()


@pytest.fixture(scope="session")
def two_qubit():
    return build_two_qubit_problem()


@pytest.fixture(scope="session", params=["1q", "2q"])
def problem(request):
    return build_single_qubit_problem() if request.param == "1q" else build_two_qubit_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def rk4_state(problem, values, T, substeps=100):
    """Schroedinger evolution of psi0 under H0 + s(t) Hc with classic RK4,
    ``substeps`` steps per protocol cell; ``values`` has shape (R, L)."""
    values = np.atleast_2d(values)
    R, L = values.shape
    h = T / (L * substeps)
    H0, Hc = problem.drift_hamiltonian, problem.control_hamiltonian
    psi = np.tile(problem.psi0, (R, 1))

    def f(p, s):
        H = H0[None] + s[:, None, None] * Hc[None]
        return -1j * np.einsum("rab,rb->ra", H, p)

    for i in range(L):
        s = values[:, i]
        for _ in range(substeps):
            k1 = f(psi, s)
            k2 = f(psi + 0.5 * h * k1, s)
            k3 = f(psi + 0.5 * h * k2, s)
            k4 = f(psi + h * k3, s)
            psi = psi + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return psi


def rk4_infidelity(problem, values, T, substeps=100):
    psi = rk4_state(problem, values, T, substeps)
    return 1 - np.abs(psi @ problem.psi_target.conj()) ** 2


#: (number, title, passed, detail) for every acceptance criterion that ran
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
