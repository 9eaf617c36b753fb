import numpy as np
import pytest

from soem.datagen import benchmark_specs, generate_groups
from soem.embedding import series_covariance
from soem.trainer import TrainConfig, train


def random_orthogonal(L, rng):
    Q, R = np.linalg.qr(rng.standard_normal((L, L)))
    return Q * np.sign(np.diag(R))


def commuting_family(L, count, rng):
    U = random_orthogonal(L, rng)
    return U, [U @ np.diag(rng.standard_normal(L)) @ U.T for _ in range(count)]


def random_spd(L, rng):
    A = rng.standard_normal((L, L + 3))
    return A @ A.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def benchmark_series():
    return generate_groups(benchmark_specs(200, 0.05), 20, randomize_initial=True, seed=0)


@pytest.fixture(scope="session")
def benchmark_covs(benchmark_series):
    return [series_covariance(s, 20) for s in benchmark_series]


@pytest.fixture(scope="session")
def benchmark_labels(benchmark_series):
    return [s.label for s in benchmark_series]


@pytest.fixture(scope="session")
def trained_benchmark(benchmark_covs):
    cfg = TrainConfig(rows=10, cols=10, L=20, iterations=10, seed=0)
    return cfg, train(benchmark_covs, cfg)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
