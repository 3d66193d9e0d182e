import pytest

from lapsemix.em import run_em
from lapsemix.gibbs import GibbsConfig, posterior_summary, run_gibbs
from lapsemix.simulate import SimSpec, simulate_mixture_dataset

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance-criterion line and assert on it."""
    def _report(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} | {detail}"
        print(line)
        _ACCEPTANCE.append(line)
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def benchmark_dataset():
    """The n=1000, 40%-censored two-component benchmark with the default seed."""
    ds, truth = simulate_mixture_dataset(SimSpec(n=1000, censoring=0.4, seed=0))
    return ds


@pytest.fixture(scope="session")
def benchmark_gibbs(benchmark_dataset):
    import time
    t0 = time.perf_counter()
    draws = run_gibbs(benchmark_dataset, config=GibbsConfig(iterations=20000, burn_in=10000, K=2))
    seconds = time.perf_counter() - t0
    return draws, posterior_summary(draws), seconds


@pytest.fixture(scope="session")
def benchmark_em(benchmark_dataset):
    return run_em(benchmark_dataset, 2)
