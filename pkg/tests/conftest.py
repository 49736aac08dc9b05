import numpy as np
import pytest

from cfprop.data import SplitSpec, gen_synthetic, split, standardize


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    """300-instance synthetic dataset split 30/30/240 and standardised."""
    ds = gen_synthetic(n=300, d=4, noise_c=0.5, seed=11)
    sp = split(ds, SplitSpec(0.1, 0.1, 0.8, seed=11))
    tr, va, te, _ = standardize(sp.train, sp.val, sp.test)
    return ds, sp, tr, va, te




ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
