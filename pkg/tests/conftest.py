import numpy as np
import pytest

from bipkit.pca import fit_pca
from bipkit.synth import SynthGalleryConfig, sample_vmf_mixture

# filled by test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def small_gallery():
    return sample_vmf_mixture(SynthGalleryConfig(dim=16, n_clusters=20, per_cluster=10,
                                                 concentration=20.0, seed=3))


@pytest.fixture(scope="session")
def small_pca(small_gallery):
    return fit_pca(small_gallery)
