import numpy as np
import pytest

from tsattn.dataset import SyntheticSpeakerSpec, generate_synthetic_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 speakers x 10 utterances x 1 s: enough for plumbing tests, fast to build."""
    out = tmp_path_factory.mktemp("small_corpus")
    return generate_synthetic_corpus(SyntheticSpeakerSpec(4, 10, 1.0, seed=3), out)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """8 speakers x 50 utterances x 2 s, seed 7."""
    out = tmp_path_factory.mktemp("toy_corpus")
    return generate_synthetic_corpus(SyntheticSpeakerSpec(8, 50, 2.0, seed=7), out)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
