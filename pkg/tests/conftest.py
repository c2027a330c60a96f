import numpy as np
import pytest

from cdaae.datasets import synth_pair
from cdaae.nets import NetworkSet, PriorSpec


def make_nets(seed: int = 0, width: float = 0.125, num_classes: int = 10) -> NetworkSet:
    return NetworkSet(PriorSpec(num_classes), width=width, seed=seed)


def flatten_discriminators(nets: NetworkSet) -> None:
    """Zero each discriminator's output layer so every output is exactly 0.5."""
    for d in (nets.disc_content, nets.disc_a, nets.disc_b):
        d.layers[-1].weight.data[...] = 0
        d.layers[-1].bias.data[...] = 0


def images(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-1, 1, (n, 3, 32, 32)).astype(np.float32)


@pytest.fixture
def nets() -> NetworkSet:
    return make_nets().eval()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_pair():
    return synth_pair("digits", 6, seed=3, n_test_per_class=3)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; returns the outcome."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
