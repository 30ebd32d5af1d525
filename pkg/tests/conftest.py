import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from knockselect.data import make_dataset, TaskKind  # noqa: E402


@pytest.fixture
def correlated_dataset():
    """n=300, d=6 Gaussian data: two tight pairs, two independent columns, binary target."""
    rng = np.random.default_rng(11)
    n = 300
    a = rng.normal(size=n)
    b = rng.normal(size=n)
    x = np.column_stack([
        a,
        a + 0.1 * rng.normal(size=n),
        b,
        b + 0.2 * rng.normal(size=n),
        rng.normal(size=n),
        rng.normal(size=n),
    ])
    y = (a + b + 0.3 * rng.normal(size=n) > 0).astype(int)
    return make_dataset(x, target=y, task=TaskKind.CLASSIFICATION)


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(80, 4))
    x[:, 1] += 0.8 * x[:, 0]
    y = (x[:, 0] > 0).astype(int)
    return make_dataset(x, target=y, task=TaskKind.CLASSIFICATION)


@pytest.fixture
def state_encoder(correlated_dataset):
    from knockselect.autoencoder import DescriptorBank, train_autoencoder
    from knockselect.environment import StateEncoder
    from knockselect.nn import TrainConfig

    bank = DescriptorBank(correlated_dataset.features, n_bootstrap=16, seed=0)
    ae = train_autoencoder(bank.bootstrap_descriptors(np.ones(6, bool)), TrainConfig(epochs=20, batch_size=16),
                           code=8, hidden=16)
    return StateEncoder(bank, ae)


ACCEPTANCE = []


@pytest.fixture
def criterion(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number, name, ok, detail=""):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
