import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dasdrop.features import WindowSet  # noqa: E402
from dasdrop.model import ModelConfig  # noqa: E402

TINY_CARD = {"id": 6, "c": 7, "hour": 24, "dow": 7, "p": 3, "sp": 6, "r": 2, "et": 8, "iot": 2, "d": 2}


def random_windows(card, batch, n, rng, max_pad=None, targets=None):
    """Left-padded random window batch with valid indices for every column."""
    cols = {c: rng.integers(0, card[c], size=(batch, n)) for c in card}
    cols["p"] = np.broadcast_to(np.arange(n), (batch, n)).copy()
    max_pad = n - 1 if max_pad is None else max_pad
    n_pad = rng.integers(0, max_pad + 1, size=batch)
    pad = np.arange(n)[None, :] < n_pad[:, None]
    for c in card:
        cols[c] = np.where(pad, card[c], cols[c])
    tgt = rng.integers(0, 2, size=batch) if targets is None else np.asarray(targets)
    cols["d"] = np.where(pad, card["d"], cols["d"])
    cols["d"][:, -1] = tgt
    return WindowSet(cols, pad, tgt, np.array([f"u{i}" for i in range(batch)], dtype=object), np.arange(batch))


@pytest.fixture
def tiny_config():
    return ModelConfig(n_blocks=1, d_model=8, n_heads=2, seq_size=3, dropout=0.0, cardinalities=dict(TINY_CARD), dtype="float64")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    from dasdrop.experiment import prepare
    from dasdrop.synth import generate

    return prepare(generate(60, 30, seed=9).records, seed=9)


@pytest.fixture
def small_model():
    return ModelConfig(n_blocks=1, d_model=8, n_heads=2, seq_size=3, dropout=0.1)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
