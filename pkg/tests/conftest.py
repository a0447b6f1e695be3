import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from fcarac.config import Config  # noqa: E402
from fcarac.seqdata import GeneratorConfig, generate_dataset  # noqa: E402

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_data():
    return generate_dataset(24, GeneratorConfig(), seed=7, prefix="sm")


@pytest.fixture
def cfg():
    return Config(steps_pretrain=30, steps_finetune=10, batch_size=4)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
