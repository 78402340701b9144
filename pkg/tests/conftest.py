import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from framecast.model import ModelConfig, ModelParams, SequenceBatch  # noqa: E402
from framecast.numerics import Rng  # noqa: E402

# (criterion, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def tiny_config():
    return ModelConfig(4, 4, feature_dim=6, hidden_dim=5, t_in=2, t_out=2, conditioned=True)


def random_batch(cfg, batch=1, seed=0):
    g = np.random.default_rng(seed)
    return SequenceBatch(
        g.random((batch, cfg.t_in, cfg.frame_rows, cfg.frame_cols)),
        g.random((batch, cfg.t_out, cfg.frame_rows, cfg.frame_cols)),
        g.uniform(-1, 1, (batch, cfg.t_out, cfg.action_dim)),
        g.uniform(-1, 1, (batch, cfg.t_out, cfg.state_dim)),
    )


@pytest.fixture
def tiny_model(tiny_config):
    return ModelParams.init(tiny_config, Rng(5))
