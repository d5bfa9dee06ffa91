import functools

import numpy as np
import pytest

from aapi.agents.td3 import Td3Config, oa_td3_train
from aapi.attacks import AttackCriticConfig, train_attack_critic
from aapi.envs import DoubleIntegrator

ACCEPTANCE_LINES = []

# Neural smoke setting shared by the acceptance suite and the agent tests.
SMOKE_STEPS = 30_000
SMOKE_EPS = 0.2
SMOKE_OMEGA = 0.5
CRITIC_STEPS = 20_000


@functools.lru_cache(maxsize=None)
def td3_run(seed: int, oa: bool):
    cfg = Td3Config(epsilon=SMOKE_EPS, omega=SMOKE_OMEGA, total_steps=SMOKE_STEPS, seed=seed, oa=oa)
    return oa_td3_train(DoubleIntegrator(), cfg)


@functools.lru_cache(maxsize=None)
def bench_critic(seed: int, oa: bool, mode: str):
    actor = td3_run(seed, oa).actor
    cfg = AttackCriticConfig(total_steps=CRITIC_STEPS, seed=seed)
    return train_attack_critic(actor, DoubleIntegrator(), SMOKE_EPS, mode, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance():
    """Collects one summary line per acceptance criterion."""
    def record(number, name, passed, detail, seconds):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append((number, f"[{status}] criterion {number:>2} {name}: {detail} ({seconds:.1f}s)"))
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
