import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

torch.set_num_threads(int(os.environ.get("SPECDM_TORCH_THREADS", "1")))

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_ss():
    from specdm.data import SynthLandConfig, generate_synthland

    return generate_synthland(SynthLandConfig(n_samples=24, H=16, W=16, seed=11))


@pytest.fixture(scope="session")
def small_cd():
    from specdm.data import SynthLandConfig, generate_synthland

    return generate_synthland(SynthLandConfig(n_samples=24, H=16, W=16, seed=12, task="CD"))


_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """``record(criterion, passed, detail)``; lines are printed in the terminal summary."""
    def record(criterion: str, passed: bool, detail: str) -> bool:
        _ACCEPTANCE[criterion] = (bool(passed), detail)
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}", flush=True)
        return bool(passed)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        passed, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {key}: {detail}")
