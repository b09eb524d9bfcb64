import numpy as np
import pytest

from keydyn.ingest import Device, KeyEvent, Mode
from keydyn.synth import GeneratorConfig, generate_dataset


def make_stream(spec, user="u1", device=Device.Desktop, mode=Mode.Free):
    """Events from (key, press, release) triples."""
    return [KeyEvent(user, device, mode, k, p, r) for k, p, r in spec]


def random_stream(rng, n, keys="abcth", user="u1"):
    """Press-ordered stream with integer times and occasional rollover."""
    t = int(rng.integers(0, 100))
    out = []
    for _ in range(n):
        t += int(rng.integers(-30, 250))
        if out:
            t = max(t, out[-1].press_time)
        hold = int(rng.integers(0, 200))
        label = keys[int(rng.integers(len(keys)))] if rng.random() < 0.85 else "Space"
        out.append(KeyEvent(user, Device.Desktop, Mode.Free, label, t, t + hold))
    return out


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(GeneratorConfig(n_users=24, keystrokes_per_stream=150, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def report(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
