import pytest
import torch

from cpips.codec import Codec
from cpips.models import ArchConfig, CodecModel

TINY = ArchConfig(num_classes=10, scale=0.25)


def make_codec(seed=0, dtype=torch.float32, quality_index=1):
    torch.manual_seed(seed)
    model = CodecModel(TINY).to(dtype)
    return Codec(model, quality_index=quality_index, lam=0.0018)


@pytest.fixture(scope="session")
def tiny_codec():
    """Untrained scale-1/4 codec; fine wherever only structure matters."""
    return make_codec()


@pytest.fixture(scope="session")
def tiny_codec64():
    return make_codec(dtype=torch.float64)


# --- acceptance summary --------------------------------------------------------------
# test_acceptance.py records one outcome per criterion; the lines are printed at
# the end of the run so they show up in plain ``pytest -v`` output.

ACCEPTANCE = {}


class Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.details = number, title, []

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        ACCEPTANCE[self.number] = ("FAIL", self.title, self.details)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            ACCEPTANCE[self.number] = ("PASS", self.title, self.details)
        elif exc is not None:
            self.details.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        return False


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, details = ACCEPTANCE[n]
        line = f"criterion {n:2d} {status}: {title}"
        if details:
            line += " | " + "; ".join(details)
        terminalreporter.write_line(line)
