from pathlib import Path

import pytest
import torch

from textstyler.encoders import MockFeatureExtractor, MockImageEncoder, MockTextEncoder, load_templates
from textstyler.report import load_image
from textstyler.trainer import Encoders

DATA = Path(__file__).parent / "data"
PERSON_PHOTO = DATA / "person.png"


@pytest.fixture
def text_encoder():
    return MockTextEncoder(64)


@pytest.fixture
def image_encoder():
    return MockImageEncoder(64, seed=0)


@pytest.fixture
def feature_extractor():
    return MockFeatureExtractor()


@pytest.fixture
def encoders():
    return Encoders(MockTextEncoder(64), MockImageEncoder(64, seed=0), MockFeatureExtractor())


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture(scope="session")
def person_photo():
    return load_image(PERSON_PHOTO)


def half_portrait_mask(h, w):
    """0 on the left half (portrait), 1 on the right half."""
    m = torch.ones(h, w)
    m[:, : w // 2] = 0
    return m


# ----------------------------------------------------- acceptance reporting

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "criterion", None)
    if crit is not None:
        number, title = crit
        _criteria[number] = (title, "PASS" if report.outcome == "passed" else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title}")
