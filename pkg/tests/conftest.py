import pytest

from ideadialog.core import PaperRecord, Topic
from ideadialog.gateway import Gateway
from ideadialog.mock import MockProvider
from ideadialog.papers import PaperBank


@pytest.fixture
def topic():
    return Topic("bias", "novel prompting methods to reduce social biases and stereotypes of large language models")


@pytest.fixture
def bank():
    records = tuple(
        PaperRecord(f"p{i:03d}", f"Paper {i}", f"Abstract of paper {i}.", "1970-01-01T00:00:00+00:00") for i in range(50)
    )
    return PaperBank("bias", records, "1970-01-01T00:00:00+00:00", "LocalCorpus")


@pytest.fixture
def mock_gateway():
    return Gateway(MockProvider(seed=7), max_concurrency=8, sleep=lambda s: None)


def pytest_terminal_summary(terminalreporter):
    from support import ACCEPTANCE_RESULTS

    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, title, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"[{status}] {number:2d}. {title}" + (f" ({detail})" if detail else ""))
