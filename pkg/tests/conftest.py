from datetime import datetime, timezone
from pathlib import Path

import pytest

from crashnews.harvest import Article, NewsIndexEntry
from crashnews.netfetch import Fetcher, FetchOptions, HostGate, ManualClock, ScriptedTransport

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = FIXTURES / "corpus"


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def make_fetcher(clock):
    def build(routes, **opts):
        transport = ScriptedTransport(routes, clock)
        options = FetchOptions(**opts)
        return Fetcher(transport, options, HostGate(options.per_host_delay, clock)), transport

    return build


def make_article(title="Bus hits motorcycle", body="Two people were killed.", link=None, source="Test Daily",
                 published="10 April 2024"):
    link = link or "https://news.example/" + title.lower().replace(" ", "-")
    return Article(NewsIndexEntry(title, link, published, source), body,
                   datetime(2024, 6, 20, tzinfo=timezone.utc))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid, title, ok in RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {cid}: {title}")
