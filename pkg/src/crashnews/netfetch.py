"""Polite HTTP retrieval: robots.txt parsing, per-host spacing, retry with backoff.

This is the only module that talks to the network.  Everything goes through a
:class:`Transport`, so tests (and offline fixture runs) swap in
:class:`ScriptedTransport` or :class:`FixtureTransport` together with a
:class:`ManualClock` and never sleep for real.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
import urllib.error
import urllib.request
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterator, Protocol
from urllib.parse import unquote, urlsplit

log = logging.getLogger(__name__)

DEFAULT_USER_AGENT = "crashnews-bot/0.1 (+road-accident research crawler)"


class FetchError(Exception):
    """Base class for retrieval failures."""


class RobotsDenied(FetchError):
    def __init__(self, url: str):
        super().__init__(f"robots.txt disallows {url}")
        self.url = url


class ExhaustedRetries(FetchError):
    def __init__(self, url: str, attempts: int, last_problem: str):
        super().__init__(f"{url}: gave up after {attempts} attempts ({last_problem})")
        self.url = url
        self.attempts = attempts
        self.last_problem = last_problem


class NonRetryable(FetchError):
    def __init__(self, result: "FetchResult"):
        super().__init__(f"{result.url}: HTTP {result.status}")
        self.result = result


class TransportError(Exception):
    """Network-level failure (connection refused, DNS, timeout)."""


# --------------------------------------------------------------------------
# clocks


class Clock(Protocol):
    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...

    def now(self) -> datetime: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)

    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class ManualClock:
    """Virtual clock: ``sleep`` advances time instantly and is recorded."""

    def __init__(self, start: datetime | None = None):
        self.start = start or datetime(2024, 6, 20, tzinfo=timezone.utc)
        self.elapsed = 0.0
        self.sleeps: list[float] = []
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        return self.elapsed

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.sleeps.append(seconds)
            if seconds > 0:
                self.elapsed += seconds

    def now(self) -> datetime:
        return self.start + timedelta(seconds=self.elapsed)


# --------------------------------------------------------------------------
# robots.txt


@dataclass(frozen=True)
class RobotsRule:
    allow: bool
    path: str  # percent-decoded; may contain "*" and a trailing "$"


@dataclass(frozen=True)
class RobotsGroup:
    agents: tuple[str, ...]
    rules: tuple[RobotsRule, ...]


@dataclass(frozen=True)
class RobotsPolicy:
    groups: tuple[RobotsGroup, ...] = ()


_KEY_ALIASES = {"useragent": "user-agent", "allow": "allow", "disallow": "disallow"}


def parse_robots(text: str | bytes) -> RobotsPolicy:
    """Parse robots.txt leniently.  Never raises.

    Groups start at a ``User-agent`` line that follows a rule (consecutive
    agent lines share one group).  Rules outside any group, unknown
    directives, ``Crawl-delay`` and ``Sitemap`` are ignored.
    """
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    text = text.lstrip("\ufeff")

    groups: list[RobotsGroup] = []
    agents: list[str] = []
    rules: list[RobotsRule] = []
    collecting_agents = False

    def close_group() -> None:
        if agents:
            groups.append(RobotsGroup(tuple(agents), tuple(rules)))

    for raw_line in text.splitlines():
        line = raw_line.split("#", 1)[0].strip()
        if ":" not in line:
            continue
        key, _, value = line.partition(":")
        key = _KEY_ALIASES.get(re.sub(r"[\s_-]", "", key.lower()))
        value = value.strip()
        if key == "user-agent":
            if not collecting_agents:
                close_group()
                agents, rules = [], []
                collecting_agents = True
            token = value.split()[0].lower() if value.split() else ""
            if token:
                agents.append(token)
        elif key in ("allow", "disallow"):
            if not agents:
                continue
            collecting_agents = False
            rules.append(RobotsRule(allow=key == "allow", path=unquote(value, errors="replace")))
    close_group()
    return RobotsPolicy(tuple(groups))


def _product_token(agent: str) -> str:
    parts = agent.strip().split("/")[0].split()
    return parts[0].lower() if parts else ""


def _rules_for(policy: RobotsPolicy, agent: str) -> list[RobotsRule] | None:
    token = _product_token(agent)
    exact = [g for g in policy.groups if token and token in g.agents]
    if not exact:
        exact = [g for g in policy.groups if "*" in g.agents]
    if not exact:
        return None
    return [rule for g in exact for rule in g.rules]


_pattern_cache: dict[str, re.Pattern] = {}


def _rule_matches(pattern: str, path: str) -> bool:
    if "*" not in pattern and not pattern.endswith("$"):
        return path.startswith(pattern)
    rx = _pattern_cache.get(pattern)
    if rx is None:
        anchored = pattern.endswith("$")
        body = pattern[:-1] if anchored else pattern
        rx = re.compile(".*".join(re.escape(p) for p in body.split("*")) + (r"\Z" if anchored else ""), re.S)
        _pattern_cache[pattern] = rx
    return rx.match(path) is not None


def is_allowed(policy: RobotsPolicy, agent: str, path: str) -> bool:
    """Longest matching rule wins; equal-length Allow beats Disallow."""
    rules = _rules_for(policy, agent)
    if not rules:
        return True
    path = unquote(path or "/", errors="replace")
    best: RobotsRule | None = None
    for rule in rules:
        if not rule.path or not _rule_matches(rule.path, path):
            continue
        if best is None or len(rule.path) > len(best.path) or (
            len(rule.path) == len(best.path) and rule.allow and not best.allow
        ):
            best = rule
    return best is None or best.allow


def request_path(url: str) -> str:
    parts = urlsplit(url)
    path = parts.path or "/"
    return f"{path}?{parts.query}" if parts.query else path


# --------------------------------------------------------------------------
# transports


class Transport(Protocol):
    def get(self, url: str, headers: dict[str, str], timeout: float) -> tuple[int, bytes]:
        """Return ``(status, body)``; raise :class:`TransportError` on network failure."""


class UrllibTransport:
    def get(self, url: str, headers: dict[str, str], timeout: float) -> tuple[int, bytes]:
        req = urllib.request.Request(url, headers=headers, method="GET")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read() or b""
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(str(exc)) from exc


@dataclass
class RecordedRequest:
    url: str
    headers: dict[str, str]
    at: float


class ScriptedTransport:
    """Replays canned responses per URL and records every request.

    ``routes`` maps a URL to a response or a list of responses consumed in
    order (the last one repeats).  A response is ``(status, body)`` or an
    exception instance to raise.  Unknown URLs get a 404.
    """

    def __init__(self, routes: dict | None = None, clock: Clock | None = None):
        self.routes = {url: (list(r) if isinstance(r, list) else [r]) for url, r in (routes or {}).items()}
        self.clock = clock
        self.requests: list[RecordedRequest] = []
        self._lock = threading.Lock()

    def get(self, url: str, headers: dict[str, str], timeout: float) -> tuple[int, bytes]:
        with self._lock:
            at = self.clock.monotonic() if self.clock else 0.0
            self.requests.append(RecordedRequest(url, dict(headers), at))
            queue = self.routes.get(url)
            if not queue:
                return 404, b"not found"
            response = queue.pop(0) if len(queue) > 1 else queue[0]
        if isinstance(response, BaseException):
            raise response
        status, body = response
        return status, body.encode("utf-8") if isinstance(body, str) else body

    def count(self, url: str) -> int:
        return sum(1 for r in self.requests if r.url == url)


class FixtureTransport:
    """Serve pages from a directory described by ``manifest.json``.

    Manifest shape: ``{"<url>": {"file": "page.html", "status": 200}}``;
    ``{"error": "..."}`` instead of a file simulates an unreachable host.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.manifest = json.loads((self.directory / "manifest.json").read_text(encoding="utf-8"))
        self.requests: list[str] = []

    def get(self, url: str, headers: dict[str, str], timeout: float) -> tuple[int, bytes]:
        self.requests.append(url)
        entry = self.manifest.get(url)
        if entry is None:
            return 404, b"not found"
        if "error" in entry:
            raise TransportError(entry["error"])
        body = (self.directory / entry["file"]).read_bytes() if "file" in entry else b""
        return int(entry.get("status", 200)), body


# --------------------------------------------------------------------------
# fetching


@dataclass(frozen=True)
class FetchOptions:
    user_agent: str = DEFAULT_USER_AGENT
    max_retries: int = 2
    backoff: tuple[float, ...] = (5.0, 10.0)
    per_host_delay: float = 2.0
    timeout: float = 30.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if len(self.backoff) < self.max_retries:
            raise ValueError("backoff schedule shorter than max_retries")
        if min((*self.backoff, self.per_host_delay, self.timeout)) < 0:
            raise ValueError("durations must be non-negative")


@dataclass(frozen=True)
class FetchResult:
    url: str
    status: int
    body: bytes
    attempts: int
    fetched_at: datetime

    @property
    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


class HostGate:
    """Serialises requests per host and keeps them ``delay`` seconds apart."""

    def __init__(self, delay: float = 2.0, clock: Clock | None = None):
        self.delay = delay
        self.clock = clock or SystemClock()
        self._locks: dict[str, threading.Lock] = {}
        self._last: dict[str, float] = {}
        self._guard = threading.Lock()

    @contextmanager
    def slot(self, host: str) -> Iterator[None]:
        with self._guard:
            lock = self._locks.setdefault(host, threading.Lock())
        with lock:
            last = self._last.get(host)
            if last is not None:
                wait = last + self.delay - self.clock.monotonic()
                if wait > 0:
                    self.clock.sleep(wait)
            self._last[host] = self.clock.monotonic()
            yield


def _is_transient(status: int) -> bool:
    return status == 429 or status >= 500


def fetch(
    url: str,
    opts: FetchOptions,
    gate: HostGate,
    transport: Transport,
    policy: RobotsPolicy | None = None,
) -> FetchResult:
    """GET ``url`` with retries on network errors, timeouts, 429 and 5xx.

    Attempt ``i + 1`` is preceded by a sleep of ``opts.backoff[i]``.  Other
    4xx statuses raise :class:`NonRetryable` straight away.
    """
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ValueError(f"not an absolute http(s) URL: {url!r}")
    if policy is not None and not is_allowed(policy, opts.user_agent, request_path(url)):
        raise RobotsDenied(url)

    clock = gate.clock
    headers = {"User-Agent": opts.user_agent}
    problem = ""
    attempts = 0
    for attempt in range(1 + opts.max_retries):
        if attempt:
            clock.sleep(opts.backoff[attempt - 1])
        attempts += 1
        try:
            with gate.slot(parts.netloc.lower()):
                status, body = transport.get(url, headers, opts.timeout)
        except TransportError as exc:
            problem = f"network error: {exc}"
            log.warning("fetch %s attempt %d: %s", url, attempts, problem)
            continue
        result = FetchResult(url, status, body, attempts, clock.now())
        if status < 400:
            return result
        if not _is_transient(status):
            raise NonRetryable(result)
        problem = f"HTTP {status}"
        log.warning("fetch %s attempt %d: %s", url, attempts, problem)
    raise ExhaustedRetries(url, attempts, problem)


class PolicyCache:
    def __init__(self):
        self._policies: dict[str, RobotsPolicy] = {}
        self._lock = threading.Lock()

    def get(self, host: str) -> RobotsPolicy | None:
        with self._lock:
            return self._policies.get(host)

    def put(self, host: str, policy: RobotsPolicy) -> RobotsPolicy:
        with self._lock:
            return self._policies.setdefault(host, policy)

    def __contains__(self, host: str) -> bool:
        with self._lock:
            return host in self._policies


_process_cache = PolicyCache()


def load_policy_for(
    host: str,
    opts: FetchOptions,
    gate: HostGate,
    transport: Transport,
    cache: PolicyCache | None = None,
    scheme: str = "https",
) -> RobotsPolicy:
    """Fetch and cache ``<scheme>://host/robots.txt``.  Failures mean allow-all."""
    if not host:
        raise ValueError("host must be non-empty")
    cache = _process_cache if cache is None else cache
    host = host.lower()
    cached = cache.get(host)
    if cached is not None:
        return cached
    url = f"{scheme}://{host}/robots.txt"
    try:
        policy = parse_robots(fetch(url, opts, gate, transport).body)
    except FetchError as exc:
        log.info("no usable robots.txt for %s (%s); allowing all", host, exc)
        policy = RobotsPolicy()
    return cache.put(host, policy)


@dataclass
class Fetcher:
    """Bundle of transport, options, gate and robots cache used by the harvester."""

    transport: Transport = field(default_factory=UrllibTransport)
    opts: FetchOptions = field(default_factory=FetchOptions)
    gate: HostGate | None = None
    cache: PolicyCache = field(default_factory=PolicyCache)

    def __post_init__(self):
        if self.gate is None:
            self.gate = HostGate(self.opts.per_host_delay)

    @property
    def clock(self) -> Clock:
        return self.gate.clock

    def policy_for(self, url: str) -> RobotsPolicy:
        parts = urlsplit(url)
        return load_policy_for(parts.netloc, self.opts, self.gate, self.transport, self.cache, parts.scheme or "https")

    def allowed(self, url: str) -> bool:
        return is_allowed(self.policy_for(url), self.opts.user_agent, request_path(url))

    def get(self, url: str) -> FetchResult:
        return fetch(url, self.opts, self.gate, self.transport, self.policy_for(url))
