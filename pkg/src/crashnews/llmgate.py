"""Chat-completion client with bounded retries, OpenAI-compatible wire codec,
and a deterministic scripted provider for offline runs."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

log = logging.getLogger(__name__)


class ProviderError(Exception):
    pass


class ProviderAuth(ProviderError):
    """Missing or rejected API key."""


class ProviderRefusal(ProviderError):
    """Non-retryable API error."""


class RetryableProviderError(ProviderError):
    """Transport failure, rate limit or server error; worth another call."""


class ExhaustedRetries(ProviderError):
    def __init__(self, calls: int, last: Exception | None):
        super().__init__(f"provider failed {calls} times: {last}")
        self.calls = calls
        self.last = last


class MalformedResponse(ProviderError):
    pass


class ScriptExhausted(ProviderError):
    pass


class PromptTooLong(ProviderError):
    pass


@dataclass(frozen=True)
class ModelInfo:
    label: str
    provider: str
    parameters: str | None = None
    context_window: int | None = None


# display metadata only; nothing here is enforced
MODEL_CATALOG = {
    "gpt-3.5-turbo": ModelInfo("GPT-3.5", "openai"),
    "gpt-4o": ModelInfo("GPT-4", "openai"),
    "llama-3-70b-8192": ModelInfo("Llama-3", "groq", parameters="70B", context_window=8192),
}


@dataclass(frozen=True)
class LlmSettings:
    model: str = "gpt-4o"
    temperature: float = 0.7
    max_retries: int = 2
    n: int = 1
    max_prompt_chars: int | None = None

    def __post_init__(self):
        if not 0 <= self.temperature <= 2:
            raise ValueError("temperature must be within [0, 2]")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


# the three base configurations compared in the evaluation
BASE_SETTINGS = {name: LlmSettings(model=name) for name in MODEL_CATALOG}


@dataclass(frozen=True)
class ChatExchange:
    system: str
    user: str
    response: str
    latency: float
    provider: str
    calls: int = 1

    def to_json(self) -> dict:
        return {
            "system": self.system,
            "user": self.user,
            "response": self.response,
            "latency": self.latency,
            "provider": self.provider,
            "calls": self.calls,
        }


class Provider(Protocol):
    name: str
    retry_backoff: Sequence[float]

    def send(self, settings: LlmSettings, system: str, user: str) -> str:
        """One request; raise RetryableProviderError, ProviderRefusal or ProviderAuth."""


def complete(
    provider: Provider,
    settings: LlmSettings,
    system: str,
    user: str,
    sleep: Callable[[float], None] = time.sleep,
) -> ChatExchange:
    """Send one chat request, retrying retryable failures up to ``settings.max_retries`` times."""
    if settings.max_prompt_chars is not None and len(system) + len(user) > settings.max_prompt_chars:
        raise PromptTooLong(f"prompt is {len(system) + len(user)} chars, limit {settings.max_prompt_chars}")
    backoff = list(getattr(provider, "retry_backoff", ()) or ())
    last: Exception | None = None
    started = time.perf_counter()
    for attempt in range(1 + settings.max_retries):
        if attempt and backoff:
            sleep(backoff[min(attempt - 1, len(backoff) - 1)])
        try:
            text = provider.send(settings, system, user)
        except RetryableProviderError as exc:
            last = exc
            log.warning("%s call %d failed: %s", provider.name, attempt + 1, exc)
            continue
        return ChatExchange(system, user, text, time.perf_counter() - started, provider.name, attempt + 1)
    raise ExhaustedRetries(1 + settings.max_retries, last)


def wire_encode(settings: LlmSettings, system: str, user: str) -> bytes:
    body = {
        "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
        "model": settings.model,
        "n": settings.n,
        "temperature": float(settings.temperature),
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def _error_message(payload) -> str:
    err = payload.get("error")
    if isinstance(err, dict):
        return str(err.get("message") or err)
    return str(err)


def wire_decode(data: bytes | str, status: int = 200) -> str:
    """Return ``choices[0].message.content`` or raise the matching provider error."""
    try:
        payload = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        if status == 429 or status >= 500:
            raise RetryableProviderError(f"HTTP {status}") from exc
        raise MalformedResponse(f"invalid JSON: {exc}") from exc
    if isinstance(payload, dict) and "error" in payload or status >= 400:
        msg = _error_message(payload) if isinstance(payload, dict) else f"HTTP {status}"
        if status in (401, 403):
            raise ProviderAuth(msg)
        if status == 429 or status >= 500:
            raise RetryableProviderError(msg)
        raise ProviderRefusal(msg)
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse("missing choices[0].message.content") from exc
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return content


class HttpPoster(Protocol):
    def post(self, url: str, headers: dict[str, str], body: bytes, timeout: float) -> tuple[int, bytes]: ...


class UrllibPoster:
    def post(self, url: str, headers: dict[str, str], body: bytes, timeout: float) -> tuple[int, bytes]:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read() or b""
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise RetryableProviderError(f"network error: {exc}") from exc


PROVIDER_ENDPOINTS = {
    "openai": ("https://api.openai.com/v1", "OPENAI_API_KEY"),
    "groq": ("https://api.groq.com/openai/v1", "GROQ_API_KEY"),
}


@dataclass
class OpenAICompatibleProvider:
    """Hosted chat-completions endpoint (OpenAI or Groq speak the same dialect)."""

    name: str
    base_url: str
    api_key: str = field(repr=False)
    poster: HttpPoster = field(default_factory=UrllibPoster)
    timeout: float = 60.0
    retry_backoff: Sequence[float] = (1.0, 2.0)

    def send(self, settings: LlmSettings, system: str, user: str) -> str:
        if not self.api_key:
            raise ProviderAuth(f"no API key configured for {self.name}")
        headers = {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}
        status, body = self.poster.post(
            self.base_url.rstrip("/") + "/chat/completions", headers, wire_encode(settings, system, user), self.timeout
        )
        return wire_decode(body, status)


def hosted_provider(name: str, env: dict | None = None, base_url: str | None = None, **kwargs) -> OpenAICompatibleProvider:
    """Build the ``openai`` or ``groq`` provider, reading its key from the environment."""
    if name not in PROVIDER_ENDPOINTS:
        raise ValueError(f"unknown provider {name!r}")
    default_url, key_var = PROVIDER_ENDPOINTS[name]
    key = (os.environ if env is None else env).get(key_var, "")
    if not key:
        raise ProviderAuth(f"{key_var} is not set")
    return OpenAICompatibleProvider(name, base_url or default_url, key, **kwargs)


# --------------------------------------------------------------------------
# scripted provider


@dataclass
class Fail:
    """Scripted failure.  ``kind`` is ``retryable``, ``refusal`` or ``auth``."""

    kind: str = "retryable"
    message: str = "scripted failure"


@dataclass
class ScriptRule:
    match: tuple[str, ...]
    outputs: list  # str | Fail; consumed in order, the last one repeats

    def matches(self, user: str) -> bool:
        return all(m in user for m in self.match)


@dataclass
class RecordedCall:
    system: str
    user: str
    settings: LlmSettings


class ScriptedProvider:
    """Deterministic stand-in LLM.

    Rules are tried in order; a rule matches when all of its substrings occur
    in the user prompt.  Each rule replays its outputs in sequence and then
    keeps repeating the last one.
    """

    retry_backoff: Sequence[float] = ()

    def __init__(self, rules: Sequence[ScriptRule], name: str = "scripted"):
        self.rules = list(rules)
        self.name = name
        self.calls: list[RecordedCall] = []
        self._cursor = [0] * len(self.rules)
        self._lock = threading.Lock()

    def send(self, settings: LlmSettings, system: str, user: str) -> str:
        with self._lock:
            self.calls.append(RecordedCall(system, user, settings))
            for i, rule in enumerate(self.rules):
                if rule.matches(user):
                    out = rule.outputs[min(self._cursor[i], len(rule.outputs) - 1)]
                    self._cursor[i] += 1
                    break
            else:
                raise ScriptExhausted(f"no scripted rule matches prompt starting {user[:60]!r}")
        if isinstance(out, Fail):
            exc = {"retryable": RetryableProviderError, "refusal": ProviderRefusal, "auth": ProviderAuth}[out.kind]
            raise exc(out.message)
        return out


def scripted_provider(script: Sequence) -> ScriptedProvider:
    """Build a :class:`ScriptedProvider` from ``(match, output-or-outputs)`` pairs."""
    rules = []
    for match, outputs in script:
        match = (match,) if isinstance(match, str) else tuple(match)
        outputs = list(outputs) if isinstance(outputs, (list, tuple)) else [outputs]
        rules.append(ScriptRule(match, outputs))
    return ScriptedProvider(rules)


def load_script(data: bytes | str | dict) -> ScriptedProvider:
    """Load a JSON script file.

    Shape::

        {"rules": [{"match": "April only" | ["a", "b"],
                    "responses": ["General", {"fail": "retryable"}, ...]}]}
    """
    if not isinstance(data, dict):
        data = json.loads(data)
    script = []
    for i, rule in enumerate(data.get("rules", [])):
        if "match" not in rule or "responses" not in rule or not rule["responses"]:
            raise ValueError(f"rules[{i}] needs 'match' and non-empty 'responses'")
        outputs = []
        for r in rule["responses"]:
            if isinstance(r, dict) and "fail" in r:
                outputs.append(Fail(r["fail"], r.get("message", "scripted failure")))
            elif isinstance(r, str):
                outputs.append(r)
            else:
                outputs.append(json.dumps(r, ensure_ascii=False, sort_keys=True))
        script.append((rule["match"], outputs))
    return scripted_provider(script)
