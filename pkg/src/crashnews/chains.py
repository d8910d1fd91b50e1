"""The two LLM chains: report triage (Specific/General) and eight-field extraction."""

from __future__ import annotations

import enum
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from . import records
from .harvest import Article
from .llmgate import ChatExchange, LlmSettings, Provider, ProviderAuth, ProviderError, complete
from .records import AccidentRecord

log = logging.getLogger(__name__)

# keys the extraction chain must answer, in prompt order
RAW_KEYS = (
    "accident_date",
    "time",
    "injured",
    "killed",
    "location",
    "road_characteristics",
    "pedestrian_involved",
    "vehicle_types",
)

CLARIFY_SUFFIX = "\n\nAnswer with exactly one word: Specific or General"


class Category(enum.Enum):
    SPECIFIC = "Specific"
    GENERAL = "General"


class ChainError(Exception):
    pass


class UnparseableCategory(ChainError):
    def __init__(self, responses: Sequence[str]):
        super().__init__(f"could not read a category from {list(responses)!r}")
        self.responses = list(responses)


class ExtractionFailed(ChainError):
    def __init__(self, attempts: int, last_error: Exception):
        super().__init__(f"no valid extraction after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


class OutputParseError(ValueError):
    pass


class NoJsonFound(OutputParseError):
    pass


class JsonSyntax(OutputParseError):
    pass


class WrongKeys(OutputParseError):
    def __init__(self, missing: Sequence[str], extra: Sequence[str]):
        super().__init__(f"wrong keys: missing={list(missing)} extra={list(extra)}")
        self.missing = list(missing)
        self.extra = list(extra)


@dataclass(frozen=True)
class PromptSet:
    triage_system: str
    triage_user: str
    extract_system: str
    extract_user: str

    @classmethod
    def default(cls) -> "PromptSet":
        pkg = resources.files("crashnews") / "prompts"
        return cls(*((pkg / f"{name}.txt").read_text(encoding="utf-8") for name in
                     ("triage_system", "triage_user", "extract_system", "extract_user")))

    @classmethod
    def from_dir(cls, path) -> "PromptSet":
        d = Path(path)
        return cls(*((d / f"{name}.txt").read_text(encoding="utf-8") for name in
                     ("triage_system", "triage_user", "extract_system", "extract_user")))


_default_prompts: PromptSet | None = None


def default_prompts() -> PromptSet:
    global _default_prompts
    if _default_prompts is None:
        _default_prompts = PromptSet.default()
    return _default_prompts


def render(template: str, article: Article) -> str:
    return template.replace("{title}", article.entry.title).replace("{body}", article.body)


def read_category(text: str) -> Category | None:
    word = text.strip().strip("\"'`*.!:").strip().casefold()
    for cat in Category:
        if word == cat.value.casefold():
            return cat
    return None


def classify_report(
    article: Article,
    provider: Provider,
    settings: LlmSettings,
    prompts: PromptSet | None = None,
    transcript: list | None = None,
) -> Category:
    """Ask for Specific/General; one clarifying re-ask, then give up."""
    if not article.body.strip():
        raise ValueError("article body is empty")
    prompts = prompts or default_prompts()
    user = render(prompts.triage_user, article)
    responses = []
    for prompt in (user, user + CLARIFY_SUFFIX):
        ex = complete(provider, settings, prompts.triage_system, prompt)
        if transcript is not None:
            transcript.append(ex)
        responses.append(ex.response)
        cat = read_category(ex.response)
        if cat is not None:
            return cat
    raise UnparseableCategory(responses)


def _first_object(text: str) -> str | None:
    """The first balanced ``{...}`` region, honouring JSON string quoting."""
    start = text.find("{")
    if start == -1:
        return None
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _as_text(value) -> str:
    if value is None:
        return "unknown"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, list):
        return ", ".join(_as_text(v) for v in value)
    if isinstance(value, dict):
        return json.dumps(value, ensure_ascii=False, sort_keys=True)
    return str(value)


def parse_structured_output(text: str, keys: Sequence[str] = RAW_KEYS) -> dict[str, str]:
    """Parse the first JSON object in ``text``; its key set must equal ``keys`` exactly."""
    region = _first_object(text)
    if region is None:
        raise NoJsonFound("no JSON object in response")
    try:
        obj = json.loads(region)
    except json.JSONDecodeError as exc:
        raise JsonSyntax(str(exc)) from exc
    missing = [k for k in keys if k not in obj]
    extra = sorted(k for k in obj if k not in keys)
    if missing or extra:
        raise WrongKeys(missing, extra)
    return {k: _as_text(obj[k]) for k in keys}


def extract_record(
    article: Article,
    provider: Provider,
    settings: LlmSettings,
    prompts: PromptSet | None = None,
    transcript: list | None = None,
) -> dict[str, str]:
    """Ask for the eight fields; re-ask with the parse error up to ``settings.max_retries`` times."""
    prompts = prompts or default_prompts()
    base = render(prompts.extract_user, article)
    user = base
    error: Exception | None = None
    for attempt in range(1 + settings.max_retries):
        ex = complete(provider, settings, prompts.extract_system, user)
        if transcript is not None:
            transcript.append(ex)
        try:
            return parse_structured_output(ex.response)
        except OutputParseError as exc:
            error = exc
            user = (
                f"{base}\n\nYour previous answer could not be used ({exc}). "
                "Reply with only the JSON object with exactly the eight keys."
            )
    raise ExtractionFailed(1 + settings.max_retries, error)


@dataclass(frozen=True)
class Exclusion:
    article: Article
    reason: str  # general | unparseable | extraction-failed | unnormalizable | provider-error
    detail: str = ""

    def to_json(self) -> dict:
        return {"link": self.article.entry.link, "source_name": self.article.entry.source_name,
                "title": self.article.entry.title, "reason": self.reason, "detail": self.detail}


@dataclass
class ArticleOutcome:
    article: Article
    record: AccidentRecord | None = None
    exclusion: Exclusion | None = None
    raw: dict | None = None
    exchanges: list[ChatExchange] = field(default_factory=list)


Normalizer = Callable[[dict, Article, str], AccidentRecord]


def default_normalizer(raw: dict, article: Article, model: str) -> AccidentRecord:
    e = article.entry
    return records.build_record(
        raw, source=e.source_name, url=e.link, title=e.title,
        publish_date=records.parse_publish_date(e.publish_date), model=model,
    )


def process_article(
    article: Article,
    provider: Provider,
    settings: LlmSettings,
    normalizer: Normalizer = default_normalizer,
    prompts: PromptSet | None = None,
) -> ArticleOutcome:
    out = ArticleOutcome(article)
    try:
        category = classify_report(article, provider, settings, prompts, out.exchanges)
        if category is Category.GENERAL:
            out.exclusion = Exclusion(article, "general")
            return out
        out.raw = extract_record(article, provider, settings, prompts, out.exchanges)
        out.record = normalizer(out.raw, article, settings.model)
    except UnparseableCategory as exc:
        out.exclusion = Exclusion(article, "unparseable", str(exc))
    except ExtractionFailed as exc:
        out.exclusion = Exclusion(article, "extraction-failed", str(exc))
    except records.UnnormalizableField as exc:
        out.exclusion = Exclusion(article, "unnormalizable", str(exc))
    except ProviderAuth:
        raise
    except ProviderError as exc:
        out.exclusion = Exclusion(article, "provider-error", f"{type(exc).__name__}: {exc}")
    return out


def run_articles(
    articles: Sequence[Article],
    provider: Provider,
    settings: LlmSettings,
    normalizer: Normalizer = default_normalizer,
    prompts: PromptSet | None = None,
    workers: int = 1,
) -> list[ArticleOutcome]:
    """Per-article outcomes in input order."""
    prompts = prompts or default_prompts()
    if workers <= 1:
        return [process_article(a, provider, settings, normalizer, prompts) for a in articles]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: process_article(a, provider, settings, normalizer, prompts), articles))


def run_pipeline(
    articles: Sequence[Article],
    provider: Provider,
    settings: LlmSettings,
    normalizer: Normalizer = default_normalizer,
    prompts: PromptSet | None = None,
    workers: int = 1,
) -> tuple[list[AccidentRecord], list[Exclusion]]:
    """Triage every article, extract the Specific ones, and split records from exclusions."""
    outcomes = run_articles(articles, provider, settings, normalizer, prompts, workers)
    recs = [o.record for o in outcomes if o.record is not None]
    excluded = [o.exclusion for o in outcomes if o.exclusion is not None]
    return recs, excluded
