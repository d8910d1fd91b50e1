"""Build a news index from site configs and download article bodies."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Sequence
from urllib.parse import urljoin, urlsplit

from . import markup
from .markup import DomNode, MissingAttribute, Selector, SelectorSyntax
from .netfetch import FetchError, Fetcher

log = logging.getLogger(__name__)


class ConfigInvalid(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


class EmptyBody(ValueError):
    pass


@dataclass(frozen=True)
class IndexSelectors:
    title: Selector
    link: Selector
    date: Selector


@dataclass(frozen=True)
class SiteConfig:
    source_name: str
    listing_urls: tuple[str, ...]
    index_selectors: IndexSelectors
    article_body_selector: Selector | None = None
    title_keywords: tuple[str, ...] | None = None
    max_pages: int = 1

    @property
    def host(self) -> str:
        return urlsplit(self.listing_urls[0]).netloc.lower()


@dataclass(frozen=True)
class NewsIndexEntry:
    title: str
    link: str
    publish_date: str
    source_name: str

    def to_json(self) -> dict:
        return {"title": self.title, "link": self.link, "publish_date": self.publish_date, "source_name": self.source_name}

    @classmethod
    def from_json(cls, d: dict) -> "NewsIndexEntry":
        return cls(d["title"], d["link"], d.get("publish_date", ""), d["source_name"])


@dataclass(frozen=True)
class Article:
    entry: NewsIndexEntry
    body: str
    fetched_at: datetime

    def to_json(self) -> dict:
        return {**self.entry.to_json(), "body": self.body, "fetched_at": self.fetched_at.isoformat()}

    @classmethod
    def from_json(cls, d: dict) -> "Article":
        return cls(NewsIndexEntry.from_json(d), d["body"], datetime.fromisoformat(d["fetched_at"]))


@dataclass
class HarvestWarning:
    source_name: str
    url: str
    kind: str
    message: str

    def to_json(self) -> dict:
        return {"source_name": self.source_name, "url": self.url, "kind": self.kind, "message": self.message}


def _selector(value, field_name: str) -> Selector:
    if not isinstance(value, str) or not value.strip():
        raise ConfigInvalid(field_name, "missing selector")
    try:
        return markup.parse_selector(value)
    except SelectorSyntax as exc:
        raise ConfigInvalid(field_name, str(exc)) from exc


def load_site_config(data: bytes | str | dict) -> SiteConfig:
    """Validate a site config JSON document (see README for the schema)."""
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid("<document>", f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("<document>", "expected a JSON object")

    name = data.get("source_name")
    if not isinstance(name, str) or not name.strip():
        raise ConfigInvalid("source_name", "must be a non-empty string")

    urls = data.get("listing_urls")
    if not isinstance(urls, list) or not urls:
        raise ConfigInvalid("listing_urls", "must be a non-empty list")
    hosts = set()
    for i, url in enumerate(urls):
        parts = urlsplit(url) if isinstance(url, str) else None
        if parts is None or parts.scheme not in ("http", "https") or not parts.netloc:
            raise ConfigInvalid(f"listing_urls[{i}]", "must be an absolute http(s) URL")
        hosts.add(parts.netloc.lower())
    if len(hosts) > 1:
        raise ConfigInvalid("listing_urls", "all listing URLs must share one host")

    sels = data.get("index_selectors")
    if not isinstance(sels, dict):
        raise ConfigInvalid("index_selectors", "must be an object with title, link and date")
    index_selectors = IndexSelectors(
        *(_selector(sels.get(k), f"index_selectors.{k}") for k in ("title", "link", "date"))
    )

    body = data.get("article_body_selector")
    body_sel = _selector(body, "article_body_selector") if body is not None else None

    keywords = data.get("title_keywords")
    if keywords is not None:
        if not isinstance(keywords, list) or not all(isinstance(k, str) and k for k in keywords):
            raise ConfigInvalid("title_keywords", "must be a list of non-empty strings")
        keywords = tuple(keywords)

    max_pages = data.get("max_pages", 1)
    if isinstance(max_pages, bool) or not isinstance(max_pages, int) or max_pages < 1:
        raise ConfigInvalid("max_pages", "must be a positive integer")

    return SiteConfig(name.strip(), tuple(urls), index_selectors, body_sel, keywords, max_pages)


def _values(root: DomNode, sel: Selector) -> list[str | None]:
    out: list[str | None] = []
    for node in markup.select(root, sel):
        try:
            out.append(markup.extract_value(node, sel.accessor))
        except MissingAttribute:
            out.append(None)
    return out


def parse_listing(html: str | bytes, cfg: SiteConfig, page_url: str, warnings: list | None = None) -> list[NewsIndexEntry]:
    """Zip title/link/date matches positionally into index entries."""
    root = markup.parse_html(html)
    titles = _values(root, cfg.index_selectors.title)
    links = _values(root, cfg.index_selectors.link)
    dates = _values(root, cfg.index_selectors.date)
    if not len(titles) == len(links) == len(dates):
        msg = f"selector counts differ (title={len(titles)}, link={len(links)}, date={len(dates)}); truncating"
        log.warning("%s: %s", page_url, msg)
        if warnings is not None:
            warnings.append(HarvestWarning(cfg.source_name, page_url, "length-mismatch", msg))
    entries = []
    for title, link, when in zip(titles, links, dates):
        if not title or not link:
            continue
        if cfg.title_keywords is not None:
            lowered = title.casefold()
            if not any(k.casefold() in lowered for k in cfg.title_keywords):
                continue
        entries.append(NewsIndexEntry(title, urljoin(page_url, link.strip()), when or "", cfg.source_name))
    return entries


def harvest_index(cfg: SiteConfig, fetcher: Fetcher, warnings: list | None = None) -> list[NewsIndexEntry]:
    """Fetch up to ``max_pages`` listing pages and return their entries in page order.

    A page that cannot be fetched is skipped with a warning.
    """
    entries: list[NewsIndexEntry] = []
    for url in cfg.listing_urls[: cfg.max_pages]:
        try:
            result = fetcher.get(url)
        except FetchError as exc:
            log.warning("skipping listing page %s: %s", url, exc)
            if warnings is not None:
                warnings.append(HarvestWarning(cfg.source_name, url, type(exc).__name__, str(exc)))
            continue
        entries.extend(parse_listing(result.body, cfg, url, warnings))
    return entries


def dedup_entries(entries: Iterable[NewsIndexEntry]) -> list[NewsIndexEntry]:
    seen: set[str] = set()
    out = []
    for e in entries:
        if e.link not in seen:
            seen.add(e.link)
            out.append(e)
    return out


def main_paragraphs(root: DomNode) -> list[str]:
    """Paragraph texts of the element whose direct ``<p>`` children carry the most text.

    Ties go to the earliest element in document order.
    """
    best: list[str] = []
    best_mass = 0
    for node in root.iter():
        if not node.is_element:
            continue
        paras = [markup.text_content(c) for c in node.children if c.is_element and c.tag == "p"]
        paras = [p for p in paras if p]
        mass = sum(len(p) for p in paras)
        if mass > best_mass:
            best, best_mass = paras, mass
    return best


def extract_body(html: str | bytes, body_selector: Selector | None = None) -> str:
    root = markup.parse_html(html)
    if body_selector is not None:
        parts = [markup.text_content(n) for n in markup.select(root, body_selector)]
        parts = [p for p in parts if p]
        if parts:
            return "\n\n".join(parts)
    paras = main_paragraphs(root)
    if not paras:
        raise EmptyBody("no article text found")
    return "\n\n".join(paras)


def fetch_article(entry: NewsIndexEntry, cfg: SiteConfig, fetcher: Fetcher) -> Article:
    result = fetcher.get(entry.link)
    try:
        body = extract_body(result.body, cfg.article_body_selector)
    except EmptyBody as exc:
        raise EmptyBody(f"{entry.link}: {exc}") from None
    return Article(entry, body, result.fetched_at)


@dataclass
class HarvestRun:
    entries: list[NewsIndexEntry] = field(default_factory=list)
    articles: list[Article] = field(default_factory=list)
    warnings: list[HarvestWarning] = field(default_factory=list)


def harvest_sites(configs: Sequence[SiteConfig], fetcher: Fetcher, workers: int = 4) -> HarvestRun:
    """Index every site, dedupe, then fetch articles with a bounded pool.

    Output order is config order, then page order, regardless of ``workers``.
    """
    names = [c.source_name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigInvalid("source_name", "source names must be unique within a run")
    run = HarvestRun()
    owner: dict[str, SiteConfig] = {}
    for cfg in configs:
        for entry in harvest_index(cfg, fetcher, run.warnings):
            owner.setdefault(entry.link, cfg)
            run.entries.append(entry)
    run.entries = dedup_entries(run.entries)

    def one(entry: NewsIndexEntry):
        try:
            return fetch_article(entry, owner[entry.link], fetcher), None
        except (FetchError, EmptyBody) as exc:
            return None, HarvestWarning(entry.source_name, entry.link, type(exc).__name__, str(exc))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for article, warning in pool.map(one, run.entries):
            if article is not None:
                run.articles.append(article)
            else:
                log.warning("article skipped: %s", warning.message)
                run.warnings.append(warning)
    return run
