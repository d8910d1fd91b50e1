"""Command line entry point: ``crashnews {harvest,extract,evaluate,run}``.

Exit codes: 0 success, 2 harvest failure, 3 provider/auth failure,
4 input-validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import chains, evalkit, harvest, llmgate, records
from .netfetch import Fetcher, FetchOptions, FixtureTransport, HostGate, ManualClock, SystemClock, UrllibTransport

log = logging.getLogger("crashnews")

EXIT_OK = 0
EXIT_HARVEST = 2
EXIT_PROVIDER = 3
EXIT_INPUT = 4


class InputError(Exception):
    """Bad config or input file; maps to exit code 4."""


class JsonLogFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        return json.dumps(
            {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()},
            ensure_ascii=False,
        )


def write_atomic(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def jsonl(rows) -> bytes:
    return b"".join((json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8") for r in rows)


def read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").split("\n") if line.strip()]


@dataclass
class RunConfig:
    base_dir: Path = field(default_factory=Path.cwd)
    sites: list[Path] = field(default_factory=list)
    provider: str = "scripted"
    script: Path | None = None
    settings: llmgate.LlmSettings = field(default_factory=llmgate.LlmSettings)
    output_dir: Path = Path("out")
    gold_path: Path | None = None
    concurrency: int = 4
    fetch: FetchOptions = field(default_factory=FetchOptions)
    fixture_dir: Path | None = None
    base_url: str | None = None
    prompts_dir: Path | None = None


def _path(base: Path, value) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_run_config(path: str | None, args: argparse.Namespace) -> RunConfig:
    data: dict = {}
    base = Path.cwd()
    if path:
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read run config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise InputError("run config must be a JSON object")
        base = p.resolve().parent
    try:
        settings = dict(data.get("settings") or {})
        if getattr(args, "model", None):
            settings["model"] = args.model
        fetch_opts = dict(data.get("fetch") or {})
        if "backoff" in fetch_opts:
            fetch_opts["backoff"] = tuple(fetch_opts["backoff"])
        cfg = RunConfig(
            base_dir=base,
            sites=[_path(base, s) for s in data.get("sites", [])],
            provider=getattr(args, "provider", None) or data.get("provider", "scripted"),
            script=_path(Path.cwd(), args.script) if getattr(args, "script", None) else _path(base, data.get("script")),
            settings=llmgate.LlmSettings(**settings),
            output_dir=Path(args.out) if getattr(args, "out", None) else (_path(base, data.get("output_dir")) or Path("out")),
            gold_path=Path(args.gold) if getattr(args, "gold", None) else _path(base, data.get("gold_path")),
            concurrency=int(data.get("concurrency", 4)),
            fetch=FetchOptions(**fetch_opts),
            fixture_dir=_path(base, data.get("fixture_dir")),
            base_url=data.get("base_url"),
            prompts_dir=_path(base, data.get("prompts_dir")),
        )
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid run config: {exc}") from exc
    if cfg.provider not in ("openai", "groq", "scripted"):
        raise InputError(f"unknown provider {cfg.provider!r}")
    if cfg.concurrency < 1:
        raise InputError("concurrency must be >= 1")
    return cfg


def make_fetcher(cfg: RunConfig) -> tuple[Fetcher, int]:
    """Fetcher plus the article worker bound.

    Fixture runs use a virtual clock and one worker so that timestamps and
    ordering are reproducible.
    """
    if cfg.fixture_dir is not None:
        clock = ManualClock()
        return Fetcher(FixtureTransport(cfg.fixture_dir), cfg.fetch, HostGate(cfg.fetch.per_host_delay, clock)), 1
    return Fetcher(UrllibTransport(), cfg.fetch, HostGate(cfg.fetch.per_host_delay, SystemClock())), cfg.concurrency


def make_provider(cfg: RunConfig):
    if cfg.provider == "scripted":
        if cfg.script is None:
            raise InputError("provider 'scripted' needs a script (--script or \"script\" in the config)")
        try:
            return llmgate.load_script(cfg.script.read_bytes())
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot load script {cfg.script}: {exc}") from exc
    return llmgate.hosted_provider(cfg.provider, base_url=cfg.base_url)


# --------------------------------------------------------------------------
# stages


def cmd_harvest(cfg: RunConfig) -> int:
    try:
        sites = [harvest.load_site_config(p.read_bytes()) for p in cfg.sites]
    except OSError as exc:
        raise InputError(f"cannot read site config: {exc}") from exc
    except harvest.ConfigInvalid as exc:
        raise InputError(f"invalid site config: {exc}") from exc
    if not sites:
        raise InputError("no site configs given")

    fetcher, workers = make_fetcher(cfg)
    run = harvest.harvest_sites(sites, fetcher, workers)
    out = cfg.output_dir
    write_atomic(out / "index.jsonl", jsonl(e.to_json() for e in run.entries))
    write_atomic(out / "articles.jsonl", jsonl(a.to_json() for a in run.articles))
    write_atomic(out / "harvest_warnings.jsonl", jsonl(w.to_json() for w in run.warnings))
    print(f"harvest: {len(run.entries)} index entries, {len(run.articles)} articles, {len(run.warnings)} warnings")
    for site in sites:
        n = sum(1 for a in run.articles if a.entry.source_name == site.source_name)
        print(f"  {site.source_name}: {n} articles")
    return EXIT_OK if run.articles else EXIT_HARVEST


def cmd_extract(cfg: RunConfig, articles_path: Path | None = None) -> int:
    path = articles_path or cfg.output_dir / "articles.jsonl"
    try:
        articles = [harvest.Article.from_json(d) for d in read_jsonl(path)]
    except (OSError, KeyError, ValueError) as exc:
        raise InputError(f"cannot read articles from {path}: {exc}") from exc
    provider = make_provider(cfg)
    prompts = chains.PromptSet.from_dir(cfg.prompts_dir) if cfg.prompts_dir else chains.default_prompts()
    outcomes = chains.run_articles(articles, provider, cfg.settings, prompts=prompts, workers=cfg.concurrency)

    recs = [o.record for o in outcomes if o.record is not None]
    excluded = [o.exclusion for o in outcomes if o.exclusion is not None]
    raw = [{"link": o.article.entry.link, "raw": o.raw} for o in outcomes if o.raw is not None]
    out = cfg.output_dir
    write_atomic(out / "dataset.csv", records.to_csv(recs))
    write_atomic(out / "excluded.jsonl", jsonl(e.to_json() for e in excluded))
    write_atomic(out / "raw_extractions.jsonl", jsonl(raw))
    reasons: dict[str, int] = {}
    for e in excluded:
        reasons[e.reason] = reasons.get(e.reason, 0) + 1
    detail = ", ".join(f"{k}={v}" for k, v in sorted(reasons.items()))
    print(f"extract: {len(articles)} articles -> {len(recs)} records, {len(excluded)} excluded ({detail or 'none'})")
    return EXIT_OK


def cmd_evaluate(
    gold_path: Path | None,
    datasets: Sequence[Path] = (),
    tallies: Sequence[Path] = (),
    out_dir: Path | None = None,
) -> int:
    report = evalkit.EvalReport()
    if datasets:
        if gold_path is None:
            raise InputError("--gold is required to score datasets")
        try:
            gold = evalkit.load_gold(Path(gold_path).read_bytes())
        except OSError as exc:
            raise InputError(f"cannot read gold file: {exc}") from exc
        except evalkit.GoldInvalid as exc:
            raise InputError(f"invalid gold file: {exc}") from exc
        for path in datasets:
            try:
                recs = records.from_csv(Path(path).read_bytes())
            except (OSError, records.CsvSchemaMismatch) as exc:
                raise InputError(f"cannot read dataset {path}: {exc}") from exc
            model = None if recs else Path(path).stem
            report = report.merge(evalkit.evaluate(recs, gold, model=model))
    for path in tallies:
        try:
            report = report.merge(evalkit.load_tallies(Path(path).read_bytes()))
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read tallies {path}: {exc}") from exc
    if not datasets and not tallies:
        raise InputError("nothing to evaluate: give --dataset and/or --tallies")

    if not report.cells:
        log.warning("no dataset record overlaps the gold set; nothing was scored")
    table, plot = evalkit.emit_report(report)
    if out_dir is not None:
        write_atomic(out_dir / "report.txt", table.encode("utf-8"))
        write_atomic(out_dir / "report.csv", plot)
    sys.stdout.write(table)
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    code = cmd_harvest(cfg)
    if code != EXIT_OK:
        return code
    code = cmd_extract(cfg)
    if code != EXIT_OK or cfg.gold_path is None:
        return code
    return cmd_evaluate(cfg.gold_path, [cfg.output_dir / "dataset.csv"], out_dir=cfg.output_dir)


# --------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not the harvest-failure code argparse would use
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                         help="debug logging on stderr")
    parser = _Parser(prog="crashnews", parents=[verbose],
                     description="Harvest road-accident news, extract structured records with an LLM, and score them.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help):
        return sub.add_parser(name, help=help, parents=[verbose])

    def common(p, provider=True):
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--out", help="output directory")
        if provider:
            p.add_argument("--provider", choices=["openai", "groq", "scripted"])
            p.add_argument("--model", help="model name, e.g. gpt-4o")
            p.add_argument("--script", help="script JSON for the scripted provider")

    common(add("harvest", "build the news index and fetch articles"), provider=False)
    p = add("extract", "triage and extract articles into dataset.csv")
    common(p)
    p.add_argument("--articles", help="articles JSONL (default: <out>/articles.jsonl)")
    p = add("evaluate", "score datasets against a gold standard")
    p.add_argument("--config", help="run config JSON (for gold_path)")
    p.add_argument("--out", help="write report.txt and report.csv here")
    p.add_argument("--gold", help="gold standard JSON")
    p.add_argument("--dataset", action="append", default=[], help="dataset CSV, one per model (repeatable)")
    p.add_argument("--tallies", action="append", default=[], help="precomputed tallies CSV (repeatable)")
    p = add("run", "harvest, extract, and evaluate if a gold file is configured")
    common(p)
    p.add_argument("--gold", help="gold standard JSON")
    return parser


def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLogFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging(getattr(args, "verbose", False))
    try:
        if args.command == "evaluate":
            gold = Path(args.gold) if args.gold else None
            out = Path(args.out) if args.out else None
            if args.config and (gold is None or out is None):
                cfg = load_run_config(args.config, argparse.Namespace())
                gold = gold or cfg.gold_path
                out = out or cfg.output_dir
            return cmd_evaluate(gold, [Path(d) for d in args.dataset], [Path(t) for t in args.tallies], out)
        cfg = load_run_config(args.config, args)
        if args.command == "harvest":
            return cmd_harvest(cfg)
        if args.command == "extract":
            return cmd_extract(cfg, Path(args.articles) if args.articles else None)
        return cmd_run(cfg)
    except InputError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except llmgate.ProviderAuth as exc:
        log.error("provider authentication failed: %s", exc)
        return EXIT_PROVIDER
    except llmgate.ProviderError as exc:
        log.error("provider failure: %s", exc)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
