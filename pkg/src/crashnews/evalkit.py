"""Score generated datasets against hand-annotated gold standards."""

from __future__ import annotations

import csv
import enum
import io
import json
import unicodedata
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Mapping, NamedTuple

from .records import FIELD_NAMES, AccidentRecord, InvalidRecord

PLOT_HEADER = ("model", "source", "field", "correct", "wrong", "accuracy")

FREE_TEXT_FIELDS = frozenset({"location", "road_characteristics"})


class GoldInvalid(ValueError):
    def __init__(self, entry, field_name: str | None, message: str):
        where = f"entry {entry}" + (f", field {field_name}" if field_name else "")
        super().__init__(f"{where}: {message}")
        self.entry = entry
        self.field = field_name
        self.message = message


class EmptyDenominator(ZeroDivisionError):
    pass


class Match(enum.Enum):
    CORRECT = "correct"
    WRONG = "wrong"


@dataclass(frozen=True)
class GoldEntry:
    url: str
    fields: Mapping
    note: str | None = None


@dataclass(frozen=True)
class GoldSet:
    entries: Mapping[str, GoldEntry]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, url: str) -> bool:
        return url in self.entries


def _gold_fields(raw: Mapping, index) -> dict:
    if not isinstance(raw, Mapping):
        raise GoldInvalid(index, None, "fields must be an object")
    missing = [k for k in FIELD_NAMES if k not in raw]
    extra = sorted(k for k in raw if k not in FIELD_NAMES)
    if missing or extra:
        raise GoldInvalid(index, (missing or extra)[0], f"missing={missing} extra={extra}")
    values = dict(raw)
    if values["accident_date"] is not None:
        try:
            values["accident_date"] = date.fromisoformat(values["accident_date"])
        except (TypeError, ValueError) as exc:
            raise GoldInvalid(index, "accident_date", str(exc)) from None
    vt = values["vehicle_types"]
    if vt is None:
        vt = []
    if not isinstance(vt, list):
        raise GoldInvalid(index, "vehicle_types", "must be a list")
    values["vehicle_types"] = tuple(vt)
    # reuse the record invariants
    try:
        record = AccidentRecord(source="gold", url="gold", title="gold", **values)
    except (InvalidRecord, TypeError) as exc:
        name = next((k for k in FIELD_NAMES if k in str(exc)), None)
        raise GoldInvalid(index, name, str(exc)) from None
    return record.field_values()


def load_gold(data: bytes | str | Mapping) -> GoldSet:
    if not isinstance(data, Mapping):
        try:
            data = json.loads(data)
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise GoldInvalid("<document>", None, f"not valid JSON: {exc}") from None
    entries = data.get("entries") if isinstance(data, Mapping) else None
    if not isinstance(entries, list):
        raise GoldInvalid("<document>", None, "expected {'entries': [...]}")
    out: dict[str, GoldEntry] = {}
    for i, item in enumerate(entries):
        if not isinstance(item, Mapping):
            raise GoldInvalid(i, None, "entry must be an object")
        url = item.get("url")
        if not isinstance(url, str) or not url:
            raise GoldInvalid(i, "url", "missing url")
        if url in out:
            raise GoldInvalid(i, "url", f"duplicate url {url}")
        note = item.get("note", item.get("annotator_note"))
        out[url] = GoldEntry(url, _gold_fields(item.get("fields"), i), note)
    return GoldSet(out)


def fold_free_text(text: str) -> str:
    """Lowercase, punctuation to spaces, whitespace collapsed."""
    chars = [" " if unicodedata.category(ch).startswith("P") else ch for ch in text.lower()]
    return " ".join("".join(chars).split())


def match_field(name: str, predicted, gold) -> Match:
    if name == "vehicle_types":
        same = set(predicted or ()) == set(gold or ())
    elif name in FREE_TEXT_FIELDS:
        if predicted is None or gold is None:
            same = predicted is None and gold is None
        else:
            same = fold_free_text(predicted) == fold_free_text(gold)
    else:
        same = predicted == gold and type(predicted) is type(gold)
    return Match.CORRECT if same else Match.WRONG


class Accuracy(NamedTuple):
    value: float
    percent: int

    @property
    def label(self) -> str:
        return f"{self.percent}%"


def accuracy(correct: int, wrong: int) -> Accuracy:
    """``correct / (correct + wrong)`` plus the whole percent rounded half-up."""
    total = correct + wrong
    if total <= 0:
        raise EmptyDenominator("no scored comparisons")
    # exact half-up on integers, no float rounding surprises
    percent = (200 * correct + total) // (2 * total)
    return Accuracy(correct / total, percent)


@dataclass
class Tally:
    correct: int = 0
    wrong: int = 0

    @property
    def total(self) -> int:
        return self.correct + self.wrong

    def add(self, m: Match) -> None:
        if m is Match.CORRECT:
            self.correct += 1
        else:
            self.wrong += 1

    def __iadd__(self, other: "Tally") -> "Tally":
        self.correct += other.correct
        self.wrong += other.wrong
        return self

    def accuracy(self) -> Accuracy | None:
        return accuracy(self.correct, self.wrong) if self.total else None


Cell = tuple[str, str, str]  # (model, source, field)


@dataclass
class EvalReport:
    cells: dict[Cell, Tally] = field(default_factory=dict)
    articles: dict[tuple[str, str], int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    coverage_gaps: dict[str, list[str]] = field(default_factory=dict)

    def tally(self, model: str, source: str, field_name: str) -> Tally:
        return self.cells.setdefault((model, source, field_name), Tally())

    @property
    def models(self) -> list[str]:
        return sorted({m for m, _, _ in self.cells} | set(self.coverage_gaps) | set(self.skipped))

    def model_totals(self) -> dict[str, Tally]:
        out: dict[str, Tally] = defaultdict(Tally)
        for (model, _, _), t in self.cells.items():
            out[model] += t
        return dict(out)

    def source_totals(self) -> dict[tuple[str, str], Tally]:
        out: dict[tuple[str, str], Tally] = defaultdict(Tally)
        for (model, source, _), t in self.cells.items():
            out[(model, source)] += t
        return dict(out)

    def field_totals(self) -> dict[tuple[str, str], Tally]:
        out: dict[tuple[str, str], Tally] = defaultdict(Tally)
        for (model, _, fname), t in self.cells.items():
            out[(model, fname)] += t
        return dict(out)

    def merge(self, other: "EvalReport") -> "EvalReport":
        merged = EvalReport()
        for rep in (self, other):
            for key, t in rep.cells.items():
                cell = merged.tally(*key)
                cell += t
            for key, n in rep.articles.items():
                merged.articles[key] = merged.articles.get(key, 0) + n
            for key, n in rep.skipped.items():
                merged.skipped[key] = merged.skipped.get(key, 0) + n
            for key, urls in rep.coverage_gaps.items():
                merged.coverage_gaps.setdefault(key, []).extend(urls)
        return merged


def evaluate(
    dataset: Iterable[AccidentRecord],
    gold: GoldSet,
    model: str | None = None,
    sources: Iterable[str] | None = None,
) -> EvalReport:
    """Score every record whose url is in ``gold`` on all eight fields.

    Records outside the gold set are counted in ``skipped``; gold urls that a
    model's dataset lacks are listed as coverage gaps, not scored as wrong.
    ``model`` overrides the records' own model names.  ``sources`` restricts
    scoring to those source names.
    """
    wanted = set(sources) if sources is not None else None
    report = EvalReport()
    seen: dict[str, set[str]] = defaultdict(set)
    for rec in dataset:
        name = model or rec.model or "unknown"
        seen.setdefault(name, set())
        if wanted is not None and rec.source not in wanted:
            continue
        if rec.url not in gold or rec.url in seen[name]:
            report.skipped[name] = report.skipped.get(name, 0) + 1
            continue
        seen[name].add(rec.url)
        truth = gold.entries[rec.url].fields
        for fname in FIELD_NAMES:
            report.tally(name, rec.source, fname).add(match_field(fname, getattr(rec, fname), truth[fname]))
        report.articles[(name, rec.source)] = report.articles.get((name, rec.source), 0) + 1
    if not seen and model:
        seen[model] = set()
    for name, urls in seen.items():
        gaps = [u for u in gold.entries if u not in urls]
        if gaps:
            report.coverage_gaps[name] = gaps
    return report


def _field_rank(name: str) -> tuple[int, str]:
    return (FIELD_NAMES.index(name), "") if name in FIELD_NAMES else (len(FIELD_NAMES), name)


def _acc_cell(t: Tally, fmt: str = "label") -> str:
    acc = t.accuracy()
    if acc is None:
        return "-"
    return acc.label if fmt == "label" else f"{acc.value:.4f}"


_TEXT_COLUMNS = {"model", "source", "field"}


def _table(headers: list[str], rows: list[list[str]]) -> list[str]:
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(headers)]

    def line(cells):
        return "  ".join(
            c.ljust(w) if h in _TEXT_COLUMNS else c.rjust(w) for c, w, h in zip(cells, widths, headers)
        ).rstrip()

    return [line(headers)] + [line(r) for r in rows]


def emit_report(report: EvalReport) -> tuple[str, bytes]:
    """Render an aligned text table and the plot-data CSV.

    CSV rows are ordered by model, then source, then field in schema order.
    """
    keys = sorted(report.cells, key=lambda k: (k[0], k[1], _field_rank(k[2])))

    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PLOT_HEADER)
    for model, source, fname in keys:
        t = report.cells[(model, source, fname)]
        acc = t.accuracy()
        writer.writerow([model, source, fname, t.correct, t.wrong, f"{acc.value:.6f}" if acc else ""])
    plot_csv = buf.getvalue().encode("utf-8")

    lines = ["Overall accuracy by model", ""]
    totals = report.model_totals()
    rows = [[m, str(t.correct), str(t.wrong), str(t.total), _acc_cell(t, "raw"), _acc_cell(t)]
            for m, t in sorted(totals.items())]
    lines += _table(["model", "correct", "wrong", "total", "accuracy", "percent"], rows)

    by_source = report.source_totals()
    if by_source:
        lines += ["", "Accuracy by model and source", ""]
        rows = [[m, s, str(report.articles[(m, s)]) if (m, s) in report.articles else "-", str(t.correct), str(t.wrong), _acc_cell(t)]
                for (m, s), t in sorted(by_source.items())]
        lines += _table(["model", "source", "articles", "correct", "wrong", "accuracy"], rows)

    by_field = report.field_totals()
    if by_field:
        lines += ["", "Accuracy by model and field", ""]
        rows = [[m, f, str(t.correct), str(t.wrong), _acc_cell(t)]
                for (m, f), t in sorted(by_field.items(), key=lambda kv: (kv[0][0], _field_rank(kv[0][1])))]
        lines += _table(["model", "field", "correct", "wrong", "accuracy"], rows)

    notes = []
    for m in sorted(report.skipped):
        notes.append(f"{m}: {report.skipped[m]} record(s) not in gold set, not scored")
    for m in sorted(report.coverage_gaps):
        notes.append(f"{m}: {len(report.coverage_gaps[m])} gold article(s) missing from dataset (coverage gaps)")
    if notes:
        lines += ["", *notes]
    return "\n".join(lines) + "\n", plot_csv


def load_tallies(data: bytes | str) -> EvalReport:
    """Rebuild a report from plot-data CSV (accuracy column is recomputed)."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(header) != PLOT_HEADER:
        raise ValueError(f"expected header {','.join(PLOT_HEADER)}")
    report = EvalReport()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(PLOT_HEADER):
            raise ValueError(f"line {lineno}: expected {len(PLOT_HEADER)} cells")
        model, source, fname, correct, wrong, _ = row
        try:
            c, w = int(correct), int(wrong)
        except ValueError:
            raise ValueError(f"line {lineno}: counts must be integers") from None
        if c < 0 or w < 0:
            raise ValueError(f"line {lineno}: counts must be non-negative")
        t = report.tally(model, source, fname)
        t.correct += c
        t.wrong += w
    return report
