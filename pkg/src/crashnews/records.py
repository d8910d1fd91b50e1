"""Accident dataset schema, field normalisation and CSV/JSONL import/export."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from dataclasses import asdict, dataclass, field, fields
from datetime import date, timedelta
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

CSV_HEADER = (
    "source",
    "url",
    "title",
    "publish_date",
    "accident_date",
    "accident_time",
    "killed",
    "injured",
    "location",
    "road_characteristics",
    "pedestrian_involved",
    "vehicle_types",
    "model",
)

# the eight extracted fields, in schema order
FIELD_NAMES = (
    "accident_date",
    "accident_time",
    "killed",
    "injured",
    "location",
    "road_characteristics",
    "pedestrian_involved",
    "vehicle_types",
)

_TIME_RE = re.compile(r"^([01][0-9]|2[0-3]):[0-5][0-9]$")


class UnnormalizableField(ValueError):
    def __init__(self, field_name: str, raw: str):
        super().__init__(f"cannot normalise {field_name}: {raw!r}")
        self.field = field_name
        self.raw = raw


class InvalidRecord(ValueError):
    pass


class CsvSchemaMismatch(ValueError):
    pass


def _check_text(name: str, value, nullable: bool) -> None:
    if value is None:
        if not nullable:
            raise InvalidRecord(f"{name} may not be null")
        return
    if not isinstance(value, str):
        raise InvalidRecord(f"{name} must be a string")
    if "\x00" in value:
        raise InvalidRecord(f"{name} contains NUL")
    if nullable and value == "":
        raise InvalidRecord(f"{name}: use None rather than an empty string")


@dataclass(frozen=True)
class AccidentRecord:
    """One row of the accident dataset.  Invariants are checked on construction."""

    source: str
    url: str
    title: str
    publish_date: date | None = None
    accident_date: date | None = None
    accident_time: str | None = None
    killed: int | None = None
    injured: int | None = None
    location: str | None = None
    road_characteristics: str | None = None
    pedestrian_involved: bool | None = None
    vehicle_types: tuple[str, ...] = ()
    model: str = ""

    def __post_init__(self):
        for name in ("source", "url", "title", "model"):
            _check_text(name, getattr(self, name), nullable=False)
        for name in ("location", "road_characteristics"):
            _check_text(name, getattr(self, name), nullable=True)
        for name in ("publish_date", "accident_date"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, date):
                raise InvalidRecord(f"{name} must be a date")
        if self.accident_time is not None and not (
            isinstance(self.accident_time, str) and _TIME_RE.match(self.accident_time)
        ):
            raise InvalidRecord(f"accident_time must be HH:MM, got {self.accident_time!r}")
        for name in ("killed", "injured"):
            value = getattr(self, name)
            if value is not None and (isinstance(value, bool) or not isinstance(value, int) or value < 0):
                raise InvalidRecord(f"{name} must be a non-negative integer")
        if self.pedestrian_involved is not None and not isinstance(self.pedestrian_involved, bool):
            raise InvalidRecord("pedestrian_involved must be a bool or None")
        vt = self.vehicle_types
        if isinstance(vt, list):
            object.__setattr__(self, "vehicle_types", tuple(vt))
            vt = self.vehicle_types
        for token in vt:
            if not isinstance(token, str) or not token or token != token.strip().lower() or "|" in token or "\x00" in token:
                raise InvalidRecord(f"bad vehicle token {token!r}")
        if len(set(vt)) != len(vt):
            raise InvalidRecord("duplicate vehicle tokens")

    def field_values(self) -> dict:
        return {name: getattr(self, name) for name in FIELD_NAMES}

    def to_json(self) -> dict:
        d = asdict(self)
        for name in ("publish_date", "accident_date"):
            if d[name] is not None:
                d[name] = d[name].isoformat()
        d["vehicle_types"] = list(self.vehicle_types)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "AccidentRecord":
        kwargs = {f.name: d[f.name] for f in fields(cls) if f.name in d}
        for name in ("publish_date", "accident_date"):
            if kwargs.get(name) is not None:
                kwargs[name] = date.fromisoformat(kwargs[name])
        kwargs["vehicle_types"] = tuple(kwargs.get("vehicle_types") or ())
        return cls(**kwargs)


# --------------------------------------------------------------------------
# normalisation

_NULLISH = {"", "unknown", "n/a", "na", "none", "null", "not mentioned", "not specified", "not available"}

NUMBER_WORDS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4, "five": 5, "six": 6,
    "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
    "thirteen": 13, "fourteen": 14, "fifteen": 15, "sixteen": 16,
    "seventeen": 17, "eighteen": 18, "nineteen": 19, "twenty": 20,
}


def _is_null(text) -> bool:
    return text is None or str(text).strip().lower().rstrip(".") in _NULLISH


def normalize_count(text: str, field_name: str = "count") -> int | None:
    """Digits or an English number word up to twenty; ``unknown`` gives ``None``."""
    if _is_null(text):
        return None
    s = str(text).strip().lower().rstrip(".")
    if s.isascii() and s.isdigit():
        return int(s)
    if s in NUMBER_WORDS:
        return NUMBER_WORDS[s]
    raise UnnormalizableField(field_name, str(text))


MONTHS = {
    name: i
    for i, names in enumerate(
        [
            ("january", "jan"), ("february", "feb"), ("march", "mar"), ("april", "apr"),
            ("may",), ("june", "jun"), ("july", "jul"), ("august", "aug"),
            ("september", "sep", "sept"), ("october", "oct"), ("november", "nov"), ("december", "dec"),
        ],
        start=1,
    )
    for name in names
}
WEEKDAYS = {name: i for i, name in enumerate(
    ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"]
)}

_ISO_DATE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_DMY = re.compile(r"^(\d{1,2})(?:st|nd|rd|th)?\s+([a-z]+)\.?,?\s+(\d{4})$")
_MDY = re.compile(r"^([a-z]+)\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})$")
_RELATIVE_PREFIX = re.compile(r"^(?:on|last|this|past)\s+")


def _safe_date(y: int, m: int, d: int) -> date | None:
    try:
        return date(y, m, d)
    except ValueError:
        return None


def most_recent_weekday(weekday: int, on_or_before: date) -> date:
    """Latest date with the given weekday (Monday=0) not after ``on_or_before``."""
    return on_or_before - timedelta(days=(on_or_before.weekday() - weekday) % 7)


def normalize_date(text: str, publish_date: date | None = None) -> date | None:
    """Parse an accident date.

    Accepts ISO ``YYYY-MM-DD``, ``9 April 2024``, ``April 9, 2024``, and
    relative words (``yesterday``, ``today``, weekday names) which are
    resolved against ``publish_date``.  Anything else yields ``None``.
    """
    if isinstance(text, date):
        return text
    if _is_null(text):
        return None
    s = " ".join(str(text).strip().lower().rstrip(".").split())
    if m := _ISO_DATE.match(s):
        return _safe_date(int(m[1]), int(m[2]), int(m[3]))
    if m := _DMY.match(s):
        month = MONTHS.get(m[2])
        return _safe_date(int(m[3]), month, int(m[1])) if month else None
    if m := _MDY.match(s):
        month = MONTHS.get(m[1])
        return _safe_date(int(m[3]), month, int(m[2])) if month else None
    if publish_date is None:
        return None
    s = _RELATIVE_PREFIX.sub("", s)
    if s == "today":
        return publish_date
    if s == "yesterday":
        return publish_date - timedelta(days=1)
    for suffix in (" night", " morning", " afternoon", " evening", ""):
        word = s[: -len(suffix)] if suffix and s.endswith(suffix) else s
        if word in WEEKDAYS:
            return most_recent_weekday(WEEKDAYS[word], publish_date)
    return None


_HM = re.compile(r"^(\d{1,2})[:.](\d{2})$")
_HM_AMPM = re.compile(r"^(\d{1,2})(?:[:.](\d{2}))?\s*([ap])\.?\s*m\.?$")


def normalize_time(text: str, day_parts: Mapping[str, str] | None = None) -> str | None:
    """24-hour ``HH:MM`` from ``17:30``, ``5:30 pm`` or ``9 am``.

    Named parts of the day (``night``, ``morning``) map through ``day_parts``
    when given and are otherwise ``None``.
    """
    if _is_null(text):
        return None
    s = " ".join(str(text).strip().lower().split())
    s = re.sub(r"^(?:at|around|about)\s+", "", s)
    if m := _HM.match(s):
        h, mi = int(m[1]), int(m[2])
        return f"{h:02d}:{mi:02d}" if h < 24 and mi < 60 else None
    if m := _HM_AMPM.match(s):
        h, mi = int(m[1]), int(m[2] or 0)
        if not 1 <= h <= 12 or mi >= 60:
            return None
        h = h % 12 + (12 if m[3] == "p" else 0)
        return f"{h:02d}:{mi:02d}"
    if day_parts:
        mapped = day_parts.get(s)
        if mapped is not None:
            return normalize_time(mapped)
    return None


def normalize_bool(text) -> bool | None:
    if isinstance(text, bool):
        return text
    if text is None:
        return None
    s = str(text).strip().lower().rstrip(".")
    if s in ("yes", "true", "y"):
        return True
    if s in ("no", "false", "n"):
        return False
    return None


VEHICLE_SYNONYMS = {
    "buses": "bus",
    "busses": "bus",
    "trucks": "truck",
    "lorry": "truck",
    "lorries": "truck",
    "motorcycles": "motorcycle",
    "motorbike": "motorcycle",
    "motorbikes": "motorcycle",
    "motor cycle": "motorcycle",
    "bike": "motorcycle",
    "auto-rickshaw": "autorickshaw",
    "auto rickshaw": "autorickshaw",
    "auto-rickshaws": "autorickshaw",
    "autorickshaws": "autorickshaw",
    "cng-run auto-rickshaw": "cng",
    "cng auto-rickshaw": "cng",
    "cng-run autorickshaw": "cng",
    "rickshaws": "rickshaw",
    "battery-run rickshaw": "easybike",
    "easy bike": "easybike",
    "easy-bike": "easybike",
    "cars": "car",
    "private car": "car",
    "microbuses": "microbus",
    "pickup van": "pickup",
    "pick-up": "pickup",
    "pickups": "pickup",
    "covered vans": "covered van",
    "trains": "train",
    "bicycles": "bicycle",
    "cycle": "bicycle",
}
_VEHICLE_SPLIT = re.compile(r"\s*(?:,|;|\band\b|&|\|)\s*")
_LEADING_ARTICLE = re.compile(r"^(?:(?:a|an|the|one)\s+)+")


def normalize_vehicles(text) -> tuple[str, ...]:
    """Split a vehicle list into canonical lowercase tokens, deduplicated in order."""
    if isinstance(text, (list, tuple)):
        text = ", ".join(str(t) for t in text)
    if _is_null(text):
        return ()
    out: list[str] = []
    for piece in _VEHICLE_SPLIT.split(str(text).lower()):
        token = " ".join(_LEADING_ARTICLE.sub("", piece.strip().rstrip(".")).split())
        if _is_null(token):
            continue
        token = VEHICLE_SYNONYMS.get(token, token)
        if token not in out:
            out.append(token)
    return tuple(out)


def normalize_text(text) -> str | None:
    if _is_null(text):
        return None
    return " ".join(str(text).split()) or None


def build_record(
    raw: Mapping[str, str],
    *,
    source: str,
    url: str,
    title: str,
    publish_date: date | None,
    model: str,
    day_parts: Mapping[str, str] | None = None,
    strict: bool = False,
) -> AccidentRecord:
    """Normalise a raw model answer (the eight keys) into an :class:`AccidentRecord`.

    With ``strict=False`` an unparseable count becomes ``None`` and is logged.
    """

    def count(name: str):
        try:
            return normalize_count(raw.get(name), name)
        except UnnormalizableField:
            if strict:
                raise
            log.info("unnormalisable %s %r for %s", name, raw.get(name), url)
            return None

    return AccidentRecord(
        source=source,
        url=url,
        title=title,
        publish_date=publish_date,
        accident_date=normalize_date(raw.get("accident_date"), publish_date),
        accident_time=normalize_time(raw.get("time"), day_parts),
        killed=count("killed"),
        injured=count("injured"),
        location=normalize_text(raw.get("location")),
        road_characteristics=normalize_text(raw.get("road_characteristics")),
        pedestrian_involved=normalize_bool(raw.get("pedestrian_involved")),
        vehicle_types=normalize_vehicles(raw.get("vehicle_types")),
        model=model,
    )


_PUBLISH_PREFIX = re.compile(r"^(?:published|updated|posted)\s*(?:on|at)?\s*:?\s*", re.I)


def parse_publish_date(raw: str | None) -> date | None:
    """Best effort on a listing page's displayed date (``Published: 10 April 2024``)."""
    if not raw:
        return None
    s = _PUBLISH_PREFIX.sub("", raw.strip())
    s = re.sub(r"\s+\d{1,2}:\d{2}(?:\s*[ap]\.?m\.?)?$", "", s, flags=re.I)
    s = re.sub(r"^(?:mon|tue|wed|thu|fri|sat|sun)[a-z]*,?\s+", "", s, flags=re.I)
    return normalize_date(s.rstrip(","))


# --------------------------------------------------------------------------
# CSV / JSONL


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, tuple):
        return "|".join(value)
    return str(value)


def to_csv(records: Iterable[AccidentRecord]) -> bytes:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(
            [
                _cell(r.source), _cell(r.url), _cell(r.title), _cell(r.publish_date),
                _cell(r.accident_date), _cell(r.accident_time), _cell(r.killed), _cell(r.injured),
                _cell(r.location), _cell(r.road_characteristics), _cell(r.pedestrian_involved),
                _cell(r.vehicle_types), _cell(r.model),
            ]
        )
    return buf.getvalue().encode("utf-8")


def _opt(cell: str):
    return cell if cell != "" else None


def from_csv(data: bytes | str) -> list[AccidentRecord]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise CsvSchemaMismatch(f"unexpected header {header!r}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(CSV_HEADER):
            raise CsvSchemaMismatch(f"row {lineno}: expected {len(CSV_HEADER)} cells, got {len(row)}")
        (source, url, title, pub, acc_date, acc_time, killed, injured,
         location, road, ped, vehicles, model) = row
        try:
            out.append(
                AccidentRecord(
                    source=source,
                    url=url,
                    title=title,
                    publish_date=date.fromisoformat(pub) if pub else None,
                    accident_date=date.fromisoformat(acc_date) if acc_date else None,
                    accident_time=_opt(acc_time),
                    killed=int(killed) if killed else None,
                    injured=int(injured) if injured else None,
                    location=_opt(location),
                    road_characteristics=_opt(road),
                    pedestrian_involved={"true": True, "false": False, "": None}[ped],
                    vehicle_types=tuple(vehicles.split("|")) if vehicles else (),
                    model=model,
                )
            )
        except (ValueError, KeyError) as exc:
            raise CsvSchemaMismatch(f"row {lineno}: {exc}") from exc
    return out


def to_jsonl(records: Iterable[AccidentRecord]) -> bytes:
    return b"".join(
        (json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n").encode("utf-8") for r in records
    )


def from_jsonl(data: bytes | str) -> list[AccidentRecord]:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    return [AccidentRecord.from_json(json.loads(line)) for line in text.split("\n") if line.strip()]
