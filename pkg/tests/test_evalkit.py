import json
import random
from dataclasses import replace
from datetime import date
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from crashnews.evalkit import (
    PLOT_HEADER, EmptyDenominator, EvalReport, GoldInvalid, Match, Tally, accuracy, emit_report, evaluate,
    fold_free_text, load_gold, load_tallies, match_field,
)
from crashnews.records import FIELD_NAMES, AccidentRecord

from conftest import FIXTURES


def gold_doc(*entries):
    return json.dumps({"entries": list(entries)})


def gold_item(url, **fields):
    base = {"accident_date": "2024-04-08", "accident_time": "17:30", "killed": 2, "injured": 3,
            "location": "Dhaka-Mawa highway", "road_characteristics": "highway", "pedestrian_involved": False,
            "vehicle_types": ["bus", "motorcycle"]}
    base.update(fields)
    return {"url": url, "fields": base}


def matching_record(item, source="Test Daily", model="gpt-4o"):
    f = item["fields"]
    return AccidentRecord(
        source=source, url=item["url"], title="t", publish_date=None,
        accident_date=date.fromisoformat(f["accident_date"]) if f["accident_date"] else None,
        accident_time=f["accident_time"], killed=f["killed"], injured=f["injured"], location=f["location"],
        road_characteristics=f["road_characteristics"], pedestrian_involved=f["pedestrian_involved"],
        vehicle_types=tuple(f["vehicle_types"]), model=model,
    )


A, B = gold_item("https://x/a"), gold_item("https://x/b", killed=None, location="Kanchpur bridge")


def test_load_gold_two_entries():
    gold = load_gold(gold_doc(A, B))
    assert len(gold) == 2 and "https://x/a" in gold
    assert gold.entries["https://x/a"].fields["accident_date"] == date(2024, 4, 8)


@pytest.mark.parametrize("doc,field", [
    (gold_doc(A, A), "url"),
    (gold_doc(gold_item("u", killed=-1)), "killed"),
    (gold_doc(gold_item("u", accident_time="7pm")), "accident_time"),
    (gold_doc(gold_item("u", accident_date="09/04/2024")), "accident_date"),
    (gold_doc({"url": "u", "fields": {"killed": 1}}), "accident_date"),
    (gold_doc(gold_item("u", weather="rain")), "weather"),
    (gold_doc(gold_item("u", vehicle_types="bus")), "vehicle_types"),
    (gold_doc(gold_item("u", pedestrian_involved="no")), "pedestrian_involved"),
    ('{"entries": {}}', None),
    ("not json", None),
])
def test_load_gold_errors(doc, field):
    with pytest.raises(GoldInvalid) as info:
        load_gold(doc)
    assert info.value.field == field


@pytest.mark.parametrize("name,pred,gold,expected", [
    ("killed", 2, 2, Match.CORRECT),
    ("killed", 2, 3, Match.WRONG),
    ("killed", None, None, Match.CORRECT),
    ("killed", 0, None, Match.WRONG),
    ("pedestrian_involved", False, 0, Match.WRONG),
    ("pedestrian_involved", None, False, Match.WRONG),
    ("vehicle_types", ("bus", "motorcycle"), ("motorcycle", "bus"), Match.CORRECT),
    ("vehicle_types", ("bus",), ("bus", "truck"), Match.WRONG),
    ("vehicle_types", (), (), Match.CORRECT),
    ("location", "Dhaka–Chattogram Highway", "dhaka chattogram highway", Match.CORRECT),
    ("location", "Kanchpur, Narayanganj.", "kanchpur narayanganj", Match.CORRECT),
    ("location", "Gazipur", "Tongi", Match.WRONG),
    ("location", None, "Tongi", Match.WRONG),
    ("road_characteristics", None, None, Match.CORRECT),
    ("accident_date", date(2024, 4, 8), date(2024, 4, 8), Match.CORRECT),
    ("accident_time", "17:30", "17:31", Match.WRONG),
])
def test_match_field(name, pred, gold, expected):
    assert match_field(name, pred, gold) is expected


def test_fold_free_text():
    assert fold_free_text("  Dhaka–Chattogram   HIGHWAY! ") == "dhaka chattogram highway"
    assert fold_free_text("ঢাকা, বাংলাদেশ") == "ঢাকা বাংলাদেশ"


def test_evaluate_exact_match():
    gold = load_gold(gold_doc(A, B))
    rep = evaluate([matching_record(A), matching_record(B)], gold)
    t = rep.model_totals()["gpt-4o"]
    assert (t.correct, t.wrong) == (16, 0)
    assert rep.coverage_gaps == {} and rep.skipped == {}


def test_evaluate_one_flip():
    gold = load_gold(gold_doc(A, B))
    rep = evaluate([matching_record(A), replace(matching_record(B), injured=4)], gold)
    t = rep.model_totals()["gpt-4o"]
    assert (t.correct, t.wrong) == (15, 1)
    assert rep.cells[("gpt-4o", "Test Daily", "injured")] == Tally(1, 1)


def test_evaluate_empty_dataset():
    rep = evaluate([], load_gold(gold_doc(A, B)), model="gpt-4o")
    assert rep.cells == {} and rep.coverage_gaps == {"gpt-4o": ["https://x/a", "https://x/b"]}


def test_evaluate_skips_records_outside_gold_and_duplicates():
    gold = load_gold(gold_doc(A))
    other = replace(matching_record(A), url="https://x/other")
    rep = evaluate([matching_record(A), other, matching_record(A)], gold)
    assert rep.skipped == {"gpt-4o": 2}
    assert rep.model_totals()["gpt-4o"].total == 8


def test_evaluate_source_filter_and_model_override():
    gold = load_gold(gold_doc(A, B))
    rep = evaluate([matching_record(A, source="S1"), matching_record(B, source="S2")], gold, model="m",
                   sources=["S1"])
    assert {k[:2] for k in rep.cells} == {("m", "S1")}


def oracle_percent(c, w):
    return int((Decimal(c) * 100 / Decimal(c + w)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@pytest.mark.parametrize("c,w,value,label", [
    (1499, 145, 0.9118, "91%"), (1450, 177, 0.8912, "89%"), (1224, 384, 0.7612, "76%"),
])
def test_accuracy_published_totals(c, w, value, label):
    acc = accuracy(c, w)
    assert acc.value == pytest.approx(value, abs=1e-4)
    assert acc.label == label


def test_accuracy_half_up_boundaries():
    assert accuracy(1, 1).percent == 50
    assert accuracy(1, 199).percent == 1  # 0.5% rounds up
    assert accuracy(1, 0).percent == 100 and accuracy(0, 3).percent == 0
    with pytest.raises(EmptyDenominator):
        accuracy(0, 0)


@given(st.integers(0, 10_000), st.integers(0, 10_000))
def test_accuracy_matches_decimal_oracle(c, w):
    if c + w == 0:
        return
    acc = accuracy(c, w)
    assert acc.value == float(Fraction(c, c + w))
    assert acc.percent == oracle_percent(c, w)


@given(st.integers(0, 500), st.integers(1, 500))
def test_accuracy_monotone(c, w):
    assert accuracy(c + 1, w - 1).value >= accuracy(c, w).value
    assert accuracy(c + 1, w - 1).percent >= accuracy(c, w).percent


def brute_force_counts(records, gold):
    counts = {}
    for r in records:
        if r.url not in gold:
            continue
        truth = gold.entries[r.url].fields
        for f in FIELD_NAMES:
            key = (r.model, r.source, f)
            c, w = counts.get(key, (0, 0))
            if match_field(f, getattr(r, f), truth[f]) is Match.CORRECT:
                c += 1
            else:
                w += 1
            counts[key] = (c, w)
    return counts


perturbations = st.lists(st.tuples(st.integers(0, 5), st.sampled_from(FIELD_NAMES)), max_size=10)


def perturbed_dataset(flips):
    items = [gold_item(f"https://x/{i}", killed=i) for i in range(6)]
    recs = [matching_record(it, source=f"S{i % 3}") for i, it in enumerate(items)]
    for i, name in flips:
        value = {"accident_date": date(2000, 1, 1), "accident_time": "00:00", "killed": 99, "injured": 99,
                 "location": "elsewhere", "road_characteristics": "alley", "pedestrian_involved": True,
                 "vehicle_types": ("train",)}[name]
        recs[i] = replace(recs[i], **{name: value})
    return load_gold(gold_doc(*items)), recs


@settings(max_examples=200)
@given(perturbations, st.randoms())
def test_conservation_and_permutation_invariance(flips, rnd):
    gold, recs = perturbed_dataset(flips)
    rep = evaluate(recs, gold)
    assert {k: (t.correct, t.wrong) for k, t in rep.cells.items()} == brute_force_counts(recs, gold)
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert evaluate(shuffled, gold).cells == rep.cells
    total = rep.model_totals()["gpt-4o"]
    assert total.total == 6 * 8
    assert total.wrong == len({(i, f) for i, f in flips})


@settings(max_examples=100)
@given(perturbations, st.integers(0, 5), st.sampled_from(FIELD_NAMES))
def test_fixing_a_wrong_never_lowers_accuracy(flips, i, name):
    gold, bad = perturbed_dataset(flips)
    good = list(bad)
    good[i] = matching_record(gold_item(f"https://x/{i}", killed=i), source=f"S{i % 3}")
    before, after = evaluate(bad, gold), evaluate(good, gold)
    for key, t in before.cells.items():
        assert after.cells[key].correct >= t.correct


def test_emit_report_empty():
    table, plot = emit_report(EvalReport())
    assert plot == (",".join(PLOT_HEADER) + "\n").encode()
    assert "Overall accuracy by model" in table


def test_emit_report_single_cell():
    rep = EvalReport()
    rep.tally("gpt-4o", "S", "killed").add(Match.CORRECT)
    table, plot = emit_report(rep)
    assert plot.decode().splitlines()[1:] == ["gpt-4o,S,killed,1,0,1.000000"]


def test_emit_report_published_totals_fixture():
    rep = load_tallies((FIXTURES / "published_totals.csv").read_bytes())
    table, plot = emit_report(rep)
    overall = table.split("\n\n")[1].splitlines()
    assert [line.split()[0] for line in overall[1:]] == ["GPT-3.5", "GPT-4", "Llama-3"]
    assert [line.split()[-1] for line in overall[1:]] == ["76%", "91%", "89%"]
    assert overall[3].split()[1:5] == ["1450", "177", "1627", "0.8912"]
    assert load_tallies(plot).cells == rep.cells


def test_emit_report_ordering_is_deterministic():
    rep = EvalReport()
    for model in ("b", "a"):
        for f in reversed(FIELD_NAMES):
            rep.tally(model, "S", f).add(Match.WRONG)
    rows = emit_report(rep)[1].decode().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["a"] * 8 + ["b"] * 8
    assert [r.split(",")[2] for r in rows[:8]] == list(FIELD_NAMES)


def test_merge_adds_cells():
    gold = load_gold(gold_doc(A))
    one = evaluate([matching_record(A, model="m1")], gold)
    two = evaluate([matching_record(A, model="m2")], gold)
    merged = one.merge(two)
    assert merged.models == ["m1", "m2"]
    assert merged.model_totals()["m2"].total == 8


@pytest.mark.parametrize("text", ["x,y\n", "model,source,field,correct,wrong,accuracy\nm,s,f,1\n",
                                  "model,source,field,correct,wrong,accuracy\nm,s,f,-1,0,\n"])
def test_load_tallies_errors(text):
    with pytest.raises(ValueError):
        load_tallies(text)


def test_random_report_csv_round_trip():
    rng = random.Random(7)
    rep = EvalReport()
    for _ in range(50):
        t = rep.tally(rng.choice("xyz"), rng.choice(["S1", "S, 2"]), rng.choice(FIELD_NAMES))
        t.add(rng.choice(list(Match)))
    assert load_tallies(emit_report(rep)[1]).cells == rep.cells
