import json

import pytest

from crashnews import cli

from conftest import CORPUS, FIXTURES

RUN_CONFIG = CORPUS / "run.json"
ARTIFACTS = ("index.jsonl", "articles.jsonl", "harvest_warnings.jsonl", "dataset.csv", "excluded.jsonl",
             "raw_extractions.jsonl", "report.txt", "report.csv")


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_golden_run(tmp_path, capsys):
    assert run("run", "--config", RUN_CONFIG, "--out", tmp_path) == 0
    assert (tmp_path / "dataset.csv").read_bytes() == (CORPUS / "golden" / "dataset.csv").read_bytes()
    for name in ARTIFACTS:
        assert (tmp_path / name).exists(), name
    excluded = [json.loads(line) for line in (tmp_path / "excluded.jsonl").read_text().splitlines()]
    assert sorted(e["reason"] for e in excluded) == ["extraction-failed", "general", "general", "general"]
    out = capsys.readouterr().out
    assert "14 index entries, 12 articles, 2 warnings" in out
    assert "12 articles -> 8 records, 4 excluded" in out
    overall = out.split("Overall accuracy by model")[1].split("\n\n")[1].splitlines()[1]
    assert overall.split() == ["llama-3-70b-8192", "61", "3", "64", "0.9531", "95%"]


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("run", "--config", RUN_CONFIG, "--out", a) == 0
    assert run("run", "--config", RUN_CONFIG, "--out", b) == 0
    for name in ARTIFACTS:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_stages_separately_match_run(tmp_path):
    assert run("harvest", "--config", RUN_CONFIG, "--out", tmp_path) == 0
    assert run("extract", "--config", RUN_CONFIG, "--out", tmp_path) == 0
    assert (tmp_path / "dataset.csv").read_bytes() == (CORPUS / "golden" / "dataset.csv").read_bytes()
    assert run("evaluate", "--gold", CORPUS / "gold.json", "--dataset", tmp_path / "dataset.csv",
               "--out", tmp_path) == 0
    assert "95%" in (tmp_path / "report.txt").read_text()


def test_all_general_script_gives_header_only_dataset(tmp_path):
    script = tmp_path / "general.json"
    script.write_text(json.dumps({"rules": [{"match": "Classify", "responses": ["General"]}]}))
    assert run("run", "--config", RUN_CONFIG, "--script", script, "--out", tmp_path / "o") == 0
    data = (tmp_path / "o" / "dataset.csv").read_bytes()
    assert data.count(b"\r\n") == 1 and data.startswith(b"source,url,title")


def test_missing_api_key_exits_3_and_keeps_harvest(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    assert run("run", "--config", RUN_CONFIG, "--provider", "openai", "--model", "gpt-4o", "--out", tmp_path) == 3
    assert (tmp_path / "index.jsonl").exists() and (tmp_path / "articles.jsonl").exists()
    assert not (tmp_path / "dataset.csv").exists()
    err = capsys.readouterr().err.strip().splitlines()
    assert any("OPENAI_API_KEY" in json.loads(line)["msg"] for line in err)


def test_failed_extract_leaves_harvest_artifacts(tmp_path):
    script = tmp_path / "auth.json"
    script.write_text(json.dumps({"rules": [{"match": "", "responses": [{"fail": "auth"}]}]}))
    assert run("run", "--config", RUN_CONFIG, "--script", script, "--out", tmp_path / "o") == 3
    assert len((tmp_path / "o" / "articles.jsonl").read_text().splitlines()) == 12
    assert not list((tmp_path / "o").glob("*.tmp"))


def test_malformed_gold_exits_4(tmp_path):
    gold = tmp_path / "gold.json"
    gold.write_text(json.dumps({"entries": [{"url": "u", "fields": {"killed": -1}}]}))
    assert run("run", "--config", RUN_CONFIG, "--gold", gold, "--out", tmp_path / "o") == 4


def test_bad_inputs_exit_4(tmp_path):
    assert run("run", "--config", tmp_path / "missing.json") == 4
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sites": [], "provider": "scripted"}))
    assert run("harvest", "--config", cfg, "--out", tmp_path) == 4
    cfg.write_text(json.dumps({"sites": [str(CORPUS / "sites" / "daily_star.json")]}))
    assert run("extract", "--config", cfg, "--articles", CORPUS / "nope.jsonl", "--out", tmp_path) == 4
    assert run("evaluate", "--gold", CORPUS / "gold.json") == 4
    bad_site = tmp_path / "site.json"
    bad_site.write_text(json.dumps({"source_name": "X", "listing_urls": ["https://x.example/"],
                                    "index_selectors": {"title": "a", "link": "div..x", "date": "b"}}))
    cfg.write_text(json.dumps({"sites": [str(bad_site)]}))
    assert run("harvest", "--config", cfg, "--out", tmp_path) == 4


LISTING = """<html><body>
<div class="item"><a href="/n/1">Bus crash in Sylhet</a><time>1 May 2024</time></div>
<div class="item"><a href="/n/2">Truck overturns</a><time>2 May 2024</time></div>
<div class="item"><a href="/n/3">Train hits car</a><time>3 May 2024</time></div>
</body></html>"""


def mini_site(tmp_path, manifest, robots=None):
    pages = tmp_path / "pages"
    pages.mkdir()
    (pages / "listing.html").write_text(LISTING)
    (pages / "story.html").write_text("<html><p>One person died.</p></html>")
    if robots is not None:
        (pages / "robots.txt").write_text(robots)
        manifest["https://mini.example/robots.txt"] = {"file": "robots.txt"}
    (pages / "manifest.json").write_text(json.dumps(manifest))
    site = tmp_path / "site.json"
    site.write_text(json.dumps({
        "source_name": "Mini", "listing_urls": ["https://mini.example/latest"],
        "index_selectors": {"title": "div.item a", "link": "div.item a::attr(href)", "date": "div.item time"},
    }))
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"sites": ["site.json"], "fixture_dir": "pages", "output_dir": "out"}))
    return cfg


def test_harvest_three_line_index(tmp_path):
    manifest = {"https://mini.example/latest": {"file": "listing.html"}}
    manifest.update({f"https://mini.example/n/{i}": {"file": "story.html"} for i in (1, 2, 3)})
    cfg = mini_site(tmp_path, manifest)
    assert run("harvest", "--config", cfg) == 0
    index = (tmp_path / "out" / "index.jsonl").read_text().splitlines()
    assert [json.loads(line)["link"] for line in index] == [f"https://mini.example/n/{i}" for i in (1, 2, 3)]


def test_unreachable_site_exits_2(tmp_path):
    cfg = mini_site(tmp_path, {"https://mini.example/latest": {"error": "connection refused"}})
    assert run("harvest", "--config", cfg) == 2
    warnings = [json.loads(line) for line in (tmp_path / "out" / "harvest_warnings.jsonl").read_text().splitlines()]
    assert [w["kind"] for w in warnings] == ["ExhaustedRetries"]


def test_robots_blocked_listing_exits_2(tmp_path):
    cfg = mini_site(tmp_path, {"https://mini.example/latest": {"file": "listing.html"}},
                    robots="User-agent: *\nDisallow: /latest\n")
    assert run("harvest", "--config", cfg) == 2
    warnings = (tmp_path / "out" / "harvest_warnings.jsonl").read_text()
    assert json.loads(warnings)["kind"] == "RobotsDenied"


def test_evaluate_published_totals(tmp_path, capsys):
    assert run("evaluate", "--tallies", FIXTURES / "published_totals.csv", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    lines = {line.split()[0]: line.split() for line in out.split("\n\n")[1].splitlines()[1:]}
    assert lines["Llama-3"][-1] == "89%" and lines["GPT-3.5"][-1] == "76%" and lines["GPT-4"][-1] == "91%"
    assert (tmp_path / "report.csv").read_bytes().count(b"\n") == 4


def test_evaluate_without_gold_overlap(tmp_path, capsys):
    gold = tmp_path / "gold.json"
    gold.write_text(json.dumps({"entries": []}))
    assert run("evaluate", "--gold", gold, "--dataset", CORPUS / "golden" / "dataset.csv") == 0
    err = capsys.readouterr().err
    assert "nothing was scored" in err


def test_stderr_is_json_lines(tmp_path, capsys):
    run("run", "--config", RUN_CONFIG, "--out", tmp_path, "-v")
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines and all({"level", "logger", "msg"} <= set(json.loads(line)) for line in lines)


def test_usage_errors_exit_4():
    with pytest.raises(SystemExit) as info:
        run("bogus")
    assert info.value.code == 4
    with pytest.raises(SystemExit) as info:
        run("run", "--provider", "nope")
    assert info.value.code == 4
