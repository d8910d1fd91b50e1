"""Run the committed fixture corpus end to end and compare with the golden dataset.

    python scripts/run_fixture_pipeline.py [--out DIR] [--repeat N]

Exits non-zero if any run differs from tests/fixtures/corpus/golden/dataset.csv.
"""

import argparse
import sys
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

from crashnews import cli

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "tests" / "fixtures" / "corpus"


@dataclass
class FixtureRun:
    config: Path = CORPUS / "run.json"
    golden: Path = CORPUS / "golden" / "dataset.csv"
    repeat: int = 1

    def once(self, out: Path) -> tuple[int, float, bool]:
        started = time.perf_counter()
        code = cli.main(["run", "--config", str(self.config), "--out", str(out)])
        elapsed = time.perf_counter() - started
        same = code == 0 and (out / "dataset.csv").read_bytes() == self.golden.read_bytes()
        return code, elapsed, same


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, help="keep artifacts here (default: a temp dir)")
    ap.add_argument("--repeat", type=int, default=1)
    args = ap.parse_args()

    run = FixtureRun(repeat=args.repeat)
    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        for i in range(run.repeat):
            out = (args.out or Path(tmp)) / f"run{i}"
            code, elapsed, same = run.once(out)
            print(f"run {i}: exit={code} time={elapsed:.2f}s golden={'match' if same else 'DIFFERS'}  ({out})")
            ok &= same
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
