"""Score the published per-model totals and print the accuracy table.

    python scripts/reference_totals.py [--csv out.csv]
"""

import argparse
from dataclasses import dataclass, field
from pathlib import Path

from crashnews.evalkit import EvalReport, emit_report


@dataclass
class ReferenceTotals:
    # model label -> (correct, wrong) over every scored field
    tallies: dict[str, tuple[int, int]] = field(default_factory=lambda: {
        "Llama-3": (1450, 177),
        "GPT-3.5": (1224, 384),
        "GPT-4": (1499, 145),
    })
    source: str = "all sources"
    field_name: str = "all fields"

    def report(self) -> EvalReport:
        rep = EvalReport()
        for model, (correct, wrong) in self.tallies.items():
            t = rep.tally(model, self.source, self.field_name)
            t.correct, t.wrong = correct, wrong
        return rep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--csv", type=Path, help="also write the plot-data CSV here")
    args = ap.parse_args()

    table, plot = emit_report(ReferenceTotals().report())
    print(table, end="")
    if args.csv:
        args.csv.write_bytes(plot)


if __name__ == "__main__":
    main()
