"""Run the whole pipeline offline against the bundled fixtures and print a summary.

    python3 scripts/demo_mock_run.py [--out /tmp/demo-run] [--evaluate]

The fixture corpus is served from a local E-utilities stub and every agent
reply comes from fixtures/mock_script.json, so the run needs no network or
API key. Code runs in the namespace sandbox.
"""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from researchflow.cli import main

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, help="run directory (default: a fresh temp dir)")
    p.add_argument("--evaluate", action="store_true", help="also score the protocol")
    return p.parse_args()


def main_demo() -> int:
    args = parse_args()
    out = args.out or Path(tempfile.mkdtemp(prefix="researchflow-demo-")) / "run"
    request = json.loads((FIXTURES / "request.json").read_text())
    argv = [
        "run",
        "--objective", request["objective"],
        "--conditions", request["conditions"],
        "--requirements", request["requirements"],
        "--out", str(out),
        "--mock", str(FIXTURES / "mock_script.json"),
        "--fixture-corpus", str(FIXTURES / "corpus.json"),
    ]
    if args.evaluate:
        argv.append("--evaluate")
    code = main(argv)
    if code == 0:
        protocol = json.loads((out / "design" / "protocol.json").read_text())
        print(f"\nprotocol sections: {[s['heading'] for s in protocol['sections']]}")
        scores = out / "evaluation" / "scores.json"
        if scores.exists():
            print(f"overall score: {json.loads(scores.read_text())['scores']['overall']:.3f} / 5")
    return code


if __name__ == "__main__":
    sys.exit(main_demo())
