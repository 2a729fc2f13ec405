"""Predict and evaluate the bundled Spider-style questions offline.

The model is replaced by a recorded session, so the run is exact and needs
no network. Usage:

    python3 demos/replay_walkthrough.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from sqlharness.cli import main
from sqlharness.datasets import materialize, write_replay_fixture


def run(workdir):
    paths = materialize(workdir / "data")
    config = write_replay_fixture(paths, workdir / "data")
    print(f"run config: {config}\n")

    # one prompt, exactly as the model sees it
    main(["serialize", "--config", str(config), "--question-id", "cs-2", "--lowercase"])

    # three prompting paradigms, then a per-question execution vote across them
    main(["predict", "--config", str(config), "--combine", "--jobs", "4"])
    out = config.parent / "out"
    for name in ("concise", "verbose", "content", "combined"):
        print(f"\n== {name} ==")
        main(["evaluate", "--config", str(config), "--predictions", str(out / f"predictions_{name}.jsonl")])


if __name__ == "__main__":
    if len(sys.argv) > 1:
        run(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as tmp:
            run(Path(tmp))
