"""Run every CLI experiment on the shipped configs into results/."""
import sys
from pathlib import Path

from eitlab.cli import main

ROOT = Path(__file__).resolve().parents[1]
JOBS = [
    ("forward", "default.json", "forward"),
    ("stability", "default.json", "stability_continuum"),
    ("stability", "cem.json", "stability_cem"),
    ("localize", "localize.json", "localize"),
    ("monotonicity", "default.json", "monotonicity_continuum"),
    ("monotonicity", "cem.json", "monotonicity_cem"),
    ("convergence", "convergence.json", "convergence"),
    ("signs", "default.json", "signs"),
]

if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else ROOT / "results"
    failed = []
    for cmd, cfg, name in JOBS:
        code = main([cmd, "--config", str(ROOT / "configs" / cfg), "--out", str(out / name)])
        if code:
            failed.append((name, code))
    if failed:
        print("failed:", failed, file=sys.stderr)
    sys.exit(1 if failed else 0)
