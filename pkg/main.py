"""
riskrules -- stable sparse risk rules for binary outcomes.

Pipeline:  CSV -> prep (filter + balanced split) -> rule / train / boost -> eval

Usage:
    python main.py synth --n 500 --p 50 --count-threshold 0.5 --out data/synth.csv
    python main.py prep  --data data/synth.csv --label y --out-dir data/run1
    python main.py rule  --data data/run1/train.csv --label y --k 10 --B 100 --seed 7 --out out/rule.json
    python main.py boost --data data/run1/train.csv --label y --out out/rgb.json
    python main.py eval  --model out/rule.json --data data/run1/test.csv --label y --roc out/roc.csv
"""

from __future__ import annotations

import sys

from riskrules.cli import run


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
