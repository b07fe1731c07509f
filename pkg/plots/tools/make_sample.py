"""Regenerate sample_export/ from the simulator's default scenario.

Usage: python3 tools/make_sample.py  (run from the plots/ directory;
requires the vertiflow package to be installed)
"""

from pathlib import Path

from vertiflow.env import EnvConfig
from vertiflow.harness import export, run_episode
from vertiflow.policies import make_policy

OUT = Path(__file__).resolve().parent.parent / "sample_export"
SEED = 0


def main() -> None:
    cfg = EnvConfig()
    for kind in ("spf", "rule", "qtti"):
        metrics, trace = run_episode(cfg, make_policy(kind, seed=SEED), SEED)
        export([metrics], [trace], OUT / kind)
        print(f"{kind}: att {metrics.att:.2f} awt {metrics.awt:.2f}")


if __name__ == "__main__":
    main()
