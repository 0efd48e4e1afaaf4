"""Train the channel-fixed baseline, LF and the metadata model on the desk
robustness data, then print their accuracy under shuffled and missing channels.

    python3 demos/robustness.py [--kinds baseline,lf,ours]

Takes about half a minute per model on one CPU core.
"""

import argparse
from pathlib import Path

from chanfree.harness import load_config, load_dataset, summary_table, train_run

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_robustness.txt"


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--kinds", default="baseline,lf,ours")
    args = parser.parse_args()
    cfg = load_config(CONFIG)
    ds = load_dataset(cfg)  # shared so every model sees the same windows
    for kind in args.kinds.split(","):
        report = train_run(cfg.replace(model=kind), ds).report
        print(f"\n== {kind}")
        print(summary_table(report))


if __name__ == "__main__":
    main()
