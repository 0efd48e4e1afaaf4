"""Accuracy as descriptors drift away from their waveforms.

ShuffleFixedMeta keeps every signal in place and re-pairs a growing share of
metadata rows. Only the metadata model reads those rows, so only its curve moves.

    python3 demos/meta_sweep.py
"""

from pathlib import Path

from chanfree.harness import load_config, load_dataset, sweep_intensity, train_run

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk_meta_sweep.txt"


def main():
    cfg = load_config(CONFIG)
    ds = load_dataset(cfg)
    print("intensity " + " ".join(f"{t:5.1f}" for t in [i / 10 for i in range(11)]))
    for kind in ("ours", "lf", "baseline"):
        run = train_run(cfg.replace(model=kind), ds)
        curve = sweep_intensity(run, ["ShuffleFixedMeta"], seed=cfg.eval.seed).curves["ShuffleFixedMeta"]
        print(f"{kind:<9} " + " ".join(f"{p['mean']:5.3f}" for p in curve))


if __name__ == "__main__":
    main()
