"""Pretrain on 4-channel data, then adapt to a 7-channel target.

Fine-tuning updates everything; linear probing trains only the heads. The
same network handles both channel counts without any change of shape.

    python3 demos/transfer.py
"""

from pathlib import Path

from chanfree.harness import load_config, pretrain_multitask, transfer_run

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    source = load_config(CONFIGS / "desk_transfer_source.txt")
    target = load_config(CONFIGS / "desk_transfer_target.txt")
    pre = pretrain_multitask([source], seed=0)
    for mode in ("FT", "LP"):
        print(f"{mode} from pretrained: {transfer_run(pre, target, mode).mean('Clean'):.3f}")
    print(f"LP from scratch:    {transfer_run(None, target, 'LP').mean('Clean'):.3f}")


if __name__ == "__main__":
    main()
