"""Train the desk-scale model on synthetic click tracks and score held-out tracks.

    python3 scripts/overfit_desk.py --seed 0 --out desk.bin
"""

import argparse
import logging

from wavebeat.desk import overfit_experiment
from wavebeat.trainer import write_history


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="corpus and sampling seed")
    parser.add_argument("--init-seed", type=int, default=0, help="weight initialisation seed")
    parser.add_argument("--out", help="checkpoint path for the best model")
    parser.add_argument("--history", help="per-epoch CSV")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    result = overfit_experiment(seed=args.seed, init_seed=args.init_seed, checkpoint_path=args.out)
    if args.history:
        write_history(args.history, result.history)
    print(f"held-out beat F {result.beat_f:.3f}  downbeat F {result.downbeat_f:.3f}")


if __name__ == "__main__":
    main()
