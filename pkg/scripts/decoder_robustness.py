"""Compare peak picking and the DBN on corrupted oracle activations of a click suite.

    python3 scripts/decoder_robustness.py --tracks 20 --seed 0
"""

import argparse

import numpy as np

from wavebeat.desk import decoder_robustness


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tracks", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--duration", type=float, default=30.0)
    args = parser.parse_args()

    rows = decoder_robustness(args.tracks, args.seed, args.duration)
    print(f"{'track':<12} {'dbn CV':>8} {'peak CV':>8} {'dbn F':>7} {'peak F':>7}")
    for r in rows:
        print(f"{r.name:<12} {r.dbn_cv:>8.3f} {r.peak_cv:>8.3f} {r.dbn_f:>7.3f} {r.peak_f:>7.3f}")
    mean = lambda attr: np.mean([getattr(r, attr) for r in rows])
    print(f"{'MEAN':<12} {mean('dbn_cv'):>8.3f} {mean('peak_cv'):>8.3f} {mean('dbn_f'):>7.3f} {mean('peak_f'):>7.3f}")


if __name__ == "__main__":
    main()
