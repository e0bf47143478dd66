#!/usr/bin/env python3
"""Materialize a synthetic bar+ellipse dataset for desk-scale experiments.

Example:
    python scripts/make_synthetic_dataset.py --out /tmp/synth --count 32 --seed 0
"""

import argparse

from braunet.data import write_synthetic_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="dataset root (images/ and masks/ created)")
    parser.add_argument("--count", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--size", type=int, default=64)
    args = parser.parse_args()

    write_synthetic_dataset(args.out, args.count, seed=args.seed, size=args.size)
    print(f"wrote {args.count} cases of {args.size}x{args.size} under {args.out}")


if __name__ == "__main__":
    main()
