#!/usr/bin/env python3
"""Desk-scale overfit experiment: 8 synthetic scenes, 500 steps, full report.

Trains the toy network on an in-memory synthetic corpus, prints the loss
trajectory as 50-step window means, then scores the overfit predictions with
the full metric suite.

Example:
    python scripts/overfit_toy.py --out /tmp/overfit --seed 3
"""

import argparse
import json
import time
from pathlib import Path

from braunet.data import synthetic_corpus
from braunet.metrics import SegMask, aggregate_reports, evaluate_pair
from braunet.model import BraUNet, toy_config
from braunet.train import TrainConfig, predict, train, windowed_means


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True, help="checkpoint/log directory")
    parser.add_argument("--seed", type=int, default=3)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--cases", type=int, default=8)
    args = parser.parse_args()

    cases = synthetic_corpus(args.cases, seed=5, size=64)
    model = BraUNet(toy_config(), seed=7)
    cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.cases, epochs=args.steps,
        seed=args.seed, flip_prob=0.0, rot_degrees=0.0, val_interval=100,
    )

    start = time.monotonic()
    result = train(model, cases, cases, cfg, out_dir=args.out)
    elapsed = time.monotonic() - start
    print(f"{len(result.losses)} steps in {elapsed:.1f}s "
          f"({1000 * elapsed / len(result.losses):.0f} ms/step)")
    print("50-step loss windows:", [round(v, 4) for v in windowed_means(result.losses, 50)])

    reports = []
    for image, mask in cases:
        reports.append(evaluate_pair(predict(model, image), SegMask(mask)))
    summary = aggregate_reports(reports)
    print(json.dumps(summary, indent=2))

    out = Path(args.out)
    (out / "overfit_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"checkpoints and logs under {out}")


if __name__ == "__main__":
    main()
