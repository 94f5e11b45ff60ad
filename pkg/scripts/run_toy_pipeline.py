#!/usr/bin/env python3
"""End-to-end desk-scale experiment: embed, train, then compare the three
search strategies (greedy / beam / comparison) on the toy test split.

Everything runs in --workdir with small model dimensions, so the full loop
finishes in seconds and is byte-reproducible under a fixed seed.
"""

import argparse
import json
import os
import sys

from rsicap.cli import main as rsicap
from rsicap.toydata import make_toy_dataset


def run(args):
    code = rsicap([str(a) for a in args])
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="toy_run")
    parser.add_argument("--images", type=int, default=15)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--epochs", type=int, default=40)
    args = parser.parse_args()

    os.makedirs(args.workdir, exist_ok=True)
    os.chdir(args.workdir)
    make_toy_dataset("data", n_images=args.images, image_dim=16, seed=args.seed)
    with open("config.json", "w") as fh:
        json.dump({
            "dataset": "data/dataset.json",
            "features": "data/features.rsft",
            "rules": "data/rules.tsv",
            "embedding_dim": 16,
            "l1_hidden": 24,
            "l2_hidden": 32,
            "li1_units": 24,
            "li2_units": 32,
            "image_dim": 16,
            "dropout": 0.3,
            "window_size": 6,
            "max_epochs": args.epochs,
            "patience": 3,
            "batch_size": 32,
            "beam_size": 5,
            "max_candidates": 5,
            "knn_k": 4,
            "seed": args.seed,
        }, fh, indent=2)

    run(["embed", "--config", "config.json", "--out", "embeddings.txt"])
    run(["train", "--config", "config.json", "--embeddings", "embeddings.txt",
         "--out", "model.ckpt"])
    for strategy in ("greedy", "beam", "comparison"):
        run(["caption", "--config", "config.json", "--checkpoint", "model.ckpt",
             "--strategy", strategy, "--out", f"pred_{strategy}.json"])
        print(f"\n== {strategy} ==")
        run(["evaluate", "--config", "config.json",
             "--predictions", f"pred_{strategy}.json",
             "--out", f"report_{strategy}.json"])


if __name__ == "__main__":
    main()
