#!/usr/bin/env python3
"""Generate a synthetic caption dataset + feature file for desk-scale runs."""

import argparse

from rsicap.toydata import make_toy_dataset


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="toy_data", help="output directory")
    parser.add_argument("--images", type=int, default=12)
    parser.add_argument("--dim", type=int, default=16, help="feature dimension")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    dataset, features, rules = make_toy_dataset(args.out, args.images,
                                                args.dim, args.seed)
    print(dataset)
    print(features)
    print(rules)


if __name__ == "__main__":
    main()
