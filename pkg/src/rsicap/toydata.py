"""Synthetic desk-scale dataset generator for pipeline runs and tests."""

from __future__ import annotations

import json
import os

import numpy as np

from .retrieval import write_features

SUBJECTS = ["airplanes", "buildings", "trees", "cars", "ships", "houses"]
PLACES = ["airport", "forest", "harbor", "road", "river", "square"]
COLORS = ["green", "gray", "white", "blue"]
TEMPLATES = [
    "many {s} are near the {p}",
    "some {c} {s} are in the {p}",
    "the {p} is surrounded by {c} {s}",
    "several {s} stand beside a {p}",
    "a {p} with {c} {s} around it",
]


def make_toy_dataset(out_dir, n_images=12, image_dim=16, seed=0,
                     captions_per_image=5):
    """Write dataset.json, features.rsft, and rules.tsv into `out_dir`.

    Captions come from a tiny template grammar so the vocabulary stays small;
    features are seeded unit-scale Gaussians. Splits cycle train/train/
    train/val/test so every split is populated. Returns the three paths.
    """
    rng = np.random.default_rng(seed)
    os.makedirs(out_dir, exist_ok=True)
    images = []
    features = []
    split_cycle = ["train", "train", "train", "val", "test"]
    for i in range(n_images):
        name = f"img_{i:04d}.jpg"
        sentences = []
        for _ in range(captions_per_image):
            template = TEMPLATES[rng.integers(len(TEMPLATES))]
            sentence = template.format(
                s=SUBJECTS[rng.integers(len(SUBJECTS))],
                p=PLACES[rng.integers(len(PLACES))],
                c=COLORS[rng.integers(len(COLORS))],
            )
            sentences.append({"raw": sentence})
        images.append({
            "filename": name,
            "split": split_cycle[i % len(split_cycle)],
            "sentences": sentences,
        })
        features.append((name, rng.standard_normal(image_dim)))

    dataset_path = os.path.join(out_dir, "dataset.json")
    with open(dataset_path, "w", encoding="utf-8") as fh:
        json.dump({"images": images}, fh, indent=2)
        fh.write("\n")
    features_path = os.path.join(out_dir, "features.rsft")
    write_features(features_path, features)
    rules_path = os.path.join(out_dir, "rules.tsv")
    with open(rules_path, "w", encoding="utf-8") as fh:
        fh.write("# toy substitutions\ngrey\tgray\nharbour\tharbor\n")
    return dataset_path, features_path, rules_path
