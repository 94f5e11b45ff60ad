"""Run configuration: one flat dataclass, JSON file + flag overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass


@dataclass
class RunConfig:
    """Paths and hyperparameters for the pipeline commands.

    Dimension and search defaults follow the reference experimental setup;
    every value can come from a JSON config file (flat keys named like the
    fields) and be overridden by command-line flags.
    """

    # paths
    dataset: str | None = None
    features: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    rules: str | None = None
    predictions: str | None = None
    out: str | None = None

    # corpus / graph
    min_count: int = 1
    window_size: int = 20
    self_loops: bool = False
    pmi_threshold: float = 0.0

    # model dimensions
    embedding_dim: int = 256
    l1_hidden: int = 256
    l2_hidden: int = 512
    li1_units: int = 256
    li2_units: int = 512
    image_dim: int = 2048
    dropout: float = 0.5

    # training
    max_epochs: int = 64
    patience: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3

    # decoding / retrieval
    beam_size: int = 5
    max_candidates: int = 5
    length_normalize: bool = False
    knn_k: int = 4
    knn_normalize: bool = False

    # metrics
    bleu_smoothing: bool = False
    cider_scale10: bool = False

    seed: int = 0

    def validate(self):
        dims = (self.embedding_dim, self.l1_hidden, self.l2_hidden, self.li1_units,
                self.li2_units, self.image_dim, self.beam_size, self.max_candidates,
                self.knn_k, self.window_size, self.max_epochs, self.patience,
                self.batch_size, self.min_count)
        if any(d < 1 for d in dims):
            raise ValueError("all dimensions and counts must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus explicit overrides."""
    values = {}
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        unknown = sorted(set(data) - field_names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        values.update(data)
    if overrides:
        for key, value in overrides.items():
            if value is not None:
                values[key] = value
    return RunConfig(**values).validate()
