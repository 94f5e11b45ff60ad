"""Command-line pipeline: embed, train, caption, evaluate, neighbors.

Every command is deterministic under a fixed seed. Diagnostics go to stderr;
data goes to files or stdout. JSON artifacts carry the effective config
inline where their schema is an object; fixed-format artifacts (embeddings,
checkpoints, prediction arrays) get a sidecar `<path>.meta.json` instead.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

import numpy as np

from . import corpus, decoding, metrics, model as model_mod, retrieval, textgcn
from .config import RunConfig, load_config


class CliError(ValueError):
    pass


def _require(config: RunConfig, *names):
    for name in names:
        if getattr(config, name) is None:
            raise CliError(f"missing required input: --{name.replace('_', '-')}")


def _load_rules(config: RunConfig):
    if config.rules is not None:
        return corpus.load_rules(config.rules)
    ref = resources.files("rsicap").joinpath("data/corrections.tsv")
    with resources.as_file(ref) as path:
        return corpus.load_rules(path)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _write_meta(artifact_path, config: RunConfig):
    _write_json(f"{artifact_path}.meta.json", {"config": config.to_dict()})


def _status(message):
    print(message, file=sys.stderr)


def cmd_embed(config: RunConfig) -> None:
    """Corpus -> PMI graph -> propagation -> word2vec text embedding file."""
    _require(config, "dataset", "out")
    records = corpus.load_dataset(config.dataset)
    rules = _load_rules(config)
    vocab = corpus.build_vocabulary(records, config.min_count, rules)
    sentences = corpus.tokenized_sentences(
        [r for r in records if r.split in ("train", "val")], rules
    )
    graph, _, embedding = textgcn.train_embeddings(
        sentences, vocab, config.embedding_dim, config.seed,
        config.window_size, config.self_loops, config.pmi_threshold,
    )
    textgcn.export_embeddings(embedding, config.out)
    _write_meta(config.out, config)
    _status(
        f"embed: V={len(vocab)} h={config.embedding_dim} edges={graph.edge_count}"
    )


def _aligned_embedding(embedding: textgcn.EmbeddingMatrix, vocab: corpus.Vocabulary):
    positions = {tok: i for i, tok in enumerate(embedding.tokens)}
    missing = [t for t in vocab.index_to_token if t not in positions]
    if missing:
        raise CliError(
            f"embedding file is missing {len(missing)} vocabulary tokens: "
            + ", ".join(missing[:20])
            + ("..." if len(missing) > 20 else "")
        )
    rows = [positions[t] for t in vocab.index_to_token]
    return embedding.vectors[rows]


def cmd_train(config: RunConfig) -> None:
    """Train the decoder on train-split captions with early stopping."""
    _require(config, "dataset", "features", "embeddings", "out")
    records = corpus.load_dataset(config.dataset)
    rules = _load_rules(config)
    vocab = corpus.build_vocabulary(records, config.min_count, rules)
    embedding_file = textgcn.load_embeddings(config.embeddings)
    embedding = _aligned_embedding(embedding_file, vocab)
    features = retrieval.read_features(config.features, expected_dim=config.image_dim)

    decoder_config = model_mod.DecoderConfig(
        embed_dim=embedding.shape[1], l1_hidden=config.l1_hidden,
        l2_hidden=config.l2_hidden, li1_units=config.li1_units,
        li2_units=config.li2_units, image_dim=config.image_dim,
        dropout=config.dropout, max_len=vocab.max_len,
    )
    if embedding.shape[1] != config.embedding_dim:
        _status(
            f"train: embedding file dim {embedding.shape[1]} overrides "
            f"configured {config.embedding_dim}"
        )
    decoder = model_mod.DecoderModel.create(vocab, embedding, decoder_config,
                                            seed=config.seed)
    train_records = [r for r in records if r.split == "train"]
    val_records = [r for r in records if r.split == "val"]
    samples = model_mod.expand_samples(train_records, features, vocab, rules)
    val_samples = model_mod.expand_samples(val_records, features, vocab, rules)
    train_config = model_mod.TrainConfig(
        max_epochs=config.max_epochs, patience=config.patience,
        batch_size=config.batch_size, seed=config.seed,
        learning_rate=config.learning_rate,
    )
    history = model_mod.train(decoder, samples, val_samples, train_config)
    model_mod.save_checkpoint(decoder, config.out)
    _write_meta(config.out, config)
    _write_json(f"{config.out}.history.json",
                {"config": config.to_dict(), **history.to_dict()})
    _status(
        f"train: {len(samples)} samples, {len(history.train)} epochs, "
        f"best epoch {history.best_epoch}"
    )


def cmd_caption(config: RunConfig, strategy: str, all_candidates: bool = False) -> None:
    """Caption every test-split image with the chosen search strategy."""
    _require(config, "dataset", "features", "checkpoint", "out")
    if strategy not in ("greedy", "beam", "comparison"):
        raise CliError(f"unknown strategy '{strategy}'")
    decoder = model_mod.load_checkpoint(config.checkpoint)
    records = corpus.load_dataset(config.dataset)
    features = retrieval.read_features(
        config.features, expected_dim=decoder.config.image_dim
    )
    archive = None
    if strategy == "comparison":
        rules = _load_rules(config)
        archive = retrieval.build_archive(features, records, rules,
                                          config.knn_normalize)
        if config.knn_k > len(archive):
            raise CliError(
                f"k={config.knn_k} exceeds archive size {len(archive)}"
            )
    test_records = [r for r in records if r.split == "test"]
    if not test_records:
        raise CliError("dataset has no test-split images")
    rows = []
    for record in test_records:
        if record.image_id not in features:
            raise CliError(f"no feature vector for test image '{record.image_id}'")
        feature = features[record.image_id]
        if strategy == "greedy":
            chosen = [decoding.greedy_search(decoder, feature)]
        elif strategy == "beam":
            found = decoding.beam_search(
                decoder, feature, config.beam_size, config.max_candidates,
                length_normalize=config.length_normalize,
            )
            chosen = found if all_candidates else found[:1]
        else:
            chosen = [decoding.comparison_beam_search(
                decoder, feature, archive, config.beam_size,
                config.max_candidates, config.knn_k,
                length_normalize=config.length_normalize,
            )]
        for candidate in chosen:
            rows.append({
                "image_id": record.image_id,
                "caption": candidate.text(decoder.vocab),
                "strategy": strategy,
                "log_likelihood": candidate.log_likelihood,
                "composite": candidate.composite,
            })
    _write_json(config.out, rows)
    _write_meta(config.out, config)
    _status(f"caption: {len(rows)} captions for {len(test_records)} images ({strategy})")


def cmd_evaluate(config: RunConfig) -> None:
    """Score predictions against the test-split gold captions."""
    _require(config, "dataset", "predictions")
    records = corpus.load_dataset(config.dataset)
    rules = _load_rules(config)
    with open(config.predictions, "r", encoding="utf-8") as fh:
        rows = json.load(fh)
    if not rows:
        raise CliError("predictions file is empty")
    predictions = {}
    for row in rows:
        # keep the first (best-ranked) caption when a debug file has several
        predictions.setdefault(row["image_id"], corpus.tokenize(row["caption"]))
    gold = {
        r.image_id: [
            corpus.tokenize(corpus.normalize_caption(s, rules)) for s in r.sentences
        ]
        for r in records
        if r.split == "test"
    }
    unknown = sorted(set(predictions) - set(gold))
    if unknown:
        raise CliError(f"predictions reference unknown test images: {unknown}")
    report = metrics.evaluate_corpus(predictions, gold, config.bleu_smoothing,
                                     config.cider_scale10)
    print(metrics.report_table(report))
    if config.out:
        _write_json(config.out, {"config": config.to_dict(), **report.to_dict()})
    _status(f"evaluate: {len(predictions)} predictions scored")


def cmd_neighbors(config: RunConfig, image_id: str) -> None:
    """Debug view of the KNN retrieval for one image."""
    _require(config, "dataset", "features")
    records = corpus.load_dataset(config.dataset)
    rules = _load_rules(config)
    features = retrieval.read_features(config.features)
    if image_id not in features:
        raise CliError(f"no feature vector for image '{image_id}'")
    archive = retrieval.build_archive(features, records, rules, config.knn_normalize)
    k = min(config.knn_k, len(archive))
    neighbors = retrieval.knn(archive, features[image_id], k)
    for entry in neighbors:
        dist = float(np.sqrt(np.sum((entry.feature - features[image_id]) ** 2)))
        print(f"{entry.image_id}\t{dist:.6f}\t{' '.join(entry.captions[0])}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsicap",
        description="Image captioning pipeline: graph word embeddings, "
                    "LSTM decoder, comparison beam search.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="JSON config file with flat keys")
        p.add_argument("--seed", type=int)
        p.add_argument("--dataset", help="caption dataset JSON")
        p.add_argument("--features", help="RSFT feature file")
        p.add_argument("--rules", help="token substitution rules file")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("embed", help="build TextGCN word embeddings")
    add_common(p)
    p.add_argument("--embedding-dim", type=int, dest="embedding_dim")
    p.add_argument("--window", type=int, dest="window_size")

    p = sub.add_parser("train", help="train the decoder")
    add_common(p)
    p.add_argument("--embeddings", help="word2vec text embedding file")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--dropout", type=float)
    p.add_argument("--image-dim", type=int, dest="image_dim")

    p = sub.add_parser("caption", help="caption the test split")
    add_common(p)
    p.add_argument("--checkpoint", help="trained model checkpoint")
    p.add_argument("--strategy", choices=("greedy", "beam", "comparison"),
                   default="comparison")
    p.add_argument("--beam-size", type=int, dest="beam_size")
    p.add_argument("--k", type=int, dest="knn_k")
    p.add_argument("--max-candidates", type=int, dest="max_candidates")
    p.add_argument("--all-candidates", action="store_true",
                   help="emit every ranked beam candidate, not just the best")

    p = sub.add_parser("evaluate", help="score predictions against gold captions")
    add_common(p)
    p.add_argument("--predictions", help="predictions JSON from `caption`")

    p = sub.add_parser("neighbors", help="inspect KNN retrieval for one image")
    add_common(p)
    p.add_argument("--image-id", required=True)
    p.add_argument("--k", type=int, dest="knn_k")

    return parser


CONFIG_KEYS = (
    "seed", "dataset", "features", "rules", "out", "embeddings", "checkpoint",
    "predictions", "embedding_dim", "window_size", "max_epochs", "patience",
    "batch_size", "learning_rate", "dropout", "image_dim", "beam_size",
    "knn_k", "max_candidates",
)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {k: getattr(args, k) for k in CONFIG_KEYS if hasattr(args, k)}
    try:
        config = load_config(args.config, overrides)
        if args.command == "embed":
            cmd_embed(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "caption":
            cmd_caption(config, args.strategy, args.all_candidates)
        elif args.command == "evaluate":
            cmd_evaluate(config)
        elif args.command == "neighbors":
            cmd_neighbors(config, args.image_id)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
