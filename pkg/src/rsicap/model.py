"""Multi-layer LSTM caption decoder: frozen embedding, training, checkpoints.

Architecture per prediction step: the embedded prefix runs through a first
LSTM; its final hidden state is concatenated with the image feature vector
and fed as a single step to a second LSTM, whose output passes through two
GELU linear layers and a softmax layer over the vocabulary. The embedding
table is frozen; every other parameter trains with Adam on categorical
cross-entropy. Dropout (training only) sits before both LSTM inputs and
before the first linear layer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import TokenSequence, Vocabulary, normalize_caption, tokenize
from .numerics import (
    AdamState,
    LstmParams,
    adam_step,
    cross_entropy,
    dropout_mask,
    gelu,
    gelu_grad,
    lstm_run,
    lstm_run_backward,
    lstm_step_backward,
    lstm_step_cached,
    softmax,
    xavier_uniform,
)

CHECKPOINT_MAGIC = b"CFG1"
CHECKPOINT_VERSION = 1

class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


@dataclass(frozen=True)
class DecoderConfig:
    embed_dim: int = 256
    l1_hidden: int = 256
    l2_hidden: int = 512
    li1_units: int = 256
    li2_units: int = 512
    image_dim: int = 2048
    dropout: float = 0.5
    max_len: int = 36


@dataclass
class TrainConfig:
    max_epochs: int = 64
    patience: int = 5
    batch_size: int = 64
    seed: int = 0
    learning_rate: float = 1e-3


@dataclass(frozen=True)
class TrainingSample:
    feature: np.ndarray
    prefix_ids: tuple[int, ...]
    target: int


class DecoderModel:
    """Decoder parameters plus the frozen embedding and its vocabulary."""

    def __init__(self, vocab: Vocabulary, embedding: np.ndarray, config: DecoderConfig,
                 params: dict[str, np.ndarray], frozen_embedding: bool = True):
        if embedding.shape != (len(vocab), config.embed_dim):
            raise ValueError(
                f"embedding shape {embedding.shape} != "
                f"({len(vocab)}, {config.embed_dim})"
            )
        self.vocab = vocab
        self.embedding = np.asarray(embedding, dtype=np.float64)
        self.config = config
        self.params = params
        self.frozen_embedding = frozen_embedding

    @classmethod
    def create(cls, vocab, embedding, config, seed=0):
        rng = np.random.default_rng(seed)
        d1, d2 = config.l1_hidden, config.l2_hidden
        u1, u2 = config.li1_units, config.li2_units
        v = len(vocab)
        l1 = LstmParams.create(config.embed_dim, d1, rng)
        l2 = LstmParams.create(d1 + config.image_dim, d2, rng)
        params = {
            "l1.w": l1.w, "l1.u": l1.u, "l1.b": l1.b,
            "l2.w": l2.w, "l2.u": l2.u, "l2.b": l2.b,
            "li1.w": xavier_uniform(u1, d2, rng), "li1.b": np.zeros(u1),
            "li2.w": xavier_uniform(u2, u1, rng), "li2.b": np.zeros(u2),
            "li3.w": xavier_uniform(v, u2, rng), "li3.b": np.zeros(v),
        }
        return cls(vocab, np.asarray(embedding, dtype=np.float64), config, params)

    def _lstm(self, name) -> LstmParams:
        w = self.params[f"{name}.w"]
        input_dim = w.shape[1]
        hidden = w.shape[0] // 4
        return LstmParams(input_dim, hidden, w, self.params[f"{name}.u"],
                          self.params[f"{name}.b"])

    def _prefix_ids(self, prefix):
        if isinstance(prefix, TokenSequence):
            ids = [int(i) for i in prefix.indices[: prefix.true_length]]
        else:
            ids = [int(i) for i in prefix]
        if not ids:
            raise ValueError("prefix must contain at least one token")
        if max(ids) >= len(self.vocab) or min(ids) < 0:
            raise ValueError("prefix contains out-of-range token indices")
        return ids

    def forward(self, image_feature, prefix, training=False, rng=None):
        """Probability vector over the vocabulary for the next token."""
        probs, _ = self.forward_cached(image_feature, prefix, training, rng)
        return probs

    def forward_cached(self, image_feature, prefix, training=False, rng=None):
        """Forward pass keeping every intermediate needed by backward()."""
        feature = np.asarray(image_feature, dtype=np.float64)
        if feature.shape[0] != self.config.image_dim:
            raise ValueError(
                f"image feature dim {feature.shape[0]} != {self.config.image_dim}"
            )
        ids = self._prefix_ids(prefix)
        rate = self.config.dropout if training else 0.0
        if rate > 0.0 and rng is None:
            raise ValueError("training-mode forward with dropout needs an rng")

        xs = [self.embedding[i] for i in ids]
        if rate > 0.0:
            emb_masks = [dropout_mask(x.shape, rate, rng) for x in xs]
            xs = [x * m for x, m in zip(xs, emb_masks)]
        else:
            emb_masks = None
        h1, _, l1_caches = lstm_run(self._lstm("l1"), xs)

        concat = np.concatenate([h1, feature])
        if rate > 0.0:
            concat_mask = dropout_mask(concat.shape, rate, rng)
            concat = concat * concat_mask
        else:
            concat_mask = None
        d2 = self.config.l2_hidden
        h2, _, l2_cache = lstm_step_cached(self._lstm("l2"), concat,
                                           np.zeros(d2), np.zeros(d2))

        a0 = h2
        if rate > 0.0:
            li_mask = dropout_mask(a0.shape, rate, rng)
            a0 = a0 * li_mask
        else:
            li_mask = None
        z1 = self.params["li1.w"] @ a0 + self.params["li1.b"]
        a1 = gelu(z1)
        z2 = self.params["li2.w"] @ a1 + self.params["li2.b"]
        a2 = gelu(z2)
        z3 = self.params["li3.w"] @ a2 + self.params["li3.b"]
        probs = softmax(z3)
        cache = {
            "ids": ids, "emb_masks": emb_masks, "l1_caches": l1_caches,
            "concat_mask": concat_mask, "l2_cache": l2_cache, "li_mask": li_mask,
            "a0": a0, "z1": z1, "a1": a1, "z2": z2, "a2": a2, "probs": probs,
        }
        return probs, cache

    def backward(self, cache, target: int):
        """Cross-entropy loss and gradients for every trainable parameter."""
        loss, dz3 = cross_entropy(cache["probs"], target)
        grads = {name: np.zeros_like(p) for name, p in self.params.items()}

        grads["li3.w"] += np.outer(dz3, cache["a2"])
        grads["li3.b"] += dz3
        da2 = self.params["li3.w"].T @ dz3
        dz2 = da2 * gelu_grad(cache["z2"])
        grads["li2.w"] += np.outer(dz2, cache["a1"])
        grads["li2.b"] += dz2
        da1 = self.params["li2.w"].T @ dz2
        dz1 = da1 * gelu_grad(cache["z1"])
        grads["li1.w"] += np.outer(dz1, cache["a0"])
        grads["li1.b"] += dz1
        da0 = self.params["li1.w"].T @ dz1
        if cache["li_mask"] is not None:
            da0 = da0 * cache["li_mask"]

        l2_grads = {"w": grads["l2.w"], "u": grads["l2.u"], "b": grads["l2.b"]}
        dconcat, _, _ = lstm_step_backward(self._lstm("l2"), cache["l2_cache"],
                                           da0, np.zeros(self.config.l2_hidden),
                                           l2_grads)
        if cache["concat_mask"] is not None:
            dconcat = dconcat * cache["concat_mask"]
        dh1 = dconcat[: self.config.l1_hidden]

        l1_grads = {"w": grads["l1.w"], "u": grads["l1.u"], "b": grads["l1.b"]}
        lstm_run_backward(self._lstm("l1"), cache["l1_caches"], dh1, l1_grads)
        # input gradients stop here: the embedding table is frozen
        return loss, grads

    def loss(self, sample: TrainingSample) -> float:
        """Inference-mode cross-entropy for one sample (no dropout)."""
        probs = self.forward(sample.feature, sample.prefix_ids, training=False)
        value, _ = cross_entropy(probs, sample.target)
        return value

    def clone_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}


def expand_samples(records, features: dict, vocab: Vocabulary, rules=None) -> list[TrainingSample]:
    """Teacher-forcing prefix expansion: each caption of n words yields n+1
    samples, from [start] -> w1 up to [start, w1..wn] -> end."""
    samples = []
    max_content = vocab.max_len - 2
    for record in records:
        if record.image_id not in features:
            raise ValueError(f"no feature vector for image '{record.image_id}'")
        feature = np.asarray(features[record.image_id], dtype=np.float64)
        for sentence in record.sentences:
            tokens = tokenize(normalize_caption(sentence, rules))
            ids = [vocab.token_to_index[t] for t in tokens if t in vocab.token_to_index]
            ids = ids[:max_content]
            seq = [vocab.start_index] + ids + [vocab.end_index]
            for cut in range(1, len(seq)):
                samples.append(TrainingSample(feature, tuple(seq[:cut]), seq[cut]))
    return samples


@dataclass
class LossHistory:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based; 0 when no validation was used

    def to_dict(self):
        return {"train": self.train, "val": self.val, "best_epoch": self.best_epoch}


def _mean_loss(model, samples):
    return sum(model.loss(s) for s in samples) / len(samples)


def train(model: DecoderModel, samples, val_samples, config: TrainConfig) -> LossHistory:
    """Adam on mean cross-entropy with early stopping on validation loss.

    Stops after `patience` consecutive epochs without improvement and
    restores the best-epoch parameters. Without validation samples the loop
    simply runs `max_epochs`. The embedding is never touched.
    """
    if not samples:
        raise ValueError("no training samples")
    if config.patience < 1 or config.max_epochs < 1:
        raise ValueError("patience and max_epochs must be >= 1")
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(seeds[0])
    dropout_rng = np.random.default_rng(seeds[1])
    adam = AdamState(lr=config.learning_rate)
    history = LossHistory()
    best_val = np.inf
    best_params = None
    bad_epochs = 0
    embedding_before = model.embedding.copy() if model.frozen_embedding else None

    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            batch_grads = {k: np.zeros_like(v) for k, v in model.params.items()}
            batch_loss = 0.0
            for sample in batch:
                _, cache = model.forward_cached(sample.feature, sample.prefix_ids,
                                                training=True, rng=dropout_rng)
                loss, grads = model.backward(cache, sample.target)
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"non-finite training loss at epoch {epoch}"
                    )
                batch_loss += loss
                for k in batch_grads:
                    batch_grads[k] += grads[k]
            scale = 1.0 / len(batch)
            for k in batch_grads:
                batch_grads[k] *= scale
            model.params = adam_step(adam, model.params, batch_grads)
            epoch_loss += batch_loss
        history.train.append(epoch_loss / len(samples))

        if val_samples:
            val_loss = _mean_loss(model, val_samples)
            history.val.append(val_loss)
            if val_loss < best_val:
                best_val = val_loss
                best_params = model.clone_params()
                history.best_epoch = epoch
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= config.patience:
                    break

    if best_params is not None:
        model.params = best_params
    if embedding_before is not None:
        assert model.embedding.tobytes() == embedding_before.tobytes()
    return history


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: DecoderModel, path) -> None:
    """Versioned binary checkpoint; reload reproduces every parameter bit-exactly."""
    cfg = model.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(model.vocab)))
        for token in model.vocab.index_to_token:
            encoded = token.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
        fh.write(struct.pack(
            "<7I", cfg.embed_dim, cfg.l1_hidden, cfg.l2_hidden,
            cfg.li1_units, cfg.li2_units, cfg.image_dim, cfg.max_len,
        ))
        fh.write(struct.pack("<d", cfg.dropout))
        fh.write(struct.pack("<B", 1 if model.frozen_embedding else 0))
        sections = [("embedding", model.embedding)]
        sections += sorted(model.params.items())
        for name, array in sections:
            encoded = name.encode("utf-8")
            arr2d = np.atleast_2d(np.asarray(array, dtype="<f8"))
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<II", arr2d.shape[0], arr2d.shape[1]))
            fh.write(arr2d.tobytes())


def load_checkpoint(path) -> DecoderModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: bad magic {data[:4]!r}, expected {CHECKPOINT_MAGIC!r}"
        )
    offset = 4

    def unpack(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, data, offset)
        offset += size
        return values

    (version,) = unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )
    (v,) = unpack("<I")
    tokens = []
    for _ in range(v):
        (name_len,) = unpack("<H")
        if offset + name_len > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        tokens.append(data[offset : offset + name_len].decode("utf-8"))
        offset += name_len
    dims = unpack("<7I")
    (dropout_rate,) = unpack("<d")
    (frozen,) = unpack("<B")
    config = DecoderConfig(
        embed_dim=dims[0], l1_hidden=dims[1], l2_hidden=dims[2],
        li1_units=dims[3], li2_units=dims[4], image_dim=dims[5],
        dropout=dropout_rate, max_len=dims[6],
    )
    sections: dict[str, np.ndarray] = {}
    while offset < len(data):
        (name_len,) = unpack("<H")
        if offset + name_len > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        rows, cols = unpack("<II")
        nbytes = rows * cols * 8
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated parameter section '{name}'")
        array = np.frombuffer(data, dtype="<f8", count=rows * cols,
                              offset=offset).reshape(rows, cols).copy()
        offset += nbytes
        sections[name] = array
    if "embedding" not in sections:
        raise CheckpointError(f"{path}: missing embedding section")
    embedding = sections.pop("embedding")
    if embedding.shape[0] != v:
        raise CheckpointError(
            f"{path}: embedding rows {embedding.shape[0]} != vocabulary size {v}"
        )
    params = {}
    for name, array in sections.items():
        if name.endswith(".b"):
            params[name] = array.reshape(-1)
        else:
            params[name] = array
    expected = {"l1.w", "l1.u", "l1.b", "l2.w", "l2.u", "l2.b",
                "li1.w", "li1.b", "li2.w", "li2.b", "li3.w", "li3.b"}
    missing = expected - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing parameter sections {sorted(missing)}")
    if params["li3.w"].shape[0] != v:
        raise CheckpointError(
            f"{path}: output layer rows {params['li3.w'].shape[0]} != vocabulary size {v}"
        )
    vocab = Vocabulary(tokens, config.max_len)
    return DecoderModel(vocab, embedding, config, params, frozen_embedding=bool(frozen))
