"""PMI word graph and two-layer graph-convolution word embeddings.

The word graph uses sliding-window PMI edge weights. Embeddings come from a
forward-only two-layer propagation: each layer computes D^-1/2 A D^-1/2 F W,
applies a sigmoid, then standardizes each row (population std, epsilon
guard); after the second layer every row is divided by its maximum absolute
value. Weights are never trained, matching the described procedure rather
than a classifier-trained TextGCN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Vocabulary
from .numerics import sigmoid, xavier_uniform

ROW_STD_EPS = 1e-8
MAX_ABS_GUARD = 1e-12


@dataclass
class PmiGraph:
    """Symmetric positive-PMI adjacency over the vocabulary."""

    adjacency: np.ndarray
    vocab: Vocabulary
    window_size: int
    window_count: int
    word_window_counts: np.ndarray
    pair_window_counts: dict = field(repr=False, default_factory=dict)

    @property
    def edge_count(self) -> int:
        """Number of undirected edges with positive weight (self-loops excluded)."""
        off_diag = int(np.count_nonzero(self.adjacency)) - int(
            np.count_nonzero(np.diagonal(self.adjacency))
        )
        return off_diag // 2


def build_pmi_graph(
    sentences: list[list[str]],
    vocab: Vocabulary,
    window_size: int = 20,
    self_loops: bool = False,
    pmi_threshold: float = 0.0,
) -> PmiGraph:
    """Count sliding windows per sentence and keep edges with PMI > threshold.

    Windows are contiguous spans of `window_size` tokens slid by one; a
    sentence shorter than the window contributes a single window. A word or
    pair is counted once per window it appears in. PMI(i, j) =
    ln(#W(i,j) * #W / (#W(i) * #W(j))). Tokens absent from the vocabulary
    are ignored. With `self_loops`, the diagonal gets weight 1.
    """
    if window_size < 2:
        raise ValueError("window_size must be >= 2")
    if not sentences:
        raise ValueError("cannot build a PMI graph from an empty corpus")
    v = len(vocab)
    word_counts = np.zeros(v, dtype=np.int64)
    pair_counts: dict[tuple[int, int], int] = {}
    total_windows = 0
    for sentence in sentences:
        ids = [vocab.token_to_index[t] for t in sentence if t in vocab.token_to_index]
        if len(ids) <= window_size:
            windows = [ids]
        else:
            windows = [ids[i : i + window_size] for i in range(len(ids) - window_size + 1)]
        total_windows += len(windows)
        for window in windows:
            unique = sorted(set(window))
            for wi in unique:
                word_counts[wi] += 1
            for a in range(len(unique)):
                for b in range(a + 1, len(unique)):
                    key = (unique[a], unique[b])
                    pair_counts[key] = pair_counts.get(key, 0) + 1

    adjacency = np.zeros((v, v))
    for (i, j), cij in pair_counts.items():
        pmi = math.log(cij * total_windows / (word_counts[i] * word_counts[j]))
        if pmi > pmi_threshold:
            adjacency[i, j] = pmi
            adjacency[j, i] = pmi
    if self_loops:
        adjacency[np.diag_indices(v)] = 1.0
    return PmiGraph(adjacency, vocab, window_size, total_windows, word_counts, pair_counts)


def degree_vector(graph: PmiGraph) -> np.ndarray:
    """Diagonal of D: the count of nonzero entries in each adjacency row."""
    return (graph.adjacency != 0).sum(axis=1).astype(np.float64)


def normalize_adjacency(adjacency: np.ndarray, degrees: np.ndarray) -> np.ndarray:
    """D^-1/2 A D^-1/2 with all-zero rows/columns for zero-degree words."""
    inv_sqrt = np.where(degrees > 0, 1.0 / np.sqrt(np.maximum(degrees, 1.0)), 0.0)
    # maximum() only dodges the sqrt warning on zero-degree entries; the
    # where() already forces those rows to zero.
    return inv_sqrt[:, None] * adjacency * inv_sqrt[None, :]


def init_features(graph: PmiGraph, h: int, seed: int) -> np.ndarray:
    """Initial feature rows looked up by the ceiling of each adjacency row sum.

    A seeded standard-normal table provides one row per distinct ceiling
    value; words with equal ceilings share a feature row.
    """
    if h < 1:
        raise ValueError("embedding dimension h must be >= 1")
    row_sums = graph.adjacency.sum(axis=1)
    indices = np.ceil(row_sums).astype(np.int64)
    table = np.random.default_rng(seed).standard_normal((int(indices.max()) + 1, h))
    return table[indices]


def init_weights(n_in: int, n_out: int, seed: int) -> np.ndarray:
    """Normalized Xavier initialization from a seeded generator."""
    return xavier_uniform(n_in, n_out, np.random.default_rng(seed))


@dataclass
class TextGcnModel:
    """All matrices of the two-layer propagation chain."""

    f0: np.ndarray
    w0: np.ndarray
    w1: np.ndarray
    normalized_adjacency: np.ndarray
    seed: int
    f1: np.ndarray | None = None
    f2: np.ndarray | None = None


def build_model(graph: PmiGraph, h: int, seed: int) -> TextGcnModel:
    """Assemble F0, W0, W1 and the normalized adjacency for propagation.

    Sub-seeds are derived as seed, seed+1, seed+2 for F0, W0, W1.
    """
    f0 = init_features(graph, h, seed)
    w0 = init_weights(h, h, seed + 1)
    w1 = init_weights(h, h, seed + 2)
    a_hat = normalize_adjacency(graph.adjacency, degree_vector(graph))
    return TextGcnModel(f0, w0, w1, a_hat, seed)


def _layer(a_hat, features, weights, layer_index):
    z = a_hat @ features @ weights
    activated = sigmoid(z)
    mean = activated.mean(axis=1, keepdims=True)
    std = activated.std(axis=1, keepdims=True)  # population form
    out = (activated - mean) / (std + ROW_STD_EPS)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError(f"non-finite values after propagation layer {layer_index}")
    return out


def propagate(model: TextGcnModel) -> np.ndarray:
    """Run both layers and the final per-row max-abs division; returns F2."""
    model.f1 = _layer(model.normalized_adjacency, model.f0, model.w0, 0)
    f2 = _layer(model.normalized_adjacency, model.f1, model.w1, 1)
    max_abs = np.abs(f2).max(axis=1, keepdims=True)
    scale = np.where(max_abs >= MAX_ABS_GUARD, max_abs, 1.0)
    model.f2 = f2 / scale
    return model.f2


@dataclass
class EmbeddingMatrix:
    """Final V x h embedding rows, ordered like `tokens`."""

    tokens: tuple[str, ...]
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.shape[0] != len(self.tokens):
            raise ValueError(
                f"embedding rows {self.vectors.shape[0]} != token count {len(self.tokens)}"
            )

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def row(self, token: str) -> np.ndarray:
        return self.vectors[self.tokens.index(token)]


def train_embeddings(
    sentences,
    vocab: Vocabulary,
    h: int,
    seed: int,
    window_size: int = 20,
    self_loops: bool = False,
    pmi_threshold: float = 0.0,
):
    """Full chain: corpus -> PMI graph -> propagation -> embedding matrix."""
    graph = build_pmi_graph(sentences, vocab, window_size, self_loops, pmi_threshold)
    model = build_model(graph, h, seed)
    f2 = propagate(model)
    embedding = EmbeddingMatrix(tuple(vocab.index_to_token), f2)
    return graph, model, embedding


def export_embeddings(embedding: EmbeddingMatrix, path) -> None:
    """Write word2vec text format: 'V h' header, then token + h values per line.

    Values use full round-trip precision (repr).
    """
    for token in embedding.tokens:
        if any(ch.isspace() for ch in token):
            raise ValueError(f"token {token!r} contains whitespace; cannot export")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(embedding.tokens)} {embedding.dim}\n")
        for token, row in zip(embedding.tokens, embedding.vectors):
            values = " ".join(repr(float(v)) for v in row)
            fh.write(f"{token} {values}\n")


def load_embeddings(path) -> EmbeddingMatrix:
    """Read the word2vec text format written by export_embeddings."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed word2vec header")
        v, h = int(header[0]), int(header[1])
        tokens = []
        rows = np.empty((v, h))
        for i in range(v):
            parts = fh.readline().split()
            if len(parts) != h + 1:
                raise ValueError(f"{path}: line {i + 2} has {len(parts) - 1} values, expected {h}")
            tokens.append(parts[0])
            rows[i] = [float(x) for x in parts[1:]]
    return EmbeddingMatrix(tuple(tokens), rows)
