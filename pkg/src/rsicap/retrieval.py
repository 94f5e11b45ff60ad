"""Image-feature archive: binary feature file, exact KNN, reference pooling."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .corpus import normalize_caption, tokenize

MAGIC = b"RSFT"


class FeatureFileError(ValueError):
    """Raised when a feature file violates the RSFT format."""


def write_features(path, named_vectors) -> None:
    """Write (name, vector) pairs as an RSFT file.

    Layout: magic "RSFT", u32 record count, u32 dim, then per record a u16
    name length, the UTF-8 name, and dim little-endian float32 values.
    """
    named_vectors = list(named_vectors)
    if not named_vectors:
        raise FeatureFileError("refusing to write an empty feature file")
    dim = len(named_vectors[0][1])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", len(named_vectors), dim))
        for name, vec in named_vectors:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (dim,):
                raise FeatureFileError(
                    f"feature '{name}' has dim {vec.shape[0]}, file dim is {dim}"
                )
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(vec.tobytes())


def read_features(path, expected_dim=None) -> dict[str, np.ndarray]:
    """Read and validate an RSFT file; returns an ordered name -> float64 map.

    Rejects bad magic, truncation, duplicate names, trailing bytes after the
    declared record count, and (when `expected_dim` is given) a header dim
    that does not match it.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FeatureFileError(
            f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}"
        )
    if len(data) < 12:
        raise FeatureFileError(f"{path}: truncated header")
    count, dim = struct.unpack_from("<II", data, 4)
    if expected_dim is not None and dim != expected_dim:
        raise FeatureFileError(
            f"{path}: feature dim {dim} does not match expected dim {expected_dim}"
        )
    offset = 12
    features: dict[str, np.ndarray] = {}
    for i in range(count):
        if offset + 2 > len(data):
            raise FeatureFileError(f"{path}: truncated at record {i}")
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        end = offset + name_len + 4 * dim
        if end > len(data):
            raise FeatureFileError(f"{path}: truncated at record {i}")
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        if name in features:
            raise FeatureFileError(f"{path}: duplicate record name '{name}'")
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset)
        features[name] = vec.astype(np.float64)
        offset += 4 * dim
    if offset != len(data):
        raise FeatureFileError(
            f"{path}: record count mismatch: header says {count}, "
            f"{len(data) - offset} trailing bytes remain"
        )
    return features


@dataclass(frozen=True)
class ArchiveEntry:
    image_id: str
    feature: np.ndarray
    captions: tuple[tuple[str, ...], ...]  # tokenized


@dataclass
class Archive:
    """Train+val store of (feature, captions) entries queried at decode time."""

    entries: list[ArchiveEntry]
    image_dim: int

    def __len__(self):
        return len(self.entries)


def build_archive(features: dict, records, rules=None, normalize_features=False) -> Archive:
    """One entry per train/val record, in record order; test images excluded.

    Captions are normalized and tokenized once at build. With
    `normalize_features` each vector is L2-normalized before storage, making
    Euclidean KNN equivalent to cosine ranking.
    """
    dims = {v.shape[0] for v in features.values()}
    if len(dims) > 1:
        raise FeatureFileError(f"inconsistent feature dims in input: {sorted(dims)}")
    entries = []
    seen = set()
    for record in records:
        if record.split not in ("train", "val"):
            continue
        if record.image_id in seen:
            raise ValueError(f"duplicate image id '{record.image_id}' in records")
        seen.add(record.image_id)
        if record.image_id not in features:
            raise ValueError(f"no feature vector for image '{record.image_id}'")
        captions = tuple(
            tuple(tokenize(normalize_caption(s, rules))) for s in record.sentences
        )
        if not captions or all(len(c) == 0 for c in captions):
            raise ValueError(f"image '{record.image_id}' has no usable captions")
        vec = features[record.image_id]
        if normalize_features:
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec = vec / norm
        entries.append(ArchiveEntry(record.image_id, vec, captions))
    if not entries:
        raise ValueError("archive would be empty: no train/val records matched")
    return Archive(entries, entries[0].feature.shape[0])


def knn(archive: Archive, query, k: int) -> list[ArchiveEntry]:
    """The k archive entries closest to `query` by Euclidean distance.

    Output is ordered by ascending distance with ties broken by ascending
    image id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(archive):
        raise ValueError(f"k={k} exceeds archive size {len(archive)}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape[0] != archive.image_dim:
        raise ValueError(
            f"query dim {query.shape[0]} != archive dim {archive.image_dim}"
        )
    scored = [
        (float(np.sqrt(np.sum((e.feature - query) ** 2))), e.image_id, e)
        for e in archive.entries
    ]
    scored.sort(key=lambda item: (item[0], item[1]))
    return [e for _, _, e in scored[:k]]


def reference_pool(neighbors) -> list[tuple[str, ...]]:
    """All neighbors' captions flattened in neighbor order; duplicates kept."""
    if not neighbors:
        raise ValueError("neighbor list is empty")
    pool = []
    for entry in neighbors:
        pool.extend(entry.captions)
    return pool
