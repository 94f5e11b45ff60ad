"""Caption decoding: greedy search, beam search, and comparison re-ranking.

The comparison strategy scores every beam candidate (plus the greedy caption
when it is not already among them) against the pooled captions of the k
nearest archive images and returns the candidate with the highest mean of
BLEU-2, METEOR, and ROUGE-L.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import composite_score
from .retrieval import Archive, knn, reference_pool


@dataclass
class CandidateCaption:
    """A decoded caption: start token stripped, end token terminates."""

    token_ids: tuple[int, ...]
    log_likelihood: float
    finished: bool
    composite: float | None = None

    def tokens(self, vocab) -> list[str]:
        return [vocab.index_to_token[i] for i in self.token_ids]

    def text(self, vocab) -> str:
        return " ".join(self.tokens(vocab))


def greedy_search(model, image_feature, max_len=None) -> CandidateCaption:
    """Repeatedly append the argmax token (ties to the lower index) until the
    end token appears or the prefix reaches max_len."""
    max_len = max_len or model.config.max_len
    end = model.vocab.end_index
    prefix = [model.vocab.start_index]
    ll = 0.0
    while len(prefix) < max_len:
        probs = model.forward(image_feature, prefix, training=False)
        idx = int(np.argmax(probs))  # argmax returns the first (lowest) index on ties
        ll += math.log(max(probs[idx], 1e-300))
        if idx == end:
            return CandidateCaption(tuple(prefix[1:]), ll, True)
        prefix.append(idx)
    return CandidateCaption(tuple(prefix[1:]), ll, True)


def beam_search(model, image_feature, beam_size=5, max_candidates=5,
                max_len=None, length_normalize=False) -> list[CandidateCaption]:
    """Standard beam search by summed log-likelihood.

    Each step expands every live beam by the whole vocabulary and keeps the
    top `beam_size` sequences (ties to the lexicographically smaller token
    sequence). Kept sequences that emitted the end token, or that reached
    max_len, move to the completed pool; the search stops once the pool holds
    `max_candidates` captions or no live beams remain. Returns the pool
    sorted best first: by plain log-likelihood, or by per-token
    log-likelihood with `length_normalize` (live beams always share a length,
    so normalization only affects the final ranking).
    """
    if beam_size < 1 or max_candidates < 1:
        raise ValueError("beam_size and max_candidates must be >= 1")
    max_len = max_len or model.config.max_len
    end = model.vocab.end_index
    v = len(model.vocab)
    live = [((model.vocab.start_index,), 0.0)]
    pool: list[CandidateCaption] = []

    while live and len(pool) < max_candidates:
        expansions = []
        for prefix, ll in live:
            probs = model.forward(image_feature, list(prefix), training=False)
            logp = np.log(np.maximum(probs, 1e-300))
            for tok in range(v):
                expansions.append((prefix + (tok,), ll + float(logp[tok])))
        expansions.sort(key=lambda item: (-item[1], item[0]))
        live = []
        for prefix, ll in expansions[:beam_size]:
            if prefix[-1] == end:
                pool.append(CandidateCaption(prefix[1:-1], ll, True))
            elif len(prefix) >= max_len:
                pool.append(CandidateCaption(prefix[1:], ll, True))
            else:
                live.append((prefix, ll))

    def rank(c):
        score = c.log_likelihood
        if length_normalize:
            score /= max(1, len(c.token_ids))
        return (-score, c.token_ids)

    pool.sort(key=rank)
    return pool[:max_candidates]


def comparison_beam_search(model, image_feature, archive: Archive, beam_size=5,
                           max_candidates=5, k=4, max_len=None,
                           length_normalize=False) -> CandidateCaption:
    """Re-rank beam candidates (plus greedy) by similarity to retrieved captions.

    Retrieves the k nearest archive images by feature distance, pools their
    captions, scores every candidate with the composite BLEU-2/METEOR/ROUGE-L
    mean against that pool, and returns the best. Ties fall back to higher
    log-likelihood, then shorter caption, then lexicographic token order.
    """
    candidates = beam_search(model, image_feature, beam_size, max_candidates,
                             max_len, length_normalize)
    greedy = greedy_search(model, image_feature, max_len)
    if all(c.token_ids != greedy.token_ids for c in candidates):
        candidates.append(greedy)
    pool = [list(ref) for ref in reference_pool(knn(archive, image_feature, k))]
    for candidate in candidates:
        candidate.composite = composite_score(candidate.tokens(model.vocab), pool)
    return min(
        candidates,
        key=lambda c: (-c.composite, -c.log_likelihood, len(c.token_ids), c.token_ids),
    )
