"""Caption quality metrics over token lists: BLEU, METEOR, ROUGE-L, CIDEr.

METEOR here is the dependency-free exact-match variant (no stemming or
synonym resources); its chunk count is the true minimum over all maximum
alignments, found by bounded search. CIDEr is the plain TF-IDF cosine form
without the x10 scale or length penalty (a flag restores the x10).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

ROUGE_BETA = 1.2
CIDER_NGRAM_MAX = 4


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(cand_len: int, references) -> int:
    # ties resolved toward the shorter reference
    return min((abs(len(r) - cand_len), len(r)) for r in references)[1]


def bleu_n(candidate, references, n: int, smoothing: bool = False) -> float:
    """Sentence BLEU-n: clipped precisions, uniform geometric mean, brevity penalty.

    Orders longer than the candidate are vacuous and skipped, so a candidate
    identical to a reference scores 1 at every n. Without smoothing a zero
    precision zeroes the score; with smoothing each precision gets +1/+1.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not references:
        raise ValueError("references must be nonempty")
    if not candidate:
        return 0.0
    log_sum = 0.0
    orders = 0
    for k in range(1, n + 1):
        guess = len(candidate) - k + 1
        if guess <= 0:
            continue
        counts = ngram_counts(candidate, k)
        max_ref = Counter()
        for ref in references:
            for gram, c in ngram_counts(ref, k).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        correct = sum(min(c, max_ref[gram]) for gram, c in counts.items())
        if smoothing:
            p = (correct + 1) / (guess + 1)
        else:
            if correct == 0:
                return 0.0
            p = correct / guess
        log_sum += math.log(p)
        orders += 1
    r = _closest_ref_length(len(candidate), references)
    bp = 1.0 if len(candidate) >= r else math.exp(1.0 - r / len(candidate))
    return bp * math.exp(log_sum / orders)


def corpus_bleu(candidates, reference_lists, n: int, smoothing: bool = False) -> float:
    """Corpus BLEU-n with n-gram counts pooled across all candidates."""
    if len(candidates) != len(reference_lists):
        raise ValueError("candidates and reference lists must align")
    if not candidates:
        raise ValueError("empty corpus")
    correct = [0] * n
    guess = [0] * n
    cand_total = 0
    ref_total = 0
    for cand, refs in zip(candidates, reference_lists):
        if not refs:
            raise ValueError("every candidate needs at least one reference")
        cand_total += len(cand)
        if cand:
            ref_total += _closest_ref_length(len(cand), refs)
        else:
            ref_total += min(len(r) for r in refs)
        for k in range(1, n + 1):
            g = len(cand) - k + 1
            if g <= 0:
                continue
            guess[k - 1] += g
            counts = ngram_counts(cand, k)
            max_ref = Counter()
            for ref in refs:
                for gram, c in ngram_counts(ref, k).items():
                    if c > max_ref[gram]:
                        max_ref[gram] = c
            correct[k - 1] += sum(min(c, max_ref[gram]) for gram, c in counts.items())
    log_sum = 0.0
    orders = 0
    for k in range(n):
        if guess[k] == 0:
            continue
        if smoothing:
            p = (correct[k] + 1) / (guess[k] + 1)
        else:
            if correct[k] == 0:
                return 0.0
            p = correct[k] / guess[k]
        log_sum += math.log(p)
        orders += 1
    if orders == 0 or cand_total == 0:
        return 0.0
    bp = 1.0 if cand_total >= ref_total else math.exp(1.0 - ref_total / cand_total)
    return bp * math.exp(log_sum / orders)


# ---------------------------------------------------------------------------
# METEOR (exact-match variant)
# ---------------------------------------------------------------------------

def _max_matches(candidate, reference) -> int:
    cc = Counter(candidate)
    rc = Counter(reference)
    return sum(min(c, rc[w]) for w, c in cc.items())


def _min_chunks(candidate, reference, matches: int) -> int:
    """Minimum chunk count over all maximum one-to-one exact alignments.

    A chunk is a block of matched pairs contiguous and in order in both
    sentences, so the question becomes: cover `matches` total positions with
    the fewest non-overlapping common blocks. Solved by iterative deepening
    over the block count; caption-scale inputs keep the search tiny.
    """

    nc, nr = len(candidate), len(reference)

    def block_fits(ci, rj, length, cand_used, ref_used):
        for t in range(length):
            if candidate[ci + t] != reference[rj + t]:
                return False
            if cand_used & (1 << (ci + t)) or ref_used & (1 << (rj + t)):
                return False
        return True

    def longest_anywhere(cand_used, ref_used):
        best = 0
        for ci in range(nc):
            for rj in range(nr):
                length = 0
                while (
                    ci + length < nc
                    and rj + length < nr
                    and block_fits(ci, rj, length + 1, cand_used, ref_used)
                ):
                    length += 1
                best = max(best, length)
        return best

    def solve(need, blocks_left, min_ci, cand_used, ref_used):
        if need == 0:
            return True
        if blocks_left == 0:
            return False
        cap = longest_anywhere(cand_used, ref_used)
        if cap * blocks_left < need:
            return False
        for ci in range(min_ci, nc):
            if cand_used & (1 << ci):
                continue
            for rj in range(nr):
                if ref_used & (1 << rj) or candidate[ci] != reference[rj]:
                    continue
                max_len = 0
                while (
                    ci + max_len < nc
                    and rj + max_len < nr
                    and block_fits(ci, rj, max_len + 1, cand_used, ref_used)
                ):
                    max_len += 1
                for length in range(min(max_len, need), 0, -1):
                    cmask = sum(1 << (ci + t) for t in range(length))
                    rmask = sum(1 << (rj + t) for t in range(length))
                    if solve(
                        need - length,
                        blocks_left - 1,
                        ci + length,
                        cand_used | cmask,
                        ref_used | rmask,
                    ):
                        return True
        return False

    for k in range(1, matches + 1):
        if solve(matches, k, 0, 0, 0):
            return k
    return matches


def meteor(candidate, references) -> float:
    """Exact-match METEOR: max over references of F * (1 - chunk penalty).

    F = 10PR / (R + 9P); penalty = 0.5 * (chunks / matches)^3.
    """
    if not references:
        raise ValueError("references must be nonempty")
    if not candidate:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        m = _max_matches(candidate, ref)
        if m == 0:
            continue
        chunks = _min_chunks(candidate, ref, m)
        p = m / len(candidate)
        r = m / len(ref)
        f = 10.0 * p * r / (r + 9.0 * p)
        penalty = 0.5 * (chunks / m) ** 3
        best = max(best, f * (1.0 - penalty))
    return best


# ---------------------------------------------------------------------------
# ROUGE-L
# ---------------------------------------------------------------------------

def lcs_length(a, b) -> int:
    """Longest common subsequence length by dynamic programming."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(candidate, references, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure, max over references, beta-weighted toward recall."""
    if not references:
        raise ValueError("references must be nonempty")
    if not candidate:
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = lcs_length(candidate, ref)
        if lcs == 0:
            continue
        p = lcs / len(candidate)
        r = lcs / len(ref)
        f = (1.0 + beta * beta) * p * r / (r + beta * beta * p)
        best = max(best, f)
    return best


# ---------------------------------------------------------------------------
# CIDEr (plain TF-IDF cosine form)
# ---------------------------------------------------------------------------

def cider(candidates: dict, references: dict, scale10: bool = False):
    """Corpus CIDEr and per-image scores.

    `candidates` maps image id -> token list; `references` maps image id ->
    list of token lists. IDF for an n-gram is ln(#images / max(1, #images
    whose references contain it)). Per image and n, the candidate's TF-IDF
    vector is compared by cosine to each reference's and averaged; the
    corpus value averages over images then over n = 1..4.
    """
    if not candidates:
        raise ValueError("empty corpus")
    ids = sorted(candidates)
    missing = [i for i in ids if i not in references]
    if missing:
        raise ValueError(f"images without references: {missing}")
    n_images = len(ids)
    idf = []
    for n in range(1, CIDER_NGRAM_MAX + 1):
        df = Counter()
        for img in ids:
            present = set()
            for ref in references[img]:
                present.update(ngram_counts(ref, n).keys())
            for gram in present:
                df[gram] += 1
        idf.append({g: math.log(n_images / max(1, c)) for g, c in df.items()})

    def tfidf(tokens, n):
        vec = {}
        for gram, c in ngram_counts(tokens, n).items():
            weight = idf[n - 1].get(gram)
            if weight is None:
                # n-gram unseen in any reference: treated as df = 1
                weight = math.log(n_images)
            vec[gram] = c * weight
        return vec

    def cosine(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(x * v[g] for g, x in u.items() if g in v)
        return dot / (nu * nv)

    per_image = {}
    for img in ids:
        sims = []
        for n in range(1, CIDER_NGRAM_MAX + 1):
            cand_vec = tfidf(candidates[img], n)
            refs = references[img]
            sims.append(sum(cosine(cand_vec, tfidf(r, n)) for r in refs) / len(refs))
        per_image[img] = sum(sims) / CIDER_NGRAM_MAX
    corpus = sum(per_image.values()) / n_images
    if scale10:
        corpus *= 10.0
        per_image = {k: v * 10.0 for k, v in per_image.items()}
    return corpus, per_image


def composite_score(candidate, references) -> float:
    """Arithmetic mean of sentence BLEU-2, METEOR, and ROUGE-L."""
    return (
        bleu_n(candidate, references, 2)
        + meteor(candidate, references)
        + rouge_l(candidate, references)
    ) / 3.0


# ---------------------------------------------------------------------------
# Corpus evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float
    per_image: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "per_image": self.per_image,
        }


def evaluate_corpus(predictions: dict, gold: dict, smoothing: bool = False,
                    cider_scale10: bool = False) -> EvaluationReport:
    """Seven-metric report for image id -> token list predictions.

    BLEU is pooled across the corpus; METEOR and ROUGE-L are means over
    images; CIDEr is the corpus score. Every predicted image must have gold
    references.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    unknown = sorted(set(predictions) - set(gold))
    if unknown:
        raise ValueError(f"predictions for images without gold references: {unknown}")
    ids = sorted(predictions)
    cands = [predictions[i] for i in ids]
    refs = [gold[i] for i in ids]
    bleu = [corpus_bleu(cands, refs, n, smoothing) for n in range(1, 5)]
    meteor_scores = {i: meteor(predictions[i], gold[i]) for i in ids}
    rouge_scores = {i: rouge_l(predictions[i], gold[i]) for i in ids}
    cider_corpus, cider_per_image = cider(
        predictions, {i: gold[i] for i in ids}, scale10=cider_scale10
    )
    per_image = [
        {
            "image_id": i,
            "bleu1": bleu_n(predictions[i], gold[i], 1, smoothing),
            "bleu2": bleu_n(predictions[i], gold[i], 2, smoothing),
            "bleu3": bleu_n(predictions[i], gold[i], 3, smoothing),
            "bleu4": bleu_n(predictions[i], gold[i], 4, smoothing),
            "meteor": meteor_scores[i],
            "rouge_l": rouge_scores[i],
            "cider": cider_per_image[i],
        }
        for i in ids
    ]
    return EvaluationReport(
        bleu[0],
        bleu[1],
        bleu[2],
        bleu[3],
        sum(meteor_scores.values()) / len(ids),
        sum(rouge_scores.values()) / len(ids),
        cider_corpus,
        per_image,
    )


def report_table(report: EvaluationReport) -> str:
    """Fixed-order metric table with three decimal places."""
    header = ["BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE-L", "CIDEr"]
    values = [
        report.bleu1,
        report.bleu2,
        report.bleu3,
        report.bleu4,
        report.meteor,
        report.rouge_l,
        report.cider,
    ]
    widths = [max(len(h), 6) for h in header]
    head = "  ".join(h.ljust(w) for h, w in zip(header, widths))
    row = "  ".join(f"{v:.3f}".ljust(w) for v, w in zip(values, widths))
    return head + "\n" + row
