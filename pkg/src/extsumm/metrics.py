"""Generation quality and diversity metrics.

ROUGE scores are computed on character sequences (clipped n-gram
multisets for ROUGE-1/2, LCS for ROUGE-L), matching the character-based
length conventions used everywhere else in this package. Distinct-n is
the corpus-level ratio of distinct to total n-grams.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .labeling import lcs_length


def _ngrams(seq: Sequence, n: int) -> Iterable[tuple]:
    return (tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def distinct_n(summaries: Iterable[Sequence], n: int) -> float:
    """Distinct n-grams over total n-grams, pooled across all summaries.

    Each summary is a token sequence; a plain string counts as a sequence
    of characters. Returns 0.0 when no n-grams exist.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    total = 0
    distinct = set()
    for summary in summaries:
        for gram in _ngrams(summary, n):
            total += 1
            distinct.add(gram)
    if total == 0:
        return 0.0
    return len(distinct) / total


def _f1(overlap: float, n_cand: int, n_ref: int) -> float:
    if overlap == 0 or n_cand == 0 or n_ref == 0:
        return 0.0
    p = overlap / n_cand
    r = overlap / n_ref
    return 2 * p * r / (p + r)


def rouge_n_f1(candidate: str, reference: str, n: int) -> float:
    """Character n-gram F1 with clipped (multiset) overlap counting."""
    if n < 1:
        raise ValueError("n must be >= 1")
    cand = Counter(_ngrams(candidate, n))
    ref = Counter(_ngrams(reference, n))
    overlap = sum(min(cand[g], ref[g]) for g in cand if g in ref)
    return _f1(overlap, sum(cand.values()), sum(ref.values()))


def rouge_l_f1(candidate: str, reference: str) -> float:
    """Character LCS-based F1."""
    lcs = lcs_length(candidate, reference)
    return _f1(lcs, len(candidate), len(reference))


@dataclass
class EvalReport:
    """Overall and per-aspect generation scores."""

    overall: dict[str, float]
    per_aspect: dict[str, dict[str, float]]
    n_instances: int

    def to_dict(self) -> dict:
        return {
            "overall": dict(self.overall),
            "per_aspect": {a: dict(v) for a, v in self.per_aspect.items()},
            "n_instances": self.n_instances,
        }


@dataclass
class HeatmapExport:
    """Extractor relevance scores for one (product, aspect) input."""

    product_id: str
    aspect: str
    rows: list[tuple[str, float]] = field(default_factory=list)


def evaluate(generations, references, mode: str = "top1") -> EvalReport:
    """Score generations against reference instances.

    Generations and references are joined 1:1 on (product_id, aspect name).
    ROUGE-1/2/L are unweighted means of per-instance F1 on the chosen
    candidate. Distinct-2/3/4 pool the chosen summaries in ``top1`` mode,
    or each product's full candidate list (counted once per product) in
    ``topk`` mode.
    """
    if mode not in ("top1", "topk"):
        raise ValueError(f"unknown evaluate mode: {mode!r}")
    ref_by_key = {}
    for inst in references:
        key = (inst.product_id, inst.aspect.name)
        if key in ref_by_key:
            raise ValueError(f"duplicate reference key {key}")
        ref_by_key[key] = inst

    gen_keys = [(g.product_id, g.aspect) for g in generations]
    missing = [k for k in gen_keys if k not in ref_by_key]
    extra = [k for k in ref_by_key if k not in set(gen_keys)]
    if missing or extra:
        raise ValueError(
            f"generations and references do not join 1:1; "
            f"unmatched generations: {missing[:5]}, unmatched references: {extra[:5]}"
        )

    per_instance = []
    per_aspect_scores: dict[str, list[tuple[float, float, float]]] = {}
    for gen in generations:
        ref = ref_by_key[(gen.product_id, gen.aspect)]
        cand_text = gen.chosen.text
        scores = (
            rouge_n_f1(cand_text, ref.summary, 1),
            rouge_n_f1(cand_text, ref.summary, 2),
            rouge_l_f1(cand_text, ref.summary),
        )
        per_instance.append(scores)
        per_aspect_scores.setdefault(gen.aspect, []).append(scores)

    def _mean(values):
        return sum(values) / len(values) if values else 0.0

    n = len(per_instance)
    overall = {
        "rouge1": _mean([s[0] for s in per_instance]),
        "rouge2": _mean([s[1] for s in per_instance]),
        "rougeL": _mean([s[2] for s in per_instance]),
    }

    if mode == "top1":
        pool = [g.chosen.text for g in generations]
    else:
        pool = []
        seen_products = set()
        for g in generations:
            if g.product_id in seen_products:
                continue
            seen_products.add(g.product_id)
            pool.extend(c.text for c in g.candidates)
    for k in (2, 3, 4):
        overall[f"dist{k}"] = distinct_n(pool, k)

    per_aspect = {}
    for aspect, scores in sorted(per_aspect_scores.items()):
        per_aspect[aspect] = {
            "rouge1": _mean([s[0] for s in scores]),
            "rouge2": _mean([s[1] for s in scores]),
            "rougeL": _mean([s[2] for s in scores]),
            "n_instances": len(scores),
        }
    return EvalReport(overall=overall, per_aspect=per_aspect, n_instances=n)


def export_heatmap(model, vocab, instance, aspect_index: int) -> HeatmapExport:
    """Run the extractor forward and collect one relevance score per sentence.

    Scores are the raw sigmoid outputs of the extractor head, in input
    sentence order.
    """
    scores = model.sentence_relevance(vocab, instance.sentences, aspect_index)
    rows = list(zip(instance.sentences, scores))
    return HeatmapExport(
        product_id=instance.product_id, aspect=instance.aspect.name, rows=rows
    )


def write_heatmap_csv(export: HeatmapExport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sentence", "score"])
        for sentence, score in export.rows:
            writer.writerow([sentence, f"{score:.6f}"])
