import csv
import random

import pytest

from extsumm.corpus import AspectCategory, Instance
from extsumm.decoding import Candidate, GenerationRecord
from extsumm.metrics import (
    distinct_n,
    evaluate,
    export_heatmap,
    rouge_l_f1,
    rouge_n_f1,
    write_heatmap_csv,
)
from tests.test_labeling import brute_lcs


class TestDistinctN:
    def test_all_distinct(self):
        assert distinct_n([["a", "b", "c", "d"]], 2) == 1.0

    def test_repeated_bigram(self):
        # bigrams: (a,b), (b,a), (a,b) -> 2 distinct of 3
        assert distinct_n([["a", "b", "a", "b"]], 2) == pytest.approx(2 / 3)

    def test_constant_tokens(self):
        # bigrams: (a,a), (a,a) -> 1 distinct of 2
        assert distinct_n([["a", "a", "a"]], 2) == 0.5

    def test_no_ngrams(self):
        assert distinct_n([], 2) == 0.0
        assert distinct_n([["a"]], 2) == 0.0

    def test_strings_are_char_sequences(self):
        assert distinct_n(["abab"], 2) == pytest.approx(2 / 3)

    def test_duplicates_never_increase(self):
        rng = random.Random(0)
        for _ in range(50):
            summaries = [
                "".join(rng.choice("abc") for _ in range(rng.randint(2, 8)))
                for _ in range(rng.randint(1, 5))
            ]
            base = distinct_n(summaries, 2)
            dup = distinct_n(summaries + [rng.choice(summaries)], 2)
            assert dup <= base + 1e-12

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            distinct_n(["ab"], 0)


class TestRougeN:
    def test_identical(self):
        assert rouge_n_f1("abc", "abc", 1) == 1.0
        assert rouge_n_f1("abc", "abc", 2) == 1.0

    def test_disjoint(self):
        assert rouge_n_f1("abc", "xyz", 1) == 0.0

    def test_two_of_three_unigrams(self):
        assert rouge_n_f1("abc", "abd", 1) == pytest.approx(2 / 3)

    def test_clipped_counting(self):
        # candidate "aaa" vs reference "a": overlap clipped to one 'a'
        p, r = 1 / 3, 1 / 1
        assert rouge_n_f1("aaa", "a", 1) == pytest.approx(2 * p * r / (p + r))

    def test_symmetry_under_swap(self):
        rng = random.Random(1)
        for _ in range(100):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 10)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 10)))
            for n in (1, 2):
                assert rouge_n_f1(a, b, n) == pytest.approx(rouge_n_f1(b, a, n))

    def test_monotone_as_overlap_removed(self):
        # replacing shared characters with unmatched ones never raises F1
        scores = [
            rouge_n_f1(cand, "abcdef", 1)
            for cand in ("abcdef", "abcdeZ", "abcdYZ", "abcXYZ", "abWXYZ")
        ]
        assert all(s1 >= s2 for s1, s2 in zip(scores, scores[1:]))

    def test_empty(self):
        assert rouge_n_f1("", "abc", 1) == 0.0
        assert rouge_n_f1("abc", "", 1) == 0.0


class TestRougeL:
    def test_identical(self):
        assert rouge_l_f1("abcd", "abcd") == 1.0

    def test_transposition(self):
        assert brute_lcs("abcd", "acbd") == 3
        assert rouge_l_f1("abcd", "acbd") == 0.75

    def test_empty_candidate(self):
        assert rouge_l_f1("", "abc") == 0.0

    def test_symmetry(self):
        rng = random.Random(2)
        for _ in range(100):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 10)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 10)))
            assert rouge_l_f1(a, b) == pytest.approx(rouge_l_f1(b, a))


def _record(pid, aspect, text, candidates=None):
    chosen = Candidate(token_ids=[], text=text, logprob=0.0, finished=True)
    cands = candidates or [chosen]
    return GenerationRecord(product_id=pid, aspect=aspect, candidates=cands, chosen=chosen)


def _reference(pid, aspect_name, aspect_index, summary):
    return Instance(
        product_id=pid,
        sentences=["some sentence"],
        aspect=AspectCategory(aspect_name, aspect_index),
        summary=summary,
        split="test",
    )


class TestEvaluate:
    def test_perfect_match_scores_one(self):
        refs = [_reference("p1", "alpha", 0, "hello world")]
        gens = [_record("p1", "alpha", "hello world")]
        report = evaluate(gens, refs)
        assert report.overall["rouge1"] == 1.0
        assert report.overall["rouge2"] == 1.0
        assert report.overall["rougeL"] == 1.0
        assert report.n_instances == 1
        assert report.per_aspect["alpha"]["rougeL"] == 1.0

    def test_report_has_overall_and_per_aspect_columns(self):
        refs = [
            _reference("p1", "alpha", 0, "aaaa"),
            _reference("p1", "bravo", 1, "bbbb"),
            _reference("p2", "alpha", 0, "cccc"),
        ]
        gens = [
            _record("p1", "alpha", "aaaa"),
            _record("p1", "bravo", "zzzz"),
            _record("p2", "alpha", "cccc"),
        ]
        report = evaluate(gens, refs)
        assert set(report.overall) == {"rouge1", "rouge2", "rougeL", "dist2", "dist3", "dist4"}
        assert set(report.per_aspect) == {"alpha", "bravo"}
        counts = sum(v["n_instances"] for v in report.per_aspect.values())
        assert counts == report.n_instances == 3

    def test_overall_is_mean_of_per_instance(self):
        refs = [
            _reference("p1", "alpha", 0, "abcd"),
            _reference("p2", "alpha", 0, "abcd"),
        ]
        gens = [
            _record("p1", "alpha", "abcd"),   # rougeL 1.0
            _record("p2", "alpha", "zzzz"),   # rougeL 0.0
        ]
        report = evaluate(gens, refs)
        assert report.overall["rougeL"] == pytest.approx(0.5)

    def test_unmatched_keys_error(self):
        refs = [_reference("p1", "alpha", 0, "aaaa")]
        gens = [_record("p2", "alpha", "aaaa")]
        with pytest.raises(ValueError, match="unmatched"):
            evaluate(gens, refs)

    def test_topk_pools_candidates_once_per_product(self):
        cands = [
            Candidate(token_ids=[], text="abab", logprob=-1.0, finished=True),
            Candidate(token_ids=[], text="cdcd", logprob=-2.0, finished=True),
        ]
        refs = [
            _reference("p1", "alpha", 0, "abab"),
            _reference("p1", "bravo", 1, "cdcd"),
        ]
        gens = [
            GenerationRecord("p1", "alpha", candidates=cands, chosen=cands[0]),
            GenerationRecord("p1", "bravo", candidates=cands, chosen=cands[1]),
        ]
        top1 = evaluate(gens, refs, mode="top1")
        topk = evaluate(gens, refs, mode="topk")
        # top1 pools the two chosen texts, topk pools the two candidates once
        assert top1.overall["dist2"] == pytest.approx(distinct_n(["abab", "cdcd"], 2))
        assert topk.overall["dist2"] == pytest.approx(distinct_n(["abab", "cdcd"], 2))
        # duplicated chosen summaries lower top1 diversity but not topk
        gens_dup = [
            GenerationRecord("p1", "alpha", candidates=cands, chosen=cands[0]),
            GenerationRecord("p1", "bravo", candidates=cands, chosen=cands[0]),
        ]
        top1_dup = evaluate(gens_dup, refs, mode="top1")
        topk_dup = evaluate(gens_dup, refs, mode="topk")
        assert top1_dup.overall["dist2"] < topk_dup.overall["dist2"]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            evaluate([], [], mode="bogus")


class TestHeatmap:
    def test_rows_in_order_and_csv(self, tiny_corpus, tiny_vocab, tiny_model, tmp_path):
        inst = tiny_corpus.all_instances()[0]
        export = export_heatmap(tiny_model, tiny_vocab, inst, inst.aspect.index)
        assert [s for s, _ in export.rows] == inst.sentences
        assert all(0.0 < score < 1.0 for _, score in export.rows)
        path = tmp_path / "heat.csv"
        write_heatmap_csv(export, path)
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["sentence", "score"]
        assert len(rows) == 1 + len(inst.sentences)
        assert rows[1][0] == inst.sentences[0]
