import itertools
import math
import random

import pytest

from extsumm.labeling import SentenceLabelSet, label_sentences, lcs_length, overlap_rate


def is_subsequence(short, long):
    it = iter(long)
    return all(c in it for c in short)


def brute_lcs(a: str, b: str) -> int:
    """Enumerate every subsequence of the shorter string and keep the longest
    one that also appears in the longer string."""
    if len(a) > len(b):
        a, b = b, a
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        if len(sub) > best and is_subsequence(sub, b):
            best = len(sub)
    return best


class TestLcsLength:
    def test_identical(self):
        assert lcs_length("abc", "abc") == 3

    def test_disjoint(self):
        assert lcs_length("abc", "xyz") == 0

    def test_interleaved(self):
        assert brute_lcs("abcde", "ace") == 3
        assert lcs_length("abcde", "ace") == 3

    def test_empty(self):
        assert lcs_length("", "abc") == 0
        assert lcs_length("abc", "") == 0
        assert lcs_length("", "") == 0

    def test_exhaustive_small_vs_brute_force(self):
        alphabet = "abc"
        strings = [""]
        for length in range(1, 5):
            strings.extend("".join(t) for t in itertools.product(alphabet, repeat=length))
        for a in strings:
            for b in strings:
                assert lcs_length(a, b) == brute_lcs(a, b), (a, b)

    def test_random_vs_brute_force(self):
        rng = random.Random(0)
        for _ in range(300):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            assert lcs_length(a, b) == brute_lcs(a, b), (a, b)

    def test_symmetry_and_identity(self):
        rng = random.Random(1)
        for _ in range(200):
            a = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 10)))
            b = "".join(rng.choice("abcd") for _ in range(rng.randint(0, 10)))
            assert lcs_length(a, b) == lcs_length(b, a)
            assert lcs_length(a, a) == len(a)

    def test_shared_suffix_char_increases_lcs(self):
        rng = random.Random(2)
        for _ in range(200):
            a = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            b = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            x = rng.choice("abc")
            assert lcs_length(a + x, b + x) >= lcs_length(a, b) + 1


class TestOverlapRate:
    def test_full_overlap(self):
        assert overlap_rate("hello", "hello") == 1.0

    def test_no_overlap(self):
        assert overlap_rate("abc", "xyz") == 0.0

    def test_half_overlap(self):
        assert overlap_rate("abcd", "abxy") == 0.5

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            overlap_rate("", "abc")

    def test_empty_summary_gives_zero(self):
        assert overlap_rate("abc", "") == 0.0

    def test_in_unit_interval_and_subsequence_condition(self):
        rng = random.Random(3)
        for _ in range(200):
            s = "".join(rng.choice("abc") for _ in range(rng.randint(1, 8)))
            y = "".join(rng.choice("abc") for _ in range(rng.randint(0, 8)))
            r = overlap_rate(s, y)
            assert 0.0 <= r <= 1.0
            assert (r == 1.0) == is_subsequence(s, y)

    def test_strip_chars(self):
        assert overlap_rate("a b", "ab", strip_chars=" ") == 1.0
        assert overlap_rate("a b", "ab") == pytest.approx(2 / 3)


class TestLabelSentences:
    def test_thresholding(self):
        # rates 0.5 and 0.0 against "abxy"
        out = label_sentences(["abcd", "zzzz"], "abxy", threshold=0.35)
        assert out.overlap_rates == [0.5, 0.0]
        assert out.labels == [1, 0]

    def test_all_identical(self):
        out = label_sentences(["same", "same"], "same")
        assert out.labels == [1, 1]

    def test_threshold_is_inclusive(self):
        # LCS 7 over length 20 is exactly 0.35
        sentence = "a" * 7 + "b" * 13
        out = label_sentences([sentence], "a" * 7, threshold=0.35)
        assert out.overlap_rates == [pytest.approx(0.35)]
        assert out.labels == [1]
        # just below the threshold
        below = "a" * 6 + "b" * 14
        assert label_sentences([below], "a" * 7, threshold=0.35).labels == [0]

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            label_sentences(["abc"], "abc", threshold=0.0)
        with pytest.raises(ValueError):
            label_sentences(["abc"], "abc", threshold=1.0)

    def test_labelset_consistency_enforced(self):
        with pytest.raises(ValueError):
            SentenceLabelSet(overlap_rates=[0.5], labels=[0], threshold=0.35)
        with pytest.raises(ValueError):
            SentenceLabelSet(overlap_rates=[0.5, 0.2], labels=[1], threshold=0.35)

    def test_matches_synthetic_gold_labels(self, tiny_corpus):
        for inst in tiny_corpus.all_instances():
            gold = tiny_corpus.gold_labels[(inst.product_id, inst.aspect.name)]
            got = label_sentences(inst.sentences, inst.summary, threshold=0.35).labels
            assert got == gold, inst.product_id

    def test_nll_reference_value(self):
        # a fully separated pair keeps margins well away from the threshold
        rates = label_sentences(
            ["aaaa bbbb cccc", "zzzz yyyy xxxx"], "aaaa cccc"
        ).overlap_rates
        assert rates[0] > 0.5
        assert rates[1] < 0.2
        assert math.isclose(rates[0], lcs_length("aaaa bbbb cccc", "aaaa cccc") / 14)
