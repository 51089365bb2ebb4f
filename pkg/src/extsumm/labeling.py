"""Character-overlap supervision for the sentence extractor.

Each input sentence gets an overlap rate against the target summary
(longest common subsequence length divided by sentence length) and a
binary relevance label from thresholding that rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

DEFAULT_THRESHOLD = 0.35


@dataclass
class SentenceLabelSet:
    """Per-sentence overlap rates and thresholded extractor labels."""

    overlap_rates: list[float]
    labels: list[int]
    threshold: float

    def __post_init__(self):
        if len(self.overlap_rates) != len(self.labels):
            raise ValueError("overlap_rates and labels must have equal length")
        for r, g in zip(self.overlap_rates, self.labels):
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"overlap rate {r} outside [0, 1]")
            if g != (1 if r >= self.threshold else 0):
                raise ValueError("label inconsistent with rate and threshold")


@njit(cache=True, inline="always")
def _lcs_row_update(prev, cur, ca, b, lb):
    # one row of the classic LCS table: cur[j+1] = f(prev, cur, a_char, b[j])
    cur[0] = 0
    for j in range(lb):
        if ca == b[j]:
            cur[j + 1] = prev[j] + 1
        else:
            x = prev[j + 1]
            y = cur[j]
            cur[j + 1] = x if x >= y else y


@njit(cache=True)
def lcs_kernel(a, la, b, lb):
    """LCS length of integer sequences a[:la], b[:lb] by row-wise DP."""
    prev = np.zeros(lb + 1, dtype=np.int64)
    cur = np.zeros(lb + 1, dtype=np.int64)
    for i in range(la):
        _lcs_row_update(prev, cur, a[i], b, lb)
        prev, cur = cur, prev
    return prev[lb]


def _codes(s: str) -> np.ndarray:
    return np.array([ord(c) for c in s], dtype=np.int64)


def lcs_length(a: str, b: str) -> int:
    """Length of the longest common subsequence of two character strings."""
    if not a or not b:
        return 0
    ca, cb = _codes(a), _codes(b)
    return int(lcs_kernel(ca, len(ca), cb, len(cb)))


def overlap_rate(sentence: str, summary: str, strip_chars: str = "") -> float:
    """LCS length between sentence and summary, divided by sentence length.

    ``strip_chars`` removes the given characters from both strings before
    matching (default keeps everything, punctuation included).
    """
    if strip_chars:
        table = str.maketrans("", "", strip_chars)
        sentence = sentence.translate(table)
        summary = summary.translate(table)
    if not sentence:
        raise ValueError("overlap_rate is undefined for an empty sentence")
    return lcs_length(sentence, summary) / len(sentence)


def label_sentences(
    sentences: list[str],
    summary: str,
    threshold: float = DEFAULT_THRESHOLD,
    strip_chars: str = "",
) -> SentenceLabelSet:
    """Label each sentence 1 if its overlap rate is at least ``threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    rates = [overlap_rate(s, summary, strip_chars=strip_chars) for s in sentences]
    labels = [1 if r >= threshold else 0 for r in rates]
    return SentenceLabelSet(overlap_rates=rates, labels=labels, threshold=threshold)
