"""Aspect-conditioned product summarization with an extraction-enhanced
pointer-generator: corpus construction, extractor supervision, joint
training, beam-search decoding, and evaluation."""

__version__ = "0.1.0"

from .corpus import (
    AspectCategory,
    CategorySchema,
    Instance,
    ProductRecord,
    build_dataset,
    cluster_fragments,
    corpus_stats,
    load_corpus,
    split_fragments,
    synth_corpus,
)
from .labeling import SentenceLabelSet, label_sentences, lcs_length, overlap_rate
from .metrics import distinct_n, evaluate, rouge_l_f1, rouge_n_f1
from .model import AspectSummarizer, ModelConfig, fuse_attention
from .trainer import TrainConfig, gradient_check, perplexity, train
from .decoding import DecodeConfig, beam_search, greedy_decode, topk_generate

__all__ = [
    "AspectCategory",
    "AspectSummarizer",
    "CategorySchema",
    "DecodeConfig",
    "Instance",
    "ModelConfig",
    "ProductRecord",
    "SentenceLabelSet",
    "TrainConfig",
    "beam_search",
    "build_dataset",
    "cluster_fragments",
    "corpus_stats",
    "distinct_n",
    "evaluate",
    "fuse_attention",
    "gradient_check",
    "greedy_decode",
    "label_sentences",
    "lcs_length",
    "load_corpus",
    "overlap_rate",
    "perplexity",
    "rouge_l_f1",
    "rouge_n_f1",
    "split_fragments",
    "synth_corpus",
    "topk_generate",
    "train",
]
