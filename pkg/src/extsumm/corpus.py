"""Corpus construction and loading for aspect-oriented summarization.

A corpus is a set of instances (product sentences, aspect, short summary)
per train/dev/test split. Real corpora are built from products whose
professionally written multi-aspect summaries are fragmented, clustered
into aspect groups, and paired back with the product text. A synthetic
corpus generator provides a small, fully labeled substrate for tests.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

SPLITS = ("train", "dev", "test")
DEFAULT_SEPARATOR = "."
DEFAULT_MAX_INPUT_CHARS = 400
DEFAULT_MAX_TARGET_CHARS = 70
DEFAULT_MIN_FRAGMENT_CHARS = 15
DEFAULT_MAX_FRAGMENT_CHARS = 55
DEFAULT_SPLIT_RATIOS = (0.8, 0.1, 0.1)


class CorpusError(ValueError):
    """Raised for malformed corpus files or records violating invariants."""


@dataclass(frozen=True)
class AspectCategory:
    name: str
    index: int

    def __post_init__(self):
        if not self.name:
            raise CorpusError("aspect name must be non-empty")
        if self.index < 0:
            raise CorpusError("aspect index must be >= 0")


@dataclass
class CategorySchema:
    """Ordered aspect set for one product category."""

    category: str
    aspects: list[AspectCategory]
    cluster_count: int

    def __post_init__(self):
        if self.cluster_count != len(self.aspects):
            raise CorpusError("cluster_count must equal the number of aspects")
        indices = [a.index for a in self.aspects]
        if sorted(indices) != list(range(len(self.aspects))):
            raise CorpusError("aspect indices must be a permutation of 0..k-1")
        names = [a.name for a in self.aspects]
        if len(set(names)) != len(names):
            raise CorpusError("aspect names must be unique")

    @classmethod
    def from_names(cls, category: str, names: Iterable[str]) -> "CategorySchema":
        aspects = [AspectCategory(name=n, index=i) for i, n in enumerate(names)]
        return cls(category=category, aspects=aspects, cluster_count=len(aspects))

    def by_name(self, name: str) -> AspectCategory:
        for a in self.aspects:
            if a.name == name:
                return a
        raise CorpusError(f"unknown aspect {name!r} for category {self.category!r}")


@dataclass
class ProductRecord:
    product_id: str
    category: str
    title: str
    detail_sentences: list[str]
    raw_summary: str | None = None

    def validate(self, separator: str = DEFAULT_SEPARATOR) -> None:
        if not self.product_id:
            raise CorpusError("product_id must be non-empty")
        for s in [self.title] + self.detail_sentences:
            if separator in s:
                raise CorpusError(
                    f"product {self.product_id}: sentence contains the "
                    f"separator {separator!r}: {s!r}"
                )


@dataclass
class Instance:
    """One (product sentences, aspect, summary) tuple."""

    product_id: str
    sentences: list[str]
    aspect: AspectCategory
    summary: str
    split: str
    category: str = ""


def joined_input_length(sentences: list[str], separator: str = DEFAULT_SEPARATOR) -> int:
    """Character length of the model input: each sentence plus its separator."""
    return sum(len(s) + len(separator) for s in sentences)


def validate_instance(
    inst: Instance,
    max_input_chars: int = DEFAULT_MAX_INPUT_CHARS,
    max_target_chars: int = DEFAULT_MAX_TARGET_CHARS,
    separator: str = DEFAULT_SEPARATOR,
) -> None:
    if inst.split not in SPLITS:
        raise CorpusError(f"unknown split {inst.split!r}")
    if not inst.sentences:
        raise CorpusError(f"instance {inst.product_id}: no sentences")
    for s in inst.sentences:
        if not s:
            raise CorpusError(f"instance {inst.product_id}: empty sentence")
        if separator in s:
            raise CorpusError(
                f"instance {inst.product_id}: sentence contains separator: {s!r}"
            )
    length = joined_input_length(inst.sentences, separator)
    if length > max_input_chars:
        raise CorpusError(
            f"instance {inst.product_id}: input length {length} exceeds "
            f"{max_input_chars}"
        )
    if len(inst.summary) > max_target_chars:
        raise CorpusError(
            f"instance {inst.product_id}: summary length {len(inst.summary)} "
            f"exceeds {max_target_chars}"
        )
    if not inst.summary:
        raise CorpusError(f"instance {inst.product_id}: empty summary")


# ---------------------------------------------------------------------------
# JSONL I/O


def load_corpus(
    path,
    split: str,
    schema: CategorySchema | None = None,
    max_input_chars: int = DEFAULT_MAX_INPUT_CHARS,
    max_target_chars: int = DEFAULT_MAX_TARGET_CHARS,
    separator: str = DEFAULT_SEPARATOR,
) -> list[Instance]:
    """Read instances from a JSONL file, enforcing all instance invariants.

    Aspect names are resolved against ``schema`` when given; otherwise a
    schema is inferred from the sorted unique aspect names in the file.
    Over-long records are errors here, not truncated.
    """
    if split not in SPLITS:
        raise CorpusError(f"unknown split {split!r}")
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {e}") from e
            for key in ("product_id", "sentences", "aspect", "summary"):
                if key not in obj:
                    raise CorpusError(f"{path}:{lineno}: missing field {key!r}")
            rows.append((lineno, obj))

    if schema is None:
        names = sorted({obj["aspect"] for _, obj in rows})
        category = rows[0][1].get("category", "") if rows else ""
        schema = CategorySchema.from_names(category, names) if names else None

    instances = []
    seen_pairs: set[tuple[str, str]] = set()
    for lineno, obj in rows:
        try:
            aspect = schema.by_name(obj["aspect"])
            inst = Instance(
                product_id=obj["product_id"],
                sentences=list(obj["sentences"]),
                aspect=aspect,
                summary=obj["summary"],
                split=split,
                category=obj.get("category", ""),
            )
            validate_instance(inst, max_input_chars, max_target_chars, separator)
        except CorpusError as e:
            raise CorpusError(f"{path}:{lineno}: {e}") from e
        if split in ("dev", "test"):
            key = (inst.product_id, inst.aspect.name)
            if key in seen_pairs:
                raise CorpusError(
                    f"{path}:{lineno}: duplicate (product_id, aspect) pair "
                    f"{key} in {split} split"
                )
            seen_pairs.add(key)
        instances.append(inst)
    return instances


def save_instances(instances: list[Instance], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            obj = {
                "product_id": inst.product_id,
                "category": inst.category,
                "sentences": inst.sentences,
                "aspect": inst.aspect.name,
                "summary": inst.summary,
            }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


def load_products(path) -> list[ProductRecord]:
    products = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                products.append(
                    ProductRecord(
                        product_id=obj["product_id"],
                        category=obj.get("category", ""),
                        title=obj["title"],
                        detail_sentences=list(obj["details"]),
                        raw_summary=obj.get("raw_summary"),
                    )
                )
            except (json.JSONDecodeError, KeyError) as e:
                raise CorpusError(f"{path}:{lineno}: malformed product record: {e}") from e
    return products


def save_products(products: list[ProductRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in products:
            obj = {
                "product_id": p.product_id,
                "category": p.category,
                "title": p.title,
                "details": p.detail_sentences,
                "raw_summary": p.raw_summary,
            }
            f.write(json.dumps(obj, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Fragmenting and clustering


def split_fragments(
    raw_summary: str,
    min_chars: int = DEFAULT_MIN_FRAGMENT_CHARS,
    max_chars: int = DEFAULT_MAX_FRAGMENT_CHARS,
    separator: str = DEFAULT_SEPARATOR,
) -> list[str]:
    """Split a raw summary at separators, keeping fragments whose length
    (excluding the terminating separator) lies in [min_chars, max_chars]."""
    if min_chars > max_chars:
        raise ValueError("min_chars must be <= max_chars")
    return [f for f in raw_summary.split(separator) if min_chars <= len(f) <= max_chars]


def make_char_tfidf_embedder(
    corpus: list[str], ngram_sizes: tuple[int, ...] = (1, 2)
) -> Callable[[str], np.ndarray]:
    """Fit a character n-gram TF-IDF embedder on the given fragment corpus.

    The returned function maps any string to a fixed-dimension, L2-normalized
    dense vector. Deterministic: the n-gram vocabulary is sorted.
    """
    if not corpus:
        raise ValueError("cannot fit an embedder on an empty corpus")

    def grams(text: str) -> list[str]:
        out = []
        for n in ngram_sizes:
            out.extend(text[i : i + n] for i in range(len(text) - n + 1))
        return out

    df: dict[str, int] = {}
    for text in corpus:
        for g in set(grams(text)):
            df[g] = df.get(g, 0) + 1
    vocab = {g: i for i, g in enumerate(sorted(df))}
    n_docs = len(corpus)
    idf = np.zeros(len(vocab))
    for g, i in vocab.items():
        idf[i] = math.log((1 + n_docs) / (1 + df[g])) + 1.0

    def embed(text: str) -> np.ndarray:
        vec = np.zeros(len(vocab))
        for g in grams(text):
            i = vocab.get(g)
            if i is not None:
                vec[i] += 1.0
        vec *= idf
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    return embed


def _kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100) -> np.ndarray:
    """Seeded k-means with k-means++ initialization.

    Nearest-centroid ties break toward the lowest cluster id; empty clusters
    keep their previous center. Converges when assignments stabilize.
    """
    n = points.shape[0]
    distinct = np.unique(points, axis=0)
    if k > distinct.shape[0]:
        raise ValueError(
            f"k={k} exceeds the number of distinct points ({distinct.shape[0]})"
        )
    rng = np.random.default_rng(seed)

    centers = np.empty((k, points.shape[1]))
    first = int(rng.integers(n))
    centers[0] = points[first]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        total = d2.sum()
        if total <= 0:
            raise ValueError("degenerate geometry during k-means++ seeding")
        probs = d2 / total
        choice = int(rng.choice(n, p=probs))
        centers[c] = points[choice]
        d2 = np.minimum(d2, np.sum((points - centers[c]) ** 2, axis=1))

    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignments = np.argmin(dists, axis=1)  # argmin takes the lowest id on ties
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(k):
            members = points[assignments == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return assignments


def cluster_fragments(
    fragments: list[str],
    k: int,
    embedder: Callable[[str], np.ndarray],
    seed: int,
) -> list[int]:
    """Assign each fragment a cluster id in [0, k) by k-means on embeddings."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not fragments:
        raise ValueError("fragments must be non-empty")
    points = np.stack([np.asarray(embedder(f), dtype=np.float64) for f in fragments])
    return [int(c) for c in _kmeans(points, k, seed)]


# ---------------------------------------------------------------------------
# Dataset construction


def assign_split(
    product_id: str, seed: int, ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS
) -> str:
    """Stable hash-based split assignment; the same product always lands in
    the same split for a given seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    digest = hashlib.sha1(f"{seed}:{product_id}".encode("utf-8")).hexdigest()
    frac = int(digest[:12], 16) / float(16**12)
    if frac < ratios[0]:
        return "train"
    if frac < ratios[0] + ratios[1]:
        return "dev"
    return "test"


def _fit_sentences(
    title: str,
    details: list[str],
    max_input_chars: int,
    separator: str,
    product_id: str,
) -> list[str]:
    # keep the title plus as many leading detail sentences as fit the budget
    sentences = [title]
    budget = joined_input_length(sentences, separator)
    if budget > max_input_chars:
        raise CorpusError(
            f"product {product_id}: title alone exceeds max_input_chars"
        )
    for s in details:
        cost = len(s) + len(separator)
        if budget + cost > max_input_chars:
            break
        sentences.append(s)
        budget += cost
    return sentences


def build_dataset(
    products: list[ProductRecord],
    schema: CategorySchema,
    embedder: Callable[[str], np.ndarray] | None,
    seed: int,
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    min_fragment_chars: int = DEFAULT_MIN_FRAGMENT_CHARS,
    max_fragment_chars: int = DEFAULT_MAX_FRAGMENT_CHARS,
    max_input_chars: int = DEFAULT_MAX_INPUT_CHARS,
    max_target_chars: int = DEFAULT_MAX_TARGET_CHARS,
    separator: str = DEFAULT_SEPARATOR,
) -> dict[str, list[Instance]]:
    """Fragment raw summaries, cluster fragments into aspects, and emit one
    instance per (product, fragment).

    Splits are product-disjoint. Dev and test keep only the first fragment
    per (product, aspect) pair. When ``embedder`` is None, a character
    n-gram TF-IDF embedder is fitted on the surviving fragments.
    """
    fragments: list[str] = []
    owners: list[int] = []
    missing_summary = [p.product_id for p in products if not p.raw_summary]
    if missing_summary:
        raise CorpusError(f"products without raw_summary: {missing_summary}")
    no_fragments = []
    for pi, product in enumerate(products):
        product.validate(separator)
        frags = split_fragments(
            product.raw_summary, min_fragment_chars, max_fragment_chars, separator
        )
        if not frags:
            no_fragments.append(product.product_id)
            continue
        for f in frags:
            fragments.append(f)
            owners.append(pi)
    if no_fragments:
        raise CorpusError(
            f"no fragments survive length filtering for products: {no_fragments}"
        )

    if embedder is None:
        embedder = make_char_tfidf_embedder(fragments)
    cluster_ids = cluster_fragments(fragments, schema.cluster_count, embedder, seed)

    out: dict[str, list[Instance]] = {s: [] for s in SPLITS}
    seen_dev_test: dict[str, set[tuple[str, str]]] = {"dev": set(), "test": set()}
    for frag, owner, cid in zip(fragments, owners, cluster_ids):
        product = products[owner]
        aspect = schema.aspects[cid]
        split = assign_split(product.product_id, seed, split_ratios)
        if split in ("dev", "test"):
            key = (product.product_id, aspect.name)
            if key in seen_dev_test[split]:
                continue  # first fragment wins
            seen_dev_test[split].add(key)
        sentences = _fit_sentences(
            product.title, product.detail_sentences, max_input_chars,
            separator, product.product_id,
        )
        if len(frag) > max_target_chars:
            raise CorpusError(
                f"product {product.product_id}: fragment longer than "
                f"max_target_chars: {frag!r}"
            )
        inst = Instance(
            product_id=product.product_id,
            sentences=sentences,
            aspect=aspect,
            summary=frag,
            split=split,
            category=product.category,
        )
        validate_instance(inst, max_input_chars, max_target_chars, separator)
        out[split].append(inst)
    return out


# ---------------------------------------------------------------------------
# Synthetic corpus


_ASPECT_LETTER_POOLS = ("abcd", "efgh", "ijkl", "mnop", "qrst")
_TITLE_LETTERS = "uvwx"
_WORDS_PER_SENTENCE = 5
_WORDS_PER_BANK = 10


@dataclass
class SynthCorpus:
    """Deterministic synthetic corpus with gold extractor labels."""

    products: list[ProductRecord]
    instances: dict[str, list[Instance]]
    gold_labels: dict[tuple[str, str], list[int]] = field(default_factory=dict)

    def all_instances(self) -> list[Instance]:
        return [i for s in SPLITS for i in self.instances[s]]


def _make_word(rng: np.random.Generator, letters: str) -> str:
    length = int(rng.integers(5, 7))
    return "".join(letters[int(rng.integers(len(letters)))] for _ in range(length))


def synth_corpus(
    seed: int,
    n_products: int,
    schema: CategorySchema,
    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
    separator: str = DEFAULT_SEPARATOR,
) -> SynthCorpus:
    """Generate products whose sentences are drawn from disjoint per-aspect
    letter pools, so each aspect's gold summary overlaps only that aspect's
    sentences.

    Gold summaries take the even-position words of each matching sentence,
    which makes them character subsequences of the source and keeps gold
    labels consistent with overlap-rate labeling at the default threshold.
    """
    if n_products < 0:
        raise ValueError("n_products must be >= 0")
    if len(schema.aspects) > len(_ASPECT_LETTER_POOLS):
        raise ValueError(
            f"synthetic corpus supports at most {len(_ASPECT_LETTER_POOLS)} aspects"
        )
    rng = np.random.default_rng(seed)

    # one shared word bank per aspect so patterns recur across products
    banks = {
        aspect.index: [
            _make_word(rng, _ASPECT_LETTER_POOLS[aspect.index])
            for _ in range(_WORDS_PER_BANK)
        ]
        for aspect in schema.aspects
    }
    title_words = [_make_word(rng, _TITLE_LETTERS) for _ in range(_WORDS_PER_BANK)]

    products = []
    instances: dict[str, list[Instance]] = {s: [] for s in SPLITS}
    gold_labels: dict[tuple[str, str], list[int]] = {}
    for pi in range(n_products):
        product_id = f"synth-{pi:05d}"
        title = (
            f"{title_words[int(rng.integers(_WORDS_PER_BANK))]} "
            f"{title_words[int(rng.integers(_WORDS_PER_BANK))]} {pi % 1000}"
        )
        per_aspect_sentences: dict[int, list[str]] = {}
        for aspect in schema.aspects:
            n_sent = int(rng.integers(1, 3))
            bank = banks[aspect.index]
            sents = []
            for _ in range(n_sent):
                picks = rng.choice(_WORDS_PER_BANK, size=_WORDS_PER_SENTENCE, replace=False)
                sents.append(" ".join(bank[int(w)] for w in picks))
            per_aspect_sentences[aspect.index] = sents

        # interleave detail sentences across aspects deterministically
        tagged = [
            (aspect.index, s)
            for aspect in schema.aspects
            for s in per_aspect_sentences[aspect.index]
        ]
        order = rng.permutation(len(tagged))
        details = [tagged[int(i)][1] for i in order]
        detail_aspects = [tagged[int(i)][0] for i in order]

        summaries = {}
        for aspect in schema.aspects:
            parts = []
            for s in per_aspect_sentences[aspect.index]:
                words = s.split(" ")
                parts.append(" ".join(words[::2]))
            summaries[aspect.index] = " ".join(parts)

        raw_summary = separator.join(summaries[a.index] for a in schema.aspects) + separator
        product = ProductRecord(
            product_id=product_id,
            category=schema.category,
            title=title,
            detail_sentences=details,
            raw_summary=raw_summary,
        )
        product.validate(separator)
        products.append(product)

        split = assign_split(product_id, seed, split_ratios)
        sentences = [title] + details
        for aspect in schema.aspects:
            inst = Instance(
                product_id=product_id,
                sentences=sentences,
                aspect=aspect,
                summary=summaries[aspect.index],
                split=split,
                category=schema.category,
            )
            validate_instance(inst, separator=separator)
            instances[split].append(inst)
            labels = [0] + [1 if a == aspect.index else 0 for a in detail_aspects]
            gold_labels[(product_id, aspect.name)] = labels

    return SynthCorpus(products=products, instances=instances, gold_labels=gold_labels)


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class CorpusStats:
    """Summary and product counts, overall and per split and aspect."""

    per_split: dict[str, dict[str, int]]
    per_aspect: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {"per_split": self.per_split, "per_aspect": self.per_aspect}


def corpus_stats(instances_by_split: dict[str, list[Instance]]) -> CorpusStats:
    per_split = {}
    per_aspect: dict[str, dict[str, int]] = {}
    all_products = set()
    total = 0
    overall_aspects: dict[str, int] = {}
    for split in SPLITS:
        insts = instances_by_split.get(split, [])
        products = {i.product_id for i in insts}
        per_split[split] = {"n_summaries": len(insts), "n_products": len(products)}
        aspect_counts: dict[str, int] = {}
        for inst in insts:
            aspect_counts[inst.aspect.name] = aspect_counts.get(inst.aspect.name, 0) + 1
            overall_aspects[inst.aspect.name] = overall_aspects.get(inst.aspect.name, 0) + 1
        per_aspect[split] = aspect_counts
        all_products |= products
        total += len(insts)
    per_split["overall"] = {"n_summaries": total, "n_products": len(all_products)}
    per_aspect["overall"] = overall_aspects
    return CorpusStats(per_split=per_split, per_aspect=per_aspect)
