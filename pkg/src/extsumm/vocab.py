"""Character vocabulary, copy-extended encoding, and batch assembly.

Tokenization is character-level. Source sequences are the instance
sentences, each terminated by the separator character, concatenated in
order. Out-of-vocabulary source characters get temporary per-instance ids
past the vocabulary size so the copy mechanism can point at them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import torch

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")


class Vocab:
    def __init__(self, chars: list[str]):
        self.itos = list(SPECIALS) + list(chars)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate characters in vocabulary")

    @classmethod
    def build(cls, texts: Iterable[str], separator: str = ".") -> "Vocab":
        chars = set(separator)
        for text in texts:
            chars.update(text)
        return cls(sorted(chars))

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, ch: str) -> int:
        return self.stoi.get(ch, UNK)

    def char(self, i: int, oov_chars: list[str] | None = None) -> str:
        if i < len(self.itos):
            return self.itos[i]
        if oov_chars is not None and i - len(self.itos) < len(oov_chars):
            return oov_chars[i - len(self.itos)]
        return SPECIALS[UNK]

    def decode(self, ids: Iterable[int], oov_chars: list[str] | None = None) -> str:
        out = []
        for i in ids:
            if i in (PAD, BOS, EOS):
                continue
            out.append(self.char(i, oov_chars))
        return "".join(out)


@dataclass
class SourceEncoding:
    ids: list[int]            # vocabulary ids, UNK for unknown characters
    ext_ids: list[int]        # copy-extended ids, vocab_size + j for the j-th OOV
    oov_chars: list[str]      # per-instance OOV characters in first-seen order
    sentence_map: list[int]   # token position -> owning sentence index
    period_index: list[int]   # position of the separator ending each sentence


def encode_source(sentences: list[str], vocab: Vocab, separator: str = ".") -> SourceEncoding:
    ids: list[int] = []
    ext_ids: list[int] = []
    oov_chars: list[str] = []
    sentence_map: list[int] = []
    period_index: list[int] = []
    for si, sentence in enumerate(sentences):
        if not sentence:
            raise ValueError(f"sentence {si} is empty")
        if separator in sentence:
            raise ValueError(f"sentence {si} contains the separator {separator!r}")
        for ch in sentence + separator:
            vid = vocab.id(ch)
            ids.append(vid)
            if vid == UNK:
                if ch not in oov_chars:
                    oov_chars.append(ch)
                ext_ids.append(len(vocab) + oov_chars.index(ch))
            else:
                ext_ids.append(vid)
            sentence_map.append(si)
        period_index.append(len(ids) - 1)
    return SourceEncoding(ids, ext_ids, oov_chars, sentence_map, period_index)


def encode_target(summary: str, vocab: Vocab, oov_chars: list[str]) -> tuple[list[int], list[int]]:
    """Return decoder input ids (BOS-prefixed, UNK for unknowns) and target
    ids (EOS-suffixed, copy-extended when the character occurs in the source)."""
    tgt_in = [BOS]
    tgt_out = []
    for ch in summary:
        vid = vocab.id(ch)
        tgt_in.append(vid)
        if vid == UNK and ch in oov_chars:
            tgt_out.append(len(vocab) + oov_chars.index(ch))
        else:
            tgt_out.append(vid)
    tgt_out.append(EOS)
    return tgt_in, tgt_out


@dataclass
class Batch:
    src: torch.Tensor            # (B, L) vocabulary ids
    src_ext: torch.Tensor        # (B, L) copy-extended ids
    src_mask: torch.Tensor       # (B, L) bool
    sentence_map: torch.Tensor   # (B, L) long
    period_index: torch.Tensor   # (B, N) long
    sent_mask: torch.Tensor      # (B, N) bool
    aspect: torch.Tensor         # (B,) long
    n_oov: int
    oov_lists: list[list[str]]
    tgt_in: torch.Tensor | None = None    # (B, T) long
    tgt_out: torch.Tensor | None = None   # (B, T) long, copy-extended
    tgt_mask: torch.Tensor | None = None  # (B, T) bool
    labels: torch.Tensor | None = None    # (B, N) float

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(
    instances,
    vocab: Vocab,
    separator: str = ".",
    labels: list[list[int]] | None = None,
    aspect_override: int | None = None,
    include_target: bool = True,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    """Assemble padded tensors for a list of instances.

    ``labels`` must align with ``instances`` when given. ``aspect_override``
    replaces every instance's aspect index (used for null-aspect decoding).
    """
    encodings = [encode_source(inst.sentences, vocab, separator) for inst in instances]
    if labels is not None and len(labels) != len(instances):
        raise ValueError("labels must align one-to-one with instances")

    B = len(instances)
    L = max(len(e.ids) for e in encodings)
    N = max(len(e.period_index) for e in encodings)
    src = torch.full((B, L), PAD, dtype=torch.long)
    src_ext = torch.full((B, L), PAD, dtype=torch.long)
    src_mask = torch.zeros((B, L), dtype=torch.bool)
    sentence_map = torch.zeros((B, L), dtype=torch.long)
    period_index = torch.zeros((B, N), dtype=torch.long)
    sent_mask = torch.zeros((B, N), dtype=torch.bool)
    label_t = torch.zeros((B, N), dtype=dtype) if labels is not None else None
    for bi, enc in enumerate(encodings):
        n_tok, n_sent = len(enc.ids), len(enc.period_index)
        src[bi, :n_tok] = torch.tensor(enc.ids, dtype=torch.long)
        src_ext[bi, :n_tok] = torch.tensor(enc.ext_ids, dtype=torch.long)
        src_mask[bi, :n_tok] = True
        sentence_map[bi, :n_tok] = torch.tensor(enc.sentence_map, dtype=torch.long)
        period_index[bi, :n_sent] = torch.tensor(enc.period_index, dtype=torch.long)
        sent_mask[bi, :n_sent] = True
        if labels is not None:
            if len(labels[bi]) != n_sent:
                raise ValueError(
                    f"instance {instances[bi].product_id}: {len(labels[bi])} labels "
                    f"for {n_sent} sentences"
                )
            label_t[bi, :n_sent] = torch.tensor(labels[bi], dtype=dtype)

    if aspect_override is not None:
        aspect = torch.full((B,), aspect_override, dtype=torch.long)
    else:
        aspect = torch.tensor([inst.aspect.index for inst in instances], dtype=torch.long)

    tgt_in = tgt_out = tgt_mask = None
    if include_target:
        targets = [
            encode_target(inst.summary, vocab, enc.oov_chars)
            for inst, enc in zip(instances, encodings)
        ]
        T = max(len(t_out) for _, t_out in targets)
        tgt_in = torch.full((B, T), PAD, dtype=torch.long)
        tgt_out = torch.full((B, T), PAD, dtype=torch.long)
        tgt_mask = torch.zeros((B, T), dtype=torch.bool)
        for bi, (t_in, t_out) in enumerate(targets):
            # t_in includes BOS and is one longer than the summary; feed
            # exactly one input per predicted token
            tgt_in[bi, : len(t_out)] = torch.tensor(t_in[: len(t_out)], dtype=torch.long)
            tgt_out[bi, : len(t_out)] = torch.tensor(t_out, dtype=torch.long)
            tgt_mask[bi, : len(t_out)] = True

    n_oov = max((len(e.oov_chars) for e in encodings), default=0)
    return Batch(
        src=src,
        src_ext=src_ext,
        src_mask=src_mask,
        sentence_map=sentence_map,
        period_index=period_index,
        sent_mask=sent_mask,
        aspect=aspect,
        n_oov=n_oov,
        oov_lists=[e.oov_chars for e in encodings],
        tgt_in=tgt_in,
        tgt_out=tgt_out,
        tgt_mask=tgt_mask,
        labels=label_t,
    )
