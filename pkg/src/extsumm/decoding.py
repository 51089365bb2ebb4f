"""Beam-search generation over the copy-extended vocabulary.

Hypothesis scores are raw sums of step log-probabilities; an optional
length-penalty exponent divides by length**penalty when ranking. A
null-aspect mode decodes with the learned aspect-free embedding, producing
the Top-1 and Top-K baselines used in diversity comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .model import AspectSummarizer, DecodingContext, EncoderOutputs
from .vocab import BOS, EOS, UNK, Vocab, make_batch


@dataclass
class DecodeConfig:
    beam_size: int = 5
    max_decode_len: int = 80
    length_penalty: float = 0.0

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_decode_len < 1:
            raise ValueError("max_decode_len must be >= 1")
        if self.length_penalty < 0:
            raise ValueError("length_penalty must be >= 0")


@dataclass
class Candidate:
    token_ids: list[int]   # extended-vocabulary ids, EOS excluded
    text: str
    logprob: float         # total log-probability, including the EOS step
    finished: bool

    def rank_score(self, length_penalty: float) -> float:
        if length_penalty <= 0:
            return self.logprob
        return self.logprob / max(len(self.token_ids), 1) ** length_penalty


@dataclass
class GenerationRecord:
    product_id: str
    aspect: str
    candidates: list[Candidate] = field(default_factory=list)
    chosen: Candidate | None = None
    padded_with_unfinished: bool = False
    k_capped: bool = False


def _expand_ctx(ctx: DecodingContext, k: int) -> DecodingContext:
    enc = ctx.encoder
    expanded_enc = EncoderOutputs(
        word_reps=enc.word_reps.expand(k, -1, -1),
        sentence_reps=enc.sentence_reps.expand(k, -1, -1),
        period_index=enc.period_index.expand(k, -1),
        sentence_map=enc.sentence_map.expand(k, -1),
        src_mask=enc.src_mask.expand(k, -1),
        sent_mask=enc.sent_mask.expand(k, -1),
    )
    return DecodingContext(
        encoder=expanded_enc,
        enc_proj=ctx.enc_proj.expand(k, -1, -1),
        aspect_vec=ctx.aspect_vec.expand(k, -1),
        sentence_scores=ctx.sentence_scores.expand(k, -1),
        src_ext=ctx.src_ext.expand(k, -1),
        n_oov=ctx.n_oov,
    )


def _decoder_input(token_ids: torch.Tensor, vocab_size: int) -> torch.Tensor:
    # copied out-of-vocabulary tokens are fed back as UNK
    return torch.where(token_ids < vocab_size, token_ids, torch.full_like(token_ids, UNK))


@torch.no_grad()
def _run_beam(
    model: AspectSummarizer,
    vocab: Vocab,
    instance,
    config: DecodeConfig,
    aspect_index: int | None,
    separator: str,
) -> tuple[list[Candidate], list[Candidate]]:
    """Returns (finished, unfinished) candidates, each sorted best-first."""
    config.validate()
    if not instance.sentences:
        raise ValueError("cannot decode an instance with no sentences")
    model.eval()
    batch = make_batch(
        [instance], vocab, separator=separator, include_target=False,
        aspect_override=aspect_index,
    )
    ctx, state, context = model.prepare_decoding(batch)
    oov_chars = batch.oov_lists[0]
    V = len(vocab)
    k = config.beam_size

    live_tokens: list[list[int]] = [[]]
    # accumulate hypothesis scores in float64 so they equal the plain sum of
    # the per-step log-probabilities when recomputed afterwards
    live_scores = torch.zeros(1, dtype=torch.float64)
    live_state = state          # (1, h)
    live_context = context      # (1, h)
    prev = torch.tensor([BOS], dtype=torch.long)
    finished: list[Candidate] = []

    for _ in range(config.max_decode_len):
        n_live = prev.shape[0]
        step = model.decoder_step(prev, live_state, live_context, _expand_ctx(ctx, n_live))
        total = live_scores.unsqueeze(1) + step.log_probs.double()  # (n_live, Vext)
        n_ext = total.shape[1]
        flat = total.view(-1)
        take = min(k, flat.numel())
        top_scores, top_idx = torch.topk(flat, take)
        parents = (top_idx // n_ext).tolist()
        tokens = (top_idx % n_ext).tolist()

        new_tokens, new_parents, new_scores = [], [], []
        for score, parent, token in zip(top_scores.tolist(), parents, tokens):
            seq = live_tokens[parent] + [token]
            if token == EOS:
                finished.append(
                    Candidate(
                        token_ids=seq[:-1],
                        text=vocab.decode(seq[:-1], oov_chars),
                        logprob=score,
                        finished=True,
                    )
                )
            else:
                new_tokens.append(seq)
                new_parents.append(parent)
                new_scores.append(score)
        if len(finished) >= k or not new_tokens:
            live_tokens, live_scores = [], torch.zeros(0)
            break
        sel = torch.tensor(new_parents, dtype=torch.long)
        live_state = step.state[sel]
        live_context = step.context[sel]
        live_tokens = new_tokens
        live_scores = torch.tensor(new_scores, dtype=torch.float64)
        prev = _decoder_input(
            torch.tensor([seq[-1] for seq in live_tokens], dtype=torch.long), V
        )

    unfinished = [
        Candidate(
            token_ids=seq,
            text=vocab.decode(seq, oov_chars),
            logprob=float(score),
            finished=False,
        )
        for seq, score in zip(live_tokens, live_scores.tolist())
    ]
    key = lambda c: c.rank_score(config.length_penalty)
    finished.sort(key=key, reverse=True)
    unfinished.sort(key=key, reverse=True)
    return finished, unfinished


def beam_search(
    model: AspectSummarizer,
    vocab: Vocab,
    instance,
    config: DecodeConfig,
    aspect_index: int | None = None,
    separator: str = ".",
) -> GenerationRecord:
    """Decode one instance; the chosen candidate is the best finished
    hypothesis by total log-probability (best unfinished if none finished)."""
    finished, unfinished = _run_beam(model, vocab, instance, config, aspect_index, separator)
    candidates = finished + unfinished
    if not candidates:
        raise RuntimeError("beam search produced no hypotheses")
    return GenerationRecord(
        product_id=instance.product_id,
        aspect=instance.aspect.name,
        candidates=candidates,
        chosen=candidates[0],
        padded_with_unfinished=not finished,
    )


def topk_generate(
    model: AspectSummarizer,
    vocab: Vocab,
    instance,
    k: int,
    config: DecodeConfig,
    aspect_index: int | None = None,
    separator: str = ".",
) -> GenerationRecord:
    """Return the K best finished hypotheses, padding with the best
    unfinished ones (flagged) if the beam finished fewer than K."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > config.beam_size:
        raise ValueError(f"k={k} exceeds beam_size={config.beam_size}")
    finished, unfinished = _run_beam(model, vocab, instance, config, aspect_index, separator)
    candidates = finished[:k]
    padded = False
    if len(candidates) < k:
        candidates = candidates + unfinished[: k - len(candidates)]
        padded = True
    if not candidates:
        raise RuntimeError("beam search produced no hypotheses")
    return GenerationRecord(
        product_id=instance.product_id,
        aspect=instance.aspect.name,
        candidates=candidates,
        chosen=candidates[0],
        padded_with_unfinished=padded,
    )


@torch.no_grad()
def greedy_decode(
    model: AspectSummarizer,
    vocab: Vocab,
    instance,
    max_len: int = 80,
    aspect_index: int | None = None,
    separator: str = ".",
) -> Candidate:
    """Step-by-step argmax decoding (the beam_size=1 degenerate case)."""
    if not instance.sentences:
        raise ValueError("cannot decode an instance with no sentences")
    model.eval()
    batch = make_batch(
        [instance], vocab, separator=separator, include_target=False,
        aspect_override=aspect_index,
    )
    ctx, state, context = model.prepare_decoding(batch)
    oov_chars = batch.oov_lists[0]
    prev = torch.tensor([BOS], dtype=torch.long)
    tokens: list[int] = []
    score = 0.0
    finished = False
    for _ in range(max_len):
        step = model.decoder_step(prev, state, context, ctx)
        state, context = step.state, step.context
        token = int(torch.argmax(step.log_probs[0]))
        score += float(step.log_probs[0, token])
        if token == EOS:
            finished = True
            break
        tokens.append(token)
        prev = _decoder_input(torch.tensor([token], dtype=torch.long), len(vocab))
    return Candidate(
        token_ids=tokens,
        text=vocab.decode(tokens, oov_chars),
        logprob=score,
        finished=finished,
    )


@torch.no_grad()
def score_sequence(
    model: AspectSummarizer,
    vocab: Vocab,
    instance,
    token_ids: list[int],
    finished: bool,
    aspect_index: int | None = None,
    separator: str = ".",
) -> float:
    """Recompute a hypothesis's total log-probability by teacher-forcing its
    tokens (plus EOS when finished) through the decoder."""
    model.eval()
    batch = make_batch(
        [instance], vocab, separator=separator, include_target=False,
        aspect_override=aspect_index,
    )
    ctx, state, context = model.prepare_decoding(batch)
    targets = list(token_ids) + ([EOS] if finished else [])
    prev = torch.tensor([BOS], dtype=torch.long)
    total = 0.0
    for token in targets:
        step = model.decoder_step(prev, state, context, ctx)
        state, context = step.state, step.context
        total += float(step.log_probs[0, token])
        prev = _decoder_input(torch.tensor([token], dtype=torch.long), len(vocab))
    return total


def generate_for_instances(
    model: AspectSummarizer,
    vocab: Vocab,
    instances,
    config: DecodeConfig,
    mode: str = "aspect",
    separator: str = ".",
) -> list[GenerationRecord]:
    """Decode a test split under one of three conditions.

    ``aspect``: condition each instance on its own aspect. ``null_top1``:
    decode each product once with the null aspect; every instance of the
    product receives the single best hypothesis. ``null_topk``: decode each
    product once with the null aspect and distribute its K best hypotheses
    across the product's instances, K being the instance count (capped at
    the beam size and flagged when the cap binds).
    """
    if mode not in ("aspect", "null_top1", "null_topk"):
        raise ValueError(f"unknown generation mode {mode!r}")
    if mode == "aspect":
        return [beam_search(model, vocab, inst, config, separator=separator) for inst in instances]

    by_product: dict[str, list] = {}
    for inst in instances:
        by_product.setdefault(inst.product_id, []).append(inst)
    records = []
    null_idx = model.null_aspect_index
    for product_id, group in by_product.items():
        group = sorted(group, key=lambda i: i.aspect.index)
        if mode == "null_top1":
            base = beam_search(
                model, vocab, group[0], config, aspect_index=null_idx, separator=separator
            )
            for inst in group:
                records.append(
                    GenerationRecord(
                        product_id=product_id,
                        aspect=inst.aspect.name,
                        candidates=base.candidates,
                        chosen=base.chosen,
                        padded_with_unfinished=base.padded_with_unfinished,
                    )
                )
        else:
            k = min(len(group), config.beam_size)
            capped = k < len(group)
            base = topk_generate(
                model, vocab, group[0], k, config, aspect_index=null_idx, separator=separator
            )
            for i, inst in enumerate(group):
                records.append(
                    GenerationRecord(
                        product_id=product_id,
                        aspect=inst.aspect.name,
                        candidates=base.candidates,
                        chosen=base.candidates[min(i, k - 1)],
                        padded_with_unfinished=base.padded_with_unfinished,
                        k_capped=capped,
                    )
                )
    return records
