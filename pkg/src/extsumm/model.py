"""Extraction-enhanced aspect-conditioned summarizer.

The model fuses an aspect embedding into every input character embedding,
encodes the source with either a hierarchical bidirectional GRU or a small
transformer, scores each sentence's relevance to the aspect with a sigmoid
head (a bilinear aspect-sentence product or a two-layer feedforward), and
decodes with a single-layer GRU whose word attention is reweighted by the
sentence scores and renormalized. The reweighted attention doubles as the
copy distribution of a pointer-generator output layer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .vocab import BOS, EOS, PAD, UNK, Batch, Vocab, make_batch

CHECKPOINT_MAGIC = "EXTSUMM-CKPT-v1"

FUSION_EPS = 1e-12
BCE_CLIP = 1e-7
PROB_FLOOR = 1e-12


@dataclass
class ModelConfig:
    vocab_size: int
    n_aspects: int
    embed_dim: int = 48
    hidden_dim: int = 48
    max_input_chars: int = 400
    max_target_chars: int = 70
    batch_size: int = 20
    extractor_head: str = "bilinear"   # "bilinear" | "ffn"
    encoder_kind: str = "recurrent"    # "recurrent" | "transformer"
    use_extractor: bool = True
    use_positions: bool = True
    n_heads: int = 2
    n_layers: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.vocab_size < 5:
            raise ValueError("vocab_size must cover the special tokens")
        if self.n_aspects < 1:
            raise ValueError("n_aspects must be >= 1")
        if min(self.embed_dim, self.hidden_dim) < 1:
            raise ValueError("dims must be >= 1")
        if self.max_input_chars < 1 or self.max_target_chars < 1:
            raise ValueError("max lengths must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.extractor_head not in ("bilinear", "ffn"):
            raise ValueError(f"unknown extractor_head {self.extractor_head!r}")
        if self.encoder_kind not in ("recurrent", "transformer"):
            raise ValueError(f"unknown encoder_kind {self.encoder_kind!r}")
        if self.extractor_head == "bilinear" and self.embed_dim != self.hidden_dim:
            raise ValueError(
                "the bilinear extractor scores sentences by a dot product with "
                "the aspect embedding and needs embed_dim == hidden_dim"
            )
        if self.encoder_kind == "recurrent" and self.hidden_dim % 2 != 0:
            raise ValueError("recurrent encoder needs an even hidden_dim")
        if self.encoder_kind == "transformer" and self.hidden_dim % self.n_heads != 0:
            raise ValueError("hidden_dim must be divisible by n_heads")


@dataclass
class FusedEmbedding:
    word_embeddings: torch.Tensor  # (B, L, d)
    aspect_embedding: torch.Tensor  # (B, d)
    fused: torch.Tensor            # (B, L, d)


@dataclass
class EncoderOutputs:
    word_reps: torch.Tensor       # (B, L, h)
    sentence_reps: torch.Tensor   # (B, N, h)
    period_index: torch.Tensor    # (B, N)
    sentence_map: torch.Tensor    # (B, L)
    src_mask: torch.Tensor        # (B, L)
    sent_mask: torch.Tensor       # (B, N)


@dataclass
class AttentionState:
    word_attention: torch.Tensor    # (B, L), sums to 1 over real tokens
    sentence_scores: torch.Tensor   # (B, N), sigmoid outputs
    fused_attention: torch.Tensor   # (B, L), sums to 1
    context: torch.Tensor           # (B, h)


@dataclass
class LossBundle:
    loss_ext: torch.Tensor
    loss_gen: torch.Tensor
    loss_total: torch.Tensor
    target_length: int


# ---------------------------------------------------------------------------
# Core operations, usable standalone


def fuse_attention(
    word_attention: torch.Tensor,
    sentence_scores: torch.Tensor,
    sentence_map: torch.Tensor,
    eps: float = FUSION_EPS,
) -> torch.Tensor:
    """Reweight word attention by each word's sentence score and renormalize.

    fused_m = (attn_m * score_sent(m)) / sum_m' attn_m' * score_sent(m')

    Accepts (L,) or (B, L) attention with matching score/map shapes. If the
    normalizer falls below ``eps`` the input attention is returned unchanged.
    """
    score_per_word = sentence_scores.gather(-1, sentence_map)
    weighted = word_attention * score_per_word
    denom = weighted.sum(dim=-1, keepdim=True)
    return torch.where(denom > eps, weighted / denom.clamp_min(eps), word_attention)


def context_vector(fused_attention: torch.Tensor, word_reps: torch.Tensor) -> torch.Tensor:
    """Attention-weighted sum of word representations: (B, L) x (B, L, h) -> (B, h)."""
    return torch.einsum("...l,...lh->...h", fused_attention, word_reps)


def mix_copy_distribution(
    p_gen: torch.Tensor,
    vocab_probs: torch.Tensor,
    fused_attention: torch.Tensor,
    src_ext: torch.Tensor,
    n_oov: int,
) -> torch.Tensor:
    """Combine generation and copy probabilities over the extended vocabulary.

    p_gen: (B, 1); vocab_probs: (B, V); fused_attention: (B, L);
    src_ext: (B, L) extended source ids. Returns (B, V + n_oov).
    """
    B, V = vocab_probs.shape
    extended = torch.cat(
        [p_gen * vocab_probs, vocab_probs.new_zeros(B, n_oov)], dim=1
    )
    extended = extended.scatter_add(1, src_ext, (1.0 - p_gen) * fused_attention)
    return extended


def loss_ext(
    sentence_scores: torch.Tensor,
    labels: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean binary cross-entropy between sentence scores and 0/1 labels.

    Scores are clipped to [1e-7, 1 - 1e-7] before the log. The mean is per
    instance over its sentences, then over the batch.
    """
    if sentence_scores.shape != labels.shape:
        raise ValueError(
            f"scores shape {tuple(sentence_scores.shape)} != labels shape "
            f"{tuple(labels.shape)}"
        )
    scores = sentence_scores.clamp(BCE_CLIP, 1.0 - BCE_CLIP)
    labels = labels.to(scores.dtype)
    ce = -(labels * torch.log(scores) + (1.0 - labels) * torch.log(1.0 - scores))
    if mask is not None:
        ce = ce * mask.to(scores.dtype)
        per_instance = ce.sum(dim=-1) / mask.sum(dim=-1).clamp_min(1)
    else:
        per_instance = ce.mean(dim=-1)
    return per_instance.mean()


def loss_gen(
    step_distributions: torch.Tensor,
    target_tokens: torch.Tensor,
    mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean negative log-likelihood of the target tokens.

    step_distributions holds probabilities, (T, V) or (B, T, V); target token
    probabilities are floored at 1e-12 before the log. The mean is per
    instance over its target length, then over the batch.
    """
    probs = step_distributions.gather(-1, target_tokens.unsqueeze(-1)).squeeze(-1)
    log_p = torch.log(probs.clamp_min(PROB_FLOOR))
    if mask is not None:
        lengths = mask.sum(dim=-1)
        if (lengths < 1).any():
            raise ValueError("every instance needs at least one target token")
        nll = -(log_p * mask.to(log_p.dtype)).sum(dim=-1) / lengths
    else:
        if log_p.shape[-1] < 1:
            raise ValueError("every instance needs at least one target token")
        nll = -log_p.mean(dim=-1)
    return nll.mean()


def loss_total(
    ext: torch.Tensor, gen: torch.Tensor, weight_ext: float = 1.0
) -> torch.Tensor:
    """Joint loss: extractor BCE plus generation NLL (unweighted by default)."""
    return weight_ext * ext + gen


# ---------------------------------------------------------------------------
# Model


@dataclass
class DecodingContext:
    """Per-input state that stays fixed across decoding steps."""

    encoder: EncoderOutputs
    enc_proj: torch.Tensor          # (B, L, h), precomputed attention keys
    aspect_vec: torch.Tensor        # (B, d)
    sentence_scores: torch.Tensor   # (B, N)
    src_ext: torch.Tensor           # (B, L)
    n_oov: int


@dataclass
class StepOutput:
    log_probs: torch.Tensor   # (B, V + n_oov)
    probs: torch.Tensor       # (B, V + n_oov)
    state: torch.Tensor       # (B, h)
    context: torch.Tensor     # (B, h)
    attention: AttentionState


@dataclass
class TeacherForcedOutput:
    step_probs: torch.Tensor             # (B, T, V + n_oov)
    sentence_scores: torch.Tensor        # (B, N)
    attention: list[AttentionState]


class AspectSummarizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        config.validate()
        self.config = config
        d, h = config.embed_dim, config.hidden_dim

        self.char_emb = nn.Embedding(config.vocab_size, d, padding_idx=PAD)
        # one extra row serves as the learned null aspect for the
        # aspect-free baseline mode
        self.aspect_emb = nn.Embedding(config.n_aspects + 1, d)

        if config.encoder_kind == "recurrent":
            self.word_rnn = nn.GRU(d, h // 2, bidirectional=True, batch_first=True)
            self.sent_rnn = nn.GRU(h, h // 2, bidirectional=True, batch_first=True)
        else:
            self.in_proj = nn.Linear(d, h)
            self.pos_emb = nn.Embedding(config.max_input_chars + 8, h)
            layer = nn.TransformerEncoderLayer(
                d_model=h,
                nhead=config.n_heads,
                dim_feedforward=2 * h,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
            )
            self.transformer = nn.TransformerEncoder(layer, num_layers=config.n_layers)

        if config.extractor_head == "ffn":
            self.ext_hidden = nn.Linear(h, h)
            self.ext_out = nn.Linear(h, 1)

        self.att_enc = nn.Linear(h, h, bias=False)
        self.att_dec = nn.Linear(h, h)
        self.att_v = nn.Linear(h, 1, bias=False)
        self.decoder_cell = nn.GRUCell(d + h, h)
        self.init_proj = nn.Linear(h, h)
        self.out_proj = nn.Linear(2 * h, config.vocab_size)
        self.gate = nn.Linear(2 * h + d, 1)

        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            p.data.uniform_(-0.1, 0.1, generator=gen)
        self.char_emb.weight.data[PAD].zero_()

    @property
    def null_aspect_index(self) -> int:
        return self.config.n_aspects

    # -- encoding ----------------------------------------------------------

    def embed_fused(self, token_ids: torch.Tensor, aspect: torch.Tensor) -> FusedEmbedding:
        """Character embeddings with the aspect embedding added to every row."""
        if token_ids.dim() == 1:
            token_ids = token_ids.unsqueeze(0)
        if aspect.dim() == 0:
            aspect = aspect.unsqueeze(0)
        if int(token_ids.max()) >= self.config.vocab_size:
            raise ValueError("token id outside the vocabulary (no UNK mapping applied)")
        if int(aspect.max()) > self.config.n_aspects:
            raise ValueError("aspect index out of range")
        word = self.char_emb(token_ids)                   # (B, L, d)
        aspect_vec = self.aspect_emb(aspect)              # (B, d)
        fused = word + aspect_vec.unsqueeze(1)            # (B, L, d)
        return FusedEmbedding(word_embeddings=word, aspect_embedding=aspect_vec, fused=fused)

    def _masked_mean(self, reps, mask):
        mask_f = mask.to(reps.dtype).unsqueeze(-1)        # (B, L, 1)
        return (reps * mask_f).sum(1) / mask_f.sum(1).clamp_min(1.0)

    def encode(self, fused: torch.Tensor, batch: Batch) -> EncoderOutputs:
        """Contextual word representations plus one vector per sentence."""
        B, L, _ = fused.shape
        if self.config.encoder_kind == "recurrent":
            lengths = batch.src_mask.sum(1).cpu()
            packed = nn.utils.rnn.pack_padded_sequence(
                fused, lengths, batch_first=True, enforce_sorted=False
            )
            out, _ = self.word_rnn(packed)
            word_reps, _ = nn.utils.rnn.pad_packed_sequence(
                out, batch_first=True, total_length=L
            )                                             # (B, L, h)
            # mean-pool each sentence's word states, then run the
            # sentence-level pass
            N = batch.period_index.shape[1]
            h = word_reps.shape[-1]
            sums = word_reps.new_zeros(B, N, h)
            idx = batch.sentence_map.unsqueeze(-1).expand(-1, -1, h)
            sums.scatter_add_(1, idx, word_reps * batch.src_mask.unsqueeze(-1).to(word_reps.dtype))
            counts = word_reps.new_zeros(B, N)
            counts.scatter_add_(1, batch.sentence_map, batch.src_mask.to(word_reps.dtype))
            sent_vecs = sums / counts.clamp_min(1.0).unsqueeze(-1)  # (B, N, h)
            sent_lengths = batch.sent_mask.sum(1).cpu()
            packed_s = nn.utils.rnn.pack_padded_sequence(
                sent_vecs, sent_lengths, batch_first=True, enforce_sorted=False
            )
            out_s, _ = self.sent_rnn(packed_s)
            sentence_reps, _ = nn.utils.rnn.pad_packed_sequence(
                out_s, batch_first=True, total_length=N
            )                                             # (B, N, h)
        else:
            x = self.in_proj(fused)                       # (B, L, h)
            if self.config.use_positions:
                positions = torch.arange(L, device=fused.device)
                x = x + self.pos_emb(positions).unsqueeze(0)
            word_reps = self.transformer(x, src_key_padding_mask=~batch.src_mask)
            # a sentence is represented by the hidden state of its
            # terminating separator token
            h = word_reps.shape[-1]
            gather_idx = batch.period_index.unsqueeze(-1).expand(-1, -1, h)
            sentence_reps = word_reps.gather(1, gather_idx)  # (B, N, h)
        return EncoderOutputs(
            word_reps=word_reps,
            sentence_reps=sentence_reps,
            period_index=batch.period_index,
            sentence_map=batch.sentence_map,
            src_mask=batch.src_mask,
            sent_mask=batch.sent_mask,
        )

    # -- extractor ----------------------------------------------------------

    def extractor_score(
        self, sentence_reps: torch.Tensor, aspect_vec: torch.Tensor
    ) -> torch.Tensor:
        """Per-sentence relevance scores in (0, 1): (B, N, h) -> (B, N)."""
        if self.config.extractor_head == "bilinear":
            logits = (sentence_reps * aspect_vec.unsqueeze(1)).sum(-1)
        else:
            logits = self.ext_out(torch.tanh(self.ext_hidden(sentence_reps))).squeeze(-1)
        return torch.sigmoid(logits)

    # -- decoding -----------------------------------------------------------

    def init_decoder_state(self, encoder: EncoderOutputs) -> torch.Tensor:
        pooled = self._masked_mean(encoder.word_reps, encoder.src_mask)
        return torch.tanh(self.init_proj(pooled))         # (B, h)

    def prepare_decoding(self, batch: Batch) -> tuple[DecodingContext, torch.Tensor, torch.Tensor]:
        """Encode a batch and return (context, initial state, initial attention
        context vector)."""
        fused = self.embed_fused(batch.src, batch.aspect)
        encoder = self.encode(fused.fused, batch)
        scores = self.extractor_score(encoder.sentence_reps, fused.aspect_embedding)
        ctx = DecodingContext(
            encoder=encoder,
            enc_proj=self.att_enc(encoder.word_reps),
            aspect_vec=fused.aspect_embedding,
            sentence_scores=scores,
            src_ext=batch.src_ext,
            n_oov=batch.n_oov,
        )
        state = self.init_decoder_state(encoder)
        context = encoder.word_reps.new_zeros(batch.size, self.config.hidden_dim)
        return ctx, state, context

    def decoder_step(
        self,
        prev_token: torch.Tensor,
        state: torch.Tensor,
        prev_context: torch.Tensor,
        ctx: DecodingContext,
    ) -> StepOutput:
        """One decoding step over the copy-extended vocabulary.

        prev_token: (B,) vocabulary ids (copied OOVs must be mapped to UNK
        by the caller); state, prev_context: (B, h).
        """
        # the aspect embedding is added to the previous token embedding at
        # every step, mirroring the encoder-side fusion
        x = self.char_emb(prev_token) + ctx.aspect_vec    # (B, d)
        state = self.decoder_cell(torch.cat([x, prev_context], dim=-1), state)

        scores = self.att_v(
            torch.tanh(ctx.enc_proj + self.att_dec(state).unsqueeze(1))
        ).squeeze(-1)                                     # (B, L)
        scores = scores.masked_fill(~ctx.encoder.src_mask, float("-inf"))
        word_attention = F.softmax(scores, dim=-1)

        if self.config.use_extractor:
            fused_attention = fuse_attention(
                word_attention, ctx.sentence_scores, ctx.encoder.sentence_map
            )
        else:
            fused_attention = word_attention

        context = context_vector(fused_attention, ctx.encoder.word_reps)  # (B, h)
        features = torch.cat([state, context], dim=-1)
        vocab_probs = F.softmax(self.out_proj(features), dim=-1)          # (B, V)
        p_gen = torch.sigmoid(self.gate(torch.cat([features, x], dim=-1)))  # (B, 1)
        probs = mix_copy_distribution(
            p_gen, vocab_probs, fused_attention, ctx.src_ext, ctx.n_oov
        )
        log_probs = torch.log(probs.clamp_min(PROB_FLOOR))
        attention = AttentionState(
            word_attention=word_attention,
            sentence_scores=ctx.sentence_scores,
            fused_attention=fused_attention,
            context=context,
        )
        return StepOutput(
            log_probs=log_probs, probs=probs, state=state, context=context,
            attention=attention,
        )

    def teacher_forced(self, batch: Batch) -> TeacherForcedOutput:
        """Run the decoder over the gold target, collecting per-step
        distributions over the extended vocabulary."""
        if batch.tgt_in is None:
            raise ValueError("batch has no target")
        ctx, state, context = self.prepare_decoding(batch)
        T = batch.tgt_in.shape[1]
        step_probs = []
        attention = []
        for t in range(T):
            step = self.decoder_step(batch.tgt_in[:, t], state, context, ctx)
            state, context = step.state, step.context
            step_probs.append(step.probs)
            attention.append(step.attention)
        return TeacherForcedOutput(
            step_probs=torch.stack(step_probs, dim=1),
            sentence_scores=ctx.sentence_scores,
            attention=attention,
        )

    def compute_loss(self, batch: Batch, weight_ext: float = 1.0) -> LossBundle:
        out = self.teacher_forced(batch)
        gen = loss_gen(out.step_probs, batch.tgt_out, batch.tgt_mask)
        if self.config.use_extractor and batch.labels is not None:
            ext = loss_ext(out.sentence_scores, batch.labels, batch.sent_mask)
        else:
            ext = gen.new_zeros(())
        total = loss_total(ext, gen, weight_ext)
        return LossBundle(
            loss_ext=ext,
            loss_gen=gen,
            loss_total=total,
            target_length=int(batch.tgt_mask.sum()),
        )

    # -- inspection ---------------------------------------------------------

    @torch.no_grad()
    def sentence_relevance(
        self, vocab: Vocab, sentences: list[str], aspect_index: int,
        separator: str = ".",
    ) -> list[float]:
        """Extractor-only forward for one input: one score per sentence."""
        stub = _SentenceHolder(sentences)
        batch = make_batch([stub], vocab, separator=separator, include_target=False,
                           aspect_override=aspect_index)
        fused = self.embed_fused(batch.src, batch.aspect)
        encoder = self.encode(fused.fused, batch)
        scores = self.extractor_score(encoder.sentence_reps, fused.aspect_embedding)
        return [float(s) for s in scores[0, : len(sentences)]]


class _SentenceHolder:
    """Minimal instance-shaped object for encoder-only forwards."""

    def __init__(self, sentences: list[str]):
        self.sentences = sentences
        self.product_id = ""
        self.summary = ""


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(path, model: AspectSummarizer, vocab: Vocab, aspect_names: list[str]) -> None:
    state = model.state_dict()
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "config": asdict(model.config),
        "vocab_chars": vocab.itos[4:],  # characters after the special tokens
        "aspect_names": list(aspect_names),
        "state_dict": state,
        "shapes": {k: list(v.shape) for k, v in state.items()},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> tuple[AspectSummarizer, Vocab, list[str]]:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a {CHECKPOINT_MAGIC} checkpoint")
    config = ModelConfig(**payload["config"])
    model = AspectSummarizer(config)
    for name, shape in payload["shapes"].items():
        if list(payload["state_dict"][name].shape) != shape:
            raise ValueError(f"{path}: shape metadata mismatch for {name}")
    model.load_state_dict(payload["state_dict"])
    model.eval()
    vocab = Vocab(payload["vocab_chars"])
    return model, vocab, payload["aspect_names"]
