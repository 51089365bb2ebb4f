"""Joint teacher-forced training with dev-perplexity model selection."""

from __future__ import annotations

import copy
import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .model import AspectSummarizer, PROB_FLOOR, save_checkpoint
from .vocab import Vocab, make_batch

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 20
    clip_norm: float = 2.0
    eval_every: int = 50
    seed: int = 0
    weight_ext: float = 1.0
    # fraction of batches trained with the null aspect; > 0 enables the
    # aspect-free baseline mode used for diversity comparisons
    aspect_dropout: float = 0.0
    # group instances of similar target length into the same batch (batch
    # order stays shuffled); cuts wasted padded decoder steps
    bucket_by_length: bool = False

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("epochs, batch_size and eval_every must be >= 1")
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if not 0.0 <= self.aspect_dropout <= 1.0:
            raise ValueError("aspect_dropout must be in [0, 1]")
        if self.weight_ext < 0:
            raise ValueError("weight_ext must be >= 0")


@dataclass
class TrainReport:
    steps: list[dict] = field(default_factory=list)
    dev_history: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = -1
    best_perplexity: float = math.inf
    checkpoint_path: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "dev_history": [[s, p] for s, p in self.dev_history],
            "best_step": self.best_step,
            "best_perplexity": self.best_perplexity,
            "checkpoint_path": self.checkpoint_path,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def perplexity(
    model,
    instances,
    vocab: Vocab,
    batch_size: int = 20,
    separator: str = ".",
) -> float:
    """Exponential of the corpus token-mean negative log-likelihood under
    teacher forcing."""
    if not instances:
        raise ValueError("perplexity needs a non-empty instance list")
    total_nll = 0.0
    total_tokens = 0
    model.eval()
    with torch.no_grad():
        for start in range(0, len(instances), batch_size):
            chunk = instances[start : start + batch_size]
            batch = make_batch(chunk, vocab, separator=separator)
            out = model.teacher_forced(batch)
            probs = out.step_probs.gather(-1, batch.tgt_out.unsqueeze(-1)).squeeze(-1)
            log_p = torch.log(probs.clamp_min(PROB_FLOOR))
            mask = batch.tgt_mask.to(log_p.dtype)
            total_nll += float(-(log_p * mask).sum())
            total_tokens += int(batch.tgt_mask.sum())
    return math.exp(total_nll / total_tokens)


def train(
    model: AspectSummarizer,
    train_instances,
    dev_instances,
    config: TrainConfig,
    vocab: Vocab,
    aspect_names: list[str],
    labels: Optional[list[list[int]]] = None,
    checkpoint_dir=None,
    separator: str = ".",
) -> TrainReport:
    """Minimize the joint loss with teacher forcing; keep the checkpoint with
    the smallest dev perplexity.

    ``labels`` aligns one-to-one with ``train_instances`` and is required when
    the model's extractor is enabled.
    """
    config.validate()
    if not train_instances:
        raise ValueError("no training instances")
    if not dev_instances:
        raise ValueError("no dev instances")
    if model.config.use_extractor:
        if labels is None or len(labels) != len(train_instances):
            raise ValueError("extractor training needs labels aligned with instances")

    rng = random.Random(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    report = TrainReport()
    ckpt_path = None
    if checkpoint_dir is not None:
        checkpoint_dir = Path(checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = checkpoint_dir / "best.ckpt"

    def evaluate_dev(step: int) -> None:
        ppl = perplexity(model, dev_instances, vocab, config.batch_size, separator)
        model.train()
        report.dev_history.append((step, ppl))
        logger.info("step %d dev perplexity %.4f", step, ppl)
        if ppl < report.best_perplexity:
            report.best_perplexity = ppl
            report.best_step = step
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model, vocab, aspect_names)
                report.checkpoint_path = str(ckpt_path)

    indices = list(range(len(train_instances)))
    step = 0
    model.train()
    for epoch in range(config.epochs):
        rng.shuffle(indices)
        if config.bucket_by_length:
            indices.sort(key=lambda i: len(train_instances[i].summary))
        batches = [
            indices[start : start + config.batch_size]
            for start in range(0, len(indices), config.batch_size)
        ]
        if config.bucket_by_length:
            rng.shuffle(batches)
        for chunk in batches:
            insts = [train_instances[i] for i in chunk]
            batch_labels = [labels[i] for i in chunk] if labels is not None else None
            aspect_override = None
            if config.aspect_dropout > 0 and rng.random() < config.aspect_dropout:
                aspect_override = model.null_aspect_index
            batch = make_batch(
                insts, vocab, separator=separator, labels=batch_labels,
                aspect_override=aspect_override,
            )
            bundle = model.compute_loss(batch, weight_ext=config.weight_ext)
            total = bundle.loss_total
            if not torch.isfinite(total):
                snapshot = {
                    "step": step,
                    "epoch": epoch,
                    "loss_ext": float(bundle.loss_ext.detach()),
                    "loss_gen": float(bundle.loss_gen.detach()),
                    "product_ids": [i.product_id for i in insts],
                }
                if checkpoint_dir is not None:
                    with open(Path(checkpoint_dir) / "nan_snapshot.json", "w") as f:
                        json.dump(snapshot, f, indent=2)
                raise RuntimeError(f"non-finite loss at step {step}: {snapshot}")
            optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            optimizer.step()
            step += 1
            report.steps.append(
                {
                    "step": step,
                    "loss": float(total.detach()),
                    "loss_ext": float(bundle.loss_ext.detach()),
                    "loss_gen": float(bundle.loss_gen.detach()),
                }
            )
            if step % config.eval_every == 0:
                evaluate_dev(step)
    if not report.dev_history or report.dev_history[-1][0] != step:
        evaluate_dev(step)
    model.eval()
    return report


@dataclass
class GradCheckResult:
    max_rel_err: float
    worst_param: str
    per_param: dict[str, float]


def gradient_check(
    model,
    batch,
    weight_ext: float = 1.0,
    epsilon: float = 1e-5,
    coords_per_param: int = 4,
    seed: int = 0,
    denom_floor: float = 1e-4,
) -> GradCheckResult:
    """Compare analytic gradients of the joint loss against central finite
    differences on a random coordinate subset, in 64-bit precision.

    The error per coordinate is |fd - analytic| / max(|fd|, |analytic|,
    denom_floor); the floor keeps coordinates whose true gradient sits at
    the finite-difference roundoff level (~1e-9) from registering spurious
    relative errors. The model is copied; the caller's parameters are
    untouched.
    """
    work = copy.deepcopy(model).double()
    work.eval()
    if batch is not None and getattr(batch, "labels", None) is not None:
        batch = copy.copy(batch)
        batch.labels = batch.labels.double()

    loss = work.compute_loss(batch, weight_ext=weight_ext).loss_total
    params = [(n, p) for n, p in work.named_parameters() if p.requires_grad]
    grads = torch.autograd.grad(loss, [p for _, p in params], allow_unused=True)

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    max_err, worst = 0.0, ""
    with torch.no_grad():
        for (name, param), grad in zip(params, grads):
            flat = param.data.view(-1)
            n = flat.numel()
            coords = rng.choice(n, size=min(coords_per_param, n), replace=False)
            worst_here = 0.0
            for c in coords:
                c = int(c)
                analytic = 0.0 if grad is None else float(grad.view(-1)[c])
                orig = float(flat[c])
                flat[c] = orig + epsilon
                plus = float(work.compute_loss(batch, weight_ext=weight_ext).loss_total)
                flat[c] = orig - epsilon
                minus = float(work.compute_loss(batch, weight_ext=weight_ext).loss_total)
                flat[c] = orig
                fd = (plus - minus) / (2 * epsilon)
                err = abs(fd - analytic) / max(abs(fd), abs(analytic), denom_floor)
                worst_here = max(worst_here, err)
            per_param[name] = worst_here
            if worst_here > max_err:
                max_err, worst = worst_here, name
    return GradCheckResult(max_rel_err=max_err, worst_param=worst, per_param=per_param)
