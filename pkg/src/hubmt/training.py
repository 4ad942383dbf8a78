"""Supervised training: optimizers and schedules, token-budgeted
language-homogeneous batches, dev evaluation with early stopping.

Batches never mix language pairs, so one target-language mask applies per
batch. Frozen parameters are excluded from the optimizer entirely and
therefore receive exactly zero updates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, TrainingError
from .model import (
    Seq2Seq,
    apply_vocab_mask,
    loss_softmax,
    loss_vmf,
    token_accuracy,
)
from .vocab import EOS, PAD, MultiVocab, target_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"  # "adam" | "radam"
    schedule: str = "noam"  # "noam" | "linear"
    learning_rate: float = 1.0  # noam base
    warmup_steps: int = 4000
    warmup_init_lr: float = 1e-8  # linear schedule
    warmup_end_lr: float = 7e-4
    min_lr: float = 1e-9
    batch_tokens: int = 1024
    accum_steps: int = 1
    label_smoothing: float = 0.1
    lambda_vmf: float = 0.2
    max_updates: int = 2000  # paper-scale analog is 160k; desk default
    eval_every: int = 200
    patience: int = 5
    max_grad_norm: float = 25.0
    adam_beta2: float = 0.999
    weight_decay: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")
        if self.lambda_vmf <= 0.0:
            raise ConfigError("lambda_vmf must be > 0")
        if self.optimizer not in ("adam", "radam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("noam", "linear"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.max_updates < 1 or self.warmup_steps < 1:
            raise ConfigError("max_updates and warmup_steps must be >= 1")


def vmf_train_config(**overrides) -> TrainConfig:
    """The continuous-head training recipe: RAdam, linear decay, lighter
    clipping, small weight decay."""
    base = dict(
        optimizer="radam",
        schedule="linear",
        adam_beta2=0.9995,
        weight_decay=1e-5,
        max_grad_norm=5.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def learning_rate(cfg: TrainConfig, d_model: int, step: int) -> float:
    """Per-step learning rate. noam: base * d^-0.5 * min(step^-0.5,
    step * warmup^-1.5). linear: warmup from init to end lr, then linear
    decay to min_lr at max_updates."""
    if step < 1:
        raise ConfigError("step must be >= 1")
    if cfg.schedule == "noam":
        scale = cfg.learning_rate * d_model**-0.5
        return scale * min(step**-0.5, step * cfg.warmup_steps**-1.5)
    if step <= cfg.warmup_steps:
        frac = step / cfg.warmup_steps
        return cfg.warmup_init_lr + (cfg.warmup_end_lr - cfg.warmup_init_lr) * frac
    span = max(1, cfg.max_updates - cfg.warmup_steps)
    decayed = cfg.warmup_end_lr * (1.0 - (step - cfg.warmup_steps) / span)
    return max(cfg.min_lr, decayed)


def make_optimizer(model: Seq2Seq, cfg: TrainConfig) -> torch.optim.Optimizer:
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ConfigError("no trainable parameters")
    kwargs = dict(
        lr=cfg.learning_rate,
        betas=(0.9, cfg.adam_beta2),
        weight_decay=cfg.weight_decay,
    )
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, **kwargs)
    return torch.optim.RAdam(params, **kwargs)


def apply_update(
    model: Seq2Seq,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
    step: int,
) -> float:
    """Clip gradients, set the scheduled learning rate, apply one optimizer
    step, zero gradients. Raises TrainingError naming the first non-finite
    gradient tensor."""
    for name, param in model.named_parameters():
        if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
            raise TrainingError(f"non-finite gradient in {name!r} at step {step}")
    trainable = [p for p in model.parameters() if p.requires_grad]
    if cfg.max_grad_norm > 0:
        torch.nn.utils.clip_grad_norm_(trainable, cfg.max_grad_norm)
    lr = learning_rate(cfg, model.cfg.d_model, step)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    optimizer.zero_grad(set_to_none=False)
    for name, param in model.named_parameters():
        if param.requires_grad and not bool(torch.isfinite(param).all()):
            raise TrainingError(f"non-finite parameter {name!r} after step {step}")
    return lr


@dataclass
class ParallelCorpus:
    """One direction's id-encoded sentence pairs (no tag/EOS adornment)."""

    src_lang: str
    tgt_lang: str
    pairs: list[tuple[list[int], list[int]]]

    @classmethod
    def from_sentences(
        cls,
        vocab: MultiVocab,
        src_lang: str,
        tgt_lang: str,
        pairs: list[tuple[str, str]],
    ) -> "ParallelCorpus":
        encoded = []
        for src, tgt in pairs:
            s = vocab.encode_sentence(src_lang, src)
            t = vocab.encode_sentence(tgt_lang, tgt)
            if s and t:
                encoded.append((s, t))
        return cls(src_lang, tgt_lang, encoded)


@dataclass
class Batch:
    src_lang: str
    tgt_lang: str
    src: torch.Tensor  # (B, Ls)
    src_pad: torch.Tensor  # bool
    tgt_in: torch.Tensor  # (B, Lt) starting with the target tag
    tgt_out: torch.Tensor  # (B, Lt) ending with EOS
    tgt_pad: torch.Tensor  # bool, True beyond each sentence's EOS

    @property
    def token_count(self) -> int:
        return int((~self.tgt_pad).sum())


def _pad_block(rows: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD, dtype=torch.long)
    pad = torch.ones((len(rows), width), dtype=torch.bool)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
        pad[i, : len(r)] = False
    return out, pad


def make_batches(
    corpora: list[ParallelCorpus],
    vocab: MultiVocab,
    batch_tokens: int,
    seed: int,
    shuffle: bool = True,
) -> list[Batch]:
    """Token-budgeted, language-homogeneous batches; length-sorted inside a
    direction, batch order shuffled across directions."""
    rng = np.random.Generator(np.random.PCG64(seed))
    batches: list[Batch] = []
    for corpus in corpora:
        if not corpus.pairs:
            continue
        if corpus.tgt_lang not in vocab.tag_index:
            raise ConfigError(
                f"no decode tag for target language {corpus.tgt_lang!r}"
            )
        tag = vocab.tag_index[corpus.tgt_lang]
        order = sorted(
            range(len(corpus.pairs)),
            key=lambda i: (len(corpus.pairs[i][0]) + len(corpus.pairs[i][1]), i),
        )
        group: list[int] = []
        longest = 0
        for idx in order:
            s, t = corpus.pairs[idx]
            longest = max(longest, len(s), len(t) + 1)
            if group and longest * (len(group) + 1) > batch_tokens:
                batches.append(_assemble(corpus, group, tag))
                group = [idx]
                longest = max(len(s), len(t) + 1)
            else:
                group.append(idx)
        if group:
            batches.append(_assemble(corpus, group, tag))
    if shuffle:
        rng.shuffle(batches)  # type: ignore[arg-type]
    return batches


def _assemble(corpus: ParallelCorpus, ids: list[int], tag: int) -> Batch:
    srcs = [corpus.pairs[i][0] for i in ids]
    tgts = [corpus.pairs[i][1] for i in ids]
    src, src_pad = _pad_block(srcs)
    tgt_in, _ = _pad_block([[tag] + t for t in tgts])
    tgt_out, tgt_pad = _pad_block([t + [EOS] for t in tgts])
    return Batch(corpus.src_lang, corpus.tgt_lang, src, src_pad, tgt_in, tgt_out, tgt_pad)


def batch_loss(
    model: Seq2Seq,
    vocab: MultiVocab,
    batch: Batch,
    cfg: TrainConfig,
    mask_cache: dict[str, torch.Tensor] | None = None,
) -> tuple[torch.Tensor, float]:
    """Loss and teacher-forced token accuracy (softmax head; vmf reports
    cosine-retrieval accuracy on the batch)."""
    memory = model.encode(batch.src, batch.src_pad)
    states = model.decode(batch.tgt_in, memory, batch.src_pad, batch.tgt_pad)
    keep = ~batch.tgt_pad
    out_rows = model.output(states)[keep]
    gold = batch.tgt_out[keep]

    if mask_cache is None:
        mask_cache = {}
    if batch.tgt_lang not in mask_cache:
        mask_cache[batch.tgt_lang] = torch.from_numpy(
            target_mask(vocab, batch.tgt_lang).allowed
        )
    allowed = mask_cache[batch.tgt_lang]

    if model.cfg.head == "softmax":
        logits = apply_vocab_mask(out_rows, allowed)
        loss = loss_softmax(logits, gold, cfg.label_smoothing)
        accuracy = token_accuracy(logits, gold)
    else:
        matrix = model.embedding.full_matrix().detach()
        targets = F.normalize(matrix[gold], dim=-1)
        loss = loss_vmf(out_rows, targets, cfg.lambda_vmf)
        unit = F.normalize(matrix, dim=-1)
        sims = out_rows.detach() @ unit.T
        sims = sims.masked_fill(~allowed, float("-inf"))
        accuracy = float((sims.argmax(dim=-1) == gold).float().mean())
    return loss, accuracy


@dataclass
class TrainResult:
    model: Seq2Seq
    trace: list[dict] = field(default_factory=list)
    best_dev_loss: float = float("inf")
    updates: int = 0
    stopped_early: bool = False


def evaluate(
    model: Seq2Seq, vocab: MultiVocab, batches: list[Batch], cfg: TrainConfig
) -> tuple[float, float]:
    model.eval()
    losses, accs, weights = [], [], []
    cache: dict[str, torch.Tensor] = {}
    with torch.no_grad():
        for batch in batches:
            loss, acc = batch_loss(model, vocab, batch, cfg, cache)
            losses.append(float(loss) * batch.token_count)
            accs.append(acc * batch.token_count)
            weights.append(batch.token_count)
    model.train()
    total = sum(weights) or 1
    return sum(losses) / total, sum(accs) / total


def train(
    model: Seq2Seq,
    vocab: MultiVocab,
    train_corpora: list[ParallelCorpus],
    cfg: TrainConfig,
    dev_corpora: list[ParallelCorpus] | None = None,
) -> TrainResult:
    """Run up to cfg.max_updates optimizer steps (early stopping on dev
    loss). Respects requires_grad flags already set on the model; returns a
    metric trace with one row per evaluation."""
    cfg.validate()
    for corpus in train_corpora:
        if corpus.src_lang not in vocab.lang_ranges or corpus.tgt_lang not in vocab.lang_ranges:
            raise ConfigError(
                f"direction {corpus.src_lang}->{corpus.tgt_lang} not in the vocabulary"
            )
    if not any(corpus.pairs for corpus in train_corpora):
        raise ConfigError("no training pairs")

    torch.manual_seed(cfg.seed)
    model.train()
    optimizer = make_optimizer(model, cfg)
    dev_batches = (
        make_batches(dev_corpora, vocab, cfg.batch_tokens, cfg.seed, shuffle=False)
        if dev_corpora
        else []
    )
    result = TrainResult(model=model)
    mask_cache: dict[str, torch.Tensor] = {}
    step = 0
    evals_since_best = 0
    epoch = 0
    while step < cfg.max_updates:
        batches = make_batches(
            train_corpora, vocab, cfg.batch_tokens, cfg.seed + epoch, shuffle=True
        )
        epoch += 1
        accum = 0
        for batch in batches:
            loss, accuracy = batch_loss(model, vocab, batch, cfg, mask_cache)
            (loss / cfg.accum_steps).backward()
            accum += 1
            if accum < cfg.accum_steps:
                continue
            accum = 0
            step += 1
            lr = apply_update(model, optimizer, cfg, step)
            if step % cfg.eval_every == 0 or step == cfg.max_updates:
                row = {
                    "step": step,
                    "lr": lr,
                    "train_loss": float(loss),
                    "train_acc": accuracy,
                }
                if dev_batches:
                    dev_loss, dev_acc = evaluate(model, vocab, dev_batches, cfg)
                    row.update(dev_loss=dev_loss, dev_acc=dev_acc)
                    if dev_loss < result.best_dev_loss - 1e-6:
                        result.best_dev_loss = dev_loss
                        evals_since_best = 0
                    else:
                        evals_since_best += 1
                result.trace.append(row)
                if dev_batches and evals_since_best >= cfg.patience:
                    result.stopped_early = True
                    result.updates = step
                    log.info("early stop at step %d", step)
                    return result
            if step >= cfg.max_updates:
                break
    result.updates = step
    return result
