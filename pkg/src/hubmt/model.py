"""Encoder-decoder Transformer with frozen word-embedding rows.

Post-layernorm blocks, Shaw-style relative position encodings in the
self-attention layers (learnable relative key embeddings, clipped
distances), shared source/target/output embeddings. Word-token rows live in
a non-trainable buffer; special rows (PAD/BOS/EOS/UNK/target tags) are a
small trainable parameter overlaid at lookup time. Two output heads:
label-smoothed masked softmax tied to the embedding matrix, and a
continuous head scored against unit target embeddings under a von
Mises-Fisher likelihood.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DataError, InputError
from .vocab import MultiVocab

NEG_FILL = -1e9  # additive attention mask; exp(-1e9) underflows to exact 0.0

SOFTMAX_HEAD = "softmax"
VMF_HEAD = "vmf"


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 9
    d_model: int = 300
    ff_dim: int = 1200
    heads: int = 6
    dropout: float = 0.2  # 0.1 for the vmf head per the training recipe
    relative_clip: int = 16
    head: str = SOFTMAX_HEAD

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by heads {self.heads}"
            )
        if self.head not in (SOFTMAX_HEAD, VMF_HEAD):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.layers < 1 or self.relative_clip < 1:
            raise ConfigError("layers and relative_clip must be >= 1")

    def for_vocab(self, vocab: MultiVocab) -> "TransformerConfig":
        if self.d_model != vocab.dim:
            return replace(self, d_model=vocab.dim)
        return self


class CompositeEmbedding(nn.Module):
    """Frozen full-vocabulary matrix with trainable rows overlaid.

    ``frozen`` is a buffer holding every row; ``special`` is the parameter
    holding the trainable rows, selected through ``slot`` (-1 = frozen).
    """

    def __init__(self, vocab: MultiVocab):
        super().__init__()
        matrix = torch.from_numpy(np.ascontiguousarray(vocab.embedding_matrix))
        self.register_buffer("frozen", matrix)
        slots = torch.full((len(vocab),), -1, dtype=torch.long)
        for slot, row in enumerate(vocab.trainable_rows):
            slots[row] = slot
        self.register_buffer("slot", slots)
        self.special = nn.Parameter(matrix[list(vocab.trainable_rows)].clone())

    def lookup(self, ids: torch.Tensor) -> torch.Tensor:
        base = self.frozen[ids]
        slots = self.slot[ids]
        trainable = self.special[slots.clamp(min=0)]
        return torch.where((slots >= 0).unsqueeze(-1), trainable, base)

    forward = lookup

    def full_matrix(self) -> torch.Tensor:
        """|V| x m matrix with trainable rows patched in (grads flow to them)."""
        rows = torch.nonzero(self.slot >= 0, as_tuple=True)[0]
        full = self.frozen.clone()
        full[rows] = self.special.to(full.dtype)
        return full


class RelativeSelfAttention(nn.Module):
    """Multi-head self-attention with learnable relative key embeddings
    shared across heads, distances clipped to +-clip."""

    def __init__(self, d_model: int, heads: int, clip: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.clip = clip
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.rel_key = nn.Parameter(torch.empty(2 * clip + 1, self.head_dim))
        nn.init.xavier_uniform_(self.rel_key)
        self.dropout = nn.Dropout(dropout)

    def _relative_ids(self, length: int, device) -> torch.Tensor:
        pos = torch.arange(length, device=device)
        rel = pos[None, :] - pos[:, None]
        return rel.clamp(-self.clip, self.clip) + self.clip

    def forward(
        self, x: torch.Tensor, pad_mask: torch.Tensor | None, causal: bool
    ) -> torch.Tensor:
        bsz, length, d_model = x.shape
        q = self.q_proj(x).view(bsz, length, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(x).view(bsz, length, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(x).view(bsz, length, self.heads, self.head_dim).transpose(1, 2)

        scores = q @ k.transpose(-1, -2)
        rel = self.rel_key[self._relative_ids(length, x.device)]  # (L, L, hd)
        scores = scores + torch.einsum("bhqd,qkd->bhqk", q, rel)
        scores = scores / math.sqrt(self.head_dim)

        if pad_mask is not None:
            scores = scores.masked_fill(pad_mask[:, None, None, :], NEG_FILL)
        if causal:
            future = torch.triu(
                torch.ones(length, length, dtype=torch.bool, device=x.device), 1
            )
            scores = scores.masked_fill(future, NEG_FILL)

        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(bsz, length, d_model)
        return self.out_proj(ctx)


class CrossAttention(nn.Module):
    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.head_dim = d_model // heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(
        self, x: torch.Tensor, memory: torch.Tensor, memory_pad: torch.Tensor | None
    ) -> torch.Tensor:
        bsz, qlen, d_model = x.shape
        klen = memory.shape[1]
        q = self.q_proj(x).view(bsz, qlen, self.heads, self.head_dim).transpose(1, 2)
        k = self.k_proj(memory).view(bsz, klen, self.heads, self.head_dim).transpose(1, 2)
        v = self.v_proj(memory).view(bsz, klen, self.heads, self.head_dim).transpose(1, 2)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if memory_pad is not None:
            scores = scores.masked_fill(memory_pad[:, None, None, :], NEG_FILL)
        attn = self.dropout(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(bsz, qlen, d_model)
        return self.out_proj(ctx)


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ff_dim: int, dropout: float):
        super().__init__()
        self.inner = nn.Linear(d_model, ff_dim)
        self.outer = nn.Linear(ff_dim, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(F.relu(self.inner(x))))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.self_attn = RelativeSelfAttention(
            cfg.d_model, cfg.heads, cfg.relative_clip, cfg.dropout
        )
        self.ffn = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.norm_attn = nn.LayerNorm(cfg.d_model)
        self.norm_ffn = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor | None) -> torch.Tensor:
        x = self.norm_attn(x + self.dropout(self.self_attn(x, pad_mask, causal=False)))
        x = self.norm_ffn(x + self.dropout(self.ffn(x)))
        return x


class DecoderLayer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.self_attn = RelativeSelfAttention(
            cfg.d_model, cfg.heads, cfg.relative_clip, cfg.dropout
        )
        self.norm_self = nn.LayerNorm(cfg.d_model)
        self.cross = CrossAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.norm_cross = nn.LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.norm_ffn = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        x: torch.Tensor,
        memory: torch.Tensor,
        memory_pad: torch.Tensor | None,
        tgt_pad: torch.Tensor | None,
    ) -> torch.Tensor:
        x = self.norm_self(x + self.dropout(self.self_attn(x, tgt_pad, causal=True)))
        x = self.norm_cross(x + self.dropout(self.cross(x, memory, memory_pad)))
        x = self.norm_ffn(x + self.dropout(self.ffn(x)))
        return x


class SoftmaxHead(nn.Module):
    """Tied output projection: layer-normalized states against the full
    (frozen + trainable) embedding matrix."""

    def __init__(self, d_model: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)

    def forward(self, states: torch.Tensor, embedding: CompositeEmbedding) -> torch.Tensor:
        matrix = embedding.full_matrix().to(states.dtype)
        return self.norm(states) @ matrix.T


class VmfHead(nn.Module):
    """Continuous output: layer norm then a linear map to embedding space."""

    def __init__(self, d_model: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, states: torch.Tensor, embedding: CompositeEmbedding | None = None
                ) -> torch.Tensor:
        return self.proj(self.norm(states))


class Seq2Seq(nn.Module):
    """The translation model. Parameter-group layout (see group_of):
    specials | encoder | decoder | cross_attention | output_head; the word
    embedding rows are a buffer and receive no gradients by construction."""

    def __init__(self, cfg: TransformerConfig, vocab: MultiVocab):
        super().__init__()
        cfg = cfg.for_vocab(vocab)
        cfg.validate()
        if cfg.d_model != vocab.dim:
            raise ConfigError(
                f"d_model {cfg.d_model} must equal embedding dim {vocab.dim}"
            )
        self.cfg = cfg
        self.vocab_size = len(vocab)
        self.embedding = CompositeEmbedding(vocab)
        self.encoder_layers = nn.ModuleList(
            EncoderLayer(cfg) for _ in range(cfg.layers)
        )
        self.decoder_layers = nn.ModuleList(
            DecoderLayer(cfg) for _ in range(cfg.layers)
        )
        self.head = SoftmaxHead(cfg.d_model) if cfg.head == SOFTMAX_HEAD else VmfHead(cfg.d_model)
        self.scale = math.sqrt(cfg.d_model)
        self._init_glorot()

    def _init_glorot(self) -> None:
        for name, param in self.named_parameters():
            if param.dim() > 1 and not name.startswith("embedding."):
                nn.init.xavier_uniform_(param)

    def encode(self, src: torch.Tensor, src_pad: torch.Tensor | None = None) -> torch.Tensor:
        """Encoder states (batch, len, d_model); pad positions are zeroed."""
        if int(src.max()) >= self.vocab_size or int(src.min()) < 0:
            raise InputError("source token index out of range")
        x = self.embedding.lookup(src) * self.scale
        for layer in self.encoder_layers:
            x = layer(x, src_pad)
        if src_pad is not None:
            x = x.masked_fill(src_pad.unsqueeze(-1), 0.0)
        return x

    def decode(
        self,
        tgt_in: torch.Tensor,
        memory: torch.Tensor,
        memory_pad: torch.Tensor | None = None,
        tgt_pad: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if int(tgt_in.max()) >= self.vocab_size or int(tgt_in.min()) < 0:
            raise InputError("target token index out of range")
        x = self.embedding.lookup(tgt_in) * self.scale
        for layer in self.decoder_layers:
            x = layer(x, memory, memory_pad, tgt_pad)
        return x

    def output(self, states: torch.Tensor) -> torch.Tensor:
        """Logits (softmax head) or predicted vectors (vmf head)."""
        return self.head(states, self.embedding)


def group_of(name: str) -> str:
    """Map a parameter name to its freeze/training group."""
    if name.startswith("embedding.special"):
        return "specials"
    if name.startswith("encoder_layers."):
        return "encoder"
    if name.startswith("decoder_layers."):
        if ".cross." in name or ".norm_cross." in name:
            return "cross_attention"
        return "decoder"
    if name.startswith("head."):
        return "output_head"
    raise ConfigError(f"parameter {name!r} belongs to no group")


PARAMETER_GROUPS = ("specials", "encoder", "decoder", "cross_attention", "output_head")


def parameter_groups(model: Seq2Seq) -> dict[str, list[tuple[str, nn.Parameter]]]:
    groups: dict[str, list[tuple[str, nn.Parameter]]] = {g: [] for g in PARAMETER_GROUPS}
    for name, param in model.named_parameters():
        groups[group_of(name)].append((name, param))
    return groups


def set_group_trainable(model: Seq2Seq, group: str, trainable: bool) -> None:
    for _, param in parameter_groups(model)[group]:
        param.requires_grad_(trainable)


def group_checksum(model: Seq2Seq, group: str) -> str:
    h = hashlib.sha256()
    for name, param in sorted(parameter_groups(model)[group]):
        h.update(name.encode())
        h.update(param.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def frozen_embedding_checksum(model: Seq2Seq) -> str:
    buf = model.embedding.frozen.detach().cpu().contiguous().numpy()
    slots = model.embedding.slot.detach().cpu().numpy()
    h = hashlib.sha256()
    h.update(buf[slots < 0].tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Losses


def apply_vocab_mask(logits: torch.Tensor, allowed: torch.Tensor) -> torch.Tensor:
    """Disallowed entries to -inf; after softmax their probability is
    exactly zero."""
    return logits.masked_fill(~allowed, float("-inf"))


def loss_softmax(logits: torch.Tensor, gold: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Label-smoothed NLL over the allowed (finite-logit) classes.

    ``logits`` must already be masked (-inf on disallowed entries);
    q = (1 - eps) * onehot + eps * uniform(allowed). Mean over rows.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {epsilon}")
    allowed = torch.isfinite(logits)
    gold_allowed = allowed.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    if not bool(gold_allowed.all()):
        raise DataError("gold index outside the allowed target mask")
    logp = torch.log_softmax(logits, dim=-1)
    nll_gold = -logp.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
    if epsilon == 0.0:
        return nll_gold.mean()
    counts = allowed.sum(dim=-1).to(logits.dtype)
    sum_allowed = torch.where(allowed, logp, torch.zeros_like(logp)).sum(dim=-1)
    smooth = -sum_allowed / counts
    return ((1.0 - epsilon) * nll_gold + epsilon * smooth).mean()


def vmf_neg_log_norm(kappa: torch.Tensor, m: int) -> torch.Tensor:
    """-log C_m(kappa) via the stable closed-form approximation
    sqrt((m/2+1)^2 + k^2) - (m/2-1) * log((m/2-1) + sqrt((m/2+1)^2 + k^2));
    strictly increasing in kappa for m > 2."""
    half_plus = m / 2.0 + 1.0
    half_minus = m / 2.0 - 1.0
    root = torch.sqrt(half_plus**2 + kappa**2)
    return root - half_minus * torch.log(half_minus + root)


def loss_vmf(
    yhat: torch.Tensor,
    target: torch.Tensor,
    lam: float = 0.2,
    kappa_floor: float = 1e-8,
) -> torch.Tensor:
    """von Mises-Fisher loss: -log C_m(|yhat|) - lam * (yhat . e), mean over
    rows; targets must be unit vectors. |yhat| is floored at ``kappa_floor``
    to keep the zero-output corner differentiable."""
    if lam <= 0.0:
        raise ConfigError(f"lambda must be positive, got {lam}")
    norms = target.norm(dim=-1)
    if not bool(torch.all((norms - 1.0).abs() < 1e-3)):
        raise DataError("vmf targets must be unit-normalized")
    m = yhat.shape[-1]
    kappa = yhat.norm(dim=-1).clamp_min(kappa_floor)
    dot = (yhat * target).sum(dim=-1)
    return (vmf_neg_log_norm(kappa, m) - lam * dot).mean()


def token_accuracy(
    logits: torch.Tensor, gold: torch.Tensor, pad_mask: torch.Tensor | None = None
) -> float:
    pred = logits.argmax(dim=-1)
    hit = pred == gold
    if pad_mask is not None:
        hit = hit[~pad_mask]
    return float(hit.float().mean()) if hit.numel() else 0.0
