"""Inference: masked beam search, zero-shot plug-in of new languages,
continuous-head nearest-neighbor decoding, and repeat suppression.

Decoding is restricted to the requested target language's tokens plus EOS.
Plugging in a language maps its embedding rows into the hub space and
extends the vocabulary; no Transformer-layer tensor is touched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .alignment import LinearMap
from .embeddings import EmbeddingTable
from .errors import ConfigError, InputError
from .model import SOFTMAX_HEAD, Seq2Seq, apply_vocab_mask, vmf_neg_log_norm
from .vocab import EOS, MultiVocab, extend, target_mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TranslationRequest:
    source_language: str
    target_language: str
    sentences: tuple[str, ...]
    beam_size: int = 1
    max_length_factor: float = 2.0
    suppress_ngram_max: int = 4
    suppress_threshold: int = 3

    def validate(self, vocab: MultiVocab) -> None:
        if self.beam_size < 1:
            raise ConfigError("beam_size must be >= 1")
        if self.target_language not in vocab.language_set:
            raise ConfigError(f"unknown target language {self.target_language!r}")
        if self.source_language not in vocab.language_set:
            raise ConfigError(f"unknown source language {self.source_language!r}")


@dataclass
class Hypothesis:
    tokens: list[int]  # emitted tokens (no start tag), may end with EOS
    score: float  # cumulative log-prob (softmax) / negative vmf loss
    finished: bool = False

    def normalized_score(self) -> float:
        return self.score / max(1, len(self.tokens))


def plug_in_language(
    model: Seq2Seq,
    vocab: MultiVocab,
    table: EmbeddingTable,
    hub_map: LinearMap,
    language: str,
    renormalize: bool = True,
    as_target: bool = True,
) -> tuple[Seq2Seq, MultiVocab]:
    """Extend a trained model by a new language through its aligned
    embeddings alone. Transformer-layer tensors are copied bit-for-bit; only
    the vocabulary and embedding tensors change."""
    if language in vocab.language_set:
        raise ConfigError(f"language {language!r} already present")
    if hub_map.matrix.shape[1] != table.dim or table.dim != vocab.dim:
        raise ConfigError(
            f"dimension mismatch: map {hub_map.matrix.shape}, table {table.dim}, "
            f"vocab {vocab.dim}"
        )
    mapped = hub_map.apply(table.matrix).astype(np.float32)
    if renormalize:
        norms = np.linalg.norm(mapped, axis=1, keepdims=True)
        mapped = mapped / np.where(norms == 0.0, 1.0, norms)
    new_vocab = extend(vocab, language, list(table.words), mapped, as_target=as_target)

    new_model = Seq2Seq(model.cfg, new_vocab)
    old_special = model.embedding.special.detach()
    with torch.no_grad():
        new_model.embedding.special[: old_special.shape[0]] = old_special
    transformer_state = {
        name: tensor
        for name, tensor in model.state_dict().items()
        if not name.startswith("embedding.")
    }
    new_model.load_state_dict(transformer_state, strict=False)
    new_model.eval()
    return new_model, new_vocab


def suppress_repeats(tokens: list, n_max: int = 4, repeat_threshold: int = 3) -> list:
    """Collapse any run of one n-gram repeated >= repeat_threshold times
    consecutively down to a single occurrence, for n from n_max down to 1,
    sweeping until a fixed point (hence idempotent)."""
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    if repeat_threshold < 2:
        raise ConfigError("repeat_threshold must be >= 2")
    current = list(tokens)
    while True:
        swept = current
        for n in range(n_max, 0, -1):
            swept = _collapse_ngram_runs(swept, n, repeat_threshold)
        if swept == current:
            return swept
        current = swept


def _collapse_ngram_runs(tokens: list, n: int, threshold: int) -> list:
    out: list = []
    i = 0
    while i < len(tokens):
        if i + n <= len(tokens):
            gram = tokens[i : i + n]
            repeats = 1
            while tokens[i + repeats * n : i + (repeats + 1) * n] == gram:
                repeats += 1
            if repeats >= threshold:
                out.extend(gram)
                i += repeats * n
                continue
        out.append(tokens[i])
        i += 1
    return out


def _unit_rows(model: Seq2Seq) -> torch.Tensor:
    matrix = model.embedding.full_matrix().detach()
    return F.normalize(matrix, dim=-1)


def vmf_decode_step(
    yhat: torch.Tensor, allowed: torch.Tensor, unit_rows: torch.Tensor
) -> int:
    """Continuous-head decoding step: the allowed token whose unit embedding
    has the largest dot product (= cosine) with the predicted vector."""
    if not bool(allowed.any()):
        raise ConfigError("empty decoding mask")
    sims = unit_rows @ yhat
    sims = sims.masked_fill(~allowed, float("-inf"))
    return int(sims.argmax())


def _step_scores(
    model: Seq2Seq,
    states: torch.Tensor,
    allowed: torch.Tensor,
    unit_rows: torch.Tensor | None,
    lam: float,
) -> torch.Tensor:
    """Per-token continuation scores for the last decoder position: log
    probabilities (softmax head) or negative vmf loss (continuous head)."""
    out = model.output(states[:, -1, :])
    if model.cfg.head == SOFTMAX_HEAD:
        return torch.log_softmax(apply_vocab_mask(out, allowed), dim=-1)
    kappa = out.norm(dim=-1, keepdim=True).clamp_min(1e-8)
    sims = out @ unit_rows.T
    scores = -vmf_neg_log_norm(kappa, out.shape[-1]) + lam * sims
    return scores.masked_fill(~allowed, float("-inf"))


def greedy_decode(
    model: Seq2Seq,
    vocab: MultiVocab,
    src_ids: list[list[int]],
    target_language: str,
    max_length_factor: float = 2.0,
    lam: float = 0.2,
    batch_size: int = 64,
) -> list[Hypothesis]:
    """Argmax decoding, batched over sentences. Each sentence halts at EOS
    or its own length cap (max_length_factor x source length)."""
    model.eval()
    allowed = torch.from_numpy(target_mask(vocab, target_language).allowed)
    tag = vocab.tag_index.get(target_language)
    if tag is None:
        raise ConfigError(f"no decode tag for {target_language!r}")
    unit_rows = _unit_rows(model) if model.cfg.head != SOFTMAX_HEAD else None

    results: list[Hypothesis | None] = [None] * len(src_ids)
    order = sorted(range(len(src_ids)), key=lambda i: len(src_ids[i]))
    with torch.no_grad():
        for lo in range(0, len(order), batch_size):
            chunk = [i for i in order[lo : lo + batch_size] if src_ids[i]]
            for i in order[lo : lo + batch_size]:
                if not src_ids[i]:
                    results[i] = Hypothesis(tokens=[], score=0.0, finished=True)
            if not chunk:
                continue
            rows = [src_ids[i] for i in chunk]
            width = max(len(r) for r in rows)
            src = torch.zeros((len(rows), width), dtype=torch.long)
            src_pad = torch.ones((len(rows), width), dtype=torch.bool)
            for b, r in enumerate(rows):
                src[b, : len(r)] = torch.tensor(r, dtype=torch.long)
                src_pad[b, : len(r)] = False
            memory = model.encode(src, src_pad)
            caps = [max(1, int(max_length_factor * len(r)) + 1) for r in rows]

            prefix = torch.full((len(rows), 1), tag, dtype=torch.long)
            scores_acc = [0.0] * len(rows)
            tokens: list[list[int]] = [[] for _ in rows]
            done = [False] * len(rows)
            for step in range(max(caps)):
                states = model.decode(prefix, memory, src_pad)
                scores = _step_scores(model, states, allowed, unit_rows, lam)
                nxt = scores.argmax(dim=-1)
                picked = scores.gather(-1, nxt.unsqueeze(-1)).squeeze(-1)
                for b in range(len(rows)):
                    if done[b]:
                        nxt[b] = EOS
                        continue
                    if step + 1 >= caps[b] and int(nxt[b]) != EOS:
                        nxt[b] = EOS  # length cap: force end of sentence
                    tokens[b].append(int(nxt[b]))
                    scores_acc[b] += float(picked[b])
                    if int(nxt[b]) == EOS:
                        done[b] = True
                if all(done):
                    break
                prefix = torch.cat([prefix, nxt.unsqueeze(-1)], dim=-1)
            for b, i in enumerate(chunk):
                results[i] = Hypothesis(
                    tokens=tokens[b], score=scores_acc[b], finished=True
                )
    assert all(h is not None for h in results)
    return results  # type: ignore[return-value]


def beam_search(
    request: TranslationRequest,
    model: Seq2Seq,
    vocab: MultiVocab,
    lam: float = 0.2,
) -> list[Hypothesis]:
    """Best hypothesis per sentence under length-normalized scoring.
    Generation halts at EOS or max_length_factor x source length."""
    request.validate(vocab)
    model.eval()
    allowed = torch.from_numpy(target_mask(vocab, request.target_language).allowed)
    tag = vocab.tag_index.get(request.target_language)
    if tag is None:
        raise ConfigError(f"no decode tag for {request.target_language!r}")
    unit_rows = _unit_rows(model) if model.cfg.head != SOFTMAX_HEAD else None

    out: list[Hypothesis] = []
    with torch.no_grad():
        for sentence in request.sentences:
            ids = vocab.encode_sentence(request.source_language, sentence)
            if not ids:
                log.warning("skipping empty input sentence")
                out.append(Hypothesis(tokens=[], score=0.0, finished=True))
                continue
            out.append(
                _beam_one(
                    model, ids, tag, allowed, request.beam_size,
                    request.max_length_factor, unit_rows, lam,
                )
            )
    return out


def _beam_one(
    model: Seq2Seq,
    src_ids: list[int],
    tag: int,
    allowed: torch.Tensor,
    beam_size: int,
    max_length_factor: float,
    unit_rows: torch.Tensor | None,
    lam: float,
) -> Hypothesis:
    src = torch.tensor([src_ids], dtype=torch.long)
    memory = model.encode(src)
    cap = max(1, int(max_length_factor * len(src_ids)) + 1)

    beams: list[Hypothesis] = [Hypothesis(tokens=[], score=0.0)]
    finished: list[Hypothesis] = []
    for _ in range(cap):
        active = [h for h in beams if not h.finished]
        if not active:
            break
        prefixes = torch.tensor(
            [[tag] + h.tokens for h in active], dtype=torch.long
        )
        states = model.decode(prefixes, memory.expand(len(active), -1, -1))
        scores = _step_scores(model, states, allowed, unit_rows, lam)
        total = torch.tensor([[h.score] for h in active]) + scores
        flat = total.flatten()
        k = min(beam_size, int(torch.isfinite(flat).sum()))
        top_scores, top_ids = torch.topk(flat, k)
        vocab_size = scores.shape[-1]
        next_beams: list[Hypothesis] = []
        for s, idx in zip(top_scores.tolist(), top_ids.tolist()):
            parent = active[idx // vocab_size]
            token = idx % vocab_size
            hyp = Hypothesis(tokens=parent.tokens + [token], score=s,
                             finished=token == EOS)
            (finished if hyp.finished else next_beams).append(hyp)
        beams = next_beams[:beam_size]
        if len(finished) >= beam_size:
            break
    for h in beams:  # length cap reached
        h.finished = True
        finished.append(h)
    return max(finished, key=Hypothesis.normalized_score)


def translate(
    request: TranslationRequest,
    model: Seq2Seq,
    vocab: MultiVocab,
    lam: float = 0.2,
    apply_suppression: bool = True,
) -> list[str]:
    """End-to-end translation to detokenized text: beam search, repeat
    suppression, prefixes stripped."""
    if request.beam_size == 1:
        src_ids = [
            vocab.encode_sentence(request.source_language, s) for s in request.sentences
        ]
        hyps = greedy_decode(
            model, vocab, src_ids, request.target_language,
            request.max_length_factor, lam,
        )
    else:
        hyps = beam_search(request, model, vocab, lam)
    outputs = []
    for hyp in hyps:
        tokens = [t for t in hyp.tokens if t != EOS]
        if apply_suppression:
            tokens = suppress_repeats(
                tokens, request.suppress_ngram_max, request.suppress_threshold
            )
        outputs.append(" ".join(vocab.surface(t) for t in tokens))
    return outputs
