"""Corpus translation metrics: chrF++ and BLEU with pinned signatures.

chrF++: character n-grams up to 6 (whitespace removed) plus word 1/2-grams
(edge punctuation split off), F-score with beta=2 computed per order from
corpus-aggregated counts and averaged over orders, effective-order handling
for orders without any n-grams. BLEU: 1-4-gram precisions under internal
13a-style tokenization, exponential smoothing for zero counts, brevity
penalty, case-sensitive, no effective-order adjustment. Scores are 0-100.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field

from .errors import ConfigError, InputError

_PUNCTS = set(string.punctuation)


@dataclass(frozen=True)
class MetricConfig:
    """Fixed scoring signatures; override fields only deliberately."""

    metric: str = "chrfpp"  # "chrfpp" | "bleu"
    chrf_char_order: int = 6
    chrf_word_order: int = 2
    chrf_beta: float = 2.0
    chrf_effective_order: bool = True
    chrf_remove_whitespace: bool = True
    bleu_max_order: int = 4
    bleu_tokenizer: str = "13a"
    bleu_smooth: str = "exp"
    lowercase: bool = False

    def signature(self) -> str:
        if self.metric == "chrfpp":
            case = "lc" if self.lowercase else "mixed"
            eff = "yes" if self.chrf_effective_order else "no"
            space = "no" if self.chrf_remove_whitespace else "yes"
            return (
                f"chrF{int(self.chrf_beta)}++|case:{case}|eff:{eff}"
                f"|nc:{self.chrf_char_order}|nw:{self.chrf_word_order}|space:{space}"
            )
        case = "lc" if self.lowercase else "mixed"
        return (
            f"BLEU|case:{case}|eff:no|tok:{self.bleu_tokenizer}"
            f"|smooth:{self.bleu_smooth}"
        )


@dataclass
class MetricReport:
    corpus_score: float
    sentence_scores: list[float]
    config: str

    def formatted(self) -> str:
        return f"{self.corpus_score:.1f}"


# ---------------------------------------------------------------------------
# chrF++


def _char_ngram_counts(text: str, n: int, remove_whitespace: bool) -> Counter:
    if remove_whitespace:
        text = "".join(text.split())
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def _split_edge_punctuation(sentence: str) -> list[str]:
    """Word tokens for the word-n-gram part: a single punctuation character
    is peeled off the end of a word, else off the start (one peel only)."""
    tokens: list[str] = []
    for w in sentence.split():
        if len(w) == 1:
            tokens.append(w)
        elif w[-1] in _PUNCTS:
            tokens.extend([w[:-1], w[-1]])
        elif w[0] in _PUNCTS:
            tokens.extend([w[0], w[1:]])
        else:
            tokens.append(w)
    return tokens


def _word_ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(
        tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)
    )


def _match_stats(hyp: Counter, ref: Counter) -> tuple[int, int, int]:
    matched = sum(min(c, ref[g]) for g, c in hyp.items() if g in ref)
    return sum(hyp.values()), sum(ref.values()), matched


def _chrf_segment_stats(hyp: str, ref: str, cfg: MetricConfig) -> list[tuple[int, int, int]]:
    stats = []
    for n in range(1, cfg.chrf_char_order + 1):
        stats.append(
            _match_stats(
                _char_ngram_counts(hyp, n, cfg.chrf_remove_whitespace),
                _char_ngram_counts(ref, n, cfg.chrf_remove_whitespace),
            )
        )
    hyp_tokens = _split_edge_punctuation(hyp)
    ref_tokens = _split_edge_punctuation(ref)
    for n in range(1, cfg.chrf_word_order + 1):
        stats.append(
            _match_stats(_word_ngram_counts(hyp_tokens, n), _word_ngram_counts(ref_tokens, n))
        )
    return stats


def _chrf_from_stats(stats: list[tuple[int, int, int]], cfg: MetricConfig) -> float:
    eps = 1e-16
    factor = cfg.chrf_beta**2
    total = 0.0
    effective = 0
    for n_hyp, n_ref, n_match in stats:
        prec = n_match / n_hyp if n_hyp > 0 else eps
        rec = n_match / n_ref if n_ref > 0 else eps
        denom = factor * prec + rec
        total += ((1 + factor) * prec * rec / denom) if denom > 0 else eps
        if n_hyp > 0 and n_ref > 0:
            effective += 1
    if not cfg.chrf_effective_order:
        return 100.0 * total / len(stats)
    if effective == 0:
        return 0.0
    return 100.0 * total / effective


def chrf_pp(
    hypotheses: list[str], references: list[str], config: MetricConfig | None = None
) -> MetricReport:
    cfg = config or MetricConfig(metric="chrfpp")
    if cfg.metric != "chrfpp":
        raise ConfigError(f"config is for {cfg.metric!r}, not chrfpp")
    if len(hypotheses) != len(references):
        raise InputError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if cfg.lowercase:
        hypotheses = [h.lower() for h in hypotheses]
        references = [r.lower() for r in references]
    order = cfg.chrf_char_order + cfg.chrf_word_order
    corpus = [(0, 0, 0)] * order
    sentence_scores = []
    for hyp, ref in zip(hypotheses, references):
        stats = _chrf_segment_stats(hyp.rstrip(), ref.rstrip(), cfg)
        sentence_scores.append(_chrf_from_stats(stats, cfg))
        corpus = [
            (a + x, b + y, c + z) for (a, b, c), (x, y, z) in zip(corpus, stats)
        ]
    return MetricReport(
        corpus_score=_chrf_from_stats(corpus, cfg),
        sentence_scores=sentence_scores,
        config=cfg.signature(),
    )


# ---------------------------------------------------------------------------
# BLEU

_13A_RULES = (
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
)


def tokenize_13a(line: str) -> str:
    """Minimal mteval-v13a-equivalent tokenization (Western languages)."""
    line = line.replace("<skipped>", "")
    line = line.replace("-\n", "").replace("\n", " ")
    if "&" in line:
        line = (
            line.replace("&quot;", '"')
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">")
        )
    line = f" {line} "
    for pattern, repl in _13A_RULES:
        line = pattern.sub(repl, line)
    return " ".join(line.split())


def _bleu_ngrams(tokens: list[str], max_order: int) -> Counter:
    counts: Counter = Counter()
    for n in range(1, max_order + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def _bleu_score(
    correct: list[int], total: list[int], sys_len: int, ref_len: int, cfg: MetricConfig
) -> float:
    precisions = [0.0] * cfg.bleu_max_order
    smooth = 1.0
    for n in range(1, cfg.bleu_max_order + 1):
        if total[n - 1] == 0:
            break
        if correct[n - 1] == 0:
            if cfg.bleu_smooth == "exp":
                smooth *= 2.0
                precisions[n - 1] = 100.0 / (smooth * total[n - 1])
        else:
            precisions[n - 1] = 100.0 * correct[n - 1] / total[n - 1]
    if sys_len == 0:
        return 0.0
    brevity = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    log_sum = 0.0
    for p in precisions:
        log_sum += math.log(p) if p > 0.0 else -9999999999.0
    return brevity * math.exp(log_sum / cfg.bleu_max_order)


def bleu(
    hypotheses: list[str], references: list[str], config: MetricConfig | None = None
) -> MetricReport:
    cfg = config or MetricConfig(metric="bleu")
    if cfg.metric != "bleu":
        raise ConfigError(f"config is for {cfg.metric!r}, not bleu")
    if len(hypotheses) != len(references):
        raise InputError(
            f"hypothesis/reference length mismatch: {len(hypotheses)} vs {len(references)}"
        )
    if cfg.lowercase:
        hypotheses = [h.lower() for h in hypotheses]
        references = [r.lower() for r in references]

    correct = [0] * cfg.bleu_max_order
    total = [0] * cfg.bleu_max_order
    sys_len = ref_len = 0
    sentence_scores = []
    for hyp, ref in zip(hypotheses, references):
        hyp_tokens = tokenize_13a(hyp.rstrip()).split()
        ref_tokens = tokenize_13a(ref.rstrip()).split()
        hyp_ngrams = _bleu_ngrams(hyp_tokens, cfg.bleu_max_order)
        ref_ngrams = _bleu_ngrams(ref_tokens, cfg.bleu_max_order)
        seg_correct = [0] * cfg.bleu_max_order
        seg_total = [0] * cfg.bleu_max_order
        for gram, count in hyp_ngrams.items():
            n = len(gram)
            seg_total[n - 1] += count
            seg_correct[n - 1] += min(count, ref_ngrams.get(gram, 0))
        for n in range(cfg.bleu_max_order):
            correct[n] += seg_correct[n]
            total[n] += seg_total[n]
        sys_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        sentence_scores.append(
            _bleu_score(seg_correct, seg_total, len(hyp_tokens), len(ref_tokens), cfg)
        )
    return MetricReport(
        corpus_score=_bleu_score(correct, total, sys_len, ref_len, cfg),
        sentence_scores=sentence_scores,
        config=cfg.signature(),
    )


def score(
    metric: str, hypotheses: list[str], references: list[str]
) -> MetricReport:
    if metric == "chrfpp":
        return chrf_pp(hypotheses, references)
    if metric == "bleu":
        return bleu(hypotheses, references)
    raise ConfigError(f"unknown metric {metric!r}")
