"""Merged language-prefixed full-word vocabulary with frozen embedding rows.

Every word token is rendered "lang@surface" so duplicate surfaces across
languages stay distinct. Special tokens (PAD/BOS/EOS/UNK plus one decode
start tag per target language) occupy the lowest indices and are the only
trainable embedding rows; word rows are frozen. Per-language decoding masks
allow one language's words plus EOS.
"""

from __future__ import annotations

import hashlib
import json
import logging
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable, OovFlag, SubwordBank, compose_oov
from .errors import ConfigError, FormatError, InputError

log = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_BASE_SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")
PREFIX_SEP = "@"


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace split with punctuation detached from word
    edges (Unicode-aware); interior punctuation stays put."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        lead: list[str] = []
        trail: list[str] = []
        while chunk and _is_punct(chunk[0]):
            lead.append(chunk[0])
            chunk = chunk[1:]
        while chunk and _is_punct(chunk[-1]):
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.extend(lead)
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(trail))
    return tokens


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


@dataclass(frozen=True)
class PrefixedToken:
    language: str
    surface: str

    def __post_init__(self) -> None:
        if not self.language.isascii() or not self.language.islower():
            raise ConfigError(f"language id must be lowercase ASCII: {self.language!r}")
        if PREFIX_SEP in self.language:
            raise ConfigError(f"language id may not contain '@': {self.language!r}")

    def render(self) -> str:
        return f"{self.language}{PREFIX_SEP}{self.surface}"


def tag_token(language: str) -> str:
    return f"<tgt:{language}>"


@dataclass
class CorpusVocab:
    """A single language's corpus-restricted vocabulary: frequency-sorted
    surfaces with their embedding rows, plus unrecoverable (hard OOV) types."""

    language: str
    words: list[str]
    matrix: np.ndarray
    hard_oov: list[str]
    composed: list[str] = field(default_factory=list)


def build_from_corpus(
    table: EmbeddingTable,
    corpus: list[str],
    language: str,
    bank: SubwordBank | None = None,
) -> CorpusVocab:
    """Restrict an embedding table to the corpus vocabulary.

    Corpus types found in the table keep their stored rows; types absent
    from the table but recoverable through subword composition are included
    with their composed vector; the rest are reported as hard OOV.
    """
    if not corpus:
        raise InputError("empty corpus")
    from collections import Counter

    counts: Counter[str] = Counter()
    for sentence in corpus:
        counts.update(sentence.split())
    ordered = sorted(counts, key=lambda w: (-counts[w], w))

    words: list[str] = []
    rows: list[np.ndarray] = []
    hard: list[str] = []
    composed: list[str] = []
    for w in ordered:
        if w in table:
            words.append(w)
            rows.append(table.row(w))
        elif bank is not None:
            vec, flag = compose_oov(w, bank)
            if flag is OovFlag.HARD:
                hard.append(w)
            else:
                words.append(w)
                rows.append(vec)
                composed.append(w)
        else:
            hard.append(w)
    if not words:
        raise InputError(f"no corpus type is representable for {language!r}")
    matrix = np.vstack(rows).astype(np.float32)
    return CorpusVocab(language=language, words=words, matrix=matrix,
                       hard_oov=hard, composed=composed)


@dataclass
class LanguageMask:
    language: str
    allowed: np.ndarray  # bool over |V|

    def size(self) -> int:
        return int(self.allowed.sum())


@dataclass
class MultiVocab:
    """Immutable merged vocabulary. ``tokens`` holds rendered strings in
    index order; rows listed in ``trainable_rows`` (specials and appended
    tags) are the only trainable embedding rows."""

    tokens: list[str]
    embedding_matrix: np.ndarray  # (|V|, m) float32
    lang_ranges: dict[str, range]
    tag_index: dict[str, int]
    special_count: int
    trainable_rows: tuple[int, ...]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise ConfigError("duplicate tokens in vocabulary")
        if len(self.tokens) != self.embedding_matrix.shape[0]:
            raise ConfigError("token list and embedding matrix disagree on |V|")
        covered: set[int] = set(range(self.special_count))
        for lang, rng in self.lang_ranges.items():
            if covered & set(rng):
                raise ConfigError(f"language ranges overlap at {lang!r}")
            covered.update(rng)
        covered.update(self.tag_index.values())
        if covered != set(range(len(self.tokens))):
            raise ConfigError("language ranges do not partition the word tokens")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return int(self.embedding_matrix.shape[1])

    @property
    def language_set(self) -> set[str]:
        return set(self.lang_ranges)

    def token_id(self, language: str, surface: str) -> int | None:
        return self.index.get(f"{language}{PREFIX_SEP}{surface}")

    def encode_sentence(self, language: str, sentence: str) -> list[int]:
        """Token ids for a raw sentence; hard-OOV tokens map to UNK with a
        logged warning."""
        if language not in self.lang_ranges:
            raise KeyError(f"unknown language {language!r}")
        ids = []
        for tok in tokenize(sentence):
            tid = self.token_id(language, tok)
            if tid is None:
                log.warning("OOV token %r (%s) mapped to <unk>", tok, language)
                tid = UNK
            ids.append(tid)
        return ids

    def surface(self, token_id: int) -> str:
        token = self.tokens[token_id]
        if PREFIX_SEP in token:
            return token.split(PREFIX_SEP, 1)[1]
        return token

    def language_of(self, token_id: int) -> str | None:
        token = self.tokens[token_id]
        if token_id >= self.special_count and PREFIX_SEP in token:
            return token.split(PREFIX_SEP, 1)[0]
        return None


def _special_row(name: str, dim: int) -> np.ndarray:
    """Deterministic unit-norm initial row for a trainable special token."""
    seed = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "little")
    rng = np.random.Generator(np.random.PCG64(seed))
    row = rng.normal(0.0, 1.0, size=dim)
    return (row / np.linalg.norm(row)).astype(np.float32)


def merge(parts: dict[str, CorpusVocab]) -> MultiVocab:
    """Merge per-language vocabularies: specials first at fixed indices,
    then each language's prefixed words as a contiguous block (languages in
    sorted order)."""
    if not parts:
        raise ConfigError("nothing to merge")
    dims = {cv.matrix.shape[1] for cv in parts.values()}
    if len(dims) != 1:
        raise ConfigError(f"embedding dimensions differ across languages: {sorted(dims)}")
    dim = dims.pop()

    langs = sorted(parts)
    tokens = list(_BASE_SPECIALS) + [tag_token(lang) for lang in langs]
    special_count = len(tokens)
    rows = [np.zeros(dim, dtype=np.float32)]  # PAD stays zero
    rows += [_special_row(t, dim) for t in tokens[1:]]

    lang_ranges: dict[str, range] = {}
    tag_index = {lang: len(_BASE_SPECIALS) + i for i, lang in enumerate(langs)}
    cursor = special_count
    for lang in langs:
        cv = parts[lang]
        start = cursor
        for w in cv.words:
            tokens.append(PrefixedToken(lang, w).render())
        rows.append(cv.matrix)
        cursor += len(cv.words)
        lang_ranges[lang] = range(start, cursor)

    matrix = np.vstack([np.atleast_2d(r) for r in rows]).astype(np.float32)
    return MultiVocab(
        tokens=tokens,
        embedding_matrix=matrix,
        lang_ranges=lang_ranges,
        tag_index=tag_index,
        special_count=special_count,
        trainable_rows=tuple(range(special_count)),
    )


def target_mask(vocab: MultiVocab, language: str) -> LanguageMask:
    """Decoding mask: the language's word indices plus EOS. PAD/BOS/UNK and
    tag tokens are never generated."""
    if language not in vocab.lang_ranges:
        raise KeyError(f"unknown language {language!r}")
    allowed = np.zeros(len(vocab), dtype=bool)
    allowed[list(vocab.lang_ranges[language])] = True
    allowed[EOS] = True
    return LanguageMask(language=language, allowed=allowed)


def extend(
    vocab: MultiVocab,
    language: str,
    words: list[str],
    rows: np.ndarray,
    as_target: bool = False,
) -> MultiVocab:
    """Append a new language's words (rows already mapped into hub space).

    Existing indices and base embedding rows are unchanged; |V| grows by
    exactly len(words). With ``as_target`` a decode-start tag token is also
    appended (one extra trainable row) so the language can be decoded into.
    """
    if language in vocab.lang_ranges:
        raise ConfigError(f"language {language!r} already present")
    if rows.shape != (len(words), vocab.dim):
        raise ConfigError(
            f"rows shape {rows.shape} does not match ({len(words)}, {vocab.dim})"
        )
    tokens = list(vocab.tokens)
    blocks = [vocab.embedding_matrix]
    trainable = list(vocab.trainable_rows)
    tag_index = dict(vocab.tag_index)

    if as_target:
        tag = tag_token(language)
        tag_index[language] = len(tokens)
        trainable.append(len(tokens))
        tokens.append(tag)
        existing = vocab.embedding_matrix[
            [i for lang, i in sorted(vocab.tag_index.items())]
        ]
        warm = existing.mean(axis=0)
        norm = float(np.linalg.norm(warm))
        warm = warm / norm if norm > 0 else _special_row(tag, vocab.dim)
        blocks.append(np.atleast_2d(warm.astype(np.float32)))

    start = len(tokens)
    for w in words:
        tokens.append(PrefixedToken(language, w).render())
    blocks.append(rows.astype(np.float32))
    lang_ranges = dict(vocab.lang_ranges)
    lang_ranges[language] = range(start, start + len(words))

    return MultiVocab(
        tokens=tokens,
        embedding_matrix=np.vstack(blocks),
        lang_ranges=lang_ranges,
        tag_index=tag_index,
        special_count=vocab.special_count,
        trainable_rows=tuple(trainable),
    )


def word_row_checksum(vocab: MultiVocab) -> str:
    """SHA-256 over the frozen word-token rows in index order; invariant
    under training and extension of other languages."""
    trainable = set(vocab.trainable_rows)
    h = hashlib.sha256()
    for i in range(len(vocab)):
        if i not in trainable:
            h.update(np.ascontiguousarray(vocab.embedding_matrix[i]).tobytes())
    return h.hexdigest()


def write_vocab(vocab: MultiVocab, path: str | Path) -> None:
    """One token per line in index order, after a single JSON header line
    carrying the special count, language ranges, tags and trainable rows.
    Embedding rows are stored in the checkpoint container, not here."""
    meta = {
        "specials": vocab.special_count,
        "langs": {l: [r.start, r.stop] for l, r in sorted(vocab.lang_ranges.items())},
        "tags": dict(sorted(vocab.tag_index.items())),
        "trainable": list(vocab.trainable_rows),
    }
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for token in vocab.tokens:
            fh.write(token + "\n")


def read_vocab(path: str | Path, embedding_matrix: np.ndarray) -> MultiVocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty vocabulary file")
    try:
        meta = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:1: bad header: {exc}") from None
    tokens = lines[1:]
    return MultiVocab(
        tokens=tokens,
        embedding_matrix=embedding_matrix,
        lang_ranges={l: range(a, b) for l, (a, b) in meta["langs"].items()},
        tag_index={l: int(i) for l, i in meta["tags"].items()},
        special_count=int(meta["specials"]),
        trainable_rows=tuple(int(i) for i in meta["trainable"]),
    )
