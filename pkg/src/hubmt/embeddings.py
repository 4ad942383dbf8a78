"""Monolingual word embeddings: toy-scale skip-gram training with character
n-gram buckets, text vector file I/O, OOV composition and row normalization.

The trainer is a simplified fastText-style skip-gram with negative sampling.
A word's stored vector is (own vector + sum of its n-gram bucket vectors)
divided by (1 + number of n-grams); out-of-vocabulary words are composed as
the plain mean of their n-gram bucket vectors. N-gram buckets are addressed
by FNV-1a over the UTF-8 bytes of each n-gram, modulo the bucket count.
Training is deterministic given the seed (single worker).
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ConfigError, FormatError, InputError

BOUNDARY_BEGIN = "<"
BOUNDARY_END = ">"

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def fnv1a(data: bytes) -> int:
    """32-bit FNV-1a; documented hash for reproducible bucket addressing."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFF
    return h


def char_ngrams(word: str, min_n: int, max_n: int) -> list[str]:
    """All character n-grams of `<word>` (with boundary markers) whose length
    lies in [min_n, max_n]."""
    marked = BOUNDARY_BEGIN + word + BOUNDARY_END
    grams = []
    for n in range(min_n, max_n + 1):
        for i in range(len(marked) - n + 1):
            grams.append(marked[i : i + n])
    return grams


class OovFlag(enum.Enum):
    NONE = "none"  # word found in the table, stored row returned
    COMPOSED = "composed"  # composed from n-gram buckets
    HARD = "hard"  # no n-gram hit a nonzero bucket; zero vector


@dataclass
class EmbeddingTable:
    language: str
    words: list[str]
    matrix: np.ndarray  # (|V|, dim) float32
    unit_normalized: bool = False
    _index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._index = {w: i for i, w in enumerate(self.words)}
        if len(self._index) != len(self.words):
            dupes = [w for w, c in Counter(self.words).items() if c > 1]
            raise FormatError(f"duplicate words in table: {dupes[:5]}")
        if not np.all(np.isfinite(self.matrix)):
            raise FormatError("embedding matrix contains non-finite entries")
        if self.unit_normalized:
            norms = np.linalg.norm(self.matrix, axis=1)
            bad = np.flatnonzero(np.abs(norms - 1.0) > 1e-5)
            if bad.size:
                raise FormatError(
                    f"unit_normalized set but row {bad[0]} has norm {norms[bad[0]]:.6f}"
                )

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def __len__(self) -> int:
        return len(self.words)

    def row(self, word: str) -> np.ndarray:
        return self.matrix[self._index[word]]

    def index(self, word: str) -> int:
        return self._index[word]


@dataclass
class SubwordBank:
    ngram_min: int
    ngram_max: int
    bucket_matrix: np.ndarray  # (bucket_count, dim) float32
    boundary_begin: str = BOUNDARY_BEGIN
    boundary_end: str = BOUNDARY_END

    def __post_init__(self) -> None:
        if self.ngram_min > self.ngram_max:
            raise ConfigError(
                f"need min_n <= max_n, got ({self.ngram_min}, {self.ngram_max})"
            )
        if not np.all(np.isfinite(self.bucket_matrix)):
            raise FormatError("bucket matrix contains non-finite entries")

    @property
    def bucket_count(self) -> int:
        return int(self.bucket_matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.bucket_matrix.shape[1])

    def bucket_ids(self, word: str) -> list[int]:
        return [
            fnv1a(g.encode("utf-8")) % self.bucket_count
            for g in char_ngrams(word, self.ngram_min, self.ngram_max)
        ]


@dataclass(frozen=True)
class SkipgramConfig:
    dim: int = 300
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.05  # linearly decayed to ~0 over training
    min_count: int = 5
    seed: int = 0
    ngram_min: int = 3
    ngram_max: int = 6
    bucket_count: int = 2**18
    batch_size: int = 1024

    def validate(self) -> None:
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.negatives < 1:
            raise ConfigError("negatives must be >= 1")
        if self.dim < 1 or self.epochs < 1 or self.bucket_count < 1:
            raise ConfigError("dim, epochs and bucket_count must be positive")
        if self.ngram_min > self.ngram_max:
            raise ConfigError("need ngram_min <= ngram_max")


class SkipgramTrainer:
    """Skip-gram with negative sampling over composed (word + n-gram) inputs.

    Exposed as a class so tests can probe the sampled negative
    log-likelihood on a frozen batch between epochs.
    """

    def __init__(self, corpus: list[str], cfg: SkipgramConfig, language: str = "xx"):
        cfg.validate()
        if not corpus:
            raise InputError("empty corpus")
        self.cfg = cfg
        self.language = language
        self.rng = np.random.Generator(np.random.PCG64(cfg.seed))

        counts = Counter(tok for sent in corpus for tok in sent.split())
        kept = sorted(
            (w for w, c in counts.items() if c >= cfg.min_count),
            key=lambda w: (-counts[w], w),
        )
        if not kept:
            raise InputError(
                f"no word reaches min_count={cfg.min_count}; corpus too small"
            )
        self.words = kept
        self.word_index = {w: i for i, w in enumerate(kept)}
        self.sentences = [
            [self.word_index[t] for t in sent.split() if t in self.word_index]
            for sent in corpus
        ]
        self.sentences = [s for s in self.sentences if len(s) > 1]

        # sparse word -> n-gram-bucket membership (counts duplicates)
        gram_lists = []
        for w in kept:
            ids = [
                fnv1a(g.encode("utf-8")) % cfg.bucket_count
                for g in char_ngrams(w, cfg.ngram_min, cfg.ngram_max)
            ]
            gram_lists.append(np.asarray(ids, dtype=np.int64))
        lengths = np.asarray([len(g) for g in gram_lists], dtype=np.int64)
        rows = np.repeat(np.arange(len(kept)), lengths)
        cols = np.concatenate(gram_lists) if gram_lists else np.empty(0, dtype=np.int64)
        self.membership = sparse.csr_matrix(
            (np.ones(len(cols)), (rows, cols)),
            shape=(len(kept), cfg.bucket_count),
        )
        self.gram_counts = lengths

        v = len(kept)
        bound = 0.5 / cfg.dim
        self.own = self.rng.uniform(-bound, bound, size=(v, cfg.dim)).astype(np.float64)
        self.buckets = self.rng.uniform(
            -bound, bound, size=(cfg.bucket_count, cfg.dim)
        ).astype(np.float64)
        self.out = np.zeros((v, cfg.dim), dtype=np.float64)

        freqs = np.asarray([counts[w] for w in kept], dtype=np.float64)
        noise = freqs**0.75
        self.noise_cdf = np.cumsum(noise / noise.sum())

        self._pairs_per_epoch = max(1, self._count_pairs())
        self._processed = 0

    def _count_pairs(self) -> int:
        # upper bound with full window; exact count uses dynamic windows
        total = 0
        for sent in self.sentences:
            n = len(sent)
            for i in range(n):
                b = self.cfg.window
                total += min(i + b, n - 1) - max(i - b, 0)
        return total

    def _composed_all(self) -> np.ndarray:
        """Composed vectors for the whole vocabulary:
        (own + sum of gram buckets) / (1 + gram count)."""
        sums = self.own + self.membership @ self.buckets
        return sums / (1.0 + self.gram_counts)[:, None]

    def _input_vectors(self, word_ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        composed = self._composed_all()
        return composed[word_ids], (1.0 + self.gram_counts)[word_ids]

    def _sample_negatives(self, n: int) -> np.ndarray:
        u = self.rng.random(n * self.cfg.negatives)
        return np.searchsorted(self.noise_cdf, u).reshape(n, self.cfg.negatives)

    def objective(self, probe: tuple[np.ndarray, np.ndarray, np.ndarray]) -> float:
        """Mean sampled negative log-likelihood on a frozen (center, context,
        negatives) batch."""
        centers, contexts, negatives = probe
        inputs, _ = self._input_vectors(centers)
        pos = np.einsum("nd,nd->n", inputs, self.out[contexts])
        neg = np.einsum("nd,nkd->nk", inputs, self.out[negatives])
        eps = 1e-10
        ll = np.log(_sigmoid(pos) + eps).sum() + np.log(_sigmoid(-neg) + eps).sum()
        return float(-ll / len(centers))

    def frozen_probe(self, size: int = 512) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rng = np.random.Generator(np.random.PCG64(self.cfg.seed + 17))
        pairs = []
        for sent in self.sentences:
            for i, c in enumerate(sent):
                for j in range(max(0, i - 2), min(len(sent), i + 3)):
                    if j != i:
                        pairs.append((c, sent[j]))
            if len(pairs) >= size * 4:
                break
        if not pairs:
            raise InputError("corpus too small for a probe batch")
        chosen = rng.choice(len(pairs), size=min(size, len(pairs)), replace=False)
        centers = np.asarray([pairs[i][0] for i in chosen], dtype=np.int64)
        contexts = np.asarray([pairs[i][1] for i in chosen], dtype=np.int64)
        negatives = np.searchsorted(
            self.noise_cdf, rng.random((len(centers), self.cfg.negatives))
        )
        return centers, contexts, negatives

    def _learning_rate(self) -> float:
        total = self._pairs_per_epoch * self.cfg.epochs
        remaining = max(1e-4, 1.0 - self._processed / total)
        return self.cfg.learning_rate * remaining

    def _train_chunk(self, centers: np.ndarray, contexts: np.ndarray) -> None:
        cfg = self.cfg
        negatives = self._sample_negatives(len(centers))
        inputs, divisors = self._input_vectors(centers)

        pos_out = self.out[contexts]
        neg_out = self.out[negatives]
        pos_score = _sigmoid(np.einsum("nd,nd->n", inputs, pos_out))
        neg_score = _sigmoid(np.einsum("nd,nkd->nk", inputs, neg_out))

        lr = self._learning_rate()
        g_pos = (pos_score - 1.0) * lr  # d(-logsigma(x))/dx * lr
        g_neg = neg_score * lr

        grad_input = g_pos[:, None] * pos_out + np.einsum("nk,nkd->nd", g_neg, neg_out)

        np.add.at(self.out, contexts, -g_pos[:, None] * inputs)
        np.add.at(
            self.out,
            negatives.ravel(),
            (-g_neg[:, :, None] * inputs[:, None, :]).reshape(-1, cfg.dim),
        )

        # distribute the composed-input gradient to own rows and gram buckets
        scaled = grad_input / divisors[:, None]
        word_grad = np.zeros_like(self.own)
        np.add.at(word_grad, centers, scaled)
        self.own -= word_grad
        self.buckets -= self.membership.T @ word_grad

        self._processed += len(centers)

    def run_epoch(self) -> None:
        cfg = self.cfg
        order = self.rng.permutation(len(self.sentences))
        buf_c: list[int] = []
        buf_x: list[int] = []
        for si in order:
            sent = self.sentences[si]
            n = len(sent)
            shrink = self.rng.integers(1, cfg.window + 1, size=n)
            for i in range(n):
                b = int(shrink[i])
                for j in range(max(0, i - b), min(n, i + b + 1)):
                    if j != i:
                        buf_c.append(sent[i])
                        buf_x.append(sent[j])
            while len(buf_c) >= cfg.batch_size:
                self._train_chunk(
                    np.asarray(buf_c[: cfg.batch_size], dtype=np.int64),
                    np.asarray(buf_x[: cfg.batch_size], dtype=np.int64),
                )
                del buf_c[: cfg.batch_size], buf_x[: cfg.batch_size]
        if buf_c:
            self._train_chunk(
                np.asarray(buf_c, dtype=np.int64), np.asarray(buf_x, dtype=np.int64)
            )

    def train(self) -> tuple[EmbeddingTable, SubwordBank]:
        for _ in range(self.cfg.epochs):
            self.run_epoch()
        return self.export()

    def export(self) -> tuple[EmbeddingTable, SubwordBank]:
        composed, _ = self._input_vectors(np.arange(len(self.words), dtype=np.int64))
        table = EmbeddingTable(
            language=self.language,
            words=list(self.words),
            matrix=composed.astype(np.float32),
        )
        bank = SubwordBank(
            ngram_min=self.cfg.ngram_min,
            ngram_max=self.cfg.ngram_max,
            bucket_matrix=self.buckets.astype(np.float32),
        )
        return table, bank


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def train_skipgram(
    corpus: list[str], cfg: SkipgramConfig, language: str = "xx"
) -> tuple[EmbeddingTable, SubwordBank]:
    return SkipgramTrainer(corpus, cfg, language=language).train()


def compose_oov(
    word: str, bank: SubwordBank, table: EmbeddingTable | None = None
) -> tuple[np.ndarray, OovFlag]:
    """Vector for a possibly-unseen word.

    Lookup always wins: when ``table`` is given and contains the word, its
    stored row is returned unchanged. Otherwise the mean of the word's
    hashed n-gram bucket vectors is returned; if every hit bucket is zero
    (or the word yields no n-grams) the result is a zero vector flagged HARD.
    """
    if not word:
        raise InputError("empty word")
    if table is not None and word in table:
        return table.row(word).copy(), OovFlag.NONE
    ids = bank.bucket_ids(word)
    if not ids:
        return np.zeros(bank.dim, dtype=np.float32), OovFlag.HARD
    rows = bank.bucket_matrix[np.asarray(ids, dtype=np.int64)]
    if not np.any(rows):
        return np.zeros(bank.dim, dtype=np.float32), OovFlag.HARD
    return rows.mean(axis=0).astype(np.float32), OovFlag.COMPOSED


def normalize_rows(table: EmbeddingTable) -> tuple[EmbeddingTable, list[int]]:
    """Scale each nonzero row to unit L2 norm. Zero rows are preserved and
    their indices returned."""
    norms = np.linalg.norm(table.matrix.astype(np.float64), axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    safe = np.where(norms == 0.0, 1.0, norms)
    matrix = (table.matrix / safe[:, None].astype(np.float32)).astype(np.float32)
    out = EmbeddingTable(
        language=table.language,
        words=list(table.words),
        matrix=matrix,
        unit_normalized=len(zero_rows) == 0,
    )
    return out, zero_rows.tolist()


def save_vectors(table: EmbeddingTable, path: str | Path) -> None:
    """Write the text vector format: header "<count> <dim>", then one
    "word v1 ... vdim" row per word, single-space separated."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(f"{len(table.words)} {table.dim}\n")
        for word, row in zip(table.words, table.matrix):
            fh.write(word + " " + " ".join(f"{v:.7f}" for v in row.tolist()) + "\n")


def load_vectors(path: str | Path, language: str | None = None) -> EmbeddingTable:
    """Parse the text vector format. Errors name the offending 1-based line."""
    path = Path(path)
    if language is None:
        language = path.stem.split(".")[0]
    with path.open("r", encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise FormatError(f"{path}:1: header must be '<count> <dim>'")
        try:
            count, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise FormatError(f"{path}:1: header must be '<count> <dim>'") from None
        words: list[str] = []
        seen: set[str] = set()
        matrix = np.empty((count, dim), dtype=np.float32)
        for lineno, line in enumerate(fh, start=2):
            if lineno - 2 >= count:
                raise FormatError(f"{path}:{lineno}: more rows than header declares")
            fields = line.rstrip("\n").split(" ")
            word = fields[0]
            if word in seen:
                raise FormatError(f"{path}:{lineno}: duplicate word {word!r}")
            if len(fields) - 1 != dim:
                raise FormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(fields) - 1}"
                )
            try:
                matrix[lineno - 2] = [float(v) for v in fields[1:]]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            seen.add(word)
            words.append(word)
    if len(words) != count:
        raise FormatError(f"{path}: header declares {count} rows, found {len(words)}")
    return EmbeddingTable(language=language, words=words, matrix=matrix)
