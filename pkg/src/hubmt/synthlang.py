"""Synthetic language families with exact gold lexical mappings.

A base corpus is generated from a small topic grammar (topic-conditioned
content words over a fixed function-word skeleton). Related "languages" are
derived from it by bijective renaming, position-conditioned suffixing, local
reordering and synonym noise. Because every derivation step is known, the
bilingual dictionaries and parallel corpora are correct by construction,
which makes retrieval accuracy and translation quality measurable without
real data: renaming-only derivations emulate closely related languages,
reordering + suffixing emulate distant ones.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"

TRAIN, DEV, TEST = "train", "dev", "test"
SPLITS = (TRAIN, DEV, TEST)


@dataclass(frozen=True)
class GrammarSpec:
    """Parameters of the base-corpus generator. Generation is a pure
    function of this spec (all randomness flows from ``seed``)."""

    seed: int = 0
    vocab_size: int = 200
    sentence_count: int = 20_000
    min_len: int = 4
    max_len: int = 12
    topic_count: int = 8

    def validate(self) -> None:
        if self.vocab_size < 10:
            raise ConfigError(f"vocab_size must be >= 10, got {self.vocab_size}")
        if self.min_len < 1 or self.min_len > self.max_len:
            raise ConfigError(
                f"need 1 <= min_len <= max_len, got ({self.min_len}, {self.max_len})"
            )
        if self.topic_count < 1:
            raise ConfigError("topic_count must be >= 1")
        if self.sentence_count < 1:
            raise ConfigError("sentence_count must be >= 1")

    @property
    def function_word_count(self) -> int:
        return max(4, self.vocab_size // 20)


@dataclass(frozen=True)
class SuffixRule:
    """Append ``suffix`` to tokens whose sentence position satisfies
    position % modulus == remainder."""

    modulus: int
    remainder: int
    suffix: str

    def applies(self, position: int) -> bool:
        return position % self.modulus == self.remainder


@dataclass(frozen=True)
class LanguageDerivation:
    """Recipe turning the base corpus into a derived language.

    ``substitution`` must be a bijective renaming covering the base lexicon.
    ``reorder_window``/``reorder_pattern`` permute tokens inside consecutive
    windows (window 1 or empty pattern = identity). ``noise_rate`` swaps a
    token for a synonym (same ``synonym_pools`` pool) with that probability.
    """

    substitution: dict[str, str]
    suffix_rules: tuple[SuffixRule, ...] = ()
    reorder_window: int = 1
    reorder_pattern: tuple[int, ...] = ()
    noise_rate: float = 0.0
    noise_seed: int = 0
    synonym_pools: tuple[tuple[str, ...], ...] = ()

    def validate(self) -> None:
        values = list(self.substitution.values())
        if len(set(values)) != len(values):
            raise ConfigError("substitution is not a bijection (duplicate targets)")
        if self.reorder_window < 1:
            raise ConfigError("reorder window must be >= 1")
        if self.reorder_pattern and sorted(self.reorder_pattern) != list(
            range(self.reorder_window)
        ):
            raise ConfigError(
                f"reorder_pattern {self.reorder_pattern} is not a permutation "
                f"of range({self.reorder_window})"
            )
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError(f"noise_rate must be in [0, 1), got {self.noise_rate}")
        for rule in self.suffix_rules:
            if rule.modulus < 1 or not 0 <= rule.remainder < rule.modulus:
                raise ConfigError(f"bad suffix rule {rule}")

    @property
    def is_pure_renaming(self) -> bool:
        return (
            not self.suffix_rules
            and (self.reorder_window == 1 or not self.reorder_pattern)
            and self.noise_rate == 0.0
        )


@dataclass
class SynthFamily:
    """A base corpus plus derived languages, dictionaries, parallel data and
    shared train/dev/test splits (identical sentence indices per language)."""

    base_corpus: list[str]
    languages: dict[str, list[str]]
    gold_dictionaries: dict[tuple[str, str], list[tuple[str, str]]]
    parallel: dict[tuple[str, str], dict[str, list[tuple[str, str]]]]
    splits: dict[str, list[int]]
    unseen: frozenset[str] = field(default_factory=frozenset)

    def mono(self, language: str, split: str = TRAIN) -> list[str]:
        corpus = self.languages[language]
        return [corpus[i] for i in self.splits[split]]


def _make_lexicon(rng: np.random.Generator, spec: GrammarSpec) -> tuple[list[str], list[str]]:
    """Content and function lexemes as unique pronounceable CV strings."""

    def syllable() -> str:
        return _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]

    def word(n_syllables: int, taken: set[str]) -> str:
        while True:
            w = "".join(syllable() for _ in range(n_syllables))
            if w not in taken:
                taken.add(w)
                return w

    taken: set[str] = set()
    n_function = spec.function_word_count
    n_content = spec.vocab_size - n_function
    function_words = [word(1 + int(rng.integers(2)), taken) for _ in range(n_function)]
    content_words = [word(2 + int(rng.integers(2)), taken) for _ in range(n_content)]
    return content_words, function_words


def _topic_pools(content: list[str], topic_count: int) -> list[list[str]]:
    pools: list[list[str]] = [[] for _ in range(topic_count)]
    for i, w in enumerate(content):
        pools[i % topic_count].append(w)
    return pools


def _sample_sentence(
    rng: np.random.Generator,
    spec: GrammarSpec,
    pools: list[list[str]],
    function_words: list[str],
    pool_index: int | None = None,
) -> list[str]:
    length = int(rng.integers(spec.min_len, spec.max_len + 1))
    topic = pools[pool_index if pool_index is not None else int(rng.integers(len(pools)))]
    tokens = []
    for pos in range(length):
        # function-word skeleton: every third position anchors co-occurrence
        if pos % 3 == 0:
            tokens.append(function_words[int(rng.integers(len(function_words)))])
        else:
            tokens.append(topic[int(rng.integers(len(topic)))])
    return tokens


def base_lexicon(spec: GrammarSpec) -> list[str]:
    """The full base lexicon (content + function words) for a spec."""
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    content, function_words = _make_lexicon(rng, spec)
    return content + function_words


def generate_base_corpus(spec: GrammarSpec) -> list[str]:
    """Generate the base corpus, one space-joined sentence per list entry.

    Deterministic given ``spec`` (including its seed). Every lexeme is
    guaranteed to occur at least 5 times; when the initial draw leaves a
    lexeme under-represented, targeted sentences are appended until the
    floor holds, so the result may slightly exceed ``spec.sentence_count``.
    """
    spec.validate()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    content, function_words = _make_lexicon(rng, spec)
    pools = _topic_pools(content, spec.topic_count)

    sentences = [
        _sample_sentence(rng, spec, pools, function_words)
        for _ in range(spec.sentence_count)
    ]

    counts = Counter(tok for sent in sentences for tok in sent)
    lexicon = content + function_words
    for _ in range(1000):
        deficient = [w for w in lexicon if counts[w] < 5]
        if not deficient:
            break
        extra: list[str] = []
        for pos in range(max(spec.min_len, len(deficient))):
            extra.append(deficient[pos % len(deficient)])
            if len(extra) >= spec.max_len:
                sentences.append(extra)
                counts.update(extra)
                extra = []
        if extra:
            while len(extra) < spec.min_len:
                extra.append(deficient[len(extra) % len(deficient)])
            sentences.append(extra)
            counts.update(extra)
    else:
        raise ConfigError("could not satisfy the frequency floor; spec too tight")

    return [" ".join(s) for s in sentences]


def _reorder(tokens: list[str], window: int, pattern: tuple[int, ...]) -> list[str]:
    if window == 1 or not pattern:
        return tokens
    out = list(tokens)
    for start in range(0, len(tokens) - window + 1, window):
        block = tokens[start : start + window]
        for i, j in enumerate(pattern):
            out[start + i] = block[j]
    return out


def derive_language(
    base: list[str], derivation: LanguageDerivation
) -> tuple[list[str], list[tuple[str, str]]]:
    """Apply a derivation to the base corpus.

    Returns the derived corpus and the gold dictionary of
    (derived word, base word) pairs. The dictionary always contains the
    inverted substitution; when suffix rules fire it additionally contains
    every attested suffixed surface form, so mapping derived tokens back
    through the dictionary reproduces the base corpus whenever
    noise_rate == 0 and the reorder is the identity.
    """
    derivation.validate()
    base_types = {tok for sent in base for tok in sent.split()}
    missing = base_types - derivation.substitution.keys()
    if missing:
        raise ConfigError(
            f"substitution does not cover the base lexicon; missing e.g. "
            f"{sorted(missing)[:5]}"
        )

    rng = np.random.Generator(np.random.PCG64(derivation.noise_seed))
    pool_of: dict[str, tuple[str, ...]] = {}
    for pool in derivation.synonym_pools:
        for w in pool:
            pool_of[w] = pool

    corpus: list[str] = []
    attested_suffixed: dict[str, str] = {}
    for sent in base:
        tokens = sent.split()
        if derivation.noise_rate > 0.0:
            noised = []
            for tok in tokens:
                if rng.random() < derivation.noise_rate:
                    pool = pool_of.get(tok)
                    if pool and len(pool) > 1:
                        swap = tok
                        while swap == tok:
                            swap = pool[int(rng.integers(len(pool)))]
                        tok = swap
                noised.append(tok)
            tokens = noised
        tokens = _reorder(tokens, derivation.reorder_window, derivation.reorder_pattern)
        out = []
        for pos, tok in enumerate(tokens):
            surface = derivation.substitution[tok]
            for rule in derivation.suffix_rules:
                if rule.applies(pos):
                    attested_suffixed[surface + rule.suffix] = tok
                    surface = surface + rule.suffix
                    break
            out.append(surface)
        corpus.append(" ".join(out))

    dictionary = [(v, k) for k, v in sorted(derivation.substitution.items())]
    dictionary.extend(sorted(attested_suffixed.items()))
    return corpus, dictionary


def make_family(
    spec: GrammarSpec,
    derivations: dict[str, LanguageDerivation],
    unseen: frozenset[str] | set[str] = frozenset(),
    dev_fraction: float = 0.05,
    test_fraction: float = 0.05,
) -> SynthFamily:
    """Build a language family: derived corpora, pairwise gold dictionaries,
    parallel data over shared sentence indices, and stratified splits.

    Languages flagged ``unseen`` get monolingual and dev/test parallel data
    but no train parallel entries.
    """
    if len(derivations) < 2:
        raise ConfigError("a family needs at least 2 derivations")
    if len(set(derivations)) != len(derivations):
        raise ConfigError("duplicate language ids")
    unknown = set(unseen) - set(derivations)
    if unknown:
        raise ConfigError(f"unseen flags name unknown languages: {sorted(unknown)}")

    base = generate_base_corpus(spec)
    langs = sorted(derivations)
    corpora: dict[str, list[str]] = {}
    to_base: dict[str, dict[str, list[str]]] = {}  # lang -> base lexeme -> surfaces
    core_of: dict[str, dict[str, str]] = {}  # lang -> base lexeme -> bare rename
    for lang in langs:
        corpus, dictionary = derive_language(base, derivations[lang])
        corpora[lang] = corpus
        forms: dict[str, list[str]] = {}
        for derived, base_w in dictionary:
            forms.setdefault(base_w, []).append(derived)
        to_base[lang] = forms
        core_of[lang] = {w: derivations[lang].substitution[w] for w in forms}

    rng = np.random.Generator(np.random.PCG64(spec.seed + 1))
    order = rng.permutation(len(base)).tolist()
    n_dev = max(1, int(len(base) * dev_fraction))
    n_test = max(1, int(len(base) * test_fraction))
    splits = {
        TEST: sorted(order[:n_test]),
        DEV: sorted(order[n_test : n_test + n_dev]),
        TRAIN: sorted(order[n_test + n_dev :]),
    }

    gold: dict[tuple[str, str], list[tuple[str, str]]] = {}
    parallel: dict[tuple[str, str], dict[str, list[tuple[str, str]]]] = {}
    unseen = frozenset(unseen)
    for a in langs:
        for b in langs:
            if a == b:
                continue
            pairs: list[tuple[str, str]] = []
            for base_w in sorted(to_base[a]):
                if base_w not in to_base[b]:
                    continue
                for form in to_base[a][base_w]:
                    pairs.append((form, core_of[b][base_w]))
                for form in to_base[b][base_w]:
                    if form != core_of[b][base_w]:
                        pairs.append((core_of[a][base_w], form))
            gold[(a, b)] = pairs
            per_split: dict[str, list[tuple[str, str]]] = {}
            for split in SPLITS:
                if split == TRAIN and (a in unseen or b in unseen):
                    per_split[split] = []
                else:
                    per_split[split] = [
                        (corpora[a][i], corpora[b][i]) for i in splits[split]
                    ]
            parallel[(a, b)] = per_split

    return SynthFamily(
        base_corpus=base,
        languages=corpora,
        gold_dictionaries=gold,
        parallel=parallel,
        splits=splits,
        unseen=unseen,
    )


def write_family(family: SynthFamily, out_dir: str | Path) -> None:
    """Emit the on-disk layout: `<lang>.mono.txt` and `dict.<a>-<b>.txt` at
    the top level, parallel `<a>-<b>.{src,tgt}.txt` under one directory per
    split. Train parallel files are not written for unseen languages.
    Byte-identical output for identical inputs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for lang in sorted(family.languages):
        text = "\n".join(family.mono(lang, TRAIN)) + "\n"
        (out / f"{lang}.mono.txt").write_text(text, encoding="utf-8")
    for (a, b), pairs in sorted(family.gold_dictionaries.items()):
        lines = "".join(f"{s} {t}\n" for s, t in pairs)
        (out / f"dict.{a}-{b}.txt").write_text(lines, encoding="utf-8")
    for split in SPLITS:
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        for (a, b), per_split in sorted(family.parallel.items()):
            rows = per_split[split]
            if not rows:
                continue
            (split_dir / f"{a}-{b}.src.txt").write_text(
                "\n".join(s for s, _ in rows) + "\n", encoding="utf-8"
            )
            (split_dir / f"{a}-{b}.tgt.txt").write_text(
                "\n".join(t for _, t in rows) + "\n", encoding="utf-8"
            )
    manifest = {
        "languages": sorted(family.languages),
        "unseen": sorted(family.unseen),
        "split_sizes": {s: len(ix) for s, ix in family.splits.items()},
    }
    (out / "family.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def renaming_derivation(
    spec: GrammarSpec, tag: str, *, seed: int | None = None
) -> LanguageDerivation:
    """A pure-renaming ("closely related") derivation: every base lexeme is
    renamed to a fresh word carrying ``tag`` flavoring, nothing else changes."""
    lexicon = base_lexicon(spec)
    rng = np.random.Generator(np.random.PCG64(hash(tag) % (2**32) if seed is None else seed))
    taken: set[str] = set(lexicon)
    substitution: dict[str, str] = {}
    for w in lexicon:
        while True:
            candidate = tag + "".join(
                _CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                for _ in range(max(1, len(w) // 2))
            )
            if candidate not in taken:
                taken.add(candidate)
                substitution[w] = candidate
                break
    return LanguageDerivation(substitution=substitution)


def identity_derivation(spec: GrammarSpec) -> LanguageDerivation:
    lexicon = base_lexicon(spec)
    return LanguageDerivation(substitution={w: w for w in lexicon})


def distant_derivation(
    spec: GrammarSpec,
    tag: str,
    *,
    seed: int | None = None,
    reorder_window: int = 3,
    noise_rate: float = 0.0,
) -> LanguageDerivation:
    """A "distant" derivation: renaming plus window reversal and
    position-conditioned suffixes (several surface forms per lexeme)."""
    renamed = renaming_derivation(spec, tag, seed=seed)
    content, function_words = _make_lexicon(
        np.random.Generator(np.random.PCG64(spec.seed)), spec
    )
    pools = tuple(tuple(p) for p in _topic_pools(content, spec.topic_count))
    return LanguageDerivation(
        substitution=renamed.substitution,
        suffix_rules=(SuffixRule(3, 1, "ak"), SuffixRule(3, 2, "un")),
        reorder_window=reorder_window,
        reorder_pattern=tuple(reversed(range(reorder_window))),
        noise_rate=noise_rate,
        noise_seed=0 if seed is None else seed,
        synonym_pools=pools if noise_rate > 0 else (),
    )
