"""Two-stage experiment runner.

Base stage: train monolingual embeddings for the base languages, align them
into the pivot's hub space, build the merged frozen-embedding vocabulary,
and train the translation model on all base parallel directions. Extension
stage: train and align embeddings for a held-out language, plug them in,
and evaluate zero-shot translation into the pivot. Each stage records a
manifest of consumed files so leakage between stages is checkable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import (
    BilingualDictionary,
    CslsParams,
    HubAlignment,
    LinearMap,
    RcslsConfig,
    align_to_hub,
)
from .checkpoint import save_alignment, save_model
from .embeddings import (
    EmbeddingTable,
    SkipgramConfig,
    SubwordBank,
    normalize_rows,
    save_vectors,
    train_skipgram,
)
from .errors import ConfigError
from .metrics import chrf_pp
from .model import Seq2Seq, TransformerConfig
from .pipeline import StageManifest
from .synthlang import DEV, TEST, TRAIN, SynthFamily, write_family
from .training import ParallelCorpus, TrainConfig, TrainResult, train
from .translate import TranslationRequest, plug_in_language, translate
from .vocab import MultiVocab, build_from_corpus, merge

log = logging.getLogger(__name__)


def mapped_table(
    table: EmbeddingTable, hub_map: LinearMap, renormalize: bool = True
) -> EmbeddingTable:
    """The table's rows carried into hub space (and re-unit-normalized)."""
    rows = hub_map.apply(table.matrix).astype(np.float32)
    mapped = EmbeddingTable(language=table.language, words=list(table.words), matrix=rows)
    if renormalize:
        mapped, _ = normalize_rows(mapped)
    return mapped


def shuffled_control(table: EmbeddingTable, seed: int = 0) -> EmbeddingTable:
    """Adversarial control: the same rows permuted across words, destroying
    the lexical mapping while preserving the row distribution."""
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(len(table.words))
    return EmbeddingTable(
        language=table.language,
        words=list(table.words),
        matrix=table.matrix[perm].copy(),
        unit_normalized=table.unit_normalized,
    )


@dataclass
class BaseArtifacts:
    family: SynthFamily
    pivot: str
    base_languages: tuple[str, ...]
    tables: dict[str, EmbeddingTable]  # raw (pre-hub) unit-normalized tables
    banks: dict[str, SubwordBank]
    alignment: HubAlignment
    vocab: MultiVocab
    model: Seq2Seq
    train_result: TrainResult
    manifest: StageManifest
    out_dir: Path


def _train_tables(
    family: SynthFamily,
    languages: tuple[str, ...],
    sg_cfg: SkipgramConfig,
    out_dir: Path,
    manifest: StageManifest,
    role: str,
) -> tuple[dict[str, EmbeddingTable], dict[str, SubwordBank]]:
    tables: dict[str, EmbeddingTable] = {}
    banks: dict[str, SubwordBank] = {}
    for lang in languages:
        corpus = family.mono(lang, TRAIN)
        table, bank = train_skipgram(corpus, sg_cfg, language=lang)
        table, zero_rows = normalize_rows(table)
        if zero_rows:
            log.warning("%s: %d zero embedding rows after training", lang, len(zero_rows))
        tables[lang] = table
        banks[lang] = bank
        vec_path = out_dir / f"{lang}.vec"
        save_vectors(table, vec_path)
        manifest.record(vec_path, (lang,), "artifact")
        mono_path = out_dir.parent / "family" / f"{lang}.mono.txt"
        if mono_path.exists():
            manifest.record(mono_path, (lang,), "mono")
    return tables, banks


def _parallel_corpora(
    family: SynthFamily,
    vocab: MultiVocab,
    languages: tuple[str, ...],
    split: str,
) -> list[ParallelCorpus]:
    corpora = []
    for a in languages:
        for b in languages:
            if a == b:
                continue
            pairs = family.parallel[(a, b)][split]
            if pairs:
                corpora.append(ParallelCorpus.from_sentences(vocab, a, b, pairs))
    return corpora


def run_base_stage(
    family: SynthFamily,
    base_languages: tuple[str, ...],
    pivot: str,
    out_dir: str | Path,
    sg_cfg: SkipgramConfig,
    model_cfg: TransformerConfig,
    train_cfg: TrainConfig,
    csls: CslsParams = CslsParams(),
    rcsls: RcslsConfig = RcslsConfig(epochs=10),
) -> BaseArtifacts:
    if pivot not in base_languages:
        raise ConfigError(f"pivot {pivot!r} must be one of the base languages")
    leaked = set(base_languages) & family.unseen
    if leaked:
        raise ConfigError(f"base stage must not include unseen languages: {sorted(leaked)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    family_dir = out / "family"
    write_family(family, family_dir)
    manifest = StageManifest(stage="base", languages=tuple(base_languages))

    tables, banks = _train_tables(family, base_languages, sg_cfg, out, manifest, "mono")

    dictionaries: dict[str, BilingualDictionary] = {}
    for lang in base_languages:
        if lang == pivot:
            continue
        dict_path = family_dir / f"dict.{lang}-{pivot}.txt"
        dictionaries[lang] = BilingualDictionary.load(dict_path, lang, pivot)
        manifest.record(dict_path, (lang, pivot), "dict")
    alignment = align_to_hub(tables, dictionaries, pivot, csls, rcsls)
    align_path = out / "alignment.famt"
    save_alignment(align_path, alignment)
    manifest.record(align_path, tuple(base_languages), "artifact")

    parts = {}
    for lang in base_languages:
        hub_table = mapped_table(tables[lang], alignment.maps[lang])
        parts[lang] = build_from_corpus(
            hub_table, family.mono(lang, TRAIN), lang, banks[lang]
        )
    vocab = merge(parts)

    model = Seq2Seq(model_cfg, vocab)
    train_corpora = _parallel_corpora(family, vocab, base_languages, TRAIN)
    dev_corpora = _parallel_corpora(family, vocab, base_languages, DEV)
    for a in base_languages:
        for b in base_languages:
            if a == b or not family.parallel[(a, b)][TRAIN]:
                continue
            for side, lang in (("src", a), ("tgt", b)):
                path = family_dir / TRAIN / f"{a}-{b}.{side}.txt"
                if path.exists():
                    manifest.record(path, (lang,), "train")
    result = train(model, vocab, train_corpora, train_cfg, dev_corpora)

    ckpt_path = out / "base.famt"
    save_model(ckpt_path, model, vocab, extra={"stage": "base", "pivot": pivot})
    manifest.record(ckpt_path, tuple(base_languages), "artifact")
    manifest.save(out / "manifest.base.json")

    return BaseArtifacts(
        family=family,
        pivot=pivot,
        base_languages=tuple(base_languages),
        tables=tables,
        banks=banks,
        alignment=alignment,
        vocab=vocab,
        model=model,
        train_result=result,
        manifest=manifest,
        out_dir=out,
    )


@dataclass
class ExtensionArtifacts:
    language: str
    table: EmbeddingTable
    bank: SubwordBank
    hub_map: LinearMap
    model: Seq2Seq
    vocab: MultiVocab
    zero_shot_chrfpp: dict[str, float]
    manifest: StageManifest
    p_at_1: float = float("nan")


def run_extension_stage(
    base: BaseArtifacts,
    new_language: str,
    sg_cfg: SkipgramConfig,
    csls: CslsParams = CslsParams(),
    rcsls: RcslsConfig = RcslsConfig(epochs=10),
    eval_splits: tuple[str, ...] = (DEV, TEST),
    control_table: EmbeddingTable | None = None,
) -> ExtensionArtifacts:
    """Plug a held-out language into the trained base model and measure
    zero-shot translation into the pivot. ``control_table`` substitutes the
    new language's embeddings (e.g. a shuffled control) before alignment."""
    family = base.family
    if new_language in base.base_languages:
        raise ConfigError(f"{new_language!r} is a base language")
    out = base.out_dir
    manifest = StageManifest(stage="extension", languages=(new_language,))

    corpus = family.mono(new_language, TRAIN)
    table, bank = train_skipgram(corpus, sg_cfg, language=new_language)
    table, _ = normalize_rows(table)
    if control_table is not None:
        table = control_table
    vec_path = out / f"{new_language}.control.vec" if control_table is not None \
        else out / f"{new_language}.vec"
    save_vectors(table, vec_path)
    manifest.record(vec_path, (new_language,), "artifact")

    dict_path = out / "family" / f"dict.{new_language}-{base.pivot}.txt"
    dictionary = BilingualDictionary.load(dict_path, new_language, base.pivot)
    manifest.record(dict_path, (new_language, base.pivot), "dict")

    pair_alignment = align_to_hub(
        {new_language: table, base.pivot: base.tables[base.pivot]},
        {new_language: dictionary},
        base.pivot,
        csls,
        rcsls,
    )
    hub_map = pair_alignment.maps[new_language]

    model, vocab = plug_in_language(
        base.model, base.vocab, table, hub_map, new_language, as_target=True
    )

    scores: dict[str, float] = {}
    for split in eval_splits:
        pairs = family.parallel[(new_language, base.pivot)][split]
        if not pairs:
            continue
        request = TranslationRequest(
            source_language=new_language,
            target_language=base.pivot,
            sentences=tuple(src for src, _ in pairs),
            beam_size=1,
        )
        hyps = translate(request, model, vocab)
        scores[split] = chrf_pp(hyps, [tgt for _, tgt in pairs]).corpus_score

    return ExtensionArtifacts(
        language=new_language,
        table=table,
        bank=bank,
        hub_map=hub_map,
        model=model,
        vocab=vocab,
        zero_shot_chrfpp=scores,
        manifest=manifest,
        p_at_1=pair_alignment.accuracies.get(new_language, float("nan")),
    )
