"""Command-line interface.

Subcommands: synth, embed, align, vocab, train, extend, translate,
backtranslate, evaluate, verify-stages. A declarative YAML config
(--config, versioned with schema_version) supplies defaults per subcommand;
explicit flags win over config values.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .alignment import BilingualDictionary, CslsParams, RcslsConfig, align_to_hub
from .checkpoint import (
    load_alignment,
    load_model,
    read_container,
    save_alignment,
    save_model,
    write_container,
)
from .embeddings import SkipgramConfig, load_vectors, normalize_rows, save_vectors, train_skipgram
from .errors import ConfigError, HubmtError
from .metrics import bleu, chrf_pp
from .model import Seq2Seq, TransformerConfig
from .pipeline import BtPlan, StageManifest, run_plan, verify_stage_isolation, write_metric_table
from .synthlang import (
    GrammarSpec,
    LanguageDerivation,
    SuffixRule,
    distant_derivation,
    identity_derivation,
    make_family,
    renaming_derivation,
    write_family,
)
from .training import ParallelCorpus, TrainConfig, train, vmf_train_config
from .translate import TranslationRequest, plug_in_language, translate
from .vocab import MultiVocab, build_from_corpus, merge, read_vocab, write_vocab

log = logging.getLogger("hubmt")

CONFIG_SCHEMA_VERSION = 1


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    payload = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    version = payload.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema_version {version}")
    return payload


def _section(config: dict, name: str) -> dict:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    return section


def _dataclass_from(cls, section: dict, **overrides):
    names = {f.name for f in dataclass_fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    merged = {**section, **{k: v for k, v in overrides.items() if v is not None}}
    return cls(**merged)


def _parse_lang_paths(values: list[str]) -> dict[str, Path]:
    out = {}
    for value in values:
        lang, _, path = value.partition("=")
        if not path:
            raise ConfigError(f"expected LANG=PATH, got {value!r}")
        out[lang] = Path(path)
    return out


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args, config) -> int:
    section = _section(config, "synth")
    spec = _dataclass_from(
        GrammarSpec, section.get("grammar", {}),
        seed=args.seed,
    )
    languages = section.get("languages")
    if not languages:
        languages = [
            {"id": "aa", "kind": "identity"},
            {"id": "bb", "kind": "close"},
            {"id": "cc", "kind": "close"},
            {"id": "dd", "kind": "distant"},
        ]
    derivations: dict[str, LanguageDerivation] = {}
    for i, entry in enumerate(languages):
        lang, kind = entry["id"], entry.get("kind", "close")
        if kind == "identity":
            derivations[lang] = identity_derivation(spec)
        elif kind == "close":
            derivations[lang] = renaming_derivation(spec, lang, seed=1000 + i)
        elif kind == "distant":
            derivations[lang] = distant_derivation(
                spec, lang, seed=1000 + i,
                noise_rate=float(entry.get("noise_rate", 0.0)),
            )
        else:
            raise ConfigError(f"unknown derivation kind {kind!r}")
    unseen = frozenset(section.get("unseen", []))
    family = make_family(spec, derivations, unseen=unseen)
    write_family(family, args.out)
    print(f"family written to {args.out} ({len(derivations)} languages)")
    return 0


def cmd_embed(args, config) -> int:
    section = _section(config, "embed")
    cfg = _dataclass_from(
        SkipgramConfig, section,
        dim=args.dim, epochs=args.epochs, seed=args.seed, min_count=args.min_count,
    )
    corpus = Path(args.corpus).read_text(encoding="utf-8").splitlines()
    language = args.language or Path(args.corpus).stem.split(".")[0]
    table, bank = train_skipgram(corpus, cfg, language=language)
    if args.normalize:
        table, zero_rows = normalize_rows(table)
        if zero_rows:
            log.warning("%d zero rows left unnormalized", len(zero_rows))
    save_vectors(table, args.out)
    print(f"{language}: {len(table)} words x dim {table.dim} -> {args.out}")
    return 0


def cmd_align(args, config) -> int:
    section = _section(config, "align")
    tables = {
        lang: load_vectors(path, lang)
        for lang, path in _parse_lang_paths(args.vectors).items()
    }
    for lang in list(tables):
        tables[lang], _ = normalize_rows(tables[lang])
    dictionaries = {
        lang: BilingualDictionary.load(path, lang, args.pivot)
        for lang, path in _parse_lang_paths(args.dict or []).items()
    }
    csls = _dataclass_from(CslsParams, section.get("csls", {}), k=args.k)
    rcsls = _dataclass_from(RcslsConfig, section.get("rcsls", {}))
    alignment = align_to_hub(tables, dictionaries, args.pivot, csls, rcsls)
    save_alignment(args.out, alignment)
    for lang, acc in sorted(alignment.accuracies.items()):
        print(f"{lang}->{args.pivot}\tP@1 {acc:.3f}")
    return 0


def cmd_vocab(args, config) -> int:
    alignment = load_alignment(args.alignment) if args.alignment else None
    parts = {}
    corpora = _parse_lang_paths(args.corpora)
    for lang, vec_path in _parse_lang_paths(args.vectors).items():
        table = load_vectors(vec_path, lang)
        table, _ = normalize_rows(table)
        if alignment is not None:
            from .experiment import mapped_table

            table = mapped_table(table, alignment.maps[lang])
        corpus = Path(corpora[lang]).read_text(encoding="utf-8").splitlines()
        parts[lang] = build_from_corpus(table, corpus, lang)
    vocab = merge(parts)
    out = Path(args.out)
    write_vocab(vocab, out)
    write_container(
        out.with_suffix(out.suffix + ".emb"),
        {"format": 1, "kind": "vocab"},
        {"vocab.embedding": vocab.embedding_matrix},
    )
    print(f"vocabulary: {len(vocab)} tokens ({vocab.special_count} specials) -> {out}")
    return 0


def _load_vocab_pair(path: str) -> MultiVocab:
    emb_path = Path(path + ".emb")
    _, tensors = read_container(emb_path)
    return read_vocab(path, tensors["vocab.embedding"].astype(np.float32))


def _parse_parallel(specs: list[str]) -> list[tuple[str, str, Path, Path]]:
    out = []
    for value in specs:
        direction, _, paths = value.partition("=")
        src_lang, _, tgt_lang = direction.partition("-")
        src_path, _, tgt_path = paths.partition(":")
        if not (src_lang and tgt_lang and src_path and tgt_path):
            raise ConfigError(
                f"expected SRC-TGT=SRC_FILE:TGT_FILE, got {value!r}"
            )
        out.append((src_lang, tgt_lang, Path(src_path), Path(tgt_path)))
    return out


def _read_pairs(src_path: Path, tgt_path: Path) -> list[tuple[str, str]]:
    src = src_path.read_text(encoding="utf-8").splitlines()
    tgt = tgt_path.read_text(encoding="utf-8").splitlines()
    if len(src) != len(tgt):
        raise ConfigError(f"{src_path} and {tgt_path} differ in length")
    return list(zip(src, tgt))


def cmd_train(args, config) -> int:
    vocab = _load_vocab_pair(args.vocab)
    model_cfg = _dataclass_from(
        TransformerConfig, _section(config, "model"),
        layers=args.layers, head=args.head,
    )
    section = _section(config, "train")
    if (args.head or section.get("head")) == "vmf":
        train_cfg = vmf_train_config(**section.get("optim", {}))
    else:
        train_cfg = _dataclass_from(
            TrainConfig, section.get("optim", {}),
            max_updates=args.max_updates, seed=args.seed,
        )
    model = Seq2Seq(model_cfg, vocab)
    train_corpora = [
        ParallelCorpus.from_sentences(vocab, a, b, _read_pairs(sp, tp))
        for a, b, sp, tp in _parse_parallel(args.parallel)
    ]
    dev_corpora = [
        ParallelCorpus.from_sentences(vocab, a, b, _read_pairs(sp, tp))
        for a, b, sp, tp in _parse_parallel(args.dev or [])
    ] or None
    result = train(model, vocab, train_corpora, train_cfg, dev_corpora)
    save_model(args.out, model, vocab, extra={"updates": result.updates})
    last = result.trace[-1] if result.trace else {}
    print(f"trained {result.updates} updates -> {args.out} {json.dumps(last)}")
    return 0


def cmd_extend(args, config) -> int:
    model, vocab, _ = load_model(args.model)
    table = load_vectors(args.vectors, args.language)
    table, _ = normalize_rows(table)
    alignment = load_alignment(args.alignment)
    if args.language not in alignment.maps:
        raise ConfigError(f"alignment has no map for {args.language!r}")
    model2, vocab2 = plug_in_language(
        model, vocab, table, alignment.maps[args.language], args.language
    )
    save_model(args.out, model2, vocab2, extra={"extended_by": args.language})
    print(f"extended by {args.language}: |V| {len(vocab)} -> {len(vocab2)}")
    return 0


def cmd_translate(args, config) -> int:
    model, vocab, _ = load_model(args.model)
    sentences = Path(args.input).read_text(encoding="utf-8").splitlines()
    request = TranslationRequest(
        source_language=args.src_lang,
        target_language=args.tgt_lang,
        sentences=tuple(sentences),
        beam_size=args.beam,
    )
    outputs = translate(request, model, vocab)
    text = "\n".join(outputs) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_backtranslate(args, config) -> int:
    model, vocab, _ = load_model(args.model)
    section = _section(config, "backtranslate")
    mono = {
        lang: Path(path).read_text(encoding="utf-8").splitlines()
        for lang, path in _parse_lang_paths(args.mono).items()
    }
    eval_sets = {}
    for name, value in (section.get("eval_sets") or {}).items():
        eval_sets[name] = _read_pairs(Path(value["src"]), Path(value["tgt"]))
    train_cfg = _dataclass_from(TrainConfig, section.get("optim", {}), seed=args.seed)
    plan = BtPlan(
        new_language=args.language,
        partners=tuple(args.partners),
        pivot=args.pivot,
        mono=mono,
        iterations=args.iterations,
        steps_per_iteration=args.steps,
        beam_size=args.beam,
        train_config=train_cfg,
        eval_sets=eval_sets,
    )
    model, rows = run_plan(model, vocab, plan)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(out / "adapted.famt", model, vocab, extra={"iterations": args.iterations})
    write_metric_table(rows, out / "metrics.tsv")
    for row in rows:
        print("\t".join(str(row[k]) for k in row))
    return 0


def cmd_evaluate(args, config) -> int:
    hyps = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    refs = Path(args.ref).read_text(encoding="utf-8").splitlines()
    report = chrf_pp(hyps, refs) if args.metric == "chrfpp" else bleu(hyps, refs)
    if args.json:
        print(json.dumps({
            "metric": args.metric,
            "score": report.corpus_score,
            "signature": report.config,
            "sentences": len(hyps),
        }, sort_keys=True))
    else:
        print(f"{report.config} = {report.corpus_score:.1f}")
    return 0


def cmd_verify_stages(args, config) -> int:
    base = StageManifest.load(args.base)
    extension = StageManifest.load(args.extension)
    report = verify_stage_isolation(base, extension, strict=args.strict)
    if report.clean:
        print("stage isolation: clean (0 violations)")
        return 0
    for violation in report.violations:
        print(f"VIOLATION: {violation}")
    return 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hubmt", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="YAML config file (versioned schema)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--strict", action="store_true")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic language family")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", help="train monolingual word embeddings")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--language")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--min-count", dest="min_count", type=int, default=None)
    p.add_argument("--normalize", action="store_true", default=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("align", help="align embeddings into the pivot hub space")
    p.add_argument("--pivot", required=True)
    p.add_argument("--vectors", nargs="+", required=True, metavar="LANG=VEC")
    p.add_argument("--dict", nargs="+", metavar="LANG=DICT")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("vocab", help="build the merged prefixed vocabulary")
    p.add_argument("--vectors", nargs="+", required=True, metavar="LANG=VEC")
    p.add_argument("--corpora", nargs="+", required=True, metavar="LANG=TXT")
    p.add_argument("--alignment")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("train", help="train the translation model")
    p.add_argument("--vocab", required=True)
    p.add_argument("--parallel", nargs="+", required=True, metavar="A-B=SRC:TGT")
    p.add_argument("--dev", nargs="+", metavar="A-B=SRC:TGT")
    p.add_argument("--layers", type=int, default=None)
    p.add_argument("--head", choices=["softmax", "vmf"], default=None)
    p.add_argument("--max-updates", dest="max_updates", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extend", help="plug an aligned language into a model")
    p.add_argument("--model", required=True)
    p.add_argument("--language", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--alignment", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("translate", help="translate a text file")
    p.add_argument("--model", required=True)
    p.add_argument("--src-lang", dest="src_lang", required=True)
    p.add_argument("--tgt-lang", dest="tgt_lang", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--beam", type=int, default=1)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("backtranslate", help="iterative back-translation")
    p.add_argument("--model", required=True)
    p.add_argument("--language", required=True)
    p.add_argument("--partners", nargs="+", required=True)
    p.add_argument("--pivot", required=True)
    p.add_argument("--mono", nargs="+", required=True, metavar="LANG=TXT")
    p.add_argument("--iterations", type=int, default=2)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_backtranslate)

    p = sub.add_parser("evaluate", help="score hypotheses against references")
    p.add_argument("--metric", choices=["chrfpp", "bleu"], required=True)
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-stages", help="check two-stage leakage freedom")
    p.add_argument("--base", required=True)
    p.add_argument("--extension", required=True)
    p.set_defaults(func=cmd_verify_stages)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except HubmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
