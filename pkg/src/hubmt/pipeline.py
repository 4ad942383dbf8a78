"""Iterative back-translation with parity freezing, stage manifests and the
leakage check.

The adaptation loop alternates directions: odd iterations translate the new
language's monolingual data into each partner and fine-tune partner->new
with the encoder frozen; even iterations translate partner monolingual data
into the new language and fine-tune new->partner with the decoder frozen.
Cross-attention and the output head stay trainable throughout. Every
iteration fine-tunes from the previous iteration's model with a fresh
optimizer state.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, TrainingError
from .metrics import chrf_pp
from .model import Seq2Seq, group_checksum, set_group_trainable
from .training import ParallelCorpus, TrainConfig, train
from .translate import TranslationRequest, translate
from .vocab import MultiVocab

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BtPlan:
    new_language: str
    partners: tuple[str, ...]
    pivot: str
    mono: dict[str, list[str]]  # monolingual pool per language
    iterations: int = 2
    steps_per_iteration: int = 2000  # paper-scale analog is 16k
    beam_size: int = 5
    train_config: TrainConfig = field(default_factory=TrainConfig)
    eval_sets: dict[str, list[tuple[str, str]]] = field(default_factory=dict)
    # eval set name -> (new-language sentence, pivot sentence) pairs

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not self.partners:
            raise ConfigError("at least one partner language required")
        if self.new_language not in self.mono:
            raise ConfigError(f"no monolingual data for {self.new_language!r}")
        for partner in self.partners:
            if partner not in self.mono:
                raise ConfigError(f"no monolingual data for partner {partner!r}")


@dataclass
class FilterReport:
    kept: int
    dropped_empty: int
    dropped_all_unk: int


def generate_synthetic(
    model: Seq2Seq,
    vocab: MultiVocab,
    mono: list[str],
    source_language: str,
    target_language: str,
    beam_size: int = 5,
) -> tuple[list[tuple[str, str]], FilterReport]:
    """Translate a monolingual corpus; return (synthetic target-side text as
    source, original text as target) pairs, i.e. training data for the
    target->source direction. Empty and all-<unk> outputs are dropped."""
    for language in (source_language, target_language):
        if language not in vocab.language_set:
            raise ConfigError(f"model does not cover language {language!r}")
    request = TranslationRequest(
        source_language=source_language,
        target_language=target_language,
        sentences=tuple(mono),
        beam_size=beam_size,
    )
    outputs = translate(request, model, vocab)
    pairs: list[tuple[str, str]] = []
    dropped_empty = dropped_unk = 0
    for original, synthetic in zip(mono, outputs):
        tokens = synthetic.split()
        if not tokens:
            dropped_empty += 1
            continue
        if all(t == "<unk>" for t in tokens):
            dropped_unk += 1
            continue
        pairs.append((synthetic, original))
    report = FilterReport(
        kept=len(pairs), dropped_empty=dropped_empty, dropped_all_unk=dropped_unk
    )
    log.info(
        "synthetic %s->%s: kept %d, dropped %d empty / %d all-unk",
        source_language, target_language, report.kept,
        report.dropped_empty, report.dropped_all_unk,
    )
    return pairs, report


def frozen_group_for_iteration(iteration: int) -> str:
    return "encoder" if iteration % 2 == 1 else "decoder"


@dataclass
class IterationResult:
    model: Seq2Seq
    metrics: dict[str, float]
    aborted: bool = False
    filter_reports: dict[str, FilterReport] = field(default_factory=dict)


def _eval_dev(model: Seq2Seq, vocab: MultiVocab, plan: BtPlan) -> dict[str, float]:
    """chrF++ of new-language -> pivot greedy translations per eval set."""
    scores: dict[str, float] = {}
    for name, pairs in plan.eval_sets.items():
        if not pairs:
            continue
        request = TranslationRequest(
            source_language=plan.new_language,
            target_language=plan.pivot,
            sentences=tuple(src for src, _ in pairs),
            beam_size=1,
        )
        hyps = translate(request, model, vocab)
        refs = [tgt for _, tgt in pairs]
        scores[name] = chrf_pp(hyps, refs).corpus_score
    return scores


def run_iteration(
    model: Seq2Seq,
    vocab: MultiVocab,
    plan: BtPlan,
    iteration: int,
) -> IterationResult:
    """One back-translation round. Odd: encoder frozen, trains
    partner->new; even: decoder frozen, trains new->partner. The frozen
    group is checksum-verified; on divergence the previous model is kept."""
    if iteration < 1:
        raise ConfigError("iteration index starts at 1")
    plan.validate()
    odd = iteration % 2 == 1
    frozen_group = frozen_group_for_iteration(iteration)

    corpora: list[ParallelCorpus] = []
    reports: dict[str, FilterReport] = {}
    for partner in plan.partners:
        if odd:
            pairs, report = generate_synthetic(
                model, vocab, plan.mono[plan.new_language],
                plan.new_language, partner, plan.beam_size,
            )
            direction = (partner, plan.new_language)
        else:
            pairs, report = generate_synthetic(
                model, vocab, plan.mono[partner],
                partner, plan.new_language, plan.beam_size,
            )
            direction = (plan.new_language, partner)
        reports[f"{direction[0]}->{direction[1]}"] = report
        corpora.append(
            ParallelCorpus.from_sentences(vocab, direction[0], direction[1], pairs)
        )

    cfg = replace(
        plan.train_config,
        max_updates=plan.steps_per_iteration,
        seed=plan.train_config.seed + iteration,
    )
    before = group_checksum(model, frozen_group)
    set_group_trainable(model, frozen_group, False)
    try:
        result = train(model, vocab, corpora, cfg)
        aborted = False
    except TrainingError as exc:
        log.error("iteration %d aborted: %s", iteration, exc)
        aborted = True
    finally:
        set_group_trainable(model, frozen_group, True)
    after = group_checksum(model, frozen_group)
    if before != after:
        raise TrainingError(
            f"{frozen_group} changed during iteration {iteration} despite freezing"
        )
    metrics = _eval_dev(model, vocab, plan)
    if not aborted:
        for value in metrics.values():
            if value != value:  # NaN guard
                aborted = True
    return IterationResult(
        model=model, metrics=metrics, aborted=aborted, filter_reports=reports
    )


def run_plan(
    model: Seq2Seq,
    vocab: MultiVocab,
    plan: BtPlan,
) -> tuple[Seq2Seq, list[dict]]:
    """Run all iterations; returns the adapted model and the metric table,
    one row per (iteration, direction, eval set)."""
    plan.validate()
    rows: list[dict] = []
    zero_shot = _eval_dev(model, vocab, plan)
    for name, value in zero_shot.items():
        rows.append(
            {"iteration": 0, "direction": f"{plan.new_language}->{plan.pivot}",
             "set": name, "chrfpp": value}
        )
    for iteration in range(1, plan.iterations + 1):
        result = run_iteration(model, vocab, plan, iteration)
        model = result.model
        for name, value in result.metrics.items():
            rows.append(
                {"iteration": iteration,
                 "direction": f"{plan.new_language}->{plan.pivot}",
                 "set": name, "chrfpp": value}
            )
        if result.aborted:
            log.warning("stopping after aborted iteration %d", iteration)
            break
    return model, rows


def write_metric_table(rows: list[dict], path: str | Path) -> None:
    """UTF-8 TSV with a header row."""
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    keys = list(rows[0])
    lines = ["\t".join(keys)]
    for row in rows:
        lines.append("\t".join(str(row[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Two-stage manifests and leakage verification


def content_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


@dataclass
class ManifestEntry:
    path: str
    sha256: str
    languages: tuple[str, ...]
    role: str  # "train" | "dev" | "test" | "mono" | "dict" | "artifact"


@dataclass
class StageManifest:
    stage: str  # "base" | "extension"
    languages: tuple[str, ...]
    files: list[ManifestEntry] = field(default_factory=list)

    def record(self, path: str | Path, languages: tuple[str, ...], role: str) -> None:
        self.files.append(
            ManifestEntry(str(path), content_hash(path), tuple(languages), role)
        )

    def save(self, path: str | Path) -> None:
        payload = {
            "stage": self.stage,
            "languages": list(self.languages),
            "files": [
                {"path": e.path, "sha256": e.sha256,
                 "languages": list(e.languages), "role": e.role}
                for e in self.files
            ],
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path) -> "StageManifest":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(stage=payload["stage"], languages=tuple(payload["languages"]))
        for e in payload["files"]:
            manifest.files.append(
                ManifestEntry(e["path"], e["sha256"], tuple(e["languages"]), e["role"])
            )
        return manifest


@dataclass
class IsolationReport:
    violations: list[str] = field(default_factory=list)

    @property
    def clean(self) -> bool:
        return not self.violations


def verify_stage_isolation(
    base: StageManifest,
    extension: StageManifest,
    strict: bool = False,
) -> IsolationReport:
    """Check that extension-stage languages never leaked into base-stage
    training consumption: neither by language tag on a train-role file nor
    by content hash (catches renamed copies). With strict=True a non-empty
    violation list raises."""
    extension_langs = set(extension.languages)
    extension_hashes = {
        e.sha256: e.path for e in extension.files if set(e.languages) & extension_langs
    }
    report = IsolationReport()
    for entry in base.files:
        if entry.role == "train" and set(entry.languages) & extension_langs:
            report.violations.append(
                f"{entry.path}: base stage consumed training data tagged "
                f"{sorted(set(entry.languages) & extension_langs)}"
            )
        elif entry.sha256 in extension_hashes:
            report.violations.append(
                f"{entry.path}: content identical to extension-stage file "
                f"{extension_hashes[entry.sha256]}"
            )
    if strict and report.violations:
        raise ConfigError(
            "stage isolation violated:\n" + "\n".join(report.violations)
        )
    return report
