"""Experiment configuration and the end-to-end pipeline.

Stages: build corpus -> train baseline -> inject augmentation and retrain
from scratch -> score paradigms under both models -> fit the statistical
analyses -> emit the report. Every stage persists its artifacts in the run
directory and is skipped when they already exist, so a run is resumable;
deleting downstream artifacts and re-running reproduces them byte for byte.

Run directory layout: config.json, corpus/, stimuli/, model_base.bin,
model_aug.bin, scores/, effects.csv, fits.csv, verdicts.csv, report/ and,
written last, manifest.json. The manifest holds the resolved config plus
content hashes of all artifacts; wall-clock timings go to timings.json,
which stays outside the manifest so identical runs produce identical
manifests.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, corpus, scoring, stats, stimgen
from .neural_lm import (
    LmConfig,
    LmParameters,
    load_checkpoint,
    preset,
    save_checkpoint,
    sequence_surprisal,
    train,
)
from .report import ReportBundle, emit_tables, render_effect_chart, render_report


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    pass


DEFAULT_ANALYSIS = {"licensing_alpha": 0.001, "island_alpha": 0.05}


@dataclass
class ExperimentConfig:
    out_dir: str
    corpus_source: str = "synthetic"
    corpus_path: str | None = None
    grammar: str | None = None  # path; None -> shipped default grammar
    grammar_config: dict | None = None  # inline grammar (overrides `grammar`)
    n_tokens: int = 200_000
    corpus_seed: int = 1
    max_vocab: int = 10_000
    lm_preset: str = "desk"
    lm_overrides: dict = field(default_factory=dict)
    constructions: list[str] = field(default_factory=lambda: ["clefting"])
    item_counts: dict[str, int] = field(default_factory=dict)
    items_seed: int = 11
    augment_construction: str = "clefting"
    augment_n: int = 864
    augment_seed: int = 7
    analysis: dict = field(default_factory=lambda: dict(DEFAULT_ANALYSIS))

    def __post_init__(self) -> None:
        if self.corpus_source not in ("synthetic", "files"):
            raise ConfigError(f"corpus_source must be synthetic or files, got {self.corpus_source!r}")
        if self.corpus_source == "files" and not self.corpus_path:
            raise ConfigError("corpus_source=files requires corpus_path")
        if self.corpus_source == "synthetic" and self.n_tokens < 1000:
            raise ConfigError("synthetic corpora need n_tokens >= 1000")
        if self.augment_n % 2 != 0:
            raise ConfigError("augment_n must be even (half the examples carry a gap)")
        bad = [c for c in self.constructions + [self.augment_construction]
               if c not in stimgen.CONSTRUCTIONS]
        if bad:
            raise ConfigError(
                f"unknown constructions {bad}; valid: {sorted(stimgen.CONSTRUCTIONS)}"
            )
        if not self.constructions:
            raise ConfigError("at least one construction must be tested")
        for name, count in self.item_counts.items():
            if name not in stimgen.CONSTRUCTIONS:
                raise ConfigError(f"item_counts names unknown construction {name!r}")
            if count < 2:
                raise ConfigError("item counts must be >= 2 (CIs need two items)")
        merged = dict(DEFAULT_ANALYSIS)
        merged.update(self.analysis)
        self.analysis = merged

    def lm_config(self, vocab_size: int, seed_offset: int = 0) -> LmConfig:
        cfg = preset(self.lm_preset, **self.lm_overrides)
        return replace(cfg, vocab_size=vocab_size, seed=cfg.seed + seed_offset)

    def items_for(self, construction: str) -> int:
        return self.item_counts.get(
            construction, stimgen.DEFAULT_ITEM_COUNTS[construction]
        )

    def resolved(self) -> dict:
        return asdict(self)


def load_config(path: Path | str) -> ExperimentConfig:
    """Parse a JSON experiment config, filling defaults and checking invariants."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    known = set(ExperimentConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config fields {sorted(unknown)}")
    try:
        return ExperimentConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Stage helpers


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _stage_corpus(cfg: ExperimentConfig, out: Path) -> corpus.CorpusSplit:
    corpus_dir = out / "corpus"
    marker = corpus_dir / "vocab.txt"
    if marker.exists():
        return corpus.CorpusSplit.load(corpus_dir)
    if cfg.corpus_source == "files":
        split = corpus.CorpusSplit.load(Path(cfg.corpus_path))
    else:
        grammar = cfg.grammar_config
        if grammar is None:
            grammar_path = (
                Path(cfg.grammar)
                if cfg.grammar
                else stimgen.DATA_DIR / "grammar" / "default_grammar.json"
            )
            grammar = corpus.load_grammar_config(grammar_path)
        split = corpus.synth_corpus(
            grammar, cfg.n_tokens, cfg.corpus_seed, max_vocab=cfg.max_vocab
        )
    split.save(corpus_dir)
    return corpus.CorpusSplit.load(corpus_dir)


def _stage_train(
    cfg: ExperimentConfig,
    out: Path,
    split: corpus.CorpusSplit,
    tag: str,
    timings: dict,
) -> LmParameters:
    model_path = out / f"model_{tag}.bin"
    if not model_path.exists():
        lm_cfg = cfg.lm_config(len(split.vocab))
        params, log = train(lm_cfg, split)
        save_checkpoint(model_path, params)
        # Wall-clock per-epoch times are nondeterministic, so they live in
        # timings.json, never in hashed artifacts.
        record = log.as_dict()
        timings[f"train_{tag}_epoch_seconds"] = [
            e.pop("seconds") for e in record["epochs"]
        ]
        (out / f"training_log_{tag}.json").write_text(
            json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    # Scoring always reads the float32 canonical form from disk so resumed
    # and fresh runs see identical weights.
    return load_checkpoint(model_path)


def _stage_augment(cfg: ExperimentConfig, out: Path, split: corpus.CorpusSplit) -> corpus.CorpusSplit:
    corpus_dir = out / "corpus"
    aug_file = corpus_dir / "augment.txt"
    train_aug = corpus_dir / "train_aug.txt"
    if not (aug_file.exists() and train_aug.exists()):
        sentences = stimgen.generate_training_sentences(
            cfg.augment_construction,
            cfg.augment_n,
            stimgen.default_augmentation_lexicon(cfg.augment_construction),
            cfg.augment_seed,
        )
        aug_file.write_text(
            "\n".join(corpus.detokenize(s) for s in sentences) + "\n", encoding="utf-8"
        )
        augmented = corpus.augment_corpus(split, sentences, cfg.augment_seed)
        lines = [corpus.detokenize(split.vocab.decode(s)) for s in augmented.train]
        train_aug.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return corpus.CorpusSplit.load(corpus_dir, train_file="train_aug.txt")


def _stage_items(cfg: ExperimentConfig, out: Path, vocab: corpus.Vocab) -> dict[str, list]:
    stim_dir = out / "stimuli"
    stim_dir.mkdir(exist_ok=True)
    items_by_construction = {}
    for construction in cfg.constructions:
        path = stim_dir / f"items_{construction}.jsonl"
        if path.exists():
            items = stimgen.load_items(path)
        else:
            items = stimgen.build_items(
                construction, cfg.items_for(construction), cfg.items_seed
            )
            stimgen.save_items(items, path)
        report = stimgen.validate_lexicon(items, vocab)
        if not report.ok:
            raise PipelineError(
                f"stimuli for {construction} use out-of-vocabulary words: "
                f"{sorted(report.missing)}"
            )
        items_by_construction[construction] = items
    return items_by_construction


def _score_items(
    params: LmParameters, vocab: corpus.Vocab, items_by_construction: dict[str, list]
) -> list[scoring.RegionScore]:
    scores = []
    for construction, items in items_by_construction.items():
        for item in items:
            for sent in item.sentences:
                profile = sequence_surprisal(
                    params,
                    list(sent.tokens),
                    vocab,
                    item_id=item.item_id,
                    condition=sent.condition,
                )
                scores.append(
                    scoring.region_surprisal(
                        profile,
                        sent.critical_region,
                        item_id=item.item_id,
                        construction=construction,
                    )
                )
    return scores


def _stage_scores(
    cfg: ExperimentConfig,
    out: Path,
    vocab: corpus.Vocab,
    items: dict[str, list],
    models: dict[str, LmParameters],
) -> dict[str, list[scoring.RegionScore]]:
    scores_dir = out / "scores"
    scores_dir.mkdir(exist_ok=True)
    all_scores = {}
    for tag, params in models.items():
        path = scores_dir / f"scores_{tag}.csv"
        if path.exists():
            all_scores[tag] = scoring.read_scores_csv(path)
        else:
            scores = _score_items(params, vocab, items)
            scoring.write_scores_csv(scores, path)
            all_scores[tag] = scores
        effects_path = scores_dir / f"effects_{tag}.csv"
        if not effects_path.exists():
            scoring.write_effects_csv(scoring.pair_effects(all_scores[tag]), effects_path)
    return all_scores


def _stage_analyze(
    cfg: ExperimentConfig,
    out: Path,
    all_scores: dict[str, list[scoring.RegionScore]],
) -> ReportBundle:
    bundle = ReportBundle(metadata={"config": cfg.resolved(), "tool_version": __version__})
    licensing_alpha = cfg.analysis["licensing_alpha"]
    island_alpha = cfg.analysis["island_alpha"]
    for tag in sorted(all_scores):
        scores = all_scores[tag]
        effects = scoring.pair_effects(scores)
        bundle.effects[tag] = effects
        summaries = scoring.effect_summary(effects)
        bundle.summaries[tag] = summaries
        bundle.add_pattern_verdicts(tag, scoring.classify_pattern(summaries))
        for construction in cfg.constructions:
            bundle.add_analysis(
                tag, stats.basic_licensing_test(scores, construction, licensing_alpha)
            )
            bundle.add_analysis(
                tag, stats.island_three_way_test(scores, construction, island_alpha)
            )
            fge, uge = stats.directional_island_tests(scores, construction, island_alpha)
            bundle.add_analysis(tag, fge)
            bundle.add_analysis(tag, uge)
    emit_tables(bundle, out)
    return bundle


def _stage_report(cfg: ExperimentConfig, out: Path, bundle: ReportBundle) -> None:
    report_dir = out / "report"
    report_dir.mkdir(exist_ok=True)
    models = sorted(bundle.summaries)
    if len(models) >= 2:
        for construction in cfg.constructions:
            svg = render_effect_chart(
                bundle.summaries, construction, (models[0], models[1])
            )
            name = f"fig_{construction}.svg"
            (report_dir / name).write_text(svg, encoding="utf-8")
            bundle.charts[construction] = name
    (report_dir / "report.md").write_text(render_report(bundle), encoding="utf-8")


def run_pipeline(config: ExperimentConfig) -> dict:
    """Execute all stages; returns the manifest dictionary."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    (out / "config.json").write_text(
        json.dumps(config.resolved(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    def timed(stage, fn, *args):
        started = time.perf_counter()
        try:
            result = fn(*args)
        except Exception as exc:
            raise PipelineError(f"stage {stage!r} failed: {exc}") from exc
        timings[stage] = time.perf_counter() - started
        return result

    split = timed("corpus", _stage_corpus, config, out)
    base = timed("train_base", _stage_train, config, out, split, "base", timings)
    aug_split = timed("augment", _stage_augment, config, out, split)
    aug = timed("train_aug", _stage_train, config, out, aug_split, "aug", timings)
    items = timed("stimuli", _stage_items, config, out, split.vocab)
    all_scores = timed(
        "score", _stage_scores, config, out, split.vocab, items, {"base": base, "aug": aug}
    )
    bundle = timed("analyze", _stage_analyze, config, out, all_scores)
    timed("report", _stage_report, config, out, bundle)

    (out / "timings.json").write_text(
        json.dumps(timings, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    artifacts = {}
    for path in sorted(out.rglob("*")):
        if path.is_file() and path.name not in ("manifest.json", "timings.json"):
            artifacts[path.relative_to(out).as_posix()] = _sha256(path)
    manifest = {
        "tool_version": __version__,
        "config": config.resolved(),
        "artifacts": artifacts,
    }
    tmp = out / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, out / "manifest.json")
    return manifest
