"""Command-line interface.

Subcommands mirror the pipeline stages so each artifact can be produced or
refreshed on its own. Exit codes: 0 success, 2 configuration/input error,
1 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, corpus, scoring, stats, stimgen
from .lm_client import ClientError, score_remote, word_profile
from .neural_lm import (
    CheckpointError,
    DivergenceError,
    ModelError,
    ScoreError,
    load_checkpoint,
    preset,
    save_checkpoint,
    sequence_surprisal,
    train,
)
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    PipelineError,
    _stage_analyze,
    _stage_report,
    load_config,
    run_pipeline,
)

CONFIG_ERRORS = (
    ConfigError,
    ModelError,
    corpus.CorpusError,
    stimgen.TemplateError,
    stimgen.LexiconError,
    json.JSONDecodeError,
)

RUNTIME_ERRORS = (
    PipelineError,
    ClientError,
    CheckpointError,
    DivergenceError,
    ScoreError,
    scoring.ScoringError,
    stats.StatsError,
    OSError,
)


def _cmd_gen(args) -> int:
    if args.templates:
        templates = {t.construction: t for t in stimgen.load_templates(args.templates)}
        if args.construction not in templates:
            raise stimgen.TemplateError(
                f"{args.templates} does not define {args.construction!r}"
            )
        template = templates[args.construction]
    else:
        template = stimgen.default_template(args.construction)
    slots = (
        stimgen.load_lexicon(args.lexicon)
        if args.lexicon
        else stimgen.default_test_lexicon(args.construction)
    )
    count = args.count or stimgen.DEFAULT_ITEM_COUNTS[args.construction]
    items = stimgen.bind_lexicon(template, slots, count, args.seed)
    stimgen.save_items(items, args.out)
    print(f"wrote {len(items)} items to {args.out}")
    return 0


def _cmd_synth_corpus(args) -> int:
    grammar = args.grammar or stimgen.DATA_DIR / "grammar" / "default_grammar.json"
    split = corpus.synth_corpus(
        corpus.load_grammar_config(grammar), args.n_tokens, args.seed,
        max_vocab=args.max_vocab,
    )
    split.save(args.out)
    print(
        f"wrote corpus to {args.out}: vocab {len(split.vocab)}, "
        f"train {split.num_tokens('train')} tokens"
    )
    return 0


def _cmd_augment(args) -> int:
    split = corpus.CorpusSplit.load(args.corpus)
    slots = (
        stimgen.load_lexicon(args.lexicon)
        if args.lexicon
        else stimgen.default_augmentation_lexicon(args.construction)
    )
    sentences = stimgen.generate_training_sentences(
        args.construction, args.n, slots, args.seed
    )
    augmented = corpus.augment_corpus(split, sentences, args.seed)
    augmented.save(args.out)
    (Path(args.out) / "augment.txt").write_text(
        "\n".join(corpus.detokenize(s) for s in sentences) + "\n", encoding="utf-8"
    )
    print(f"wrote augmented corpus ({len(sentences)} additions) to {args.out}")
    return 0


def _cmd_train(args) -> int:
    split = corpus.CorpusSplit.load(args.corpus)
    overrides = json.loads(args.overrides) if args.overrides else {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = preset(args.preset, **overrides, vocab_size=len(split.vocab))
    params, log = train(cfg, split)
    save_checkpoint(args.out, params)
    last = log.epochs[-1]
    print(
        f"trained {args.preset} model: best epoch {log.best_epoch}, "
        f"final valid loss {last.valid_loss:.4f} nats; saved to {args.out}"
    )
    return 0


def _cmd_score(args) -> int:
    items = stimgen.load_items(args.items)
    scores = []
    if args.endpoint:
        sentences, meta = [], []
        for item in items:
            for sent in item.sentences:
                sentences.append(corpus.detokenize(sent.tokens))
                meta.append((item, sent))
        responses = score_remote(args.endpoint, sentences)
        for (item, sent), response in zip(meta, responses):
            profile = word_profile(
                list(sent.tokens), response, item_id=item.item_id, condition=sent.condition
            )
            scores.append(
                scoring.region_surprisal(
                    profile, sent.critical_region,
                    item_id=item.item_id, construction=item.construction,
                )
            )
    else:
        if not (args.model and args.vocab):
            raise ConfigError("score requires --model and --vocab (or --endpoint)")
        params = load_checkpoint(args.model)
        vocab = corpus.Vocab.load(args.vocab)
        for item in items:
            for sent in item.sentences:
                profile = sequence_surprisal(
                    params, list(sent.tokens), vocab,
                    item_id=item.item_id, condition=sent.condition,
                )
                scores.append(
                    scoring.region_surprisal(
                        profile, sent.critical_region,
                        item_id=item.item_id, construction=item.construction,
                    )
                )
    scoring.write_scores_csv(scores, args.out)
    print(f"wrote {len(scores)} region scores to {args.out}")
    return 0


def _parse_score_specs(specs: list[str]) -> dict[str, list]:
    out = {}
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"--scores expects model_id=path, got {spec!r}")
        model_id, path = spec.split("=", 1)
        out[model_id] = scoring.read_scores_csv(path)
    return out


def _analysis_config(args, all_scores) -> ExperimentConfig:
    constructions = sorted({s.construction for scores in all_scores.values() for s in scores})
    return ExperimentConfig(
        out_dir=args.out,
        constructions=constructions,
        analysis={
            "licensing_alpha": args.licensing_alpha,
            "island_alpha": args.island_alpha,
        },
    )


def _cmd_analyze(args) -> int:
    all_scores = _parse_score_specs(args.scores)
    cfg = _analysis_config(args, all_scores)
    bundle = _stage_analyze(cfg, Path(args.out), all_scores)
    print(f"wrote effects.csv, fits.csv, verdicts.csv to {args.out}")
    return 0


def _cmd_report(args) -> int:
    all_scores = _parse_score_specs(args.scores)
    cfg = _analysis_config(args, all_scores)
    out = Path(args.out)
    bundle = _stage_analyze(cfg, out, all_scores)
    _stage_report(cfg, out, bundle)
    print(f"wrote report to {out / 'report' / 'report.md'}")
    return 0


def _cmd_pipeline(args) -> int:
    config = load_config(args.config)
    if args.out:
        config.out_dir = args.out
    manifest = run_pipeline(config)
    print(
        f"pipeline complete: {len(manifest['artifacts'])} artifacts in {config.out_dir}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gaplab",
        description="Filler-gap dependency experiments on recurrent language models",
    )
    parser.add_argument("--version", action="version", version=f"gaplab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate paradigm items")
    p.add_argument("--construction", required=True, choices=stimgen.CONSTRUCTIONS)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--templates", default=None)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("synth-corpus", help="sample a synthetic training corpus")
    p.add_argument("--grammar", default=None)
    p.add_argument("--n-tokens", type=int, required=True)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--max-vocab", type=int, default=10000)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_synth_corpus)

    p = sub.add_parser("augment", help="inject grammatical training sentences")
    p.add_argument("--corpus", required=True)
    p.add_argument("--construction", required=True, choices=stimgen.CONSTRUCTIONS)
    p.add_argument("--n", type=int, default=864)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_augment)

    p = sub.add_parser("train", help="train the recurrent language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--preset", default="desk")
    p.add_argument("--overrides", default=None, help="JSON object of LmConfig overrides")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("score", help="score paradigm items")
    p.add_argument("--items", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--vocab", default=None)
    p.add_argument("--endpoint", default=None, help="remote scorer base URL")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_score)

    for name, fn in (("analyze", _cmd_analyze), ("report", _cmd_report)):
        p = sub.add_parser(name, help=f"{name} persisted region scores")
        p.add_argument(
            "--scores", action="append", required=True,
            help="model_id=path, repeatable",
        )
        p.add_argument("--licensing-alpha", type=float, default=0.001)
        p.add_argument("--island-alpha", type=float, default=0.05)
        p.add_argument("--out", required=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("pipeline", help="run the full experiment pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override the configured run directory")
    p.set_defaults(fn=_cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CONFIG_ERRORS as exc:
        print(f"gaplab: config error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"gaplab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
