"""Command line entry point.

Subcommands cover the full workflow: gen-data builds a synthetic corpus,
featurize converts audio corpora to stored spectrograms, run executes the
refinement pipeline, eval prints a run's metrics, and export-ep dumps one
utterance's profile trajectory. Exit codes: 0 success, 2 configuration
error, 3 data error, 4 diverged training.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

from .config import config_to_dict, load_config
from .datagen import SyntheticCorpusSpec, generate_synthetic_corpus, segmentation_for
from .errors import ConfigError, DataError, TrainingDivergedError
from .evaluation import read_metrics_report
from .features import FrameSpec
from .manifest import load_manifest, write_synthetic_corpus
from .pipeline import export_ep_evolution, featurize_corpus, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _load_corpus_spec(path) -> SyntheticCorpusSpec:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"no corpus spec at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("corpus spec must be a JSON object")
    allowed = {f.name for f in fields(SyntheticCorpusSpec)}
    extra = set(doc) - allowed
    if extra:
        raise ConfigError(f"unknown corpus spec keys: {sorted(extra)}")
    kwargs = dict(doc)
    for key in ("segments_range", "class_names"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SyntheticCorpusSpec(**kwargs)


def cmd_gen_data(args) -> int:
    spec = _load_corpus_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    utterances = generate_synthetic_corpus(spec)
    manifest = write_synthetic_corpus(args.out, utterances, spec.class_names)
    seg = segmentation_for(spec)
    flipped = sum(1 for u in utterances if u.observed_label != u.label)
    print(f"wrote {len(manifest.rows)} utterances, {len(manifest.class_names)} classes "
          f"to {manifest.root}")
    print(f"segmentation: seg_frames={seg.seg_frames} seg_hop_ms={seg.seg_hop_ms:g}")
    if flipped:
        print(f"label noise: {flipped} observed labels differ from clean labels")
    return EXIT_OK


def cmd_featurize(args) -> int:
    manifest = load_manifest(args.corpus)
    frame = load_config(args.config).frame if args.config else FrameSpec()
    out, errors = featurize_corpus(manifest, frame, args.out)
    print(f"featurized {len(out.rows)} utterances to {out.root}")
    if errors:
        for uid, msg in sorted(errors.items()):
            print(f"failed {uid}: {msg}", file=sys.stderr)
        print(f"error: {len(errors)} utterance(s) failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def _apply_run_overrides(cfg, args):
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.generations is not None:
        updates["generations"] = args.generations
    if args.folds is not None:
        updates["folds"] = args.folds
    if args.mode is not None:
        updates["mode"] = args.mode
    if args.out is not None:
        updates["output_dir"] = str(args.out)
    return replace(cfg, **updates) if updates else cfg


def cmd_run(args) -> int:
    cfg = _apply_run_overrides(load_config(args.config), args)
    if args.describe:
        doc = config_to_dict(cfg)
        doc["derived_seeds"] = cfg.derived_seeds()
        print(json.dumps(doc, indent=2, sort_keys=True))
        return EXIT_OK
    metrics = run_experiment(args.corpus, cfg, resume=not args.no_resume)
    for gen in metrics["generations"]:
        line = (f"gen {gen['generation']}: WA {gen['wa']:.4f} UA {gen['ua']:.4f} "
                f"mean EP entropy {gen['mean_ep_entropy']:.4f}")
        if "wa_clean" in gen:
            line += f" (clean-label WA {gen['wa_clean']:.4f} UA {gen['ua_clean']:.4f})"
        print(line)
    print(f"run artifacts in {cfg.output_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.run) / "metrics.json"
    if not path.exists():
        raise DataError(f"no metrics report at {path}; has the run finished?")
    metrics = read_metrics_report(path)
    generations = metrics["generations"]
    if args.generation is not None:
        generations = [g for g in generations if g["generation"] == args.generation]
        if not generations:
            raise DataError(f"run has no generation {args.generation}")
    print(f"mode {metrics['mode']}, classes: {', '.join(metrics['class_names'])}")
    for gen in generations:
        line = (f"gen {gen['generation']}: WA {gen['wa']:.4f} UA {gen['ua']:.4f} "
                f"mean EP entropy {gen['mean_ep_entropy']:.4f}")
        if "wa_clean" in gen:
            line += f" (clean-label WA {gen['wa_clean']:.4f} UA {gen['ua_clean']:.4f})"
        print(line)
    return EXIT_OK


def cmd_export_ep(args) -> int:
    n = export_ep_evolution(args.run, args.utterance, args.out)
    print(f"wrote {n} EP rows for {args.utterance} to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emorefinery",
        description="Segment-level emotion profiles with iterative label refinement.")
    parser.add_argument("--verbose", action="store_true", help="debug-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--spec", required=True, help="corpus spec JSON")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("featurize", help="convert a corpus to stored spectrograms")
    p.add_argument("--corpus", required=True, help="corpus directory or manifest path")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--config", default=None, help="experiment config supplying the frame spec")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("run", help="run the refinement pipeline")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--corpus", required=True, help="corpus directory or manifest path")
    p.add_argument("--out", default=None, help="override the config output_dir")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--generations", type=int, default=None, help="override generation count")
    p.add_argument("--folds", type=int, default=None, help="override refinement fold count")
    p.add_argument("--mode", default=None, help="override the refinement mode")
    p.add_argument("--no-resume", action="store_true",
                   help="recompute every generation even if artifacts exist")
    p.add_argument("--describe", action="store_true",
                   help="print the resolved config and derived seeds, then exit")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="print metrics of a finished run")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--generation", type=int, default=None, help="single generation to show")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-ep", help="export one utterance's EPs across generations")
    p.add_argument("--run", required=True, help="run directory")
    p.add_argument("--utterance", required=True, help="utterance id")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_export_ep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    raise SystemExit(main())
