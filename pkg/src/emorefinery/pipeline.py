"""End-to-end run orchestration with per-generation persistence.

A run directory accumulates one subdirectory per refinement generation,
each holding the fold-out emotion profiles, the fold models, the derived
utterance representations, cross-validated forest predictions, and a
metrics report. Generations are written atomically (tmp dir then rename)
so an interrupted run resumes at the first missing generation.
"""

import json
import logging
import os
import shutil
from dataclasses import replace
from pathlib import Path

from .classifier import save_model
from .config import ExperimentConfig, config_to_dict
from .decision import predict_forest, train_forest, write_predictions_csv
from .errors import DataError, EmoRefineryError
from .evaluation import (confusion_from_predictions, kfold_split, unweighted_accuracy,
                         weighted_accuracy, write_confusion_csv, write_metrics_report)
from .features import log_mel_spectrogram, load_wav, segment_spectrogram
from .manifest import (CorpusManifest, load_manifest, read_spectrogram_csv,
                       save_manifest, write_spectrogram_csv)
from .refinery import (LabeledUtterance, derive_seed, foldout_purity_violations,
                       generate_eps_foldout, initial_labels, mean_ep_entropy,
                       next_targets, read_ep_csv, write_ep_csv)
from .representation import representations_for, write_representation_csv

logger = logging.getLogger(__name__)

RUN_FORMAT = "emorefinery-run"
RUN_VERSION = 1
RUN_MANIFEST_NAME = "run_manifest.json"
METRICS_NAME = "metrics.json"
GENERATIONS_DIR = "generations"


def _read_row_spectrogram(manifest: CorpusManifest, row, frame):
    src = manifest.root / row.path
    if row.kind == "audio":
        return log_mel_spectrogram(load_wav(src, row.utterance_id), frame)
    return read_spectrogram_csv(src, row.utterance_id)


def utterances_from_manifest(manifest: CorpusManifest, frame, segment,
                             use_observed: bool = True):
    """Segment every corpus row; returns (utterances, per-utterance errors)."""
    utterances = []
    errors = {}
    for row in manifest.rows:
        try:
            s = _read_row_spectrogram(manifest, row, frame)
            segments = segment_spectrogram(s, segment, frame)
            name = row.training_label if use_observed else row.label
            utterances.append(LabeledUtterance(
                utterance_id=row.utterance_id, label=manifest.label_index(name),
                segments=tuple(segments), speaker=row.speaker))
        except (EmoRefineryError, OSError, ValueError) as exc:
            errors[row.utterance_id] = str(exc)
    return utterances, errors


def featurize_corpus(manifest: CorpusManifest, frame, out_root):
    """Write a features-kind copy of a corpus; returns (manifest, errors)."""
    out_root = Path(out_root)
    (out_root / "features").mkdir(parents=True, exist_ok=True)
    rows = []
    errors = {}
    for row in manifest.rows:
        try:
            s = _read_row_spectrogram(manifest, row, frame)
        except (EmoRefineryError, OSError, ValueError) as exc:
            errors[row.utterance_id] = str(exc)
            continue
        rel = f"features/{row.utterance_id}.csv"
        write_spectrogram_csv(out_root / rel, s)
        rows.append(replace(row, path=rel, kind="features"))
    if not rows:
        raise DataError("no utterance in the corpus could be featurized")
    out = CorpusManifest(class_names=manifest.class_names, rows=rows, root=out_root)
    save_manifest(out)
    return out, errors


def cross_validated_predictions(reps, labels, class_names, forest_cfg, folds: int,
                                seed: int, groups=None) -> dict:
    """Out-of-fold forest predictions for every utterance.

    The fold plan depends only on (labels, folds, seed), so refinement
    generations evaluated with the same seed share test folds and their
    accuracies are directly comparable.
    """
    plan = kfold_split(labels, folds, seed, groups=groups,
                       grouping="speaker" if groups else "utterance")
    predictions = {}
    ids = sorted(labels)
    for fold in range(folds):
        train_ids = [u for u in ids if plan.assignments[u] != fold]
        cfg = replace(forest_cfg, seed=derive_seed(forest_cfg.seed, fold))
        forest = train_forest([reps[u] for u in train_ids],
                              [labels[u] for u in train_ids], cfg, class_names)
        for u in plan.members(fold):
            predictions[u] = predict_forest(forest, reps[u])
    return predictions


def _generation_metrics(eps, reps, manifest, cfg: ExperimentConfig, generation: int):
    observed = manifest.observed_labels()
    groups = None
    if cfg.group_by_speaker:
        groups = {r.utterance_id: r.speaker for r in manifest.rows}
    predictions = cross_validated_predictions(
        reps, observed, manifest.class_names, cfg.forest_config(),
        cfg.eval_folds, cfg.eval_seed(), groups=groups)
    ids = sorted(observed)
    cm = confusion_from_predictions([observed[u] for u in ids],
                                    [predictions[u] for u in ids], manifest.class_names)
    report = {
        "generation": generation,
        "mode": cfg.mode,
        "wa": weighted_accuracy(cm),
        "ua": unweighted_accuracy(cm),
        "mean_ep_entropy": mean_ep_entropy(eps),
        "n_utterances": len(ids),
        "confusion_matrix": cm.counts.tolist(),
    }
    if manifest.has_label_noise():
        clean = manifest.clean_labels()
        cm_clean = confusion_from_predictions([clean[u] for u in ids],
                                              [predictions[u] for u in ids],
                                              manifest.class_names)
        report["wa_clean"] = weighted_accuracy(cm_clean)
        report["ua_clean"] = unweighted_accuracy(cm_clean)
    return report, predictions, cm


def _write_generation_dir(tmp: Path, foldout, reps, report, predictions, cm, manifest):
    write_ep_csv(tmp / "eps.csv", foldout.eps)
    write_representation_csv(tmp / "representations.csv", reps)
    names = manifest.class_names
    observed = manifest.observed_labels()
    records = [(u, names[observed[u]], names[predictions[u]]) for u in sorted(predictions)]
    write_predictions_csv(tmp / "predictions.csv", records)
    write_confusion_csv(tmp / "confusion.csv", cm)
    write_metrics_report(tmp / METRICS_NAME, report)
    (tmp / "models").mkdir()
    for fold, model in enumerate(foldout.models):
        save_model(model, tmp / "models" / f"fold{fold:02d}.npz")
    audit = {
        "generation": foldout.generation,
        "folds": len(foldout.models),
        "fold_of": {u: int(f) for u, f in sorted(foldout.fold_of.items())},
        "training_segments_per_fold": [len(keys) for keys in foldout.training_keys],
        "violations": [],
    }
    (tmp / "foldout.json").write_text(json.dumps(audit, indent=2, sort_keys=True) + "\n")


def generation_dir(run_dir, t: int) -> Path:
    return Path(run_dir) / GENERATIONS_DIR / f"gen{t:02d}"


def _check_run_manifest(run_dir: Path, cfg: ExperimentConfig, manifest: CorpusManifest):
    path = run_dir / RUN_MANIFEST_NAME
    doc = {
        "format": RUN_FORMAT,
        "version": RUN_VERSION,
        "config": config_to_dict(cfg),
        "derived_seeds": cfg.derived_seeds(),
        "class_names": list(manifest.class_names),
        "n_utterances": len(manifest.rows),
        "label_noise_present": manifest.has_label_noise(),
    }
    if path.exists():
        previous = json.loads(path.read_text())
        if previous.get("config") != doc["config"]:
            raise DataError(
                f"{run_dir} holds a run with a different config; "
                "pass a fresh output directory or disable resume")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def run_experiment(corpus_root, cfg: ExperimentConfig, run_dir=None,
                   resume: bool = True) -> dict:
    """Full pipeline on a corpus directory; returns the metrics report."""
    manifest = load_manifest(corpus_root)
    run_dir = Path(run_dir) if run_dir is not None else Path(cfg.output_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if not resume and (run_dir / GENERATIONS_DIR).exists():
        shutil.rmtree(run_dir / GENERATIONS_DIR)
    _check_run_manifest(run_dir, cfg, manifest)
    (run_dir / GENERATIONS_DIR).mkdir(exist_ok=True)

    dataset, errors = utterances_from_manifest(manifest, cfg.frame, cfg.segment)
    if errors:
        listing = "; ".join(f"{u}: {msg}" for u, msg in sorted(errors.items()))
        raise DataError(f"{len(errors)} utterance(s) failed to featurize: {listing}")

    names = manifest.class_names
    rcfg = cfg.refinery_config()
    targets = {}
    for u in dataset:
        for i, dist in enumerate(initial_labels(u.label, u.n_segments, names)):
            targets[(u.utterance_id, i)] = dist

    gen_reports = []
    for t in range(1, cfg.generations + 1):
        gen_dir = generation_dir(run_dir, t)
        if resume and gen_dir.exists():
            logger.info("generation %d/%d already present, reusing", t, cfg.generations)
            eps = read_ep_csv(gen_dir / "eps.csv", names)
            report = json.loads((gen_dir / METRICS_NAME).read_text())
        else:
            logger.info("generation %d/%d: training %d fold models",
                        t, cfg.generations, cfg.folds)
            foldout = generate_eps_foldout(dataset, targets, rcfg, names, generation=t)
            violations = foldout_purity_violations(foldout, dataset)
            if violations:
                raise DataError(f"fold-out purity violated for {sorted(violations)}")
            eps = foldout.eps
            reps = representations_for(eps)
            report, predictions, cm = _generation_metrics(eps, reps, manifest, cfg, t)
            tmp = gen_dir.parent / f".gen{t:02d}.tmp"
            if tmp.exists():
                shutil.rmtree(tmp)
            tmp.mkdir(parents=True)
            _write_generation_dir(tmp, foldout, reps, report, predictions, cm, manifest)
            os.replace(tmp, gen_dir)
        logger.info("generation %d: WA %.4f UA %.4f entropy %.4f",
                    t, report["wa"], report["ua"], report["mean_ep_entropy"])
        gen_reports.append(report)
        if t < cfg.generations:
            targets = next_targets(eps, dataset, cfg.mode, names)

    metrics = {
        "format": "emorefinery-metrics",
        "version": RUN_VERSION,
        "mode": cfg.mode,
        "class_names": list(names),
        "generations": gen_reports,
    }
    write_metrics_report(run_dir / METRICS_NAME, metrics)
    return metrics


def export_ep_evolution(run_dir, utterance_id: str, out_path) -> int:
    """Concatenate one utterance's EP rows across all generations.

    Rows are copied verbatim from the per-generation CSVs, so exported
    values match the stored profiles byte for byte. Returns the number of
    rows written.
    """
    run_dir = Path(run_dir)
    gen_dirs = sorted((run_dir / GENERATIONS_DIR).glob("gen*")) \
        if (run_dir / GENERATIONS_DIR).exists() else []
    if not gen_dirs:
        raise DataError(f"{run_dir} holds no completed generations")
    header = None
    rows = []
    for gen_dir in gen_dirs:
        lines = (gen_dir / "eps.csv").read_text().splitlines()
        if header is None:
            header = lines[0]
        elif lines[0] != header:
            raise DataError(f"{gen_dir} EP header differs from earlier generations")
        rows.extend(line for line in lines[1:]
                    if line.split(",", 1)[0] == utterance_id)
    if not rows:
        raise DataError(f"utterance {utterance_id!r} not found in {run_dir}")
    Path(out_path).write_text("\n".join([header] + rows) + "\n")
    return len(rows)
