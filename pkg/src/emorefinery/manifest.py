"""Corpus manifests and the per-utterance spectrogram feature store.

A corpus directory holds manifest.json plus one CSV per utterance. Rows
point at either raw audio ("audio") or precomputed log-Mel spectrograms
("features"); synthetic and real corpora are interchangeable downstream.
"""

import csv
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import LogMelSpectrogram

CORPUS_FORMAT = "emorefinery-corpus"
CORPUS_VERSION = 1
MANIFEST_NAME = "manifest.json"
ROW_KINDS = ("audio", "features")


@dataclass(frozen=True)
class ManifestRow:
    utterance_id: str
    path: str
    kind: str
    label: str
    speaker: str = ""
    observed_label: str = ""

    def __post_init__(self):
        if self.kind not in ROW_KINDS:
            raise DataError(f"{self.utterance_id!r}: row kind must be one of {ROW_KINDS}")

    @property
    def training_label(self) -> str:
        """Label the pipeline trains on; falls back to the clean label."""
        return self.observed_label or self.label


@dataclass(frozen=True)
class CorpusManifest:
    class_names: tuple
    rows: tuple
    root: Path

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "rows", tuple(self.rows))
        object.__setattr__(self, "root", Path(self.root))
        if len(self.class_names) < 2:
            raise DataError("manifest needs at least 2 classes")
        if not self.rows:
            raise DataError("manifest has no utterances")
        seen = set()
        for row in self.rows:
            if row.utterance_id in seen:
                raise DataError(f"duplicate utterance id {row.utterance_id!r}")
            seen.add(row.utterance_id)
            for label in (row.label, row.training_label):
                if label not in self.class_names:
                    raise DataError(f"{row.utterance_id!r}: label {label!r} not in class table")

    def label_index(self, name: str) -> int:
        return self.class_names.index(name)

    def clean_labels(self) -> dict:
        return {r.utterance_id: self.label_index(r.label) for r in self.rows}

    def observed_labels(self) -> dict:
        return {r.utterance_id: self.label_index(r.training_label) for r in self.rows}

    def has_label_noise(self) -> bool:
        return any(r.training_label != r.label for r in self.rows)


def save_manifest(manifest: CorpusManifest) -> Path:
    doc = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "class_names": list(manifest.class_names),
        "rows": [
            {"utterance_id": r.utterance_id, "path": r.path, "kind": r.kind,
             "label": r.label, "speaker": r.speaker, "observed_label": r.observed_label}
            for r in sorted(manifest.rows, key=lambda r: r.utterance_id)
        ],
    }
    path = manifest.root / MANIFEST_NAME
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(corpus_root) -> CorpusManifest:
    root = Path(corpus_root)
    path = root / MANIFEST_NAME if root.is_dir() else root
    if not path.exists():
        raise DataError(f"no manifest at {path}")
    doc = json.loads(path.read_text())
    if doc.get("format") != CORPUS_FORMAT:
        raise DataError(f"{path} is not a corpus manifest")
    if doc.get("version") != CORPUS_VERSION:
        raise DataError(f"unsupported corpus manifest version {doc.get('version')!r}")
    rows = [ManifestRow(utterance_id=r["utterance_id"], path=r["path"], kind=r["kind"],
                        label=r["label"], speaker=r.get("speaker", ""),
                        observed_label=r.get("observed_label", ""))
            for r in doc["rows"]]
    return CorpusManifest(class_names=tuple(doc["class_names"]), rows=rows, root=path.parent)


def _parse_label_speaker_index(rel: Path):
    """'{label}_{speaker}_{index}.wav' stems; first two tokens name the row."""
    parts = rel.stem.split("_")
    if len(parts) < 3:
        raise DataError(f"{rel}: expected a label_speaker_index stem")
    return parts[0], parts[1]


def _parse_speaker_text_letter(rel: Path):
    """'{speaker:2}{text:3}{letter}{version}.wav' stems; the letter names the class."""
    stem = rel.stem
    if len(stem) < 7:
        raise DataError(f"{rel}: expected a speaker_text_letter stem of >= 7 characters")
    return stem[5], stem[:2]


def _parse_speaker_dir_prefix(rel: Path):
    """'{speaker}/{prefix}{digits}.wav' paths; the alphabetic prefix names the class."""
    prefix = re.match(r"[A-Za-z]+", rel.stem)
    if prefix is None or len(rel.parts) < 2:
        raise DataError(f"{rel}: expected an alphabetic class prefix inside a speaker directory")
    return prefix.group(0), rel.parts[-2]


FILENAME_RULES = {
    "label_speaker_index": _parse_label_speaker_index,
    "speaker_text_letter": _parse_speaker_text_letter,
    "speaker_dir_prefix": _parse_speaker_dir_prefix,
}


def manifest_from_wav_tree(corpus_root, rule, label_map=None, class_names=None) -> CorpusManifest:
    """Build and save an audio-kind manifest from a WAV tree's naming convention.

    rule is a FILENAME_RULES name or a callable mapping a WAV's relative
    path to (label token, speaker). label_map translates tokens to class
    names; unmapped tokens are used verbatim. The class table defaults to
    the sorted set of labels encountered.
    """
    root = Path(corpus_root)
    if not root.is_dir():
        raise DataError(f"no corpus directory at {root}")
    if isinstance(rule, str):
        if rule not in FILENAME_RULES:
            raise ConfigError(f"unknown filename rule {rule!r}; known: {sorted(FILENAME_RULES)}")
        rule = FILENAME_RULES[rule]
    wavs = sorted(root.rglob("*.wav"))
    if not wavs:
        raise DataError(f"no .wav files under {root}")
    mapping = dict(label_map or {})
    rows = []
    for wav in wavs:
        rel = wav.relative_to(root)
        token, speaker = rule(rel)
        rows.append(ManifestRow(utterance_id="_".join(rel.with_suffix("").parts),
                                path=rel.as_posix(), kind="audio",
                                label=mapping.get(token, token), speaker=speaker))
    names = tuple(class_names) if class_names else tuple(sorted({r.label for r in rows}))
    manifest = CorpusManifest(class_names=names, rows=rows, root=root)
    save_manifest(manifest)
    return manifest


def write_spectrogram_csv(path, s: LogMelSpectrogram) -> None:
    """Frame-per-row CSV at full float precision."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_time_ms"] + [f"m_{i + 1}" for i in range(s.n_mels)])
        for j in range(s.n_frames):
            writer.writerow([f"{s.frame_times[j]:.17g}"]
                            + [f"{v:.17g}" for v in s.values[:, j]])


def read_spectrogram_csv(path, utterance_id: str) -> LogMelSpectrogram:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["frame_time_ms"]:
        raise DataError(f"{path} is not a spectrogram CSV")
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    if data.size == 0:
        raise DataError(f"{path} holds no frames")
    return LogMelSpectrogram(values=data[:, 1:].T, frame_times=data[:, 0],
                             utterance_id=utterance_id)


def write_synthetic_corpus(corpus_root, utterances, class_names) -> CorpusManifest:
    """Persist generated utterances as a features-kind corpus directory."""
    root = Path(corpus_root)
    (root / "features").mkdir(parents=True, exist_ok=True)
    names = tuple(class_names)
    rows = []
    for u in utterances:
        rel = f"features/{u.utterance_id}.csv"
        write_spectrogram_csv(root / rel, u.spectrogram)
        rows.append(ManifestRow(
            utterance_id=u.utterance_id, path=rel, kind="features",
            label=names[u.label], speaker=u.speaker,
            observed_label=names[u.observed_label] if u.observed_label != u.label else ""))
    manifest = CorpusManifest(class_names=names, rows=rows, root=root)
    save_manifest(manifest)
    return manifest
