"""Corpus manifest and spectrogram store tests."""

import json

import numpy as np
import pytest

from emorefinery.datagen import SyntheticCorpusSpec, generate_synthetic_corpus
from emorefinery.errors import ConfigError, DataError
from emorefinery.features import LogMelSpectrogram
from emorefinery.manifest import (
    CorpusManifest,
    ManifestRow,
    load_manifest,
    manifest_from_wav_tree,
    read_spectrogram_csv,
    save_manifest,
    write_spectrogram_csv,
    write_synthetic_corpus,
)

NAMES = ("angry", "happy", "neutral")


def row(uid, label="angry", observed="", kind="features"):
    return ManifestRow(utterance_id=uid, path=f"features/{uid}.csv", kind=kind,
                       label=label, speaker="spk0", observed_label=observed)


def spectrogram(rng, n_mels=5, n_frames=7, uid="u0"):
    return LogMelSpectrogram(values=rng.standard_normal((n_mels, n_frames)),
                             frame_times=np.arange(n_frames) * 10.0, utterance_id=uid)


class TestManifestRow:
    def test_rejects_unknown_kind(self):
        with pytest.raises(DataError, match="kind"):
            ManifestRow(utterance_id="u", path="p", kind="video", label="angry")

    def test_training_label_falls_back_to_clean(self):
        assert row("u").training_label == "angry"
        assert row("u", observed="happy").training_label == "happy"


class TestCorpusManifest:
    def test_rejects_duplicate_ids(self):
        with pytest.raises(DataError, match="duplicate"):
            CorpusManifest(class_names=NAMES, rows=[row("u0"), row("u0")], root=".")

    def test_rejects_label_outside_class_table(self):
        with pytest.raises(DataError, match="class table"):
            CorpusManifest(class_names=NAMES, rows=[row("u0", label="bored")], root=".")

    def test_rejects_observed_label_outside_class_table(self):
        with pytest.raises(DataError, match="class table"):
            CorpusManifest(class_names=NAMES, rows=[row("u0", observed="bored")], root=".")

    def test_rejects_empty_rows_and_tiny_class_table(self):
        with pytest.raises(DataError, match="utterances"):
            CorpusManifest(class_names=NAMES, rows=[], root=".")
        with pytest.raises(DataError, match="classes"):
            CorpusManifest(class_names=("angry",), rows=[row("u0")], root=".")

    def test_label_maps(self):
        m = CorpusManifest(class_names=NAMES,
                           rows=[row("u0"), row("u1", label="happy", observed="neutral")],
                           root=".")
        assert m.clean_labels() == {"u0": 0, "u1": 1}
        assert m.observed_labels() == {"u0": 0, "u1": 2}
        assert m.has_label_noise()


class TestSaveLoad:
    def test_round_trip(self, tmp_path):
        m = CorpusManifest(class_names=NAMES,
                           rows=[row("u1", label="happy"), row("u0", observed="neutral")],
                           root=tmp_path)
        save_manifest(m)
        loaded = load_manifest(tmp_path)
        assert loaded.class_names == NAMES
        assert {r.utterance_id for r in loaded.rows} == {"u0", "u1"}
        assert loaded.observed_labels() == m.observed_labels()
        assert loaded.root == tmp_path

    def test_load_accepts_manifest_path_or_directory(self, tmp_path):
        m = CorpusManifest(class_names=NAMES, rows=[row("u0")], root=tmp_path)
        path = save_manifest(m)
        assert load_manifest(path).rows == load_manifest(tmp_path).rows

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError, match="no manifest"):
            load_manifest(tmp_path)

    def test_rejects_foreign_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
        with pytest.raises(DataError, match="not a corpus manifest"):
            load_manifest(tmp_path)

    def test_rejects_unknown_version(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            json.dumps({"format": "emorefinery-corpus", "version": 99}))
        with pytest.raises(DataError, match="version"):
            load_manifest(tmp_path)


class TestSpectrogramStore:
    def test_exact_float_round_trip(self, tmp_path):
        s = spectrogram(np.random.default_rng(0))
        write_spectrogram_csv(tmp_path / "s.csv", s)
        loaded = read_spectrogram_csv(tmp_path / "s.csv", "u0")
        np.testing.assert_array_equal(loaded.values, s.values)
        np.testing.assert_array_equal(loaded.frame_times, s.frame_times)
        assert loaded.utterance_id == "u0"

    def test_rejects_foreign_csv(self, tmp_path):
        (tmp_path / "s.csv").write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="not a spectrogram"):
            read_spectrogram_csv(tmp_path / "s.csv", "u0")

    def test_rejects_headers_only(self, tmp_path):
        (tmp_path / "s.csv").write_text("frame_time_ms,m_1\n")
        with pytest.raises(DataError, match="no frames"):
            read_spectrogram_csv(tmp_path / "s.csv", "u0")


class TestSyntheticCorpusStore:
    def spec(self, **kw):
        base = dict(n_classes=3, utterances_per_class=2, segments_range=(2, 3),
                    n_mels=8, seg_frames=4, n_speakers=2, seed=5)
        base.update(kw)
        return SyntheticCorpusSpec(**base)

    def test_writes_loadable_corpus(self, tmp_path):
        spec = self.spec()
        utts = generate_synthetic_corpus(spec)
        m = write_synthetic_corpus(tmp_path, utts, spec.class_names)
        loaded = load_manifest(tmp_path)
        assert len(loaded.rows) == 6
        assert loaded.class_names == spec.class_names
        for u in utts:
            s = read_spectrogram_csv(tmp_path / f"features/{u.utterance_id}.csv",
                                     u.utterance_id)
            np.testing.assert_array_equal(s.values, u.spectrogram.values)

    def test_observed_label_stored_only_when_flipped(self, tmp_path):
        spec = self.spec(label_noise=0.4, utterances_per_class=5)
        utts = generate_synthetic_corpus(spec)
        m = write_synthetic_corpus(tmp_path, utts, spec.class_names)
        flipped = {u.utterance_id for u in utts if u.observed_label != u.label}
        assert flipped
        stored = {r.utterance_id for r in m.rows if r.observed_label}
        assert stored == flipped
        assert load_manifest(tmp_path).has_label_noise()

    def test_regeneration_is_byte_identical(self, tmp_path):
        spec = self.spec()
        for d in ("a", "b"):
            write_synthetic_corpus(tmp_path / d, generate_synthetic_corpus(spec),
                                   spec.class_names)
        for rel in ["manifest.json"] + [f"features/u{i:04d}_c{i // 2}.csv" for i in range(6)]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestFilenameManifestBuilders:
    @staticmethod
    def touch(root, *rels):
        for rel in rels:
            path = root / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(b"")

    def test_label_speaker_index_layout(self, tmp_path):
        self.touch(tmp_path, "angry_s1_001.wav", "angry_s2_002.wav", "happy_s1_001.wav")
        m = manifest_from_wav_tree(tmp_path, "label_speaker_index")
        assert m.class_names == ("angry", "happy")
        assert {r.utterance_id: (r.label, r.speaker, r.kind) for r in m.rows} == {
            "angry_s1_001": ("angry", "s1", "audio"),
            "angry_s2_002": ("angry", "s2", "audio"),
            "happy_s1_001": ("happy", "s1", "audio"),
        }
        assert load_manifest(tmp_path).rows == m.rows

    def test_speaker_text_letter_layout_with_label_map(self, tmp_path):
        self.touch(tmp_path, "03a01Fa.wav", "08b02Wb.wav")
        m = manifest_from_wav_tree(tmp_path, "speaker_text_letter",
                                   label_map={"F": "happy", "W": "angry"})
        by_id = {r.utterance_id: r for r in m.rows}
        assert by_id["03a01Fa"].label == "happy"
        assert by_id["03a01Fa"].speaker == "03"
        assert by_id["08b02Wb"].label == "angry"

    def test_speaker_dir_prefix_layout(self, tmp_path):
        self.touch(tmp_path, "DC/a01.wav", "DC/sa01.wav", "JE/a02.wav")
        m = manifest_from_wav_tree(tmp_path, "speaker_dir_prefix",
                                   label_map={"a": "angry", "sa": "sad"})
        by_id = {r.utterance_id: (r.label, r.speaker, r.path) for r in m.rows}
        assert by_id["DC_a01"] == ("angry", "DC", "DC/a01.wav")
        assert by_id["DC_sa01"] == ("sad", "DC", "DC/sa01.wav")
        assert by_id["JE_a02"] == ("angry", "JE", "JE/a02.wav")

    def test_explicit_class_table_and_callable_rule(self, tmp_path):
        self.touch(tmp_path, "x1.wav", "x2.wav")
        rule = lambda rel: ("neutral" if rel.stem == "x1" else "sad", "spk")
        m = manifest_from_wav_tree(tmp_path, rule, class_names=("sad", "neutral", "angry"))
        assert m.class_names == ("sad", "neutral", "angry")
        assert sorted(r.label for r in m.rows) == ["neutral", "sad"]

    def test_unknown_rule_name(self, tmp_path):
        self.touch(tmp_path, "a_b_1.wav")
        with pytest.raises(ConfigError, match="unknown filename rule"):
            manifest_from_wav_tree(tmp_path, "nope")

    def test_empty_tree_and_bad_stem(self, tmp_path):
        with pytest.raises(DataError, match="no .wav files"):
            manifest_from_wav_tree(tmp_path, "label_speaker_index")
        self.touch(tmp_path, "nolabel.wav")
        with pytest.raises(DataError, match="label_speaker_index"):
            manifest_from_wav_tree(tmp_path, "label_speaker_index")
