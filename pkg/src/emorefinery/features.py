"""Log-Mel feature extraction and fixed-size segmentation.

Raw audio goes through short-time framing, an FFT power spectrum, a
peak-normalized triangular mel filterbank, and a natural-log compression.
The resulting spectrogram is sliced into overlapping fixed-width segments
that serve as classifier inputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    """Mono PCM audio with samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    utterance_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise DataError(f"{self.utterance_id}: samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"{self.utterance_id}: non-finite samples")
        if self.sample_rate <= 0:
            raise DataError(f"{self.utterance_id}: sample_rate must be positive")


@dataclass(frozen=True)
class FrameSpec:
    """Short-time analysis parameters."""

    win_ms: float = 25.0
    hop_ms: float = 10.0
    fft_len: int = 512
    n_mels: int = 64

    def __post_init__(self):
        if self.win_ms <= 0 or self.hop_ms <= 0:
            raise ConfigError("window and hop must be positive")
        if self.hop_ms > self.win_ms:
            raise ConfigError("hop must not exceed the window length")
        if self.n_mels < 2:
            raise ConfigError("n_mels must be at least 2")

    def win_samples(self, sample_rate: int) -> int:
        return int(round(self.win_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass
class LogMelSpectrogram:
    """n_mels x F matrix of natural-log mel filterbank energies."""

    values: np.ndarray
    frame_times: np.ndarray  # frame-start offsets in ms
    utterance_id: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise DataError(f"{self.utterance_id}: spectrogram must be 2-D with >= 1 frame")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"{self.utterance_id}: non-finite spectrogram values")
        if self.frame_times.shape != (self.values.shape[1],):
            raise DataError(f"{self.utterance_id}: frame_times length mismatch")

    @property
    def n_mels(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SegmentSpec:
    """Fixed-width segmentation of a spectrogram.

    seg_hop_ms is corpus-dependent (30 ms for CASIA-style corpora, 10 ms
    for Emo-DB/SAVEE-style) and must be a positive multiple of the frame
    hop so segments start on frame boundaries.
    """

    seg_frames: int = 32
    seg_hop_ms: float = 30.0

    def __post_init__(self):
        if self.seg_frames < 1:
            raise ConfigError("seg_frames must be >= 1")
        if self.seg_hop_ms <= 0:
            raise ConfigError("seg_hop_ms must be positive")

    def hop_frames(self, frame: FrameSpec) -> int:
        ratio = self.seg_hop_ms / frame.hop_ms
        h = int(round(ratio))
        if h < 1 or abs(ratio - h) > 1e-9:
            raise ConfigError(
                f"seg_hop_ms={self.seg_hop_ms} is not a positive multiple of hop_ms={frame.hop_ms}"
            )
        return h


@dataclass
class Segment:
    """One n_mels x seg_frames slice of an utterance's spectrogram."""

    values: np.ndarray
    utterance_id: str
    index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"{self.utterance_id}[{self.index}]: segment must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"{self.utterance_id}[{self.index}]: non-finite segment values")
        if self.index < 0:
            raise DataError(f"{self.utterance_id}: segment index must be >= 0")


def frame_count(n_samples: int, sample_rate: int, spec: FrameSpec) -> int:
    """Number of full analysis windows that fit; tail samples are dropped."""
    win = spec.win_samples(sample_rate)
    hop = spec.hop_samples(sample_rate)
    if n_samples < win:
        raise DataError(f"utterance too short: {n_samples} samples < one {win}-sample window")
    return (n_samples - win) // hop + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(spec: FrameSpec, sample_rate: int) -> np.ndarray:
    """Center frequencies (Hz) of the n_mels filters, equally spaced on the
    mel scale between 0 Hz and Nyquist."""
    edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), spec.n_mels + 2)
    return mel_to_hz(edges)[1:-1]


def mel_filterbank(spec: FrameSpec, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, fft_len // 2 + 1).

    Filters are peak-normalized: each row's maximum weight is exactly 1.
    """
    if sample_rate <= 0:
        raise ConfigError("sample_rate must be positive")
    n_bins = spec.fft_len // 2 + 1
    bin_freqs = np.arange(n_bins) * sample_rate / spec.fft_len
    mel_edges = np.linspace(hz_to_mel(0.0), hz_to_mel(sample_rate / 2.0), spec.n_mels + 2)
    hz_edges = mel_to_hz(mel_edges)

    bank = np.zeros((spec.n_mels, n_bins))
    for i in range(spec.n_mels):
        lo, center, hi = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        rising = (bin_freqs - lo) / (center - lo)
        falling = (hi - bin_freqs) / (hi - center)
        bank[i] = np.maximum(0.0, np.minimum(rising, falling))
        peak = bank[i].max()
        if peak <= 0.0:
            raise ConfigError(
                f"mel filter {i} has no FFT bin support; "
                f"reduce n_mels or increase fft_len"
            )
        bank[i] /= peak
    return bank


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window of the given length."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


def log_mel_spectrogram(clip: AudioClip, spec: FrameSpec) -> LogMelSpectrogram:
    """Windowed FFT power spectrum through the mel filterbank, natural log.

    Frames are Hann-windowed, zero-padded to fft_len, and floored at
    LOG_FLOOR before the log so silence maps to ln(1e-10) instead of -inf.
    """
    win = spec.win_samples(clip.sample_rate)
    hop = spec.hop_samples(clip.sample_rate)
    if spec.fft_len < win:
        raise ConfigError(f"fft_len={spec.fft_len} shorter than window ({win} samples)")
    n_frames = frame_count(clip.samples.size, clip.sample_rate, spec)

    starts = np.arange(n_frames) * hop
    frames = clip.samples[starts[:, None] + np.arange(win)[None, :]]
    frames = frames * hann_window(win)[None, :]
    power = np.abs(np.fft.rfft(frames, n=spec.fft_len, axis=1)) ** 2

    bank = mel_filterbank(spec, clip.sample_rate)
    mel_energy = power @ bank.T
    values = np.log(np.maximum(mel_energy, LOG_FLOOR)).T

    frame_times = starts * 1000.0 / clip.sample_rate
    return LogMelSpectrogram(values=values, frame_times=frame_times, utterance_id=clip.utterance_id)


def segment_span_ms(frame: FrameSpec, seg: SegmentSpec) -> float:
    """Wall-clock duration covered by one segment."""
    return frame.hop_ms * (seg.seg_frames - 1) + frame.win_ms


def segment_spectrogram(
    s: LogMelSpectrogram, seg: SegmentSpec, frame: FrameSpec = FrameSpec()
) -> list[Segment]:
    """Slice a spectrogram into overlapping seg_frames-wide segments.

    Segment i covers frames [i*h, i*h + seg_frames) where h is the segment
    hop in frames; the spectrogram tail that does not fill a segment is
    dropped.
    """
    h = seg.hop_frames(frame)
    if s.n_frames < seg.seg_frames:
        raise DataError(
            f"{s.utterance_id}: utterance too short for one segment "
            f"({s.n_frames} frames < {seg.seg_frames})"
        )
    n = (s.n_frames - seg.seg_frames) // h + 1
    return [
        Segment(
            values=s.values[:, i * h : i * h + seg.seg_frames].copy(),
            utterance_id=s.utterance_id,
            index=i,
        )
        for i in range(n)
    ]


def load_wav(path, utterance_id: str | None = None) -> AudioClip:
    """Read a mono PCM WAV file (16-bit integer or 32-bit float).

    Integer samples are scaled to [-1, 1]; multi-channel or other sample
    formats are rejected.
    """
    from scipy.io import wavfile

    path = str(path)
    try:
        rate, data = wavfile.read(path)
    except Exception as exc:
        raise DataError(f"{path}: cannot read WAV file ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}; use int16 or float32")
    if data.size == 0:
        raise DataError(f"{path}: empty audio file")
    if utterance_id is None:
        import os

        utterance_id = os.path.splitext(os.path.basename(path))[0]
    return AudioClip(samples=samples, sample_rate=int(rate), utterance_id=utterance_id)
