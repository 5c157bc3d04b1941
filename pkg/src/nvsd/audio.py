"""Audio ingestion and the 64-bin log-mel frontend.

Frames 16 kHz mono audio with a 25 ms window and 10 ms hop (100 Hz frame
rate), applies a periodic Hann window, a 512-point FFT power spectrum, a
64-filter HTK-mel filterbank (20 Hz - 8 kHz, unit-peak triangles), and
natural-log compression with a 1e-10 energy floor.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .kernels import matmul_rows
from .errors import AudioFormatError, ShapeError, TooShortError, WeightFormatError

SAMPLE_RATE = 16000
WINDOW = 400          # 25 ms
HOP = 160             # 10 ms
NFFT = 512
NUM_BINS = 64
FMIN = 20.0
FMAX = 8000.0
ENERGY_FLOOR = 1e-10

FEATURE_MAGIC = b"NVSF"


def num_frames(num_samples: int) -> int:
    """Closed-form frame count for the 400/160 framing."""
    if num_samples < WINDOW:
        return 0
    return (num_samples - WINDOW) // HOP + 1


@dataclass
class AudioClip:
    samples: np.ndarray          # float, [-1, 1]
    sample_rate: int = SAMPLE_RATE
    source: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.sample_rate != SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate {self.sample_rate} != {SAMPLE_RATE}")
        if self.samples.ndim != 1:
            raise AudioFormatError("expected mono (1-D) samples")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("non-finite samples")
        if self.samples.size and (np.abs(self.samples) > 1.0).any():
            raise AudioFormatError("samples outside [-1, 1]")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class FeatureMatrix:
    frames: np.ndarray           # (T, 64) log-mel
    frame_rate: int = 100
    hop_ms: int = 10
    window_ms: int = 25

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != NUM_BINS:
            raise ShapeError(f"feature matrix must be T x {NUM_BINS}, "
                             f"got {self.frames.shape}")

    @property
    def T(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bins: int = NUM_BINS, nfft: int = NFFT,
                   sample_rate: int = SAMPLE_RATE,
                   fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    """Unit-peak triangular filters on the HTK mel scale, (num_bins, nfft//2+1)."""
    n_freqs = nfft // 2 + 1
    freqs = np.linspace(0.0, sample_rate / 2.0, n_freqs)
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_bins + 2)
    hz_pts = mel_to_hz(mel_pts)
    fb = np.zeros((num_bins, n_freqs), dtype=np.float64)
    for m in range(num_bins):
        lo, ctr, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        up = (freqs - lo) / (ctr - lo)
        down = (hi - freqs) / (hi - ctr)
        fb[m] = np.clip(np.minimum(up, down), 0.0, None)
    return fb.astype(np.float32)


def filter_center_freqs(num_bins: int = NUM_BINS,
                        fmin: float = FMIN, fmax: float = FMAX) -> np.ndarray:
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_bins + 2)
    return mel_to_hz(mel_pts)[1:-1]


_HANN = (0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)).astype(np.float32)
_FILTERBANK = mel_filterbank()


def _features_from_windows(windows: np.ndarray) -> np.ndarray:
    """windows: (T, 400) float32 -> (T, 64) log-mel float32."""
    windowed = windows * _HANN
    spec = np.fft.rfft(windowed.astype(np.float32), n=NFFT, axis=1)
    power = (spec.real ** 2 + spec.imag ** 2).astype(np.float32)
    mel = matmul_rows(power, _FILTERBANK)
    return np.log(np.maximum(mel, np.float32(ENERGY_FLOOR))).astype(np.float32)


def compute_features(clip: AudioClip) -> FeatureMatrix:
    """Full-clip log-mel features; deterministic, bit-identical per input."""
    x = clip.samples
    if x.size < WINDOW:
        raise TooShortError(
            f"need >= {WINDOW} samples for one 25 ms window, got {x.size}")
    T = num_frames(x.size)
    windows = np.lib.stride_tricks.sliding_window_view(x, WINDOW)[::HOP][:T]
    return FeatureMatrix(_features_from_windows(np.ascontiguousarray(windows)))


class StreamingFrontend:
    """Incremental frontend; emits frames as soon as 400 samples are buffered.

    Concatenated streamed output is bit-identical to compute_features on the
    concatenated samples. Single-threaded per instance.
    """

    def __init__(self):
        self._pending = np.zeros(0, dtype=np.float32)

    def push(self, samples: np.ndarray) -> np.ndarray:
        """Returns the (n, 64) log-mel rows newly completed by these samples."""
        x = np.concatenate([self._pending, np.asarray(samples, dtype=np.float32)])
        if x.size < WINDOW:
            self._pending = x
            return np.zeros((0, NUM_BINS), dtype=np.float32)
        n = num_frames(x.size)
        windows = np.lib.stride_tricks.sliding_window_view(x, WINDOW)[::HOP][:n]
        out = _features_from_windows(np.ascontiguousarray(windows))
        self._pending = x[n * HOP:]
        return out


def frame_energies(clip: AudioClip) -> np.ndarray:
    """Per-frame RMS amplitude over the same 400/160 framing as the features."""
    x = clip.samples
    if x.size < WINDOW:
        raise TooShortError(
            f"need >= {WINDOW} samples for one frame, got {x.size}")
    T = num_frames(x.size)
    windows = np.lib.stride_tricks.sliding_window_view(x, WINDOW)[::HOP][:T]
    return np.sqrt(np.mean(windows.astype(np.float64) ** 2, axis=1))


# ---------------------------------------------------------------------------
# WAV I/O (RIFF PCM16 mono 16 kHz only)

def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got "
                                   f"{wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit PCM")
        if wf.getframerate() != SAMPLE_RATE:
            raise AudioFormatError(
                f"{path}: expected {SAMPLE_RATE} Hz, got {wf.getframerate()}")
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return AudioClip(samples, SAMPLE_RATE, source=str(path))


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(SAMPLE_RATE)
        wf.writeframes(pcm.tobytes())


# ---------------------------------------------------------------------------
# Feature dump: "NVSF" + u32 T + u32 bins + u32 reserved, then f32 LE rows

def write_features(path, feats: FeatureMatrix) -> None:
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", feats.T, NUM_BINS, 0))
        f.write(feats.frames.astype("<f4").tobytes())


def read_features(path) -> FeatureMatrix:
    with open(path, "rb") as f:
        header = f.read(16)
        if len(header) < 16 or header[:4] != FEATURE_MAGIC:
            raise WeightFormatError(f"{path}: bad feature-file magic")
        T, bins, _ = struct.unpack("<III", header[4:])
        if bins != NUM_BINS:
            raise WeightFormatError(f"{path}: expected {NUM_BINS} bins, got {bins}")
        data = f.read(T * bins * 4)
        if len(data) != T * bins * 4:
            raise WeightFormatError(f"{path}: truncated feature payload")
    frames = np.frombuffer(data, dtype="<f4").reshape(T, bins)
    return FeatureMatrix(frames.copy())
