"""Seeded synthetic corpus: a desk-scale stand-in for real mouth-sound data.

Five sound classes span impulsive / broadband-low / tonal / noisy textures:
a damped-4kHz "click", a low 150 Hz "pop" burst, tones at 300 Hz and 2 kHz
(each with a second harmonic), and a high-pass hiss. Each clip repeats one
sound ~10 times with roughly a second of silence between instances, and
ground-truth segments are recorded at generation time, independent of the
energy annotator. Aggressors are pink noise, amplitude-modulated babble-like
noise (labeled speech), and chirps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter

from .annotate import DEFAULT_INFLATE, LabeledClip, Segment, render_frame_labels
from .audio import HOP, SAMPLE_RATE, AudioClip, compute_features
from .errors import NvsdError
from .model import BACKGROUND, NUM_CLASSES, SPEECH

# synthetic class id -> (name, head index)
SYNTH_CLASSES = [
    ("synth-click", 0),      # damped 4 kHz burst
    ("synth-pop", 1),        # low 150 Hz burst
    ("synth-tone300", 2),    # 300 Hz + harmonic
    ("synth-tone2000", 3),   # 2 kHz + harmonic
    ("synth-hiss", 4),       # high-pass noise
]


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    users: int = 12
    eval_users: int = 2
    repetitions: int = 10
    gap_s: float = 1.0
    gap_jitter_s: float = 0.2
    snr_db_range: tuple = (25.0, 40.0)
    shift_factor: float = 1.0          # frequency scaling for "shifted" users
    aggressor_clips: int = 9
    aggressor_duration_s: float = 20.0
    inflate: int = DEFAULT_INFLATE

    def __post_init__(self):
        if self.users <= 0 or self.users <= self.eval_users:
            raise NvsdError("need users > eval_users > 0 users")
        if self.repetitions <= 0:
            raise NvsdError("need at least one repetition")


def _tone(rng, dur_s, freq, shift):
    n = int(dur_s * SAMPLE_RATE)
    tt = np.arange(n) / SAMPLE_RATE
    f = freq * shift
    x = np.sin(2 * np.pi * f * tt) + 0.4 * np.sin(2 * np.pi * 2 * f * tt)
    # raised-cosine attack/release, 15 ms
    ramp = min(int(0.015 * SAMPLE_RATE), n // 2)
    env = np.ones(n)
    env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[-ramp:] = env[:ramp][::-1]
    return x * env


def _synth_instance(rng: np.random.Generator, synth_cls: int, shift: float):
    if synth_cls == 0:      # click: damped sine burst
        dur = rng.uniform(0.08, 0.12)
        n = int(dur * SAMPLE_RATE)
        tt = np.arange(n) / SAMPLE_RATE
        x = np.sin(2 * np.pi * 4000.0 * shift * tt) * np.exp(-tt / (dur / 1.5))
    elif synth_cls == 1:    # pop: low-frequency damped burst
        dur = rng.uniform(0.10, 0.14)
        n = int(dur * SAMPLE_RATE)
        tt = np.arange(n) / SAMPLE_RATE
        x = np.sin(2 * np.pi * 150.0 * shift * tt) * np.exp(-tt / (dur / 1.5))
    elif synth_cls == 2:
        x = _tone(rng, rng.uniform(0.15, 0.22), 300.0, shift)
    elif synth_cls == 3:
        x = _tone(rng, rng.uniform(0.15, 0.22), 2000.0, shift)
    elif synth_cls == 4:    # hiss: high-pass filtered noise
        dur = rng.uniform(0.15, 0.22)
        n = int(dur * SAMPLE_RATE)
        white = rng.standard_normal(n)
        # sharp high-pass keeps the hiss clear of broadband aggressors
        cutoff = min(5000.0 * shift, 0.45 * SAMPLE_RATE)
        b, a = butter(4, cutoff / (SAMPLE_RATE / 2), btype="highpass")
        x = lfilter(b, a, white)
        ramp = min(int(0.01 * SAMPLE_RATE), n // 2)
        x[:ramp] *= np.linspace(0, 1, ramp)
        x[-ramp:] *= np.linspace(1, 0, ramp)
    else:
        raise NvsdError(f"unknown synthetic class {synth_cls}")
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def _pink_noise(rng, n):
    """Pink noise: white noise through a 1/f-approximating IIR filter."""
    white = rng.standard_normal(n)
    b = [0.049922035, -0.095993537, 0.050612699, -0.004408786]
    a = [1.0, -2.494956002, 2.017265875, -0.522189400]
    x = lfilter(b, a, white)
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def generate_clip(spec: SynthSpec, user: int, synth_cls: int,
                  clip_idx: int = 0, shift: float | None = None) -> LabeledClip:
    """One user/class recording: `repetitions` instances with silent gaps.
    Ground-truth segments come from construction, not from energy analysis."""
    name, head_idx = SYNTH_CLASSES[synth_cls]
    rng = np.random.default_rng((spec.seed, 7, user, synth_cls, clip_idx))
    shift = spec.shift_factor if shift is None else shift
    user_shift = shift * rng.uniform(0.97, 1.03)
    snr_db = rng.uniform(*spec.snr_db_range)

    pieces = []
    segments = []
    cursor = 0
    for _ in range(spec.repetitions):
        gap = spec.gap_s + rng.uniform(-spec.gap_jitter_s, spec.gap_jitter_s)
        gap_n = int(gap * SAMPLE_RATE)
        pieces.append(np.zeros(gap_n))
        cursor += gap_n
        inst = _synth_instance(rng, synth_cls, user_shift)
        inst = inst * rng.uniform(0.4, 0.8)
        start, end = cursor, cursor + inst.size - 1
        segments.append(Segment(start // HOP, end // HOP, head_idx))
        pieces.append(inst)
        cursor += inst.size
    pieces.append(np.zeros(int(spec.gap_s * SAMPLE_RATE)))
    x = np.concatenate(pieces)

    sig_rms = np.sqrt(np.mean(x ** 2)) + 1e-12
    noise = rng.standard_normal(x.size) * sig_rms * 10 ** (-snr_db / 20.0)
    x = np.clip(x + noise, -1.0, 1.0)

    clip = AudioClip(x.astype(np.float32),
                     source=f"u{user:03d}/{name}/{clip_idx}")
    feats = compute_features(clip)
    segments = [s for s in segments if s.end_frame < feats.T]
    labels = render_frame_labels(segments, feats.T, inflate=spec.inflate)
    return LabeledClip(clip, feats, segments, labels)


def generate_aggressor(spec: SynthSpec, idx: int,
                       seed_salt: int = 0) -> LabeledClip:
    """Aggressor clip; kinds rotate pink-noise / babble-like / chirp."""
    rng = np.random.default_rng((spec.seed, 11, seed_salt, idx))
    n = int(spec.aggressor_duration_s * SAMPLE_RATE)
    kind = idx % 3
    if kind == 0:
        x = _pink_noise(rng, n) * rng.uniform(0.2, 0.5)
        speech_like = False
        source = f"aggr{seed_salt}/pink/{idx}"
    elif kind == 1:
        # babble-like: formant-ish tones with syllabic (4 Hz) AM
        tt = np.arange(n) / SAMPLE_RATE
        x = np.zeros(n)
        for f in rng.uniform(120, 2600, size=6):
            x += np.sin(2 * np.pi * f * tt + rng.uniform(0, 2 * np.pi))
        am = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(3, 5) * tt
                               + rng.uniform(0, 2 * np.pi)))
        x = x / np.max(np.abs(x)) * am * rng.uniform(0.3, 0.6)
        speech_like = True
        source = f"aggr{seed_salt}/babble/{idx}"
    else:
        tt = np.arange(n) / SAMPLE_RATE
        period = rng.uniform(2.0, 4.0)
        phase = (tt % period) / period
        freq = 100.0 * (60.0 ** phase)          # sweep 100 Hz .. 6 kHz
        x = np.sin(2 * np.pi * np.cumsum(freq) / SAMPLE_RATE)
        x *= rng.uniform(0.2, 0.5)
        speech_like = False
        source = f"aggr{seed_salt}/chirp/{idx}"
    clip = AudioClip(np.clip(x, -1, 1).astype(np.float32), source=source)
    from .annotate import label_background_clip
    lc = label_background_clip(clip, speech_like=speech_like)
    return lc


def generate_corpus(spec: SynthSpec):
    """Returns (train, eval, aggressors) lists of LabeledClip.

    Train and eval clips come from disjoint users (the last `eval_users`
    users are held out). Deterministic: same spec -> bit-identical audio.
    """
    train, evals = [], []
    n_classes = len(SYNTH_CLASSES)
    for user in range(spec.users):
        bucket = evals if user >= spec.users - spec.eval_users else train
        for synth_cls in range(n_classes):
            bucket.append(generate_clip(spec, user, synth_cls))
    aggressors = [generate_aggressor(spec, i) for i in range(spec.aggressor_clips)]
    return train, evals, aggressors


def generate_eval_aggressors(spec: SynthSpec, count: int | None = None):
    """Held-out noise, disjoint from the training aggressors by seed salt."""
    count = count or spec.aggressor_clips
    return [generate_aggressor(spec, i, seed_salt=1) for i in range(count)]
