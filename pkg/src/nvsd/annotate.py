"""Frame-wise label generation via energy segmentation, plus a label audit.

A recording of one sound repeated with quiet gaps is segmented by thresholding
per-frame RMS at mean + 1 sigma (clip-level statistics); runs shorter than
3 frames (30 ms) are discarded. Segment boundaries are inflated when rendering
training targets so onset/offset frames carry positive labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioClip, FeatureMatrix, compute_features, frame_energies
from .errors import NvsdError
from .model import BACKGROUND, NUM_CLASSES, NUM_SOUNDS, SPEECH, ModelWeights, forward

MIN_SEGMENT_FRAMES = 3       # 30 ms
DEFAULT_INFLATE = 13         # half the 25-frame receptive field


@dataclass
class Segment:
    start_frame: int
    end_frame: int           # inclusive
    label: int               # 0..14

    def __post_init__(self):
        if self.end_frame < self.start_frame:
            raise NvsdError(f"segment end {self.end_frame} before start "
                            f"{self.start_frame}")

    @property
    def num_frames(self) -> int:
        return self.end_frame - self.start_frame + 1


@dataclass
class LabeledClip:
    clip: AudioClip
    feats: FeatureMatrix
    segments: list[Segment]
    frame_labels: np.ndarray     # (T, 17) targets

    @property
    def user(self) -> str:
        return self.clip.source.split("/")[0] if self.clip.source else ""


def _runs_above(mask: np.ndarray):
    """Yield (start, end_inclusive) for each maximal True run."""
    idx = np.flatnonzero(np.diff(np.concatenate([[0], mask.astype(np.int8), [0]])))
    for s, e in zip(idx[::2], idx[1::2]):
        yield int(s), int(e) - 1


def energy_segment(clip: AudioClip, label: int,
                   min_frames: int = MIN_SEGMENT_FRAMES) -> list[Segment]:
    """Segments where frame RMS exceeds mean + 1 sigma for >= min_frames."""
    energy = frame_energies(clip)
    thr = energy.mean() + energy.std()
    segments = []
    for s, e in _runs_above(energy > thr):
        if e - s + 1 >= min_frames:
            segments.append(Segment(s, e, label))
    return segments


def render_frame_labels(segments, T: int, cls: int | None = None,
                        inflate: int = DEFAULT_INFLATE,
                        num_classes: int = NUM_CLASSES) -> np.ndarray:
    """One-hot (T, 17) targets with each segment widened by `inflate` frames.

    cls overrides the segments' own labels when given. Rows outside all
    inflated segments stay all-zero ("silence").
    """
    labels = np.zeros((T, num_classes), dtype=np.float32)
    for seg in segments:
        c = cls if cls is not None else seg.label
        lo = max(0, seg.start_frame - inflate)
        hi = min(T - 1, seg.end_frame + inflate)
        if lo <= hi:
            labels[lo:hi + 1, c] = 1.0
    return labels


def label_background_clip(clip: AudioClip, speech_like: bool = False) -> LabeledClip:
    """Aggressor labeling: background on every frame; for speech-like clips the
    energy-active frames get the speech class instead."""
    feats = compute_features(clip)
    labels = np.zeros((feats.T, NUM_CLASSES), dtype=np.float32)
    labels[:, BACKGROUND] = 1.0
    if speech_like:
        energy = frame_energies(clip)
        thr = energy.mean() + energy.std()
        for s, e in _runs_above(energy > thr):
            if e - s + 1 >= MIN_SEGMENT_FRAMES:
                labels[s:e + 1, BACKGROUND] = 0.0
                labels[s:e + 1, SPEECH] = 1.0
    return LabeledClip(clip, feats, [], labels)


def annotate_clip(clip: AudioClip, cls: int,
                  inflate: int = DEFAULT_INFLATE) -> LabeledClip:
    feats = compute_features(clip)
    segments = energy_segment(clip, cls)
    labels = render_frame_labels(segments, feats.T, inflate=inflate)
    return LabeledClip(clip, feats, segments, labels)


# ---------------------------------------------------------------------------
# label files: JSON lines {audio_path, class, segments: [[start, end], ...]}

def write_labels(path, records) -> None:
    """records: iterable of (audio_path, cls, segments)."""
    with open(path, "w") as f:
        for audio_path, cls, segments in records:
            f.write(json.dumps({
                "audio_path": str(audio_path),
                "class": int(cls),
                "segments": [[s.start_frame, s.end_frame] for s in segments],
            }) + "\n")


def read_labels(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            segs = [Segment(s, e, rec["class"]) for s, e in rec["segments"]]
            out.append((rec["audio_path"], rec["class"], segs))
    return out


# ---------------------------------------------------------------------------
# pseudo-label audit

@dataclass
class AuditRecord:
    clip: LabeledClip
    given: int
    predicted: int
    confidence: float

    @property
    def flagged(self) -> bool:
        return self.predicted != self.given


def audit_labels(weights: ModelWeights, clips) -> list[AuditRecord]:
    """Compare each clip's given class against the model's reading.

    predicted = argmax over sound classes of the mean in-segment probability;
    confidence is that mean. Clips with zero segments are skipped. Results are
    sorted by descending confidence; deterministic given weights and clips.
    """
    records = []
    for lc in clips:
        if not lc.segments:
            continue
        probs, _ = forward(weights, lc.feats)
        mask = np.zeros(lc.feats.T, dtype=bool)
        for seg in lc.segments:
            mask[seg.start_frame:seg.end_frame + 1] = True
        mean_p = probs[mask, :NUM_SOUNDS].mean(axis=0)
        predicted = int(np.argmax(mean_p))
        given = lc.segments[0].label
        records.append(AuditRecord(lc, given, predicted, float(mean_p[predicted])))
    records.sort(key=lambda r: -r.confidence)
    return records
