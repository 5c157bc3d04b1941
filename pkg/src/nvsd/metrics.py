"""Segmental precision/recall/F1, confusion, FP/hour, and signed latency.

A truth segment counts as detected (TP) when at least one event of its class
falls within [start - tolerance, end + tolerance]; extra matching events and
events matching nothing are FPs. Latency is signed: (event frame - segment
end frame) * 10 ms, and may be negative for early detections.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import NvsdError
from .model import NUM_SOUNDS

MISSED = NUM_SOUNDS          # confusion column for "no event at all"
DEFAULT_TOLERANCE = 13       # frames; mirrors the training-label inflation


def _seg_tuple(seg):
    if isinstance(seg, tuple):
        return seg
    return (seg.start_frame, seg.end_frame, seg.label)


@dataclass
class EvalReport:
    tp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_SOUNDS, dtype=np.int64))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(NUM_SOUNDS, dtype=np.int64))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(NUM_SOUNDS, dtype=np.int64))
    confusion: np.ndarray = field(
        default_factory=lambda: np.zeros((NUM_SOUNDS, NUM_SOUNDS + 1), dtype=np.int64))
    latencies_ms: list = field(default_factory=list)
    duration_s: float = 0.0

    def _ratio(self, num, den):
        # 0/0 is reported as undefined (None), never silently 1.0
        return {c: (None if den[c] == 0 else float(num[c]) / float(den[c]))
                for c in range(NUM_SOUNDS)}

    @property
    def precision(self):
        return self._ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return self._ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        return self._ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    def macro_f1(self, classes=None):
        f1 = self.f1
        vals = [f1[c] for c in (classes or range(NUM_SOUNDS)) if f1[c] is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def fp_per_hour(self):
        if self.duration_s <= 0:
            return None
        return 3600.0 * float(self.fp.sum()) / self.duration_s

    @property
    def fp_per_hour_by_class(self):
        if self.duration_s <= 0:
            return None
        return {c: 3600.0 * float(self.fp[c]) / self.duration_s
                for c in range(NUM_SOUNDS)}

    @property
    def latency_mean_ms(self):
        if not self.latencies_ms:
            return None
        return float(np.mean(self.latencies_ms))

    @property
    def latency_std_ms(self):
        if not self.latencies_ms:
            return None
        return float(np.std(self.latencies_ms))

    def success(self, cls: int, threshold: float = 0.5) -> bool:
        """Per-user success summarizer: F1 for cls at or above threshold."""
        f1 = self.f1[cls]
        return f1 is not None and f1 >= threshold

    def to_dict(self, class_names=None) -> dict:
        def named(d):
            if d is None:
                return None
            if class_names:
                return {class_names[c]: v for c, v in d.items()}
            return {str(c): v for c, v in d.items()}
        return {
            "precision": named(self.precision),
            "recall": named(self.recall),
            "f1": named(self.f1),
            "macro_f1": self.macro_f1(),
            "tp": named({c: int(v) for c, v in enumerate(self.tp)}),
            "fp": named({c: int(v) for c, v in enumerate(self.fp)}),
            "fn": named({c: int(v) for c, v in enumerate(self.fn)}),
            "confusion": self.confusion.tolist(),
            "fp_per_hour": self.fp_per_hour,
            "fp_per_hour_by_class": named(self.fp_per_hour_by_class),
            "latency_mean_ms": self.latency_mean_ms,
            "latency_std_ms": self.latency_std_ms,
            "duration_s": self.duration_s,
        }

    def to_json(self, class_names=None) -> str:
        return json.dumps(self.to_dict(class_names), indent=2)

    def to_table(self, class_names=None) -> str:
        names = class_names or [str(c) for c in range(NUM_SOUNDS)]
        p, r, f = self.precision, self.recall, self.f1
        lines = [f"{'class':<12}{'prec':>8}{'rec':>8}{'F1':>8}"
                 f"{'TP':>6}{'FP':>6}{'FN':>6}"]
        def fmt(v):
            return "   -  " if v is None else f"{v:6.3f}"
        for c in range(NUM_SOUNDS):
            if self.tp[c] + self.fp[c] + self.fn[c] == 0:
                continue
            lines.append(f"{names[c]:<12}{fmt(p[c]):>8}{fmt(r[c]):>8}"
                         f"{fmt(f[c]):>8}{self.tp[c]:>6}{self.fp[c]:>6}"
                         f"{self.fn[c]:>6}")
        if self.fp_per_hour is not None:
            lines.append(f"FP/hour: {self.fp_per_hour:.3f}")
        if self.latency_mean_ms is not None:
            lines.append(f"latency: {self.latency_mean_ms:.0f} "
                         f"+/- {self.latency_std_ms:.0f} ms")
        return "\n".join(lines)


def segmental_score(events, truth_segments, tolerance: int = DEFAULT_TOLERANCE,
                    duration_s: float = 0.0) -> EvalReport:
    """Score one clip's events against its truth segments."""
    segs = sorted((_seg_tuple(s) for s in truth_segments), key=lambda s: s[0])
    for a, b in zip(segs, segs[1:]):
        if b[0] <= a[1]:
            raise NvsdError(f"overlapping truth segments {a} and {b}")
    report = EvalReport(duration_s=duration_s)
    evs = sorted(events, key=lambda e: e.frame)
    consumed = [False] * len(evs)

    for start, end, cls in segs:
        lo, hi = start - tolerance, end + tolerance
        match = None
        for i, ev in enumerate(evs):
            if consumed[i] or ev.cls != cls:
                continue
            if lo <= ev.frame <= hi:
                match = i
                break
        if match is not None:
            consumed[match] = True
            report.tp[cls] += 1
            report.confusion[cls][cls] += 1
            report.latencies_ms.append((evs[match].frame - end) * 10.0)
        else:
            report.fn[cls] += 1
            wrong = next((ev for ev in evs if lo <= ev.frame <= hi), None)
            report.confusion[cls][wrong.cls if wrong else MISSED] += 1

    for i, ev in enumerate(evs):
        if not consumed[i]:
            report.fp[ev.cls] += 1
    return report


def aggregate_reports(reports) -> EvalReport:
    """Merge per-clip reports; permutation-invariant in clip order."""
    out = EvalReport()
    for r in reports:
        out.tp += r.tp
        out.fp += r.fp
        out.fn += r.fn
        out.confusion += r.confusion
        out.latencies_ms.extend(r.latencies_ms)
        out.duration_s += r.duration_s
    out.latencies_ms.sort()
    return out


def fp_per_hour(events, duration_s: float):
    """FP rate on aggressor-only audio: (overall, per-class dict)."""
    if duration_s <= 0:
        raise NvsdError("duration must be positive")
    events = list(events)
    per_class = {c: 0 for c in range(NUM_SOUNDS)}
    for ev in events:
        per_class[ev.cls] += 1
    scale = 3600.0 / duration_s
    return (scale * len(events), {c: scale * n for c, n in per_class.items()})


def latency_stats(events, truth_segments, tolerance: int = DEFAULT_TOLERANCE):
    """(mean_ms, std_ms) over TP pairs, or None when there are no TPs."""
    rep = segmental_score(events, truth_segments, tolerance)
    if not rep.latencies_ms:
        return None
    return rep.latency_mean_ms, rep.latency_std_ms
