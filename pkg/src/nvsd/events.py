"""Sparse-event post-processing over per-frame class probabilities.

An event (c, t) is emitted when class c stayed above its threshold theta_c
for its last tau_c frames, no background/speech probability exceeded theta_bg
in the last R frames (inclusive of the current one), and no event of any
class fired in the last R frames. R defaults to 50 frames (500 ms).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ShapeError
from .model import BACKGROUND, NUM_CLASSES, NUM_SOUNDS, SPEECH

REFRACTORY = 50

THETA_GRID = [0.40, 0.45, 0.50, 0.55, 0.60]
TAU_GRID = list(range(7, 16))
THETA_BG_GRID = [0.30, 0.35, 0.40, 0.45, 0.50, 0.55, 0.60, 0.65, 0.70]


@dataclass(frozen=True)
class Event:
    cls: int          # 0..14
    frame: int

    @property
    def time_ms(self) -> int:
        return self.frame * 10

    def to_json(self, class_names=None) -> str:
        name = class_names[self.cls] if class_names else self.cls
        return json.dumps({"class": name, "frame": self.frame,
                           "time_ms": self.time_ms})


@dataclass
class PostProcConfig:
    theta: list[float] = field(default_factory=lambda: [0.5] * NUM_SOUNDS)
    tau: list[int] = field(default_factory=lambda: [10] * NUM_SOUNDS)
    theta_bg: float = 0.5
    refractory: int = REFRACTORY
    active_mask: list[bool] = field(default_factory=lambda: [True] * NUM_SOUNDS)
    # optional extra-robustness mode: hold each event until silence_frames
    # consecutive frames with every sound probability below its theta
    require_silence: bool = False
    silence_frames: int = 30

    def __post_init__(self):
        for th in list(self.theta) + [self.theta_bg]:
            if not 0.0 < th < 1.0:
                raise ValueError(f"threshold {th} outside (0, 1)")
        if any(t < 1 for t in self.tau):
            raise ValueError("tau must be >= 1")
        if self.refractory < 0:
            raise ValueError("refractory must be >= 0")

    def one_active(self, cls: int) -> "PostProcConfig":
        mask = [False] * NUM_SOUNDS
        mask[cls] = True
        return replace(self, active_mask=mask)

    def to_dict(self) -> dict:
        return {"theta": list(self.theta), "tau": list(self.tau),
                "theta_bg": self.theta_bg, "refractory": self.refractory,
                "active_mask": list(self.active_mask),
                "require_silence": self.require_silence,
                "silence_frames": self.silence_frames}

    @classmethod
    def from_dict(cls, d: dict) -> "PostProcConfig":
        return cls(**d)


class Detector:
    """Stateful per-stream post-processor; feed rows in frame order."""

    def __init__(self, cfg: PostProcConfig):
        self.cfg = cfg
        self.frame = -1
        self._runs = np.zeros(NUM_SOUNDS, dtype=np.int64)   # consecutive p>theta
        self._last_bg = -(10 ** 9)       # last frame where bg/speech > theta_bg
        self._last_event = -(10 ** 9)
        maxtau = max(cfg.tau) if cfg.tau else 1
        self._hist = np.zeros((maxtau, NUM_SOUNDS), dtype=np.float64)
        self._pending: Event | None = None
        self._silence_run = 0

    def step(self, probs_row) -> Event | None:
        row = np.asarray(probs_row, dtype=np.float64)
        if row.shape != (NUM_CLASSES,):
            raise ShapeError(f"expected {NUM_CLASSES} probabilities, "
                             f"got shape {row.shape}")
        cfg = self.cfg
        self.frame += 1
        t = self.frame
        sounds = row[:NUM_SOUNDS]
        theta = np.asarray(cfg.theta)
        above = sounds > theta
        self._runs = np.where(above, self._runs + 1, 0)
        if max(row[BACKGROUND], row[SPEECH]) > cfg.theta_bg:
            self._last_bg = t
        hist = self._hist
        hist[t % hist.shape[0]] = sounds

        if cfg.require_silence:
            if above.any():
                self._silence_run = 0
            else:
                self._silence_run += 1

        event = None
        suppressed = (t - self._last_bg < cfg.refractory or
                      t - self._last_event < cfg.refractory)
        if not suppressed:
            best = None
            for c in range(NUM_SOUNDS):
                if not cfg.active_mask[c]:
                    continue
                tau = cfg.tau[c]
                if self._runs[c] >= tau and t + 1 >= tau:
                    idx = (t - np.arange(tau)) % hist.shape[0]
                    mean_p = hist[idx, c].mean()
                    if best is None or mean_p > best[0]:
                        best = (mean_p, c)
            if best is not None:
                event = Event(best[1], t)
                self._last_event = t

        if cfg.require_silence:
            if event is not None:
                self._pending = event
                event = None
            if (self._pending is not None and
                    self._silence_run >= cfg.silence_frames):
                event = self._pending
                self._pending = None
        return event

    def process(self, probs: np.ndarray) -> list[Event]:
        out = []
        for row in np.asarray(probs):
            ev = self.step(row)
            if ev is not None:
                out.append(ev)
        return out


def process(probs: np.ndarray, cfg: PostProcConfig) -> list[Event]:
    """Batch post-processing: fold of Detector.step over rows."""
    return Detector(cfg).process(probs)


# ---------------------------------------------------------------------------
# per-class parameter search

def optimize(eval_items, aggressor_items, lambda_fp: float = 0.01,
             lambda_lat: float = 0.1, theta_grid=THETA_GRID, tau_grid=TAU_GRID,
             theta_bg_grid=THETA_BG_GRID,
             base: PostProcConfig | None = None) -> PostProcConfig:
    """Grid-search per-class theta/tau, then a global theta_bg.

    eval_items: [(probs, truth_segments, duration_s)] with segments as
    (start_frame, end_frame, cls). aggressor_items: [(probs, duration_s)].
    Objective per class (one-active): F1 - lambda_fp * FP/hour
    - lambda_lat * mean positive latency in seconds. Ties keep the earliest
    grid point, so the smallest tau wins among equal-theta ties.
    """
    from .metrics import aggregate_reports, segmental_score

    if not eval_items:
        raise ValueError("empty evaluation set")
    cfg = PostProcConfig.from_dict((base or PostProcConfig()).to_dict())
    classes = sorted({s[2] for _, segs, _ in eval_items for s in segs})

    def class_objective(c, theta_c, tau_c, theta_bg):
        trial = PostProcConfig(theta=list(cfg.theta), tau=list(cfg.tau),
                               theta_bg=theta_bg).one_active(c)
        trial.theta[c] = theta_c
        trial.tau[c] = tau_c
        reports = []
        for probs, segs, dur in eval_items:
            evs = process(probs, trial)
            reports.append(segmental_score(evs, segs, duration_s=dur))
        rep = aggregate_reports(reports)
        fp_h = 0.0
        agg_dur = 0.0
        n_fp = 0
        for probs, dur in aggressor_items:
            n_fp += len(process(probs, trial))
            agg_dur += dur
        if agg_dur > 0:
            fp_h = 3600.0 * n_fp / agg_dur
        f1 = rep.f1.get(c) or 0.0
        lat = rep.latency_mean_ms
        lat_s = (lat / 1000.0) if lat is not None else 0.0
        return f1 - lambda_fp * fp_h - lambda_lat * lat_s

    for c in classes:
        best = None
        for theta_c in theta_grid:
            for tau_c in tau_grid:
                score = class_objective(c, theta_c, tau_c, cfg.theta_bg)
                if best is None or score > best[0]:
                    best = (score, theta_c, tau_c)
        cfg.theta[c] = best[1]
        cfg.tau[c] = best[2]

    best_bg = None
    for theta_bg in theta_bg_grid:
        total = sum(class_objective(c, cfg.theta[c], cfg.tau[c], theta_bg)
                    for c in classes)
        if best_bg is None or total > best_bg[0]:
            best_bg = (total, theta_bg)
    cfg.theta_bg = best_bg[1]
    return cfg
