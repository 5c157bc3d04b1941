"""Few-shot personalization: fine-tune selected head rows over frozen embeddings.

Only the 1x1 head kernel rows (and bias entries) of the enrolled classes are
updated; the trunk and all other head rows stay byte-identical, so behavior
on non-enrolled classes is unchanged. Positives come from the enrollment
clip's inflated segments (the first `shots` of them); negatives are the
clip's silence frames plus a fixed budget of synthetic aggressor frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotate import DEFAULT_INFLATE, LabeledClip, render_frame_labels
from .errors import EnrollmentError, NvsdError
from .events import PostProcConfig, process
from .metrics import EvalReport, segmental_score
from .model import ModelWeights, forward, head_logits, _sigmoid
from .train import Adam, bce_from_logits


@dataclass
class FitHeadConfig:
    steps: int = 200
    lr: float = 1e-2
    aggressor_seconds: float = 60.0
    inflate: int = DEFAULT_INFLATE
    seed: int = 0
    plateau_patience: int = 25
    plateau_delta: float = 1e-5


def _aggressor_embeddings(weights: ModelWeights, seconds: float, seed: int):
    from .synthbench import SynthSpec, generate_aggressor
    spec = SynthSpec(seed=seed, aggressor_duration_s=min(seconds, 20.0))
    embs = []
    need = int(seconds * 100)
    i = 0
    while sum(e.shape[0] for e in embs) < need:
        lc = generate_aggressor(spec, i, seed_salt=9)
        _, emb = forward(weights, lc.feats)
        embs.append(emb)
        i += 1
    return np.concatenate(embs)[:need]


def fit_head(weights: ModelWeights, enrollment: LabeledClip, classes,
             shots: int = 5, cfg: FitHeadConfig | None = None) -> ModelWeights:
    """Returns new weights whose head rows for `classes` were fine-tuned on
    the enrollment clip; everything else is bit-identical. shots=0 is a no-op.
    """
    cfg = cfg or FitHeadConfig()
    classes = sorted(set(classes))
    if shots < 0:
        raise NvsdError("shots must be >= 0")
    if shots == 0:
        return weights.copy()
    usable = [s for s in enrollment.segments if s.label in classes]
    if not usable:
        raise EnrollmentError(
            f"no segments for classes {classes} in enrollment clip "
            f"(found {len(enrollment.segments)} segments of other classes)")

    # keep `shots` segments per class; frames of dropped segments are excluded
    kept, dropped = [], []
    per_class: dict[int, int] = {}
    for seg in usable:
        n = per_class.get(seg.label, 0)
        (kept if n < shots else dropped).append(seg)
        per_class[seg.label] = n + 1

    _, emb = forward(weights, enrollment.feats)
    T = emb.shape[0]
    pos = render_frame_labels(kept, T, inflate=cfg.inflate)
    exclude = np.zeros(T, dtype=bool)
    for seg in dropped:
        lo = max(0, seg.start_frame - cfg.inflate)
        exclude[lo:min(T, seg.end_frame + cfg.inflate + 1)] = True
    use = ~exclude

    agg_emb = _aggressor_embeddings(weights, cfg.aggressor_seconds, cfg.seed)
    x = np.concatenate([emb[use], agg_emb]).astype(np.float64)
    y = np.concatenate([pos[use][:, classes],
                        np.zeros((agg_emb.shape[0], len(classes)))]).astype(np.float64)

    out = weights.copy()
    wk = out.tensors["head.w"][classes, :, 0].astype(np.float64)   # (nc, N)
    bk = out.tensors["head.b"][classes].astype(np.float64)

    class _Rows:
        tensors = {"w": wk, "b": bk}
    opt = Adam(_Rows, lr=cfg.lr)
    n = x.shape[0] * y.shape[1]
    best_loss, since_best = np.inf, 0
    for _ in range(cfg.steps):
        z = x @ wk.T + bk
        p = _sigmoid(z)
        loss = bce_from_logits(z, y)
        dz = (p - y) / n
        opt.step(_Rows, {"w": dz.T @ x, "b": dz.sum(axis=0)})
        if loss < best_loss - cfg.plateau_delta:
            best_loss, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= cfg.plateau_patience:
                break

    dtype = out.tensors["head.w"].dtype
    out.tensors["head.w"][classes, :, 0] = wk.astype(dtype)
    out.tensors["head.b"][classes] = bk.astype(dtype)
    return out


def evaluate_personalization(generic: ModelWeights, personalized: ModelWeights,
                             heldout: LabeledClip, cls: int,
                             postproc: PostProcConfig | None = None):
    """(f1_before, f1_after) on the held-out clip, one-active, identical config."""
    if generic.spec != personalized.spec:
        raise NvsdError("generic and personalized models differ in spec")
    cfg = (postproc or PostProcConfig()).one_active(cls)

    def f1(w):
        probs, _ = forward(w, heldout.feats)
        rep = segmental_score(process(probs, cfg), heldout.segments,
                              duration_s=heldout.clip.duration_s)
        val = rep.f1[cls]
        return 0.0 if val is None else val

    return f1(generic), f1(personalized)
