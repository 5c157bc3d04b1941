"""From-scratch training: frame-wise BCE, analytic backprop, Adam.

Batches are sequences of T frames concatenated from randomly drawn clips,
half mouth-sound clips and half aggressors. Gradients are exact analytic
derivatives of the stable logit-space BCE; the canonical correctness check
is agreement with central finite differences (see tests).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import NvsdError, ShapeError
from .model import ModelSpec, ModelWeights, forward, init_weights


@dataclass
class TrainConfig:
    batch_frames: int = 1000
    aggressor_ratio: float = 0.5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout: float = 0.1
    epochs: int = 6
    seed: int = 0
    val_fraction: float = 0.1
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if not 0.0 <= self.aggressor_ratio <= 1.0:
            raise ValueError("aggressor_ratio must be in [0, 1]")


@dataclass
class TrainResult:
    weights: ModelWeights
    history: list            # per-epoch {"train_loss", "val_loss"}
    best_epoch: int
    aborted: bool = False


# ---------------------------------------------------------------------------
# loss

def bce_from_logits(logits: np.ndarray, targets: np.ndarray) -> float:
    """Mean over frames and classes of the binary cross entropy, computed
    stably in logit space."""
    if logits.shape != targets.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {targets.shape}")
    z, y = logits, targets
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(loss.mean())


def bce_loss(probs: np.ndarray, targets: np.ndarray) -> float:
    """BCE from probabilities (convenience; training uses logit space)."""
    if probs.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    return float(-(targets * np.log(p) + (1 - targets) * np.log1p(-p)).mean())


# ---------------------------------------------------------------------------
# backward pass

def _lrelu_grad(z, slope, dtype):
    return np.where(z >= 0, dtype(1.0), dtype(slope))


def backward(weights: ModelWeights, feats, targets: np.ndarray,
             dropout_rate: float = 0.0, dropout_seed: int = 0):
    """Loss and exact gradients of the mean BCE w.r.t. every tensor.

    The forward pass uses inverted dropout with masks derived from
    dropout_seed, so forward and backward share masks by construction.
    """
    spec = weights.spec
    t = weights.tensors
    probs, emb, cache = forward(weights, feats, return_cache=True,
                                dropout_rate=dropout_rate,
                                dropout_seed=dropout_seed)
    logits = cache["logits"]
    if not np.isfinite(logits).all():
        for i, blk in enumerate(cache["blocks"]):
            if not np.isfinite(blk["za"]).all():
                raise NvsdError(f"non-finite activations in block{i}.grouped")
        raise NvsdError("non-finite logits in head")
    if targets.shape != logits.shape:
        raise ShapeError(f"targets {targets.shape} vs logits {logits.shape}")
    loss = bce_from_logits(logits, targets)

    dtype = logits.dtype.type
    slope = spec.leaky_slope
    T, C = logits.shape
    grads: dict[str, np.ndarray] = {}

    dlogits = (probs - targets) / dtype(T * C)
    grads["head.w"] = (dlogits.T @ emb)[:, :, None]
    grads["head.b"] = dlogits.sum(axis=0)
    dh = dlogits @ t["head.w"][:, :, 0]

    masks = cache["masks"]           # [stem, (a, d) per block]
    for i in reversed(range(spec.num_blocks)):
        blk = cache["blocks"][i]
        ma, md = masks[1 + 2 * i], masks[2 + 2 * i]
        dd, dwu, dbu = kernels.conv1d_causal_backward(
            blk["d"], t[f"block{i}.up.w"], dh)
        grads[f"block{i}.up.w"] = dwu
        grads[f"block{i}.up.b"] = dbu
        if md is not None:
            dd = dd * md
        dzd = dd * _lrelu_grad(blk["zd"], slope, dtype)
        da, dwd, dbd = kernels.conv1d_causal_backward(
            blk["a"], t[f"block{i}.down.w"], dzd)
        grads[f"block{i}.down.w"] = dwd
        grads[f"block{i}.down.b"] = dbd
        if ma is not None:
            da = da * ma
        dza = da * _lrelu_grad(blk["za"], slope, dtype)
        dh_conv, dwg, dbg = kernels.conv1d_causal_backward(
            blk["h_in"], t[f"block{i}.grouped.w"], dza, spec.groups)
        grads[f"block{i}.grouped.w"] = dwg
        grads[f"block{i}.grouped.b"] = dbg
        dh = dh + dh_conv            # identity skip

    m0 = masks[0]
    if m0 is not None:
        dh = dh * m0
    dz0 = dh * _lrelu_grad(cache["z0"], slope, dtype)
    _, dw0, db0 = kernels.conv1d_causal_backward(cache["x"], t["stem.w"], dz0)
    grads["stem.w"] = dw0
    grads["stem.b"] = db0
    return loss, grads


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    def __init__(self, weights: ModelWeights, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8, param_filter=None):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        names = [n for n in weights.tensors
                 if param_filter is None or param_filter(n)]
        self.names = names
        self.m = {n: np.zeros_like(weights.tensors[n]) for n in names}
        self.v = {n: np.zeros_like(weights.tensors[n]) for n in names}
        self.step_count = 0

    def step(self, weights: ModelWeights, grads: dict):
        self.step_count += 1
        bc1 = 1.0 - self.b1 ** self.step_count
        bc2 = 1.0 - self.b2 ** self.step_count
        for n in self.names:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1 - self.b2) * g * g
            mhat = self.m[n] / bc1
            vhat = self.v[n] / bc2
            w = weights.tensors[n]
            w -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(w.dtype)


# ---------------------------------------------------------------------------
# batch composition

def compose_sequence(rng: np.random.Generator, mouth, aggressors,
                     batch_frames: int, aggressor_ratio: float):
    """One training sequence: mouth-clip frames then aggressor frames,
    trimmed so the aggressor share is exact."""
    n_agg = int(round(batch_frames * aggressor_ratio)) if aggressors else 0
    n_mouth = batch_frames - n_agg

    def fill(pool, n):
        xs, ys, have = [], [], 0
        while have < n:
            lc = pool[rng.integers(len(pool))]
            xs.append(lc.feats.frames)
            ys.append(lc.frame_labels)
            have += lc.feats.T
        x = np.concatenate(xs)[:n]
        y = np.concatenate(ys)[:n]
        return x, y

    parts = []
    if n_mouth:
        parts.append(fill(mouth, n_mouth))
    if n_agg:
        parts.append(fill(aggressors, n_agg))
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    return x, y


def split_by_user(corpus, val_fraction: float, seed: int):
    """Hold out a seeded fraction of users (clip.source prefix) for validation."""
    users = sorted({lc.user for lc in corpus})
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(users))
    n_val = max(1, int(round(len(users) * val_fraction))) if len(users) > 1 else 0
    val_users = {users[i] for i in perm[:n_val]}
    train = [lc for lc in corpus if lc.user not in val_users]
    val = [lc for lc in corpus if lc.user in val_users]
    return train, val


def train(corpus, aggressors, cfg: TrainConfig,
          spec: ModelSpec | None = None, log=None) -> TrainResult:
    """Full training run; deterministic given cfg.seed. Returns the weights
    with the best validation loss (training loss when no split is possible)."""
    if not corpus:
        raise NvsdError("empty training corpus")
    spec = spec or ModelSpec()
    weights = init_weights(spec, seed=cfg.seed)
    opt = Adam(weights, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    train_clips, val_clips = split_by_user(corpus, cfg.val_fraction, cfg.seed)
    if not train_clips:
        train_clips, val_clips = corpus, []

    mouth_frames = sum(lc.feats.T for lc in train_clips)
    ratio = cfg.aggressor_ratio if aggressors else 0.0
    steps = cfg.steps_per_epoch or max(
        1, int(np.ceil(mouth_frames / (cfg.batch_frames * (1.0 - ratio or 1.0)))))

    def val_loss(w):
        pool = val_clips or train_clips
        losses = []
        for lc in pool:
            probs, _, cache = forward(w, lc.feats, return_cache=True)
            losses.append(bce_from_logits(cache["logits"], lc.frame_labels))
        return float(np.mean(losses))

    history = []
    best = (np.inf, weights.copy(), 0)
    last_good = weights.copy()
    aborted = False
    global_step = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng((cfg.seed, epoch))
        epoch_losses = []
        for _ in range(steps):
            x, y = compose_sequence(rng, train_clips, aggressors,
                                    cfg.batch_frames, ratio)
            drop_seed = cfg.seed * 1_000_003 + global_step
            loss, grads = backward(weights, x, y, cfg.dropout, drop_seed)
            if not np.isfinite(loss):
                aborted = True
                break
            opt.step(weights, grads)
            epoch_losses.append(loss)
            global_step += 1
        if aborted:
            weights = last_good
            break
        last_good = weights.copy()
        vloss = val_loss(weights)
        history.append({"epoch": epoch,
                        "train_loss": float(np.mean(epoch_losses)),
                        "val_loss": vloss})
        if log:
            log(f"epoch {epoch}: train {np.mean(epoch_losses):.4f} "
                f"val {vloss:.4f}")
        if vloss < best[0]:
            best = (vloss, weights.copy(), epoch)
    return TrainResult(best[1] if not aborted else weights, history,
                       best[2], aborted)
