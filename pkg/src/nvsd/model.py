"""Causal temporal convolutional network: definition, forward pass, weights I/O.

Layer stack: stem conv (k=5, N nodes) + LeakyReLU, then num_blocks residual
blocks of [grouped conv (k=5, g groups) -> LeakyReLU -> 1x1 bottleneck (N/4)
-> LeakyReLU -> 1x1 expand (N)] with an identity skip around the whole block,
then a 1x1 head to C=17 logits with sigmoid. All convolutions are causal
(left zero padding), so output row t sees input rows [t - rf + 1, t] only.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .audio import NUM_BINS, FeatureMatrix
from .errors import SessionClosedError, ShapeError, WeightFormatError

WEIGHT_MAGIC = b"NVSD"
WEIGHT_VERSION = 1

# index 0..14: sounds, 15: background, 16: speech
CLASS_NAMES = [
    "click", "cluck", "pop", "p", "k", "t", "sh", "s",
    "eh", "uh", "oo", "mm", "ee", "la", "muh",
    "background", "speech",
]
NUM_CLASSES = 17
NUM_SOUNDS = 15
BACKGROUND = 15
SPEECH = 16


@dataclass(frozen=True)
class ModelSpec:
    input_bins: int = NUM_BINS
    nodes: int = 256
    kernel: int = 5
    groups: int = 4
    num_blocks: int = 5
    classes: int = NUM_CLASSES
    leaky_slope: float = 0.01
    dropout: float = 0.1
    # fixed affine input normalization (stored with the weights; no
    # clip-global statistics, so streaming stays causal)
    feat_offset: float = -11.5
    feat_scale: float = 1.0 / 11.5

    def __post_init__(self):
        if self.nodes % self.groups or self.nodes % 4:
            raise ShapeError(
                f"nodes={self.nodes} must divide by groups={self.groups} and 4")

    @property
    def bottleneck(self) -> int:
        return self.nodes // 4

    @property
    def receptive_field(self) -> int:
        """Frames of input influencing one output frame."""
        return 1 + (self.kernel - 1) + self.num_blocks * (self.kernel - 1)

    def tensor_shapes(self) -> dict[str, tuple[int, ...]]:
        n, k, g, c = self.nodes, self.kernel, self.groups, self.classes
        shapes: dict[str, tuple[int, ...]] = {
            "stem.w": (n, self.input_bins, k), "stem.b": (n,),
        }
        for i in range(self.num_blocks):
            shapes[f"block{i}.grouped.w"] = (n, n // g, k)
            shapes[f"block{i}.grouped.b"] = (n,)
            shapes[f"block{i}.down.w"] = (self.bottleneck, n, 1)
            shapes[f"block{i}.down.b"] = (self.bottleneck,)
            shapes[f"block{i}.up.w"] = (n, self.bottleneck, 1)
            shapes[f"block{i}.up.b"] = (n,)
        shapes["head.w"] = (c, n, 1)
        shapes["head.b"] = (c,)
        return shapes


@dataclass
class ModelWeights:
    spec: ModelSpec
    tensors: dict[str, np.ndarray]
    class_names: list[str] | None = None
    user_id: str | None = None

    def __post_init__(self):
        if self.class_names is None:
            self.class_names = (list(CLASS_NAMES) if self.spec.classes == NUM_CLASSES
                                else [f"c{i}" for i in range(self.spec.classes)])
        expected = self.spec.tensor_shapes()
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ShapeError(f"missing tensor {name}")
            got = self.tensors[name].shape
            if tuple(got) != shape:
                raise ShapeError(f"tensor {name}: expected {shape}, got {tuple(got)}")
        if len(self.class_names) != self.spec.classes:
            raise ShapeError("class_names length != spec.classes")

    def copy(self) -> "ModelWeights":
        return ModelWeights(self.spec, {k: v.copy() for k, v in self.tensors.items()},
                            list(self.class_names), self.user_id)

    def astype(self, dtype) -> "ModelWeights":
        return ModelWeights(self.spec,
                            {k: v.astype(dtype) for k, v in self.tensors.items()},
                            list(self.class_names), self.user_id)


def init_weights(spec: ModelSpec, seed: int = 0,
                 dtype=np.float32) -> ModelWeights:
    """He-uniform kernels, zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in spec.tensor_shapes().items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = shape[1] * shape[2]
            limit = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return ModelWeights(spec, tensors)


def _lrelu(x, slope):
    return np.where(x >= 0, x, x * np.asarray(slope, dtype=x.dtype))


def forward(weights: ModelWeights, feats: FeatureMatrix | np.ndarray,
            return_cache: bool = False, dropout_rate: float = 0.0,
            dropout_seed: int = 0):
    """Run the network; returns (probs (T,C), embeddings (T,N)).

    dropout_rate > 0 applies seeded inverted dropout after each activation
    (training only); inference callers leave it at 0.
    """
    spec = weights.spec
    x = feats.frames if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    if x.ndim != 2 or x.shape[1] != spec.input_bins:
        raise ShapeError(f"input: expected T x {spec.input_bins}, got {x.shape}")
    if spec.feat_offset != 0.0 or spec.feat_scale != 1.0:
        x = (x - x.dtype.type(spec.feat_offset)) * x.dtype.type(spec.feat_scale)
    t = weights.tensors
    slope = spec.leaky_slope
    drop_rng = np.random.default_rng(dropout_seed) if dropout_rate > 0 else None
    cache = {"x": x, "masks": []} if return_cache else None

    def drop(a):
        if drop_rng is None:
            if return_cache:
                cache["masks"].append(None)
            return a
        mask = (drop_rng.random(a.shape) >= dropout_rate).astype(a.dtype)
        mask /= np.asarray(1.0 - dropout_rate, dtype=a.dtype)
        if return_cache:
            cache["masks"].append(mask)
        return a * mask

    z0 = kernels.conv1d_causal(x, t["stem.w"], t["stem.b"])
    h = drop(_lrelu(z0, slope))
    if return_cache:
        cache["z0"] = z0
        cache["blocks"] = []
    for i in range(spec.num_blocks):
        za = kernels.conv1d_causal(h, t[f"block{i}.grouped.w"],
                                   t[f"block{i}.grouped.b"], spec.groups)
        a = drop(_lrelu(za, slope))
        zd = kernels.conv1d_causal(a, t[f"block{i}.down.w"], t[f"block{i}.down.b"])
        d = drop(_lrelu(zd, slope))
        u = kernels.conv1d_causal(d, t[f"block{i}.up.w"], t[f"block{i}.up.b"])
        if return_cache:
            cache["blocks"].append({"h_in": h, "za": za, "a": a, "zd": zd, "d": d})
        h = h + u
    emb = h
    logits = kernels.matmul_rows(emb, t["head.w"][:, :, 0]) + t["head.b"]
    probs = _sigmoid(logits)
    if return_cache:
        cache["emb"] = emb
        cache["logits"] = logits
        cache["probs"] = probs
        return probs, emb, cache
    return probs, emb


def _sigmoid(z):
    out = np.empty_like(z)
    np.negative(np.abs(z), out=out)
    np.exp(out, out=out)
    pos = z >= 0
    out_pos = 1.0 / (1.0 + out)
    out_neg = out / (1.0 + out)
    p = np.where(pos, out_pos, out_neg)
    # keep probabilities strictly inside (0, 1) even where exp saturates
    info = np.finfo(p.dtype)
    return np.clip(p, info.tiny, 1.0 - info.epsneg)


def head_logits(weights: ModelWeights, emb: np.ndarray) -> np.ndarray:
    t = weights.tensors
    return kernels.matmul_rows(emb, t["head.w"][:, :, 0]) + t["head.b"]


def head_probs(weights: ModelWeights, emb: np.ndarray) -> np.ndarray:
    return _sigmoid(head_logits(weights, emb))


class StreamingSession:
    """Streaming inference with exact batch equivalence.

    Keeps the last rf-1 feature frames as context; each push recomputes the
    forward pass over [context, new] and returns rows for the new frames only.
    Single-threaded per session.
    """

    def __init__(self, weights: ModelWeights):
        self.weights = weights
        self._ctx = np.zeros((0, weights.spec.input_bins), dtype=np.float32)
        self._closed = False

    def push(self, frames: FeatureMatrix | np.ndarray):
        if self._closed:
            raise SessionClosedError("session is closed")
        new = frames.frames if isinstance(frames, FeatureMatrix) else np.asarray(frames)
        if new.shape[0] == 0:
            n = self.weights.spec.nodes
            return (np.zeros((0, self.weights.spec.classes), dtype=np.float32),
                    np.zeros((0, n), dtype=np.float32))
        inp = np.concatenate([self._ctx, new.astype(np.float32)], axis=0)
        probs, emb = forward(self.weights, inp)
        keep = self.weights.spec.receptive_field - 1
        self._ctx = inp[-keep:] if keep else inp[:0]
        skip = inp.shape[0] - new.shape[0]
        return probs[skip:], emb[skip:]

    def swap_weights(self, weights: ModelWeights):
        """Hot-swap (e.g., after head personalization); context is preserved."""
        if weights.spec != self.weights.spec:
            raise ShapeError("swap_weights requires an identical ModelSpec")
        self.weights = weights

    def close(self):
        self._closed = True


# ---------------------------------------------------------------------------
# Weight file: "NVSD" + u32 version + u32 header_len + JSON header + f32 payloads

def save_weights(weights: ModelWeights, path) -> None:
    spec = weights.spec
    names = list(spec.tensor_shapes().keys())
    header = {
        "spec": {
            "input_bins": spec.input_bins, "nodes": spec.nodes,
            "kernel": spec.kernel, "groups": spec.groups,
            "num_blocks": spec.num_blocks, "classes": spec.classes,
            "leaky_slope": spec.leaky_slope, "dropout": spec.dropout,
            "feat_offset": spec.feat_offset, "feat_scale": spec.feat_scale,
        },
        "tensors": [{"name": n, "shape": list(weights.tensors[n].shape)}
                    for n in names],
        "classes": weights.class_names,
    }
    if weights.user_id is not None:
        header["user_id"] = weights.user_id
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<II", WEIGHT_VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(weights.tensors[n].astype("<f4").tobytes())


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != WEIGHT_MAGIC:
            raise WeightFormatError(f"{path}: bad magic {magic!r}")
        head = f.read(8)
        if len(head) < 8:
            raise WeightFormatError(f"{path}: truncated header")
        version, hlen = struct.unpack("<II", head)
        if version != WEIGHT_VERSION:
            raise WeightFormatError(
                f"{path}: unsupported version {version} (want {WEIGHT_VERSION})")
        blob = f.read(hlen)
        if len(blob) != hlen:
            raise WeightFormatError(f"{path}: truncated JSON header")
        header = json.loads(blob.decode("utf-8"))
        spec = ModelSpec(**header["spec"])
        expected = spec.tensor_shapes()
        tensors = {}
        for entry in header["tensors"]:
            name, shape = entry["name"], tuple(entry["shape"])
            if name not in expected or expected[name] != shape:
                raise WeightFormatError(
                    f"{path}: tensor {name} shape {shape} inconsistent with spec")
            count = int(np.prod(shape))
            data = f.read(count * 4)
            if len(data) != count * 4:
                raise WeightFormatError(f"{path}: truncated payload for {name}")
            tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    return ModelWeights(spec, tensors, header["classes"],
                        header.get("user_id"))
