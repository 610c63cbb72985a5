"""Twin-branch verification network and its checkpoint format.

Both branches share one parameter set.  A query and a reference image are
pushed through the same convolutional stack, the feature maps are subtracted,
and a small dense head turns the flattened difference into a single
same-class probability.  With freshly zeroed head biases an identical pair
therefore scores exactly 0.5.

Checkpoints are a small binary container (magic ``HNET1``): the canonical
config text, the named weight tensors in sorted order, and optionally the
optimizer state needed to resume training.  Writing then reading a checkpoint
reproduces the file byte for byte.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import backbone
from .backbone import BackboneConfig
from .errors import (
    BadMagicError,
    InvalidInputError,
    ShapeMismatchError,
    TruncatedFileError,
)

MAGIC = b"HNET1"

# Dense head widths after the feature-difference flatten.
HEAD_WIDTHS = (64, 32, 1)


def feature_size(config: BackboneConfig) -> int:
    h, w, c = backbone.output_shape(config)
    return h * w * c


def head_param_shapes(config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    d = feature_size(config)
    for i, width in enumerate(HEAD_WIDTHS, start=1):
        shapes[f"head.fc{i}.w"] = (d, width)
        shapes[f"head.fc{i}.b"] = (width,)
        d = width
    return shapes


def param_shapes(config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    """Every learnable tensor of the full model, backbone then head."""
    shapes = backbone.param_shapes(config)
    shapes.update(head_param_shapes(config))
    return shapes


def param_count(config: BackboneConfig) -> int:
    total = 0
    for shape in param_shapes(config).values():
        n = 1
        for d in shape:
            n *= d
        total += n
    return total


@dataclass
class SiameseModel:
    config: BackboneConfig
    params: dict[str, ad.Tensor]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.config.input_shape

    def named_params(self) -> dict[str, ad.Tensor]:
        return self.params


def build(config: BackboneConfig, rng, dtype=np.float32) -> SiameseModel:
    """Create a model with Xavier weights and zero biases.

    ``rng`` is either a ``numpy.random.Generator`` or an integer seed.
    Tensors are drawn in a fixed order so the same seed always produces the
    same weights.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    params = backbone.init_params(config, rng, dtype)
    d = feature_size(config)
    for i, width in enumerate(HEAD_WIDTHS, start=1):
        params[f"head.fc{i}.w"] = ad.xavier_uniform_init((d, width), d, width, rng, dtype)
        params[f"head.fc{i}.b"] = ad.Tensor(np.zeros(width, dtype=dtype), requires_grad=True)
        d = width
    return SiameseModel(config=config, params=params)


def pair_graph(model: SiameseModel, a: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    """Probability graph for NHWC batches ``a`` and ``b`` (shape (N, 1))."""
    p = model.params
    fa = backbone.forward(model.config, p, a)
    fb = backbone.forward(model.config, p, b)
    h = ad.flatten(ad.subtract(fa, fb))
    h = ad.relu(ad.dense(h, p["head.fc1.w"], p["head.fc1.b"]))
    h = ad.relu(ad.dense(h, p["head.fc2.w"], p["head.fc2.b"]))
    return ad.sigmoid(ad.dense(h, p["head.fc3.w"], p["head.fc3.b"]))


def forward_pair(model: SiameseModel, a, b):
    """Same-class probability for one image pair or a batch of pairs.

    Inputs are float arrays in network space, ``(H, W, C)`` or
    ``(N, H, W, C)``.  Single pairs return a Python float, batches a 1-D
    array.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"pair shapes differ: {a.shape} vs {b.shape}")
    single = a.ndim == 3
    if single:
        a = a[None]
        b = b[None]
    out = pair_graph(model, ad.Tensor(a), ad.Tensor(b)).data[:, 0]
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# checkpoint container


@dataclass
class TrainState:
    """Optimizer and progress state stored alongside the weights."""

    epoch: int = 0
    step: int = 0
    lr: float = 0.0
    decay: float = 1.0
    best_val: float = 0.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class Checkpoint:
    config_text: str
    tensors: dict[str, np.ndarray]
    train_state: TrainState | None = None


def _pack_str(out: bytearray, text: str) -> None:
    raw = text.encode("utf-8")
    out += struct.pack("<I", len(raw))
    out += raw


def _pack_name(out: bytearray, name: str) -> None:
    raw = name.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise InvalidInputError(f"tensor name too long: {name[:32]}...")
    out += struct.pack("<H", len(raw))
    out += raw


def _pack_tensor(out: bytearray, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim > 0xFF:
        raise InvalidInputError("tensor rank too large")
    _pack_name(out, name)
    out += struct.pack("<B", arr.ndim)
    for d in arr.shape:
        out += struct.pack("<I", d)
    out += np.ascontiguousarray(arr, dtype="<f4").tobytes()


def to_bytes(ckpt: Checkpoint) -> bytes:
    out = bytearray(MAGIC)
    _pack_str(out, ckpt.config_text)
    names = sorted(ckpt.tensors)
    out += struct.pack("<I", len(names))
    for name in names:
        _pack_tensor(out, name, ckpt.tensors[name])
    ts = ckpt.train_state
    if ts is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<IQ", ts.epoch, ts.step)
        out += struct.pack("<ddd", ts.lr, ts.decay, ts.best_val)
        moments = [("m:" + k, ts.m[k]) for k in sorted(ts.m)]
        moments += [("v:" + k, ts.v[k]) for k in sorted(ts.v)]
        out += struct.pack("<I", len(moments))
        for name, arr in moments:
            _pack_tensor(out, name, arr)
    return bytes(out)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.raw):
            raise TruncatedFileError(
                f"checkpoint ends early: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.raw)}")
        chunk = self.raw[self.pos:end]
        self.pos = end
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def tensor(self) -> tuple[str, np.ndarray]:
        name = self.name()
        (ndim,) = self.unpack("<B")
        shape = tuple(self.unpack("<" + "I" * ndim)) if ndim else ()
        count = 1
        for d in shape:
            count *= d
        flat = np.frombuffer(self.take(4 * count), dtype="<f4")
        return name, flat.reshape(shape).astype(np.float32)


def from_bytes(raw: bytes) -> Checkpoint:
    r = _Reader(raw)
    magic = r.take(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint file (leading bytes {magic!r})")
    (clen,) = r.unpack("<I")
    config_text = r.take(clen).decode("utf-8")
    (n_tensors,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(n_tensors):
        name, arr = r.tensor()
        tensors[name] = arr
    (has_state,) = r.unpack("<B")
    state = None
    if has_state:
        epoch, step = r.unpack("<IQ")
        lr, decay, best_val = r.unpack("<ddd")
        state = TrainState(epoch=epoch, step=step, lr=lr, decay=decay, best_val=best_val)
        (n_moments,) = r.unpack("<I")
        for _ in range(n_moments):
            name, arr = r.tensor()
            if name.startswith("m:"):
                state.m[name[2:]] = arr
            elif name.startswith("v:"):
                state.v[name[2:]] = arr
            else:
                raise InvalidInputError(f"unknown optimizer slot {name!r}")
    if r.pos != len(raw):
        raise InvalidInputError(
            f"{len(raw) - r.pos} trailing bytes after checkpoint payload")
    return Checkpoint(config_text=config_text, tensors=tensors, train_state=state)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def model_to_checkpoint(model: SiameseModel, train_state: TrainState | None = None) -> Checkpoint:
    tensors = {name: t.data for name, t in model.params.items()}
    return Checkpoint(config_text=backbone.to_text(model.config),
                      tensors=tensors, train_state=train_state)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32) -> SiameseModel:
    config = backbone.parse_config(ckpt.config_text, source="checkpoint")
    expected = param_shapes(config)
    missing = sorted(set(expected) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(expected))
    if missing or extra:
        raise ShapeMismatchError(
            f"checkpoint tensors do not match config (missing {missing[:4]}, "
            f"unexpected {extra[:4]})")
    params: dict[str, ad.Tensor] = {}
    for name in expected:
        arr = ckpt.tensors[name]
        if tuple(arr.shape) != expected[name]:
            raise ShapeMismatchError(
                f"tensor {name} has shape {tuple(arr.shape)}, config wants {expected[name]}")
        params[name] = ad.Tensor(arr.astype(dtype), requires_grad=True)
    return SiameseModel(config=config, params=params)


def save(model: SiameseModel, path, train_state: TrainState | None = None) -> None:
    save_checkpoint(model_to_checkpoint(model, train_state), path)


def load(path, dtype=np.float32) -> tuple[SiameseModel, TrainState | None]:
    ckpt = load_checkpoint(path)
    return model_from_checkpoint(ckpt, dtype), ckpt.train_state
