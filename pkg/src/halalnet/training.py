"""Pair sampling, the verification loss, and the training loop.

Training never sees a fixed pair list.  Each step draws fresh pairs: the
label is a fair coin, the classes follow the label, and each image comes
from the segmented pool with probability 2/3 (falling back to nothing; an
empty needed pool is an error).  Batches are augmented, pushed through the
twin network, and scored with clamped binary cross-entropy plus an optional
L2 penalty on the kernels.

An "epoch" here is a fixed number of sampled batches, since a pair sampler
has no natural pass over the data.  Validation uses a pair set drawn once
from a dedicated stream, so epoch-to-epoch numbers are comparable, and the
checkpoint with the best validation accuracy is the one returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import backbone, configfile, seeds, siamese
from .augment import AugmentationPipeline
from .errors import (
    ConfigError,
    InvalidInputError,
    NumericalError,
    SamplingError,
    ShapeMismatchError,
    StratificationError,
)

LOSS_EPS = 1e-7

HISTORY_CSV_HEADER = "epoch,train_loss,train_acc,val_loss,val_acc"


# ---------------------------------------------------------------------------
# dataset pools and pair sampling


@dataclass
class DatasetPools:
    """Per-class image pools, split by whether segmentation was applied."""

    seg_halal: list = field(default_factory=list)
    raw_halal: list = field(default_factory=list)
    seg_nonhalal: list = field(default_factory=list)
    raw_nonhalal: list = field(default_factory=list)
    segmented_prob: float = 2.0 / 3.0

    def __post_init__(self):
        if not 0.0 <= self.segmented_prob <= 1.0:
            raise InvalidInputError(
                f"segmented_prob {self.segmented_prob} outside [0, 1]")

    def pool(self, cls: int, segmented: bool) -> list:
        if cls == 0:
            return self.seg_halal if segmented else self.raw_halal
        return self.seg_nonhalal if segmented else self.raw_nonhalal


@dataclass
class PairSample:
    image_a: np.ndarray
    image_b: np.ndarray
    label: int  # 1 when both images show the same class


def _draw_image(pools: DatasetPools, cls: int, rng: np.random.Generator) -> np.ndarray:
    segmented = rng.random() < pools.segmented_prob
    pool = pools.pool(cls, segmented)
    if not pool:
        kind = "segmented" if segmented else "raw"
        raise SamplingError(f"empty {kind} pool for class {cls}")
    return pool[int(rng.integers(0, len(pool)))]


def sample_pair(pools: DatasetPools, rng: np.random.Generator) -> PairSample:
    """Draw one labeled pair; label 1 means same class, fair coin overall."""
    label = int(rng.integers(0, 2))
    if label == 1:
        ca = cb = int(rng.integers(0, 2))
    else:
        ca = int(rng.integers(0, 2))
        cb = 1 - ca
    return PairSample(_draw_image(pools, ca, rng), _draw_image(pools, cb, rng), label)


def split_dataset(items, ratios=(0.70, 0.15, 0.15), seed: int = 0, labels=None):
    """Stratified train/val/test split with floor counts, remainder to test.

    ``labels`` aligns with ``items``; omitted means a single stratum.  Each
    class is shuffled by the seed, then cut at floor(n * ratio) for train and
    validation with everything left going to test.
    """
    items = list(items)
    if labels is None:
        labels = [0] * len(items)
    labels = list(labels)
    if len(labels) != len(items):
        raise InvalidInputError(
            f"{len(items)} items but {len(labels)} labels")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidInputError(f"ratios must be three non-negatives summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in sorted(set(labels), key=repr):
        idx = [i for i, lab in enumerate(labels) if lab == cls]
        if len(idx) < 3:
            raise StratificationError(
                f"class {cls!r} has only {len(idx)} items; need at least 3 to split")
        order = rng.permutation(len(idx))
        shuffled = [items[idx[j]] for j in order]
        n_train = int(math.floor(len(idx) * ratios[0]))
        n_val = int(math.floor(len(idx) * ratios[1]))
        train += shuffled[:n_train]
        val += shuffled[n_train:n_train + n_val]
        test += shuffled[n_train + n_val:]
    return train, val, test


# ---------------------------------------------------------------------------
# loss


def bce_loss(p: ad.Tensor, y) -> ad.Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1-eps].

    Outside the clamp window the gradient is zero, matching the clipped
    forward value.
    """
    p = ad.as_tensor(p)
    y = np.asarray(y, dtype=p.data.dtype).reshape(p.data.shape)
    if not np.isin(y, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    pc = np.clip(p.data, LOSS_EPS, 1.0 - LOSS_EPS)
    inside = (p.data > LOSS_EPS) & (p.data < 1.0 - LOSS_EPS)
    per = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    count = per.size

    def backward_fn(g):
        grad = np.where(inside, (pc - y) / (pc * (1.0 - pc)), 0.0)
        ad._accumulate(p, (grad * (g / count)).astype(p.data.dtype, copy=False))

    return ad._node(np.asarray(per.mean(), dtype=p.data.dtype), (p,), backward_fn)


# ---------------------------------------------------------------------------
# configuration and history


_TRAIN_KEYS = {
    "lr", "lr_decay", "batch_size", "epochs", "steps_per_epoch", "l2",
    "seed", "val_pairs", "augment", "augment_probability", "segmented_prob",
}


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_decay: float = 0.99
    batch_size: int = 8
    epochs: int = 3200
    steps_per_epoch: int = 100
    l2: float = 0.0
    seed: int = 0
    val_pairs: int = 64
    augment: bool = True
    augment_probability: float = 0.5
    segmented_prob: float = 2.0 / 3.0

    def __post_init__(self):
        if self.lr <= 0 or self.lr_decay <= 0:
            raise ConfigError(f"lr {self.lr} and lr_decay {self.lr_decay} must be positive")
        if self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("batch_size, epochs and steps_per_epoch must be >= 1")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.val_pairs < 1:
            raise ConfigError(f"val_pairs must be >= 1, got {self.val_pairs}")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ConfigError(f"augment_probability {self.augment_probability} outside [0, 1]")
        if not 0.0 <= self.segmented_prob <= 1.0:
            raise ConfigError(f"segmented_prob {self.segmented_prob} outside [0, 1]")


def train_config_from_mapping(scope: dict[str, str], source: str = "<config>") -> TrainConfig:
    """Build a config from raw key -> string values, rejecting unknown keys."""
    configfile.check_keys(scope, _TRAIN_KEYS, source)
    kw = {}
    for f in fields(TrainConfig):
        if f.name not in scope:
            continue
        raw = scope[f.name]
        if isinstance(f.default, bool):
            kw[f.name] = configfile.as_bool(raw, f.name)
        elif isinstance(f.default, int):
            kw[f.name] = configfile.as_int(raw, f.name)
        else:
            kw[f.name] = configfile.as_float(raw, f.name)
    return TrainConfig(**kw)


def train_config_from_text(text: str, source: str = "<config>") -> TrainConfig:
    doc = configfile.parse_kv_text(text, source)
    if doc.sections:
        raise ConfigError(f"{source}: training config takes no [sections]")
    return train_config_from_mapping(doc.top, source)


def load_train_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return train_config_from_text(fh.read(), source=str(path))


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float
    lr: float


@dataclass
class History:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv_text(self) -> str:
        lines = [HISTORY_CSV_HEADER]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss:.6f},{e.train_acc:.6f},"
                         f"{e.val_loss:.6f},{e.val_acc:.6f}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())


# ---------------------------------------------------------------------------
# batches and evaluation


def to_network_input(img: np.ndarray) -> np.ndarray:
    """8-bit image to the float32 [0, 1] tensor the network consumes."""
    return np.asarray(img, dtype=np.float32) / 255.0


def _stack_pairs(pairs, input_shape):
    xa = np.empty((len(pairs),) + tuple(input_shape), dtype=np.float32)
    xb = np.empty_like(xa)
    y = np.empty((len(pairs), 1), dtype=np.float32)
    for i, pair in enumerate(pairs):
        a, b = pair.image_a, pair.image_b
        if a.shape != tuple(input_shape) or b.shape != tuple(input_shape):
            raise ShapeMismatchError(
                f"pair images {a.shape}/{b.shape} do not match network input {tuple(input_shape)}")
        xa[i] = to_network_input(a)
        xb[i] = to_network_input(b)
        y[i, 0] = pair.label
    return xa, xb, y


def evaluate(model: siamese.SiameseModel, pairs, threshold: float = 0.5,
             batch_size: int = 32):
    """Mean loss, accuracy, and 0/1 predictions; p >= threshold is positive."""
    pairs = list(pairs)
    if not pairs:
        raise InvalidInputError("cannot evaluate an empty pair set")
    probs = np.empty(len(pairs), dtype=np.float64)
    labels = np.array([p.label for p in pairs], dtype=np.float64)
    for lo in range(0, len(pairs), batch_size):
        chunk = pairs[lo:lo + batch_size]
        xa, xb, _ = _stack_pairs(chunk, model.input_shape)
        out = siamese.pair_graph(model, ad.Tensor(xa), ad.Tensor(xb))
        probs[lo:lo + len(chunk)] = out.data[:, 0]
    pc = np.clip(probs, LOSS_EPS, 1.0 - LOSS_EPS)
    loss = float(np.mean(-(labels * np.log(pc) + (1.0 - labels) * np.log1p(-pc))))
    preds = (probs >= threshold).astype(np.int64)
    acc = float(np.mean(preds == labels))
    return loss, acc, preds


def make_val_pairs(pools: DatasetPools, n: int, rng: np.random.Generator):
    return [sample_pair(pools, rng) for _ in range(n)]


# ---------------------------------------------------------------------------
# training loop


def _weight_tensors(params: dict[str, ad.Tensor]) -> list[ad.Tensor]:
    """The tensors the l2 term covers: the head's dense kernels.

    Conv kernels and all biases stay unregularized; the penalty exists to
    keep the comparison head small, not to shrink the feature extractor.
    """
    return [t for name, t in sorted(params.items())
            if name.startswith("head.") and name.endswith(".w")]


def _snapshot(model, adam, epoch, step, best_val):
    state = siamese.TrainState(
        epoch=epoch, step=step, lr=adam.lr, decay=adam.decay, best_val=best_val,
        m={k: v.copy() for k, v in adam.m.items()},
        v={k: v.copy() for k, v in adam.v.items()})
    tensors = {name: t.data.copy() for name, t in model.params.items()}
    return siamese.Checkpoint(config_text=backbone.to_text(model.config),
                              tensors=tensors, train_state=state)


def train(model: siamese.SiameseModel, pools: DatasetPools, cfg: TrainConfig,
          val_pools: DatasetPools | None = None, adam: ad.AdamState | None = None,
          start_epoch: int = 0, log=None):
    """Run the sampled-batch loop and return (best checkpoint, history).

    ``val_pools`` defaults to the training pools; pass the validation split
    for honest model selection.  ``adam``/``start_epoch`` allow resuming from
    a checkpoint's stored state.  ``log`` is an optional callable taking one
    line of text per epoch.
    """
    if val_pools is None:
        val_pools = pools
    if adam is None:
        adam = ad.AdamState(lr=cfg.lr, decay=cfg.lr_decay)
    sampler_rng = seeds.rng(cfg.seed, "sampler")
    pipeline = AugmentationPipeline(probability=cfg.augment_probability,
                                    seed=seeds.substream(cfg.seed, "augment"))
    val_set = make_val_pairs(val_pools, cfg.val_pairs, seeds.rng(cfg.seed, "eval"))

    params = model.params
    weights = _weight_tensors(params)
    history = History()
    best: siamese.Checkpoint | None = None
    best_acc, best_loss = -1.0, float("inf")
    step = adam.t

    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        loss_sum, correct, seen = 0.0, 0, 0
        for _ in range(cfg.steps_per_epoch):
            pairs = [sample_pair(pools, sampler_rng) for _ in range(cfg.batch_size)]
            if cfg.augment:
                pairs = [PairSample(pipeline.apply(p.image_a),
                                    pipeline.apply(p.image_b), p.label)
                         for p in pairs]
            xa, xb, y = _stack_pairs(pairs, model.input_shape)
            prob = siamese.pair_graph(model, ad.Tensor(xa), ad.Tensor(xb))
            loss = bce_loss(prob, y)
            if cfg.l2 > 0:
                loss = ad.add(loss, ad.l2_penalty(weights, cfg.l2))
            loss_val = float(loss.data)
            if not np.isfinite(loss_val):
                raise NumericalError(
                    f"non-finite loss {loss_val} at epoch {epoch} step {step} (lr={adam.lr:g})")
            ad.zero_grads(params)
            loss.backward()
            ad.adam_step(adam, params)
            step += 1
            loss_sum += loss_val
            correct += int(((prob.data[:, 0] >= 0.5) == (y[:, 0] >= 0.5)).sum())
            seen += len(pairs)
        val_loss, val_acc, _ = evaluate(model, val_set, batch_size=max(cfg.batch_size, 8))
        stats = EpochStats(epoch=epoch, train_loss=loss_sum / cfg.steps_per_epoch,
                           train_acc=correct / seen, val_loss=val_loss,
                           val_acc=val_acc, lr=adam.lr)
        history.epochs.append(stats)
        if log is not None:
            log(f"epoch {epoch}: train_loss={stats.train_loss:.4f} "
                f"train_acc={stats.train_acc:.4f} val_loss={val_loss:.4f} "
                f"val_acc={val_acc:.4f} lr={adam.lr:.3g}")
        ad.decay_lr(adam)
        if val_acc > best_acc or (val_acc == best_acc and val_loss < best_loss):
            best_acc, best_loss = val_acc, val_loss
            best = _snapshot(model, adam, epoch + 1, step, val_acc)
    assert best is not None
    return best, history
