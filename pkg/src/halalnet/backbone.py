"""Configurable feature extractor built from separable-conv residual blocks.

A backbone is a declarative stack of blocks, each one op deep:

    input = 64x64x3
    [block]
    op = sepconv        # conv | sepconv | maxpool
    kernel = 3
    stride = 2
    channels = 16       # ignored for maxpool
    padding = same      # same | valid
    residual = yes      # wrap this block: out = relu(op(x)) + skip(x)
    bias = yes          # optional, default yes

A residual block's skip branch is the identity when shape allows it,
otherwise a learned 1x1 projection conv with the block's stride.
Residual blocks require same padding.  conv/sepconv blocks are
ReLU-activated; maxpool is not.

Two reference configs ship with the package: `full.cfg`, the 299x299
stack honoring the published shape and parameter contracts, and
`desk.cfg`, a small 64x64 stack used by the training tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from . import autodiff as ad
from .configfile import as_bool, as_int, check_keys, parse_kv_text
from .errors import ConfigError, ShapeMismatchError

BLOCK_OPS = ("conv", "sepconv", "maxpool")
_BLOCK_KEYS = ("op", "kernel", "stride", "channels", "padding", "residual", "bias")


@dataclass(frozen=True)
class BlockSpec:
    op: str
    kernel: int
    stride: int = 1
    channels: int = 0
    padding: str = "same"
    residual: bool = False
    bias: bool = True


@dataclass(frozen=True)
class BackboneConfig:
    input_shape: tuple[int, int, int]
    blocks: tuple[BlockSpec, ...] = ()


def _validate(config: BackboneConfig) -> None:
    h, w, c = config.input_shape
    if h < 1 or w < 1 or c < 1:
        raise ConfigError(f"bad input shape {config.input_shape}")
    for i, blk in enumerate(config.blocks):
        where = f"block {i}"
        if blk.op not in BLOCK_OPS:
            raise ConfigError(f"{where}: unknown op {blk.op!r}")
        if blk.kernel < 1:
            raise ConfigError(f"{where}: kernel must be >= 1")
        if blk.stride < 1:
            raise ConfigError(f"{where}: stride must be >= 1")
        if blk.padding not in ("same", "valid"):
            raise ConfigError(f"{where}: unknown padding {blk.padding!r}")
        if blk.op != "maxpool" and blk.channels < 1:
            raise ConfigError(f"{where}: channels must be >= 1")
        if blk.residual and blk.padding != "same":
            raise ConfigError(f"{where}: residual blocks require same padding")


def parse_config(text: str, source: str = "<string>") -> BackboneConfig:
    doc = parse_kv_text(text, source=source)
    check_keys(doc.top, ("input",), source)
    if "input" not in doc.top:
        raise ConfigError(f"{source}: missing `input = HxWxC`")
    parts = doc.top["input"].lower().split("x")
    if len(parts) != 3:
        raise ConfigError(f"{source}: input must be HxWxC, got {doc.top['input']!r}")
    shape = tuple(as_int(p, "input") for p in parts)

    blocks = []
    for idx, (name, scope) in enumerate(doc.sections):
        if name != "block":
            raise ConfigError(f"{source}: unexpected section [{name}]")
        where = f"{source} block {idx}"
        check_keys(scope, _BLOCK_KEYS, where)
        if "op" not in scope or "kernel" not in scope:
            raise ConfigError(f"{where}: needs at least `op` and `kernel`")
        blocks.append(BlockSpec(
            op=scope["op"],
            kernel=as_int(scope["kernel"], "kernel"),
            stride=as_int(scope.get("stride", "1"), "stride"),
            channels=as_int(scope.get("channels", "0"), "channels"),
            padding=scope.get("padding", "same"),
            residual=as_bool(scope.get("residual", "no"), "residual"),
            bias=as_bool(scope.get("bias", "yes"), "bias"),
        ))
    config = BackboneConfig(input_shape=shape, blocks=tuple(blocks))
    _validate(config)
    infer_shapes(config)  # surfaces incompatible blocks early
    return config


def load_config(path) -> BackboneConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), source=str(path))


def builtin_config(name: str) -> BackboneConfig:
    """Load one of the packaged configs ("full" or "desk")."""
    try:
        text = resources.files("halalnet.configs").joinpath(f"{name}.cfg").read_text()
    except (FileNotFoundError, ModuleNotFoundError) as exc:
        raise ConfigError(f"no builtin backbone config named {name!r}") from exc
    return parse_config(text, source=f"configs/{name}.cfg")


def to_text(config: BackboneConfig) -> str:
    """Canonical serialization: parse(to_text(c)) == c."""
    lines = ["input = {}x{}x{}".format(*config.input_shape)]
    for blk in config.blocks:
        lines.append("")
        lines.append("[block]")
        lines.append(f"op = {blk.op}")
        lines.append(f"kernel = {blk.kernel}")
        lines.append(f"stride = {blk.stride}")
        if blk.op != "maxpool":
            lines.append(f"channels = {blk.channels}")
        lines.append(f"padding = {blk.padding}")
        lines.append(f"residual = {'yes' if blk.residual else 'no'}")
        lines.append(f"bias = {'yes' if blk.bias else 'no'}")
    return "\n".join(lines) + "\n"


def _needs_projection(blk: BlockSpec, c_in: int, c_out: int) -> bool:
    return blk.residual and (blk.stride != 1 or c_in != c_out)


def infer_shapes(config: BackboneConfig) -> list[tuple[int, int, int]]:
    """Exact (h, w, c) after each block; raises ConfigError with the index."""
    _validate(config)
    h, w, c = config.input_shape
    shapes = []
    for i, blk in enumerate(config.blocks):
        try:
            oh = ad.conv_output_size(h, blk.kernel, blk.stride, blk.padding)
            ow = ad.conv_output_size(w, blk.kernel, blk.stride, blk.padding)
        except ShapeMismatchError as exc:
            raise ConfigError(f"block {i}: {exc}") from exc
        c = c if blk.op == "maxpool" else blk.channels
        h, w = oh, ow
        shapes.append((h, w, c))
    return shapes


def output_shape(config: BackboneConfig) -> tuple[int, int, int]:
    shapes = infer_shapes(config)
    return shapes[-1] if shapes else config.input_shape


def _block_channels(config: BackboneConfig) -> list[tuple[int, int]]:
    """(c_in, c_out) per block."""
    c = config.input_shape[2]
    pairs = []
    for blk in config.blocks:
        c_out = c if blk.op == "maxpool" else blk.channels
        pairs.append((c, c_out))
        c = c_out
    return pairs


def param_shapes(config: BackboneConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every learnable tensor, in allocation order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for i, (blk, (c_in, c_out)) in enumerate(zip(config.blocks, _block_channels(config))):
        k, pre = blk.kernel, f"block{i}"
        if blk.op == "conv":
            shapes[f"{pre}.w"] = (k, k, c_in, c_out)
            if blk.bias:
                shapes[f"{pre}.b"] = (c_out,)
        elif blk.op == "sepconv":
            shapes[f"{pre}.w_depth"] = (k, k, c_in)
            shapes[f"{pre}.w_point"] = (c_in, c_out)
            if blk.bias:
                shapes[f"{pre}.b"] = (c_out,)
        if _needs_projection(blk, c_in, c_out):
            shapes[f"{pre}.w_proj"] = (1, 1, c_in, c_out)
            if blk.bias:
                shapes[f"{pre}.b_proj"] = (c_out,)
    return shapes


def param_count(config: BackboneConfig) -> int:
    """Learnable scalars the backbone allocates, biases included."""
    total = 0
    for shape in param_shapes(config).values():
        n = 1
        for d in shape:
            n *= d
        total += n
    return total


def init_params(config: BackboneConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, ad.Tensor]:
    """Allocate and Xavier-initialize all backbone weights; biases zero."""
    params: dict[str, ad.Tensor] = {}

    def bias(name, size):
        params[name] = ad.Tensor(np.zeros(size, dtype=dtype), requires_grad=True)

    for i, (blk, (c_in, c_out)) in enumerate(zip(config.blocks, _block_channels(config))):
        k, pre = blk.kernel, f"block{i}"
        if blk.op == "conv":
            params[f"{pre}.w"] = ad.xavier_uniform_init(
                (k, k, c_in, c_out), k * k * c_in, k * k * c_out, rng, dtype)
            if blk.bias:
                bias(f"{pre}.b", c_out)
        elif blk.op == "sepconv":
            params[f"{pre}.w_depth"] = ad.xavier_uniform_init(
                (k, k, c_in), k * k, k * k, rng, dtype)
            params[f"{pre}.w_point"] = ad.xavier_uniform_init(
                (c_in, c_out), c_in, c_out, rng, dtype)
            if blk.bias:
                bias(f"{pre}.b", c_out)
        if _needs_projection(blk, c_in, c_out):
            params[f"{pre}.w_proj"] = ad.xavier_uniform_init(
                (1, 1, c_in, c_out), c_in, c_out, rng, dtype)
            if blk.bias:
                bias(f"{pre}.b_proj", c_out)
    return params


def forward(config: BackboneConfig, params: dict[str, ad.Tensor], x) -> ad.Tensor:
    """Run the stack on an NHWC batch already in network color space."""
    t = ad.as_tensor(x)
    if t.data.ndim != 4 or tuple(t.data.shape[1:]) != config.input_shape:
        raise ShapeMismatchError(
            f"input {t.data.shape} does not match config input {config.input_shape}")
    for i, (blk, (c_in, c_out)) in enumerate(zip(config.blocks, _block_channels(config))):
        pre, prev = f"block{i}", t
        try:
            if blk.op == "conv":
                t = ad.relu(ad.conv2d(prev, params[f"{pre}.w"], params.get(f"{pre}.b"),
                                      blk.stride, blk.padding))
            elif blk.op == "sepconv":
                t = ad.relu(ad.separable_conv2d(
                    prev, params[f"{pre}.w_depth"], params[f"{pre}.w_point"],
                    params.get(f"{pre}.b"), blk.stride, blk.padding))
            else:
                t = ad.max_pool(prev, blk.kernel, blk.stride, blk.padding)
        except KeyError as exc:
            raise ShapeMismatchError(f"missing weight for block {i}: {exc}") from exc
        if blk.residual:
            if _needs_projection(blk, c_in, c_out):
                if f"{pre}.w_proj" not in params:
                    raise ShapeMismatchError(f"missing projection weight for block {i}")
                skip = ad.conv2d(prev, params[f"{pre}.w_proj"],
                                 params.get(f"{pre}.b_proj"), blk.stride, "same")
            else:
                skip = prev
            t = ad.residual_add(t, skip)
    return t


def without_residual(config: BackboneConfig) -> BackboneConfig:
    """Same stack with every residual flag cleared (ablation helper)."""
    return replace(config, blocks=tuple(replace(b, residual=False) for b in config.blocks))
