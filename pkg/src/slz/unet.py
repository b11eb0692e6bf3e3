"""Encoder-decoder segmentation network assembled from the tensor kernels.

The network takes a (3,H,W) image in [0,1] and produces per-pixel class
probabilities (K,H,W). Each encoder stage is conv-relu, conv-relu, 2x2 max
pool, doubling the channel count; the decoder mirrors it with 2x2 transposed
convolutions and skip concatenations; a final 1x1 convolution maps to class
logits. Same-padding keeps the output aligned 1:1 with the input, so any H,W
divisible by 2**depth is accepted. All randomness is owned by explicit seeds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor_ops as ops
from .data import LabeledTile
from .metrics import IouResult, confusion, iou

CHECKPOINT_MAGIC = b"SLZK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 2               # number of pooling stages
    base_channels: int = 8
    in_channels: int = 3
    num_classes: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")


@dataclass(frozen=True)
class UNetParams:
    config: UNetConfig
    tensors: dict[str, np.ndarray]

    def parameter_count(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())


def _stage_channels(cfg: UNetConfig) -> list[int]:
    return [cfg.base_channels * 2 ** i for i in range(cfg.depth + 1)]


def layer_shapes(cfg: UNetConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """Ordered (name, shape, fan_in) for every learnable tensor; the single
    source of truth for initialization and checkpoint validation."""
    ch = _stage_channels(cfg)
    layers: list[tuple[str, tuple[int, ...], int]] = []

    def conv(name: str, c_out: int, c_in: int, k: int) -> None:
        layers.append((f"{name}_w", (c_out, c_in, k, k), c_in * k * k))
        layers.append((f"{name}_b", (c_out,), c_in * k * k))

    for i in range(cfg.depth):
        c_in = cfg.in_channels if i == 0 else ch[i - 1]
        conv(f"enc{i}_conv1", ch[i], c_in, 3)
        conv(f"enc{i}_conv2", ch[i], ch[i], 3)
    conv("bot_conv1", ch[cfg.depth], ch[cfg.depth - 1], 3)
    conv("bot_conv2", ch[cfg.depth], ch[cfg.depth], 3)
    for i in reversed(range(cfg.depth)):
        # transposed conv: each output pixel sees one input pixel per channel
        layers.append((f"dec{i}_up_w", (ch[i + 1], ch[i], 2, 2), ch[i + 1]))
        conv(f"dec{i}_conv1", ch[i], 2 * ch[i], 3)
        conv(f"dec{i}_conv2", ch[i], ch[i], 3)
    conv("out", cfg.num_classes, ch[0], 1)
    return layers


def build(cfg: UNetConfig, dtype=np.float32) -> UNetParams:
    """Initialize parameters: fan-in-scaled uniform weights, zero biases,
    fully determined by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    tensors: dict[str, np.ndarray] = {}
    for name, shape, fan_in in layer_shapes(cfg):
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = np.sqrt(6.0 / fan_in)
            tensors[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return UNetParams(cfg, tensors)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _check_input(cfg: UNetConfig, image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != cfg.in_channels:
        raise ValueError(
            f"image must be ({cfg.in_channels},H,W), got shape {image.shape}")
    div = 2 ** cfg.depth
    _, h, w = image.shape
    if h % div or w % div:
        raise ValueError(
            f"input {h}x{w} not divisible by 2**depth = {div}; "
            f"pad or crop to a multiple of {div}")


class _Cache:
    __slots__ = ("convs", "pools", "ups", "skip_channels")

    def __init__(self):
        self.convs: dict[str, tuple[np.ndarray, np.ndarray | None]] = {}
        self.pools: dict[int, tuple[np.ndarray, tuple[int, int, int]]] = {}
        self.ups: dict[int, np.ndarray] = {}
        self.skip_channels: dict[int, int] = {}


def _conv_relu(t: dict[str, np.ndarray], name: str, x: np.ndarray,
               cache: _Cache | None) -> np.ndarray:
    z = ops.conv2d(x, t[f"{name}_w"], t[f"{name}_b"])
    if cache is not None:
        cache.convs[name] = (x, z)
    return ops.relu(z)


def _forward_logits(params: UNetParams, image: np.ndarray,
                    cache: _Cache | None = None) -> np.ndarray:
    cfg = params.config
    _check_input(cfg, image)
    t = params.tensors
    x = np.asarray(image)
    skips: list[np.ndarray] = []
    for i in range(cfg.depth):
        x = _conv_relu(t, f"enc{i}_conv1", x, cache)
        x = _conv_relu(t, f"enc{i}_conv2", x, cache)
        skips.append(x)
        pooled, argmax = ops.maxpool2(x)
        if cache is not None:
            cache.pools[i] = (argmax, x.shape)
        x = pooled
    x = _conv_relu(t, "bot_conv1", x, cache)
    x = _conv_relu(t, "bot_conv2", x, cache)
    for i in reversed(range(cfg.depth)):
        if cache is not None:
            cache.ups[i] = x
        up = ops.upconv2(x, t[f"dec{i}_up_w"])
        x = ops.concat_channels(skips[i], up)
        if cache is not None:
            cache.skip_channels[i] = skips[i].shape[0]
        x = _conv_relu(t, f"dec{i}_conv1", x, cache)
        x = _conv_relu(t, f"dec{i}_conv2", x, cache)
    if cache is not None:
        cache.convs["out"] = (x, None)
    return ops.conv2d(x, t["out_w"], t["out_b"])


def forward(params: UNetParams, image: np.ndarray) -> np.ndarray:
    """Per-pixel class probabilities (K,H,W)."""
    return ops.softmax_pixels(_forward_logits(params, image))


def predict_mask(params: UNetParams, image: np.ndarray) -> np.ndarray:
    """Argmax class per pixel; ties resolve to the lowest class index."""
    return forward(params, image).argmax(axis=0).astype(np.int32)


def _conv_relu_back(t, cache: _Cache, name: str, upstream: np.ndarray,
                    grads: dict[str, np.ndarray]) -> np.ndarray:
    x_in, z = cache.convs[name]
    gz = ops.relu_grad(z, upstream)
    gx, gw, gb = ops.conv2d_grad(x_in, t[f"{name}_w"], gz)
    grads[f"{name}_w"] = gw
    grads[f"{name}_b"] = gb
    return gx


def _backward(params: UNetParams, cache: _Cache,
              grad_logits: np.ndarray) -> dict[str, np.ndarray]:
    cfg = params.config
    t = params.tensors
    grads: dict[str, np.ndarray] = {}

    x_in, _ = cache.convs["out"]
    g, gw, gb = ops.conv2d_grad(x_in, t["out_w"], grad_logits)
    grads["out_w"] = gw
    grads["out_b"] = gb

    grad_skips: dict[int, np.ndarray] = {}
    for i in range(cfg.depth):              # decoder ran depth-1 .. 0
        g = _conv_relu_back(t, cache, f"dec{i}_conv2", g, grads)
        g = _conv_relu_back(t, cache, f"dec{i}_conv1", g, grads)
        g_skip, g_up = ops.concat_channels_grad(g, cache.skip_channels[i])
        grad_skips[i] = g_skip
        g, gw = ops.upconv2_grad(cache.ups[i], t[f"dec{i}_up_w"], g_up)
        grads[f"dec{i}_up_w"] = gw

    g = _conv_relu_back(t, cache, "bot_conv2", g, grads)
    g = _conv_relu_back(t, cache, "bot_conv1", g, grads)

    for i in reversed(range(cfg.depth)):
        argmax, shape = cache.pools[i]
        g = ops.maxpool2_grad(argmax, g, shape) + grad_skips[i]
        g = _conv_relu_back(t, cache, f"enc{i}_conv2", g, grads)
        g = _conv_relu_back(t, cache, f"enc{i}_conv1", g, grads)
    return grads


def loss_and_grads(params: UNetParams, image: np.ndarray, labels: np.ndarray,
                   ignore_label: int | None = None
                   ) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy loss on one image plus gradients for every parameter."""
    cache = _Cache()
    logits = _forward_logits(params, image, cache)
    probs = ops.softmax_pixels(logits)
    loss, grad_logits = ops.cce_loss(probs, labels, ignore_label)
    return loss, _backward(params, cache, grad_logits)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 8
    shuffle_seed: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_steps: int | None = None     # cap on optimizer steps across epochs


@dataclass(frozen=True)
class TrainResult:
    params: UNetParams
    loss_history: tuple[float, ...]   # mean batch loss, one entry per step


def train(params: UNetParams, tiles: Sequence[LabeledTile],
          hyper: TrainConfig = TrainConfig()) -> TrainResult:
    """Mini-batch ADAM training; one optimizer step per batch. Deterministic:
    (params.seed, tiles, hyper) fixes the loss history exactly. The input
    params are not modified."""
    if len(tiles) == 0:
        raise ValueError("training requires at least one tile")
    k = params.config.num_classes
    for t in tiles:
        if t.mask.size and (t.mask.min() < 0 or t.mask.max() >= k):
            raise ValueError(f"tile labels exceed the class count {k}")
    rng = np.random.default_rng(hyper.shuffle_seed)
    tensors = params.tensors
    state = ops.AdamState.init(tensors, ops.AdamHyper(
        hyper.learning_rate, hyper.beta1, hyper.beta2, hyper.epsilon))
    history: list[float] = []
    steps = 0
    for _ in range(hyper.epochs):
        order = rng.permutation(len(tiles))
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            cur = UNetParams(params.config, tensors)
            loss_sum = 0.0
            grad_sum: dict[str, np.ndarray] | None = None
            for idx in batch:
                loss, grads = loss_and_grads(cur, tiles[idx].image, tiles[idx].mask)
                loss_sum += loss
                if grad_sum is None:
                    grad_sum = grads
                else:
                    for name in grad_sum:
                        grad_sum[name] += grads[name]
            scale = 1.0 / len(batch)
            mean_grads = {n: g * scale for n, g in grad_sum.items()}
            tensors, state = ops.adam_step(tensors, mean_grads, state)
            history.append(loss_sum * scale)
            steps += 1
            if hyper.max_steps is not None and steps >= hyper.max_steps:
                return TrainResult(UNetParams(params.config, tensors), tuple(history))
    return TrainResult(UNetParams(params.config, tensors), tuple(history))


def mean_iou_on_tiles(params: UNetParams, tiles: Sequence[LabeledTile]) -> IouResult:
    """IOU of predictions against tile masks, confusion aggregated over the
    whole tile set."""
    k = params.config.num_classes
    cm = np.zeros((k, k), dtype=np.int64)
    for t in tiles:
        cm += confusion(predict_mask(params, t.image), t.mask, k)
    return iou(cm)


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

def save_checkpoint(params: UNetParams, path: str | Path) -> None:
    """Versioned binary container: magic, version, config, then named tensors
    as little-endian float32. Round-trips bit-exactly for float32 params."""
    cfg = params.config
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    out += struct.pack("<iiii q", cfg.depth, cfg.base_channels,
                       cfg.in_channels, cfg.num_classes, cfg.seed)
    out += struct.pack("<I", len(params.tensors))
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        out += struct.pack("<I", len(encoded))
        out += encoded
        out += struct.pack("<I", tensor.ndim)
        out += struct.pack(f"<{tensor.ndim}I", *tensor.shape)
        out += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path: str | Path) -> UNetParams:
    blob = Path(path).read_bytes()
    view = memoryview(blob)
    if view[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", view, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    depth, base, in_ch, classes, seed = struct.unpack_from("<iiii q", view, 8)
    cfg = UNetConfig(depth=depth, base_channels=base, in_channels=in_ch,
                     num_classes=classes, seed=seed)
    offset = 8 + struct.calcsize("<iiii q")
    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", view, offset)
        offset += 4
        name = bytes(view[offset:offset + name_len]).decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<I", view, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", view, offset)
        offset += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(view, dtype="<f4", count=n, offset=offset)
        offset += 4 * n
        tensors[name] = data.reshape(shape).astype(np.float32)
    expected = layer_shapes(cfg)
    got = {n: t.shape for n, t in tensors.items()}
    want = {n: s for n, s, _ in expected}
    if got != want:
        raise ValueError(f"{path}: tensor inventory does not match the "
                         f"config stored in the header")
    ordered = {n: tensors[n] for n, _, _ in expected}
    return UNetParams(cfg, ordered)
