"""Convolutional encoder turning a height-40 line image into a feature sequence.

The topology is a small inception-style stack: a strided stem convolution,
a max pool, a configurable run of inception modules, a height-collapsing
max pool, and a per-column projection of the remaining height slice down
to the feature dimension. Every stage uses SAME padding, so the sequence
length is a pure ceiling-division function of the image width.

Batched encoding zeroes out feature columns beyond each sample's true
extent after every stage and gives average pools per-sample width bounds.
This keeps features of a width-padded batch identical to encoding each
line alone, which the training harness relies on.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import nn


@dataclass(frozen=True)
class ConvSpec:
    height: int
    width: int
    stride_h: int
    stride_w: int
    channels: int


@dataclass(frozen=True)
class PoolSpec:
    kind: str  # "max" | "avg"
    height: int
    width: int
    stride_h: int
    stride_w: int


@dataclass(frozen=True)
class InceptionSpec:
    reduce_channels: int  # 1x1 branch width, also the pooled branch width
    expand_channels: int  # 3x3 and 5x5 branch widths


@dataclass(frozen=True)
class EncoderConfig:
    """Stage parameters; the defaults form the stock desk-scale encoder."""

    input_height: int = 40
    stem: ConvSpec = ConvSpec(5, 5, 2, 2, 16)
    stem_pool: PoolSpec = PoolSpec("max", 2, 2, 2, 2)
    inception: tuple[InceptionSpec, ...] = (InceptionSpec(16, 32), InceptionSpec(16, 32))
    final_pool: PoolSpec = PoolSpec("max", 2, 1, 2, 1)
    feature_dim: int = 64

    def __post_init__(self):
        if self.input_height < 1 or self.feature_dim < 1:
            raise ValueError("input_height and feature_dim must be positive")
        if self.collapsed_height() < 1:
            raise ValueError("pooling collapses the image height below one row")

    def collapsed_height(self) -> int:
        """Rows left after all pooled stages; flattened into the projection."""
        h = self.input_height
        for sh in (self.stem.stride_h, self.stem_pool.stride_h, self.final_pool.stride_h):
            h = -(-h // sh)
        return h

    def inception_channels(self, index: int) -> int:
        spec = self.inception[index]
        return 2 * spec.reduce_channels + 2 * spec.expand_channels

    def feature_channels(self) -> int:
        """Channel count entering the final projection."""
        c = self.stem.channels
        for i in range(len(self.inception)):
            c = self.inception_channels(i)
        return c

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(
            input_height=d["input_height"],
            stem=ConvSpec(**d["stem"]),
            stem_pool=PoolSpec(**d["stem_pool"]),
            inception=tuple(InceptionSpec(**i) for i in d["inception"]),
            final_pool=PoolSpec(**d["final_pool"]),
            feature_dim=d["feature_dim"],
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class FeatureSequence:
    """Encoded line: (w', d') feature tensor plus provenance."""

    values: nn.Tensor
    source_width: int
    image_id: str | None = None

    @property
    def length(self) -> int:
        return self.values.shape[-2]


def output_length(width: int, config: EncoderConfig) -> int:
    """Sequence length produced for an image of the given width."""
    if width < 1:
        raise ValueError("width must be >= 1")
    w = width
    for sw in (config.stem.stride_w, config.stem_pool.stride_w, config.final_pool.stride_w):
        w = -(-w // sw)
    return w


def receptive_field(config: EncoderConfig) -> tuple[int, int]:
    """(width of one output frame's input footprint, column stride)."""
    rf, stride = 1, 1
    stages = [(config.stem.width, config.stem.stride_w), (config.stem_pool.width, config.stem_pool.stride_w)]
    for _ in config.inception:
        stages.append((5, 1))  # widest inception branch
    stages.append((config.final_pool.width, config.final_pool.stride_w))
    for k, s in stages:
        rf += (k - 1) * stride
        stride *= s
    return rf, stride


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _inception_param_names(prefix: str) -> list[str]:
    names = []
    for branch in ("b1", "b2r", "b2", "b3r", "b3", "b4"):
        names.extend([f"{prefix}/{branch}/w", f"{prefix}/{branch}/b"])
    return names


def init_params(config: EncoderConfig, rng: np.random.Generator, dtype=nn.DEFAULT_DTYPE) -> dict:
    """Freshly initialized encoder parameters, keyed by stage names."""
    params: dict[str, nn.Tensor] = {}
    s = config.stem
    params["stem/w"], params["stem/b"] = nn.conv_init(rng, s.height, s.width, 1, s.channels, dtype)
    cin = s.channels
    for i, spec in enumerate(config.inception):
        d1, d2 = spec.reduce_channels, spec.expand_channels
        p = f"incep{i}"
        params[f"{p}/b1/w"], params[f"{p}/b1/b"] = nn.conv_init(rng, 1, 1, cin, d1, dtype)
        params[f"{p}/b2r/w"], params[f"{p}/b2r/b"] = nn.conv_init(rng, 1, 1, cin, d1, dtype)
        params[f"{p}/b2/w"], params[f"{p}/b2/b"] = nn.conv_init(rng, 3, 3, d1, d2, dtype)
        params[f"{p}/b3r/w"], params[f"{p}/b3r/b"] = nn.conv_init(rng, 1, 1, cin, d1, dtype)
        params[f"{p}/b3/w"], params[f"{p}/b3/b"] = nn.conv_init(rng, 5, 5, d1, d2, dtype)
        params[f"{p}/b4/w"], params[f"{p}/b4/b"] = nn.conv_init(rng, 1, 1, cin, d1, dtype)
        cin = config.inception_channels(i)
    flat = config.collapsed_height() * cin
    params["proj/w"], params["proj/b"] = nn.fc_init(rng, flat, config.feature_dim, dtype)
    return params


def parameter_count(config: EncoderConfig) -> int:
    """Number of trainable scalars, a pure function of the config."""
    s = config.stem
    total = s.height * s.width * 1 * s.channels + s.channels
    cin = s.channels
    for i, spec in enumerate(config.inception):
        d1, d2 = spec.reduce_channels, spec.expand_channels
        total += 4 * (cin * d1 + d1)  # the four 1x1 convolutions
        total += 9 * d1 * d2 + d2  # 3x3 expand
        total += 25 * d1 * d2 + d2  # 5x5 expand
        cin = config.inception_channels(i)
    flat = config.collapsed_height() * cin
    total += flat * config.feature_dim + config.feature_dim
    return total


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _conv_block(x, w, b, stride):
    return nn.relu6(nn.add(nn.conv2d(x, w, stride), b))


def inception_module(x: nn.Tensor, params: dict, prefix: str, valid_widths=None) -> nn.Tensor:
    """Four parallel branches concatenated along channels.

    (a) 1x1 reduce; (b) 1x1 reduce then 3x3; (c) 1x1 reduce then 5x5;
    (d) 3x3 average pool then 1x1 reduce. All relu6, stride 1, SAME.
    """
    p = lambda n: params[f"{prefix}/{n}"]
    one = (1, 1)
    a = _conv_block(x, p("b1/w"), p("b1/b"), one)
    b = _conv_block(_conv_block(x, p("b2r/w"), p("b2r/b"), one), p("b2/w"), p("b2/b"), one)
    c = _conv_block(_conv_block(x, p("b3r/w"), p("b3r/b"), one), p("b3/w"), p("b3/b"), one)
    pooled = nn.avg_pool2d(x, (3, 3), (1, 1), valid_widths=valid_widths)
    d = _conv_block(pooled, p("b4/w"), p("b4/b"), one)
    return nn.concat([a, b, c, d], axis=-1)


def _mask_columns(x: nn.Tensor, extents: np.ndarray) -> nn.Tensor:
    """Zero every column at or beyond each sample's extent."""
    b, _, w, _ = x.shape
    cols = np.arange(w)[None, :]
    keep = (cols < extents[:, None]).astype(x.data.dtype)
    return nn.mul(x, nn.Tensor(keep[:, None, :, None]))


def encode_batch(images: nn.Tensor, widths, config: EncoderConfig, params: dict):
    """Encode a width-padded batch.

    `images` is (b, 40, W, 1) with each line occupying its first widths[i]
    columns and zeros elsewhere. Returns (features (b, w'max, d'), frame
    mask (b, w'max) bool). Feature columns beyond a line's own length are
    zeroed.
    """
    if images.ndim != 4:
        raise nn.ShapeError(f"expected (b, h, w, 1) batch, got {images.shape}")
    b, h, w, c = images.shape
    if h != config.input_height or c != 1:
        raise nn.ShapeError(
            f"encoder expects height {config.input_height}, 1 channel; got height {h}, {c} channels"
        )
    lo, hi = float(images.data.min()), float(images.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")
    widths = np.asarray(widths, dtype=np.int64)
    if widths.shape != (b,) or (widths < 1).any() or (widths > w).any():
        raise nn.ShapeError(f"bad widths {widths} for batch of {b} images {w} wide")

    def shrink(e, stride):
        return -(-e // stride)

    extents = widths
    x = _conv_block(images, params["stem/w"], params["stem/b"], (config.stem.stride_h, config.stem.stride_w))
    extents = shrink(extents, config.stem.stride_w)
    x = _mask_columns(x, extents)

    sp = config.stem_pool
    x = nn.pool(x, sp.kind, (sp.height, sp.width), (sp.stride_h, sp.stride_w))
    extents = shrink(extents, sp.stride_w)
    x = _mask_columns(x, extents)

    for i in range(len(config.inception)):
        x = inception_module(x, params, f"incep{i}", valid_widths=extents)
        x = _mask_columns(x, extents)

    fp = config.final_pool
    x = nn.pool(x, fp.kind, (fp.height, fp.width), (fp.stride_h, fp.stride_w))
    extents = shrink(extents, fp.stride_w)
    x = _mask_columns(x, extents)

    # (b, h_f, w', c) -> (b, w', h_f * c) -> project to d'
    bsz, h_f, w_len, ch = x.shape
    columns = nn.reshape(nn.permute(x, (0, 2, 1, 3)), (bsz, w_len, h_f * ch))
    feats = nn.tanh(nn.add(nn.matmul(columns, params["proj/w"]), params["proj/b"]))

    mask = np.arange(w_len)[None, :] < extents[:, None]
    feats = nn.mul(feats, nn.Tensor(mask[:, :, None].astype(feats.data.dtype)))
    return feats, mask


def encode(image, config: EncoderConfig, params: dict, image_id: str | None = None) -> FeatureSequence:
    """Encode a single (40, w, 1) grayscale line image."""
    image = nn.as_tensor(image)
    if image.ndim != 3:
        raise nn.ShapeError(f"expected (h, w, 1) image, got {image.shape}")
    width = image.shape[1]
    batch = nn.reshape(image, (1,) + image.shape)
    feats, _ = encode_batch(batch, [width], config, params)
    values = nn.reshape(feats, feats.shape[1:])
    return FeatureSequence(values=values, source_width=width, image_id=image_id)
