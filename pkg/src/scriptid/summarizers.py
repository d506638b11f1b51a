"""Summarizers: aggregate a feature sequence into one score per script.

Four variants share the encoder. Max, Mean and Gate read a per-frame
logit head; Gate additionally weights frames with a sigmoid gate head and
normalizes by the gate mass. The LSTM variant runs a forward pass over
the features, a backward pass over the forward outputs, and classifies
from the first output index of the backward pass. Scores become the
posterior through a softmax.

All aggregations accept a frame mask so that right-padded batches give
the same answer as per-line runs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .encoder import EncoderConfig, encode

SUMMARIZER_KINDS = ("max", "mean", "gate", "lstm")

GATE_MASS_GUARD = 1e-8  # keeps the gate normalizer away from zero


@dataclass(frozen=True)
class HeadConfig:
    """Widths of the per-frame heads and the LSTM summarizer."""

    channels: int = 64
    kernel_width: int = 3
    lstm_units: int = 64
    lstm_hidden: int = 64


def init_logit_head(rng, feature_dim: int, n_out: int, head: HeadConfig, prefix: str,
                    dtype=nn.DEFAULT_DTYPE) -> dict:
    """Per-frame head: kernel_width convolution over the sequence, then a
    zero-initialized linear projection (an untrained head scores uniformly)."""
    params = {}
    params[f"{prefix}/conv/w"], params[f"{prefix}/conv/b"] = nn.conv_init(
        rng, 1, head.kernel_width, feature_dim, head.channels, dtype
    )
    params[f"{prefix}/proj/w"], params[f"{prefix}/proj/b"] = nn.fc_init(
        rng, head.channels, n_out, dtype, zero=True
    )
    return params


def init_summarizer_params(kind: str, feature_dim: int, n_scripts: int, head: HeadConfig,
                           rng, dtype=nn.DEFAULT_DTYPE) -> dict:
    if kind not in SUMMARIZER_KINDS:
        raise ValueError(f"unknown summarizer kind {kind!r}; expected one of {SUMMARIZER_KINDS}")
    if kind == "lstm":
        params = {}
        for direction, dim in (("fwd", feature_dim), ("bwd", head.lstm_units)):
            w, u, b = nn.lstm_init(rng, dim, head.lstm_units, dtype)
            params[f"lstm/{direction}/w"] = w
            params[f"lstm/{direction}/u"] = u
            params[f"lstm/{direction}/b"] = b
        params["lstm/fc1/w"], params["lstm/fc1/b"] = nn.fc_init(rng, head.lstm_units, head.lstm_hidden, dtype)
        params["lstm/fc2/w"], params["lstm/fc2/b"] = nn.fc_init(rng, head.lstm_hidden, n_scripts, dtype, zero=True)
        return params
    params = init_logit_head(rng, feature_dim, n_scripts, head, "logits", dtype)
    if kind == "gate":
        params.update(init_logit_head(rng, feature_dim, 1, head, "gate", dtype))
    return params


def _head_body(h: nn.Tensor, params: dict, prefix: str) -> nn.Tensor:
    """Shared head body on a (b, w', d') sequence; returns (b, w', n_out)."""
    b, t, d = h.shape
    img = nn.reshape(h, (b, 1, t, d))
    conv = nn.relu6(nn.add(nn.conv2d(img, params[f"{prefix}/conv/w"], (1, 1)), params[f"{prefix}/conv/b"]))
    flat = nn.reshape(conv, (b, t, conv.shape[-1]))
    return nn.add(nn.matmul(flat, params[f"{prefix}/proj/w"]), params[f"{prefix}/proj/b"])


def frame_logits(h: nn.Tensor, params: dict) -> nn.Tensor:
    """Per-frame, per-script scores of shape (b, w', n_scripts)."""
    return _head_body(h, params, "logits")


def gate_weights(h: nn.Tensor, params: dict) -> nn.Tensor:
    """Per-frame gates in (0, 1), shape (b, w', 1)."""
    return nn.sigmoid(_head_body(h, params, "gate"))


def _lstm_scores(h: nn.Tensor, mask: np.ndarray, params: dict) -> nn.Tensor:
    fwd = nn.lstm_sequence(h, params["lstm/fwd/w"], params["lstm/fwd/u"], params["lstm/fwd/b"], mask=mask)
    bwd = nn.lstm_sequence(fwd, params["lstm/bwd/w"], params["lstm/bwd/u"], params["lstm/bwd/b"],
                           reverse=True, mask=mask)
    first = nn.reshape(nn.narrow(bwd, 1, 0, 1), (bwd.shape[0], bwd.shape[2]))
    hid = nn.fully_connected(first, params["lstm/fc1/w"], params["lstm/fc1/b"], "tanh")
    return nn.fully_connected(hid, params["lstm/fc2/w"], params["lstm/fc2/b"], "linear")


def summarize(h: nn.Tensor, mask, kind: str, params: dict) -> nn.Tensor:
    """Aggregate (b, w', d') features into (b, n_scripts) scores.

    max: per-script maximum of the frame logits over valid frames.
    mean: their per-script average.
    gate: gate-weighted average, sum(g*l) / (sum(g) + guard).
    lstm: sequence state of the stacked forward/backward recurrence.
    """
    if h.ndim != 3:
        raise nn.ShapeError(f"expected (b, w', d') features, got {h.shape}")
    if h.shape[1] < 1:
        raise nn.ShapeError("cannot summarize an empty feature sequence")
    mask = np.asarray(mask, dtype=bool)
    if kind == "lstm":
        return _lstm_scores(h, mask.astype(h.data.dtype), params)
    logits = frame_logits(h, params)
    if kind == "max":
        return nn.masked_max_seq(logits, mask)
    if kind == "mean":
        return nn.masked_mean_seq(logits, mask)
    if kind == "gate":
        gates = gate_weights(h, params)
        weighted = nn.masked_sum_seq(nn.mul(logits, gates), mask)
        mass = nn.masked_sum_seq(gates, mask)
        return nn.div(weighted, nn.add(mass, GATE_MASS_GUARD))
    raise ValueError(f"unknown summarizer kind {kind!r}")


@dataclass
class ScriptPosterior:
    """Pre-softmax scores and the resulting distribution over scripts."""

    scores: np.ndarray
    probabilities: np.ndarray

    @property
    def best(self) -> int:
        return int(np.argmax(self.probabilities))


def posterior_from_scores(scores: np.ndarray) -> ScriptPosterior:
    scores = np.asarray(scores)
    probs = nn.softmax(nn.Tensor(scores)).data
    return ScriptPosterior(scores=scores, probabilities=probs)


def classify_script(image, config: EncoderConfig, kind: str, params: dict) -> ScriptPosterior:
    """Posterior over scripts for one line image: softmax(F(E(x), .))."""
    seq = encode(image, config, params)
    h = nn.reshape(seq.values, (1,) + seq.values.shape)
    mask = np.ones((1, seq.length), dtype=bool)
    scores = summarize(h, mask, kind, params)
    return posterior_from_scores(scores.data[0])
