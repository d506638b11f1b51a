"""Dump per-frame head activity as grayscale images.

The per-frame logit map is written as a (w' wide, one row per script)
strip, min-max normalized so brighter pixels mean greater values. Gate
models additionally write the raw gate vector as a (w' wide, 1 tall)
strip without normalization; its bytes stay inside (0, 255) so decoded
values remain strictly inside (0, 1).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import nn
from .encoder import encode
from .models import ScriptIdModel
from .summarizers import frame_logits, gate_weights
from .synthdata import write_pgm


def dump_activations(model: ScriptIdModel, image, out_dir) -> list:
    """Write activation maps for one line; returns the created paths."""
    if model.kind == "lstm":
        raise ValueError("the lstm summarizer has no per-frame logit map to dump")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seq = encode(np.asarray(image), model.encoder, model.params)
    h = nn.reshape(seq.values, (1,) + seq.values.shape)

    logits = frame_logits(h, model.params).data[0]  # (w', |S|)
    lo, hi = float(logits.min()), float(logits.max())
    scaled = np.zeros_like(logits) if hi == lo else (logits - lo) / (hi - lo)
    logits_path = out / "logits.pgm"
    write_pgm(logits_path, scaled.T)  # one row per script, w' columns
    created = [logits_path]

    if model.kind == "gate":
        gates = gate_weights(h, model.params).data[0, :, 0]  # values in (0, 1)
        bytes_row = np.clip(np.round(gates * 255.0), 1, 254) / 255.0
        gate_path = out / "gate.pgm"
        write_pgm(gate_path, bytes_row[None, :])
        created.append(gate_path)
    return created
