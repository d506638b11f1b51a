"""Training loops: width-grouped mini-batches, Adam, deterministic seeding.

Lines are sorted by width and chunked so each batch pads as little as
possible; padded columns are masked throughout the models, so batch
composition only affects gradient averaging. All randomness flows from
the configured seed, making two runs with the same inputs bit-identical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .ctc import SymbolAlphabet, ctc_loss, min_frames
from .encoder import EncoderConfig, output_length
from .lm import NGramLM, prior_update
from .models import CtcModel, ScriptIdModel, _batchify
from .summarizers import HeadConfig
from .synthdata import ScriptCodeAlphabet, read_catalog, read_manifest, read_pgm

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_size: int = 16
    learning_rate: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 100
    lm_order: int = 3
    lm_k: float = 0.1
    prior_decay: float = 0.999
    prior_floor: float = 1e-6

    def __post_init__(self):
        if self.steps < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("bad training configuration")


@dataclass
class LineRecord:
    """One manifest row with its image loaded (uint8 to keep memory small)."""

    image_u8: np.ndarray  # (40, w)
    script_id: str
    orientation: str
    transcript: tuple[str, ...]
    codes: tuple[str, ...]

    @property
    def width(self) -> int:
        return self.image_u8.shape[1]

    def image(self) -> np.ndarray:
        return (self.image_u8.astype(np.float32) / 255.0)[:, :, None]


def load_split(data_dir, split: str) -> list[LineRecord]:
    data_dir = Path(data_dir)
    manifest = data_dir / f"{split}.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest for split {split!r} at {manifest}")
    records = []
    for row in read_manifest(manifest):
        img = read_pgm(data_dir / row.path)
        records.append(LineRecord(
            image_u8=img,
            script_id=row.script_id,
            orientation=row.orientation,
            transcript=row.transcript,
            codes=row.codes,
        ))
    return records


def load_catalog(data_dir) -> ScriptCodeAlphabet:
    return read_catalog(Path(data_dir) / "catalog.txt")


def _width_batches(records, batch_size: int) -> list[list[int]]:
    order = sorted(range(len(records)), key=lambda i: (records[i].width, i))
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def _batch_arrays(records, indices):
    images = [records[i].image() for i in indices]
    return _batchify(images)


def _batch_stream(records, batch_size: int, steps: int, rng: np.random.Generator):
    """Yield `steps` batches, reshuffling the width-grouped chunks per epoch."""
    chunks = _width_batches(records, batch_size)
    produced = 0
    while produced < steps:
        order = rng.permutation(len(chunks))
        for j in order:
            if produced == steps:
                return
            yield chunks[j]
            produced += 1


def train_scriptid(
    records,
    kind: str,
    scripts,
    train: TrainConfig,
    encoder: EncoderConfig | None = None,
    head: HeadConfig | None = None,
) -> ScriptIdModel:
    """Cross-entropy training of an encoder-summarizer classifier."""
    model = ScriptIdModel.build(kind, scripts, encoder=encoder, head=head, seed=train.seed)
    script_index = {s: i for i, s in enumerate(model.scripts)}
    labels_all = np.array([script_index[r.script_id] for r in records], dtype=np.int64)
    opt = nn.Adam(model.params, lr=train.learning_rate, beta1=train.beta1,
                  beta2=train.beta2, eps=train.eps)
    rng = np.random.default_rng([train.seed, 11])
    for step, indices in enumerate(_batch_stream(records, train.batch_size, train.steps, rng), start=1):
        batch, widths = _batch_arrays(records, indices)
        scores = model.scores_batch(batch, widths)
        loss = nn.cross_entropy(scores, labels_all[indices])
        loss.backward()
        opt.step()
        opt.zero_grad()
        if step % train.log_every == 0 or step == train.steps:
            log.info("scriptid/%s step %d loss %.4f", kind, step, loss.item())
        else:
            log.debug("scriptid/%s step %d loss %.4f", kind, step, loss.item())
    return model


def _feasible(records, label_of, encoder: EncoderConfig, alphabet: SymbolAlphabet):
    """Split records into trainable ones and a skipped count."""
    usable, skipped = [], 0
    for r in records:
        label = alphabet.encode(label_of(r))
        frames = output_length(r.width, encoder)
        if frames < min_frames(label):
            skipped += 1
            continue
        usable.append((r, label))
    if skipped:
        log.warning("skipped %d lines whose labels cannot align to their frames", skipped)
    return usable, skipped


def train_ctc(
    records,
    alphabet: SymbolAlphabet,
    label_of,
    train: TrainConfig,
    encoder: EncoderConfig | None = None,
    head: HeadConfig | None = None,
    code_alphabet: ScriptCodeAlphabet | None = None,
    with_prior: bool = False,
) -> CtcModel:
    """CTC training of a frame model; `label_of(record)` gives symbol strings."""
    model = CtcModel.build(alphabet, encoder=encoder, head=head, seed=train.seed,
                           code_alphabet=code_alphabet, with_prior=with_prior)
    if with_prior:
        model.prior = model.prior.__class__.uniform(alphabet.size, decay=train.prior_decay,
                                                    floor=train.prior_floor)
    usable, _ = _feasible(records, label_of, model.encoder, alphabet)
    if not usable:
        raise ValueError("no trainable lines: every label is infeasible")
    rows = [r for r, _ in usable]
    labels = [lab for _, lab in usable]
    opt = nn.Adam(model.params, lr=train.learning_rate, beta1=train.beta1,
                  beta2=train.beta2, eps=train.eps)
    rng = np.random.default_rng([train.seed, 12])
    for step, indices in enumerate(_batch_stream(rows, train.batch_size, train.steps, rng), start=1):
        batch, widths = _batch_arrays(rows, indices)
        logits, mask = model.frame_logits_batch(batch, widths)
        losses = []
        for slot, i in enumerate(indices):
            frames = output_length(int(widths[slot]), model.encoder)
            per_line = nn.reshape(nn.narrow(logits, 0, slot, 1), logits.shape[1:])
            losses.append(ctc_loss(nn.narrow(per_line, 0, 0, frames), labels[i]))
        loss = nn.scale(nn.reduce_sum(nn.concat([nn.reshape(l, (1,)) for l in losses], axis=0)),
                        1.0 / len(losses))
        loss.backward()
        opt.step()
        opt.zero_grad()
        if with_prior:
            model.prior = prior_update(model.prior, logits.data, mask)
        if step % train.log_every == 0 or step == train.steps:
            log.info("ctc step %d loss %.4f", step, loss.item())
        else:
            log.debug("ctc step %d loss %.4f", step, loss.item())
    return model


def ocr_alphabet(records, script_set_ids=None) -> SymbolAlphabet:
    """Alphabet from the symbols observable in the given lines."""
    symbols = set()
    for r in records:
        symbols.update(r.transcript)
    if not symbols:
        raise ValueError("no transcripts to derive an alphabet from")
    return SymbolAlphabet.from_symbols(sorted(symbols))


def train_ocr_model(records, script_id: str, train: TrainConfig,
                    encoder: EncoderConfig | None = None,
                    head: HeadConfig | None = None) -> tuple[CtcModel, NGramLM]:
    """Per-script recognizer plus its n-gram model, from that script's lines."""
    subset = [r for r in records if r.script_id == script_id]
    if not subset:
        raise ValueError(f"no lines for script {script_id!r}")
    alphabet = ocr_alphabet(subset)
    model = train_ctc(subset, alphabet, lambda r: r.transcript, train,
                      encoder=encoder, head=head, with_prior=True)
    lm = NGramLM.fit([r.transcript for r in subset], order=train.lm_order,
                     k=train.lm_k, symbols=alphabet.real_symbols)
    return model, lm


def train_base_model(records, catalog: ScriptCodeAlphabet, train: TrainConfig,
                     encoder: EncoderConfig | None = None,
                     head: HeadConfig | None = None) -> CtcModel:
    """Voting-baseline frame model over script codes."""
    return train_ctc(records, catalog.symbol_alphabet(), lambda r: r.codes, train,
                     encoder=encoder, head=head, code_alphabet=catalog)
