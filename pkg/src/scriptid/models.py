"""Model containers: construction, batched inference, persistence glue.

Two families share one encoder topology. A ScriptIdModel classifies a
whole line with one of the summarizers; a CtcModel emits per-frame symbol
logits over an alphabet, serving both the per-script recognizers and the
script-code voting baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import nn
from .baseline import CodeSpec, ScriptCodeAlphabet, classify_codes
from .ctc import SymbolAlphabet
from .encoder import EncoderConfig, encode_batch, init_params, output_length
from .lm import GraphemePrior
from .summarizers import (
    HeadConfig,
    ScriptPosterior,
    SUMMARIZER_KINDS,
    init_logit_head,
    init_summarizer_params,
    posterior_from_scores,
    summarize,
)

PRIOR_TENSOR = "prior"


def _head_dict(head: HeadConfig) -> dict:
    return {"channels": head.channels, "kernel_width": head.kernel_width,
            "lstm_units": head.lstm_units, "lstm_hidden": head.lstm_hidden}


def _head_from_dict(d: dict) -> HeadConfig:
    return HeadConfig(**d)


def _batchify(images) -> tuple[nn.Tensor, np.ndarray]:
    """Stack (40, w, 1) arrays into a zero-padded batch plus widths."""
    widths = np.array([img.shape[1] for img in images], dtype=np.int64)
    wmax = int(widths.max())
    batch = np.zeros((len(images), images[0].shape[0], wmax, 1), dtype=np.float32)
    for i, img in enumerate(images):
        batch[i, :, : img.shape[1], :] = img
    return nn.Tensor(batch), widths


@dataclass
class ScriptIdModel:
    encoder: EncoderConfig
    head: HeadConfig
    kind: str
    scripts: tuple[str, ...]
    params: dict

    @classmethod
    def build(cls, kind: str, scripts, encoder: EncoderConfig | None = None,
              head: HeadConfig | None = None, seed: int = 0,
              dtype=nn.DEFAULT_DTYPE) -> "ScriptIdModel":
        if kind not in SUMMARIZER_KINDS:
            raise ValueError(f"unknown summarizer kind {kind!r}")
        encoder = encoder or EncoderConfig()
        head = head or HeadConfig()
        scripts = tuple(scripts)
        rng = np.random.default_rng([seed, 2])
        params = init_params(encoder, rng, dtype)
        params.update(init_summarizer_params(kind, encoder.feature_dim, len(scripts), head, rng, dtype))
        return cls(encoder=encoder, head=head, kind=kind, scripts=scripts, params=params)

    def scores_batch(self, images: nn.Tensor, widths) -> nn.Tensor:
        feats, mask = encode_batch(images, widths, self.encoder, self.params)
        return summarize(feats, mask, self.kind, self.params)

    def posteriors(self, images, batch_size: int = 32) -> np.ndarray:
        """Per-line posterior matrix for a list of (40, w, 1) arrays."""
        out = np.zeros((len(images), len(self.scripts)), dtype=np.float64)
        for lo in range(0, len(images), batch_size):
            chunk = images[lo:lo + batch_size]
            batch, widths = _batchify(chunk)
            scores = self.scores_batch(batch, widths).data
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            out[lo:lo + len(chunk)] = e / e.sum(axis=1, keepdims=True)
        return out

    def posterior(self, image) -> ScriptPosterior:
        batch, widths = _batchify([np.asarray(image)])
        scores = self.scores_batch(batch, widths).data[0]
        return posterior_from_scores(scores)

    def classify(self, image) -> str:
        return self.scripts[self.posterior(image).best]

    def descriptor(self) -> dict:
        return {
            "type": "scriptid",
            "kind": self.kind,
            "scripts": list(self.scripts),
            "encoder": self.encoder.to_dict(),
            "head": _head_dict(self.head),
        }

    def save(self, path) -> None:
        ckpt.save(path, self.descriptor(), {k: v.data for k, v in self.params.items()})

    @classmethod
    def from_checkpoint(cls, path) -> "ScriptIdModel":
        desc, tensors = ckpt.load(path)
        if desc.get("type") != "scriptid":
            raise ckpt.CheckpointError(f"{path}: not a script-id checkpoint (type {desc.get('type')!r})")
        model = cls.build(desc["kind"], desc["scripts"],
                          EncoderConfig.from_dict(desc["encoder"]), _head_from_dict(desc["head"]))
        ckpt.validate_shapes({k: v.shape for k, v in model.params.items()}, tensors, path)
        model.params = {k: nn.Tensor(v, requires_grad=True) for k, v in tensors.items()}
        return model


@dataclass
class CtcModel:
    """Encoder plus a per-frame logit head over a symbol alphabet."""

    encoder: EncoderConfig
    head: HeadConfig
    alphabet: SymbolAlphabet
    params: dict
    prior: GraphemePrior | None = None
    code_alphabet: ScriptCodeAlphabet | None = None  # set for the voting baseline

    @classmethod
    def build(cls, alphabet: SymbolAlphabet, encoder: EncoderConfig | None = None,
              head: HeadConfig | None = None, seed: int = 0, dtype=nn.DEFAULT_DTYPE,
              code_alphabet: ScriptCodeAlphabet | None = None,
              with_prior: bool = False) -> "CtcModel":
        encoder = encoder or EncoderConfig()
        head = head or HeadConfig()
        rng = np.random.default_rng([seed, 3])
        params = init_params(encoder, rng, dtype)
        params.update(init_logit_head(rng, encoder.feature_dim, alphabet.size, head, "frames", dtype))
        prior = GraphemePrior.uniform(alphabet.size) if with_prior else None
        return cls(encoder=encoder, head=head, alphabet=alphabet, params=params,
                   prior=prior, code_alphabet=code_alphabet)

    def frame_logits_batch(self, images: nn.Tensor, widths) -> tuple[nn.Tensor, np.ndarray]:
        feats, mask = encode_batch(images, widths, self.encoder, self.params)
        b, t, _ = feats.shape
        img = nn.reshape(feats, (b, 1, t, feats.shape[-1]))
        conv = nn.relu6(nn.add(nn.conv2d(img, self.params["frames/conv/w"], (1, 1)), self.params["frames/conv/b"]))
        flat = nn.reshape(conv, (b, t, conv.shape[-1]))
        logits = nn.add(nn.matmul(flat, self.params["frames/proj/w"]), self.params["frames/proj/b"])
        return logits, mask

    def frame_logits(self, image) -> np.ndarray:
        batch, widths = _batchify([np.asarray(image)])
        logits, _ = self.frame_logits_batch(batch, widths)
        n = output_length(int(widths[0]), self.encoder)
        return logits.data[0, :n]

    def classify(self, image) -> str | None:
        """Voting baseline: decode script codes, then majority vote."""
        if self.code_alphabet is None:
            raise ValueError("this model has no script-code vote rules attached")
        return classify_codes(self.frame_logits(image), self.code_alphabet)

    def vote_shares(self, image) -> np.ndarray:
        """Normalized vote mass per script; uniform when nothing voted."""
        from .baseline import tally_votes
        from .ctc import ctc_greedy_decode

        if self.code_alphabet is None:
            raise ValueError("this model has no script-code vote rules attached")
        symbols = self.code_alphabet.symbol_alphabet()
        decoded = ctc_greedy_decode(self.frame_logits(image))
        tally = tally_votes([symbols.symbols[i] for i in decoded], self.code_alphabet)
        counts = np.array([tally.votes[s] for s in self.code_alphabet.scripts], dtype=np.float64)
        if counts.sum() == 0:
            return np.full(len(counts), 1.0 / len(counts))
        return counts / counts.sum()

    def descriptor(self) -> dict:
        desc = {
            "type": "ctc",
            "alphabet": list(self.alphabet.symbols),
            "encoder": self.encoder.to_dict(),
            "head": _head_dict(self.head),
            "has_prior": self.prior is not None,
        }
        if self.prior is not None:
            desc["prior"] = {"decay": self.prior.decay, "floor": self.prior.floor}
        if self.code_alphabet is not None:
            desc["codes"] = [
                {"code": c.code, "kind": c.kind, "members": list(c.members)}
                for c in self.code_alphabet.codes
            ]
            desc["scripts"] = list(self.code_alphabet.scripts)
        return desc

    def save(self, path) -> None:
        tensors = {k: v.data for k, v in self.params.items()}
        if self.prior is not None:
            tensors[PRIOR_TENSOR] = self.prior.probabilities.astype(np.float64)
        ckpt.save(path, self.descriptor(), tensors)

    @classmethod
    def from_checkpoint(cls, path) -> "CtcModel":
        desc, tensors = ckpt.load(path)
        if desc.get("type") != "ctc":
            raise ckpt.CheckpointError(f"{path}: not a frame-model checkpoint (type {desc.get('type')!r})")
        alphabet = SymbolAlphabet(tuple(desc["alphabet"]))
        code_alphabet = None
        if "codes" in desc:
            code_alphabet = ScriptCodeAlphabet(
                scripts=tuple(desc["scripts"]),
                codes=tuple(CodeSpec(c["code"], c["kind"], tuple(c["members"])) for c in desc["codes"]),
            )
        model = cls.build(alphabet, EncoderConfig.from_dict(desc["encoder"]),
                          _head_from_dict(desc["head"]), code_alphabet=code_alphabet,
                          with_prior=desc.get("has_prior", False))
        expected = {k: v.shape for k, v in model.params.items()}
        if desc.get("has_prior"):
            expected[PRIOR_TENSOR] = (alphabet.size,)
        ckpt.validate_shapes(expected, tensors, path)
        prior = None
        if desc.get("has_prior"):
            spec = desc["prior"]
            prior = GraphemePrior(tensors.pop(PRIOR_TENSOR), decay=spec["decay"], floor=spec["floor"])
        model.params = {k: nn.Tensor(v, requires_grad=True) for k, v in tensors.items()}
        model.prior = prior
        return model


def load_any(path):
    """Open either checkpoint family by inspecting the descriptor."""
    desc, _ = ckpt.load(path)
    if desc.get("type") == "scriptid":
        return ScriptIdModel.from_checkpoint(path)
    if desc.get("type") == "ctc":
        return CtcModel.from_checkpoint(path)
    raise ckpt.CheckpointError(f"{path}: unknown checkpoint type {desc.get('type')!r}")
