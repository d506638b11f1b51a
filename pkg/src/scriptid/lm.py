"""Symbol-sequence prior models used during decoding.

An add-k smoothed n-gram model over display symbols with begin/end
markers, plus the running estimate of per-symbol output frequency kept as
an exponential moving average of the optical model's frame posteriors.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BEGIN = "<s>"
END = "</s>"

_HEADER = re.compile(r"^NGLM1 N=(\d+) k=([0-9.eE+-]+)$")


@dataclass
class NGramLM:
    """Add-k smoothed n-gram model with begin/end markers."""

    order: int
    k: float
    symbols: tuple[str, ...]
    counts: dict = field(default_factory=dict)
    context_totals: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if self.k <= 0:
            raise ValueError("smoothing constant must be positive")

    @classmethod
    def fit(cls, corpus, order: int, k: float = 0.1, symbols=None) -> "NGramLM":
        """Count n-grams over sequences of display symbols.

        `symbols`, when given, fixes the vocabulary; corpus symbols are
        merged in so conditionals always normalize over alphabet + end.
        """
        corpus = [tuple(seq) for seq in corpus]
        if not corpus:
            raise ValueError("cannot fit a language model on an empty corpus")
        vocab = set(symbols or ())
        for seq in corpus:
            vocab.update(seq)
        if BEGIN in vocab or END in vocab:
            raise ValueError(f"{BEGIN!r} and {END!r} are reserved markers")
        model = cls(order=order, k=k, symbols=tuple(sorted(vocab)))
        for seq in corpus:
            tokens = list(seq) + [END]
            history = [BEGIN] * (order - 1)
            for target in tokens:
                ctx = tuple(history[len(history) - (order - 1):]) if order > 1 else ()
                slot = model.counts.setdefault(ctx, {})
                slot[target] = slot.get(target, 0) + 1
                model.context_totals[ctx] = model.context_totals.get(ctx, 0) + 1
                history.append(target)
        return model

    def _context(self, context) -> tuple:
        if self.order == 1:
            return ()
        ctx = [BEGIN] * (self.order - 1) + list(context)
        return tuple(ctx[len(ctx) - (self.order - 1):])

    def cond_logprob(self, context, symbol: str) -> float:
        """log P(symbol | last order-1 context symbols)."""
        if symbol != END and symbol not in self.symbols:
            raise KeyError(f"symbol {symbol!r} not in the model vocabulary")
        ctx = self._context(context)
        count = self.counts.get(ctx, {}).get(symbol, 0)
        total = self.context_totals.get(ctx, 0)
        vocab = len(self.symbols) + 1  # + end marker
        return math.log((count + self.k) / (total + self.k * vocab))

    def sequence_logprob(self, seq) -> float:
        """log P(sequence), including the end-marker term."""
        seq = list(seq)
        total = 0.0
        for i, sym in enumerate(seq + [END]):
            total += self.cond_logprob(seq[:i], sym)
        return total

    # serialization: header line, then context<TAB>symbol<TAB>count rows
    def save(self, path) -> None:
        lines = [f"NGLM1 N={self.order} k={self.k!r}"]
        for ctx in sorted(self.counts):
            for sym in sorted(self.counts[ctx]):
                lines.append(f"{' '.join(ctx)}\t{sym}\t{self.counts[ctx][sym]}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, symbols) -> "NGramLM":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text:
            raise ValueError(f"{path}: empty language model file")
        m = _HEADER.match(text[0])
        if not m:
            raise ValueError(f"{path}: bad header {text[0]!r}")
        model = cls(order=int(m.group(1)), k=float(m.group(2)), symbols=tuple(sorted(set(symbols))))
        for line in text[1:]:
            if not line:
                continue
            ctx_field, sym, count = line.split("\t")
            ctx = tuple(ctx_field.split(" ")) if ctx_field else ()
            slot = model.counts.setdefault(ctx, {})
            slot[sym] = slot.get(sym, 0) + int(count)
            model.context_totals[ctx] = model.context_totals.get(ctx, 0) + int(count)
        return model


@dataclass(frozen=True)
class GraphemePrior:
    """Moving-average estimate of per-symbol emission probability.

    Covers the full alphabet including the blank slot; floored and
    renormalized after every update.
    """

    probabilities: np.ndarray
    decay: float = 0.999
    floor: float = 1e-6

    def __post_init__(self):
        p = self.probabilities
        if p.ndim != 1 or abs(float(p.sum()) - 1.0) > 1e-6 or (p < 0).any():
            raise ValueError("prior must be a probability vector")

    @classmethod
    def uniform(cls, size: int, decay: float = 0.999, floor: float = 1e-6) -> "GraphemePrior":
        return cls(np.full(size, 1.0 / size), decay=decay, floor=floor)

    def updated(self, batch_mean: np.ndarray) -> "GraphemePrior":
        """Blend in one batch's mean frame posterior, floor, renormalize."""
        batch_mean = np.asarray(batch_mean, dtype=np.float64)
        if batch_mean.shape != self.probabilities.shape:
            raise ValueError(
                f"batch distribution shape {batch_mean.shape} does not match prior {self.probabilities.shape}"
            )
        if self.decay == 1.0:
            return self
        p = self.decay * self.probabilities + (1.0 - self.decay) * batch_mean
        p = np.maximum(p, self.floor)
        return GraphemePrior(p / p.sum(), decay=self.decay, floor=self.floor)


def prior_update(prior: GraphemePrior, frame_logits: np.ndarray, mask=None) -> GraphemePrior:
    """Fold a batch of frame logits into the prior.

    `frame_logits` is (T, K) or (b, T, K) pre-softmax; `mask` selects the
    frames that belong to real line content.
    """
    x = np.asarray(frame_logits, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (T, K) or (b, T, K) frame logits, got {x.shape}")
    m = x.max(axis=2, keepdims=True)
    e = np.exp(x - m)
    probs = e / e.sum(axis=2, keepdims=True)
    if mask is None:
        mean = probs.reshape(-1, x.shape[2]).mean(axis=0)
    else:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != x.shape[:2]:
            raise ValueError(f"mask shape {sel.shape} does not match frames {x.shape[:2]}")
        mean = probs[sel].mean(axis=0)
    return prior.updated(mean)
