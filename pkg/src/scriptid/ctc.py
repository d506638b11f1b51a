"""Alignment-free sequence loss and decoding for frame-level outputs.

The loss marginalizes over every blank-augmented monotonic alignment
between frames and a label sequence with a log-space forward/backward
recursion, and returns the exact gradient with respect to the frame
logits. Decoding offers a best-path collapse and a prefix beam search
that scores hypotheses log-linearly from the optical mass, a per-symbol
prior, and an n-gram language model.

Beam search tracks (prefix, ends-in-symbol) states rather than merged
prefixes. With width 1 and zero prior/LM weights it therefore reduces
exactly to the best-path decode, while an unbounded beam reproduces
exhaustive transcript scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import nn
from .lm import END

BLANK = 0


class InfeasibleLabelError(ValueError):
    """The label cannot be aligned to the available frames."""


@dataclass(frozen=True)
class SymbolAlphabet:
    """Ordered symbol set with the reserved blank at index 0."""

    symbols: tuple[str, ...]

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != "<blank>":
            raise ValueError("alphabet must start with the reserved '<blank>' symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("alphabet symbols must be unique")

    @classmethod
    def from_symbols(cls, symbols) -> "SymbolAlphabet":
        return cls(("<blank>",) + tuple(symbols))

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def real_symbols(self) -> tuple[str, ...]:
        return self.symbols[1:]

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise KeyError(f"symbol {symbol!r} not in alphabet") from None

    def encode(self, symbols) -> list[int]:
        return [self.index(s) for s in symbols]

    def decode(self, indices) -> list[str]:
        out = []
        for i in indices:
            if i == BLANK:
                raise ValueError("blank cannot appear in a decoded label sequence")
            out.append(self.symbols[i])
        return out


def min_frames(label) -> int:
    """Fewest frames that can emit the label: length plus adjacent repeats."""
    label = list(label)
    repeats = sum(1 for a, b in zip(label, label[1:]) if a == b)
    return len(label) + repeats


def _log_softmax(x: np.ndarray) -> np.ndarray:
    # Row sums via fsum: exactly rounded, so a column permutation of the
    # logits permutes the output bit-for-bit.
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    sums = np.array([[math.fsum(row)] for row in e])
    return (x - m) - np.log(sums)


def ctc_forward_backward(logits: np.ndarray, label) -> tuple[float, np.ndarray]:
    """Loss and exact gradient with respect to the logits.

    `logits` is (T, K) pre-softmax with blank at column 0; `label` is a
    sequence of symbol indices in [1, K). Runs in double precision
    regardless of the input dtype.
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise nn.ShapeError(f"expected (T, K) frame logits, got {x.shape}")
    t_len, k = x.shape
    label = [int(s) for s in label]
    if any(s <= 0 or s >= k for s in label):
        raise ValueError(f"label symbols must lie in [1, {k}), got {label}")
    if t_len < min_frames(label):
        raise InfeasibleLabelError(
            f"label of length {len(label)} needs {min_frames(label)} frames, only {t_len} available"
        )

    lp = _log_softmax(x)
    aug = np.zeros(2 * len(label) + 1, dtype=np.int64)
    aug[1::2] = label
    u_len = aug.size
    # Skip transitions are allowed into non-blank states that differ from
    # the state two back; precomputed once.
    can_skip = np.zeros(u_len, dtype=bool)
    if u_len > 2:
        can_skip[2:] = (aug[2:] != BLANK) & (aug[2:] != aug[:-2])

    neg = -np.inf
    alpha = np.full((t_len, u_len), neg)
    alpha[0, 0] = lp[0, aug[0]]
    if u_len > 1:
        alpha[0, 1] = lp[0, aug[1]]
    for t in range(1, t_len):
        prev = alpha[t - 1]
        step = np.full(u_len, neg)
        step[1:] = prev[:-1]
        skip = np.full(u_len, neg)
        if u_len > 2:
            skip[2:] = prev[:-2]
        skip = np.where(can_skip, skip, neg)
        alpha[t] = np.logaddexp(np.logaddexp(prev, step), skip) + lp[t, aug]

    tails = [alpha[t_len - 1, u_len - 1]]
    if u_len > 1:
        tails.append(alpha[t_len - 1, u_len - 2])
    log_total = np.logaddexp.reduce(np.array(tails))
    if not np.isfinite(log_total):
        raise InfeasibleLabelError("no feasible alignment for the label")

    beta = np.full((t_len, u_len), neg)
    beta[t_len - 1, u_len - 1] = lp[t_len - 1, aug[u_len - 1]]
    if u_len > 1:
        beta[t_len - 1, u_len - 2] = lp[t_len - 1, aug[u_len - 2]]
    skip_from = np.zeros(u_len, dtype=bool)
    skip_from[: u_len - 2] = can_skip[2:]
    for t in range(t_len - 2, -1, -1):
        nxt = beta[t + 1]
        step = np.full(u_len, neg)
        step[:-1] = nxt[1:]
        skip = np.full(u_len, neg)
        if u_len > 2:
            skip[:-2] = nxt[2:]
        skip = np.where(skip_from, skip, neg)
        beta[t] = np.logaddexp(np.logaddexp(nxt, step), skip) + lp[t, aug]

    # State occupancies; emission log-probs were counted twice.
    gamma = alpha + beta - lp[:, aug]
    grad = np.exp(lp)  # softmax term of d(-logP)/dlogits
    occup = np.exp(gamma - log_total)
    for u in range(u_len):
        grad[:, aug[u]] -= occup[:, u]
    return float(-log_total), grad


def ctc_loss(logits: nn.Tensor, label) -> nn.Tensor:
    """Autodiff node: negative log-probability of the label under CTC."""
    logits = nn.as_tensor(logits)
    loss, grad = ctc_forward_backward(logits.data, label)

    def backward(g):
        nn._accumulate(logits, g.reshape(()) * grad.astype(logits.data.dtype))

    return nn._from_op(np.asarray(loss, dtype=logits.data.dtype), (logits,), backward, "ctc_loss")


def ctc_greedy_decode(logits: np.ndarray) -> list[int]:
    """Best-path decode: per-frame argmax, collapse repeats, drop blanks."""
    x = np.asarray(logits)
    if x.ndim != 2:
        raise nn.ShapeError(f"expected (T, K) frame logits, got {x.shape}")
    best = x.argmax(axis=1)
    out: list[int] = []
    prev = -1
    for s in best:
        if s != prev and s != BLANK:
            out.append(int(s))
        prev = s
    return out


@dataclass(frozen=True)
class DecodeWeights:
    """Log-linear weights: optical mass, symbol prior (subtracted), LM."""

    optical: float = 1.0
    prior: float = 1.0
    lm: float = 1.0

    def __post_init__(self):
        for v in (self.optical, self.prior, self.lm):
            if not np.isfinite(v):
                raise ValueError("decode weights must be finite")


def beam_decode(
    logits: np.ndarray,
    alphabet: SymbolAlphabet | None = None,
    lm=None,
    prior: np.ndarray | None = None,
    weights: DecodeWeights = DecodeWeights(),
    beam_width: int | None = 8,
) -> list[int]:
    """Prefix beam search over frame posteriors.

    Returns the decoded symbol index sequence. `lm` needs the n-gram
    interface (``cond_logprob(context, symbol)`` over display symbols);
    `prior` is a probability vector over the full alphabet. `beam_width`
    of None keeps every hypothesis (exhaustive).
    """
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise nn.ShapeError(f"expected (T, K) frame logits, got {x.shape}")
    if beam_width is not None and beam_width < 1:
        raise ValueError("beam width must be >= 1")
    if lm is not None and alphabet is None:
        raise ValueError("an alphabet is required to score an LM over symbols")
    t_len, k = x.shape
    lp = _log_softmax(x) if t_len else x
    log_prior = None
    if prior is not None:
        if prior.shape != (k,):
            raise nn.ShapeError(f"prior shape {prior.shape} does not match alphabet size {k}")
        log_prior = np.log(np.maximum(np.asarray(prior, dtype=np.float64), 1e-300))

    def lm_extend(lm_lp: float, prefix: tuple, symbol_index: int) -> float:
        if lm is None:
            return 0.0
        context = tuple(alphabet.symbols[s] for s in prefix)
        return lm_lp + lm.cond_logprob(context, alphabet.symbols[symbol_index])

    def partial_score(prefix: tuple, mass: float) -> float:
        lm_lp, prior_sum = aux[prefix]
        return weights.optical * mass + weights.lm * lm_lp - weights.prior * prior_sum

    # State: (prefix, ends-in-symbol) -> log mass. Insertion order is the
    # deterministic tie-break (blank extensions are generated first).
    states: dict[tuple, float] = {((), False): 0.0}
    aux: dict[tuple, tuple[float, float]] = {(): (0.0, 0.0)}
    for t in range(t_len):
        new: dict[tuple, float] = {}
        for (prefix, ends_nb), mass in states.items():
            last = prefix[-1] if prefix else None
            for s in range(k):
                m = mass + lp[t, s]
                if s == BLANK:
                    key = (prefix, False)
                elif ends_nb and s == last:
                    key = (prefix, True)
                else:
                    extended = prefix + (s,)
                    key = (extended, True)
                    if extended not in aux:
                        lm_lp, prior_sum = aux[prefix]
                        lm_lp = lm_extend(lm_lp, prefix, s) if lm is not None else 0.0
                        if log_prior is not None:
                            prior_sum = prior_sum + log_prior[s]
                        aux[extended] = (lm_lp, prior_sum)
                old = new.get(key)
                new[key] = m if old is None else float(np.logaddexp(old, m))
        if beam_width is not None and len(new) > beam_width:
            ranked = sorted(new.items(), key=lambda kv: -partial_score(kv[0][0], kv[1]))
            new = dict(ranked[:beam_width])
        states = new

    totals: dict[tuple, float] = {}
    for (prefix, _), mass in states.items():
        old = totals.get(prefix)
        totals[prefix] = mass if old is None else float(np.logaddexp(old, mass))

    best_prefix, best_score = (), -np.inf
    for prefix in sorted(totals):
        lm_lp, prior_sum = aux[prefix]
        if lm is not None:
            context = tuple(alphabet.symbols[s] for s in prefix)
            lm_lp += lm.cond_logprob(context, END)
        score = weights.optical * totals[prefix] + weights.lm * lm_lp - weights.prior * prior_sum
        if score > best_score + 1e-12:
            best_prefix, best_score = prefix, score
    return list(best_prefix)
