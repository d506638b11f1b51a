"""Independent oracles used by the test suite.

Everything here is deliberately naive: finite differences, exhaustive
enumeration, and direct counting. None of it shares code with the
package's fast paths.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def finite_difference(f, arrays: dict, eps: float = 1e-5) -> dict:
    """Central finite differences of scalar f with respect to each array."""
    grads = {}
    for name, arr in arrays.items():
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f()
            flat[i] = orig - eps
            lo = f()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * eps)
        grads[name] = g
    return grads


def grad_close(analytic: np.ndarray, numeric: np.ndarray, tol: float = 1e-4) -> bool:
    """Componentwise |a - n| <= tol * max(1, |n|)."""
    return bool(np.all(np.abs(analytic - numeric) <= tol * np.maximum(1.0, np.abs(numeric))))


def away_from(rng: np.random.Generator, shape, lo: float = -2.0, hi: float = 2.0,
              kinks=(), margin: float = 1e-3) -> np.ndarray:
    """Uniform draws resampled until no element sits within `margin` of a kink."""
    x = rng.uniform(lo, hi, size=shape)
    for _ in range(100):
        bad = np.zeros(x.shape, dtype=bool)
        for k in kinks:
            bad |= np.abs(x - k) < margin
        if not bad.any():
            return x
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
    raise RuntimeError("could not sample away from kinks")


# ---------------------------------------------------------------------------
# CTC by exhaustive alignment enumeration
# ---------------------------------------------------------------------------


def collapse_alignment(path, blank: int = 0) -> tuple:
    """Collapse adjacent repeats, then drop blanks."""
    out = []
    prev = None
    for s in path:
        if s != prev:
            out.append(s)
        prev = s
    return tuple(s for s in out if s != blank)


def ctc_loss_enumerated(logits: np.ndarray, label, blank: int = 0) -> float:
    """-log sum over all frame alignments that collapse to `label`."""
    t_len, k = logits.shape
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    label = tuple(label)
    total = 0.0
    for path in itertools.product(range(k), repeat=t_len):
        if collapse_alignment(path, blank) == label:
            p = 1.0
            for t, s in enumerate(path):
                p *= probs[t, s]
            total += p
    if total <= 0.0:
        return math.inf
    return -math.log(total)


def ctc_label_probs(logits: np.ndarray, blank: int = 0) -> dict:
    """Total probability of every producible transcript, by enumeration."""
    t_len, k = logits.shape
    probs = np.exp(logits - logits.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    table: dict = {}
    for path in itertools.product(range(k), repeat=t_len):
        p = 1.0
        for t, s in enumerate(path):
            p *= probs[t, s]
        lab = collapse_alignment(path, blank)
        table[lab] = table.get(lab, 0.0) + p
    return table


def best_transcript_exhaustive(logits, lm_logprob, prior_logprob, weights) -> tuple:
    """Argmax transcript under optical/prior/LM log-linear scoring.

    `lm_logprob(seq)` must include the end-of-sequence term;
    `prior_logprob(sym)` is the per-symbol prior. Ties break toward the
    lexicographically smaller transcript for determinism.
    """
    table = ctc_label_probs(np.asarray(logits))
    best, best_score = None, -math.inf
    for lab in sorted(table):
        p = table[lab]
        if p <= 0.0:
            continue
        score = weights[0] * math.log(p)
        score -= weights[1] * sum(prior_logprob(s) for s in lab)
        score += weights[2] * lm_logprob(lab)
        if score > best_score + 1e-12:
            best, best_score = lab, score
    return best


# ---------------------------------------------------------------------------
# dominant-script voting by direct counting
# ---------------------------------------------------------------------------


def tally_votes_naive(codes, code_kinds: dict, scripts) -> dict:
    """Count votes per script the slow way.

    `code_kinds` maps code id -> ("SCRIPT", script) | ("IGNORE", None)
    | ("SHARED", tuple of scripts).
    """
    votes = {s: 0 for s in scripts}
    for c in codes:
        kind, target = code_kinds[c]
        if kind == "IGNORE":
            continue
        if kind == "SCRIPT":
            votes[target] += 1
        else:
            for s in target:
                votes[s] += 1
    return votes


def dominant_script_naive(codes, code_kinds: dict, scripts):
    votes = tally_votes_naive(codes, code_kinds, scripts)
    best, best_n = None, 0
    for s in scripts:  # catalog order; first max wins ties
        if votes[s] > best_n:
            best, best_n = s, votes[s]
    return best
