"""Dominant-script voting over per-character script codes.

A frame model trained to emit one script code per character is decoded
greedily; every decoded code then votes. Plain codes vote for their
script, shared codes vote for every member script, and ignorable codes
(spaces, digits) vote for nothing. The majority wins, ties break toward
the earlier catalog entry, and an empty tally is reported as undetermined
rather than guessed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ctc import SymbolAlphabet, ctc_greedy_decode

CODE_KINDS = ("SCRIPT", "IGNORE", "SHARED")


@dataclass(frozen=True)
class CodeSpec:
    code: str
    kind: str
    members: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in CODE_KINDS:
            raise ValueError(f"unknown code kind {self.kind!r}")
        if self.kind == "SHARED" and not self.members:
            raise ValueError(f"shared code {self.code!r} needs at least one member script")
        if self.kind == "SCRIPT" and len(self.members) != 1:
            raise ValueError(f"script code {self.code!r} must name exactly one script")


@dataclass(frozen=True)
class ScriptCodeAlphabet:
    """Vote rules for every emitted code, plus the script catalog order."""

    scripts: tuple[str, ...]
    codes: tuple[CodeSpec, ...]

    def __post_init__(self):
        seen = set()
        for spec in self.codes:
            if spec.code in seen:
                raise ValueError(f"duplicate code {spec.code!r}")
            seen.add(spec.code)
            for member in spec.members:
                if member not in self.scripts:
                    raise ValueError(f"code {spec.code!r} names unknown script {member!r}")

    def spec(self, code: str) -> CodeSpec:
        for s in self.codes:
            if s.code == code:
                return s
        raise KeyError(f"unknown script code {code!r}")

    def symbol_alphabet(self) -> SymbolAlphabet:
        """Frame-model alphabet: blank plus every code, catalog order."""
        return SymbolAlphabet.from_symbols([s.code for s in self.codes])


@dataclass
class VoteTally:
    """Per-script vote counts and the number of counted contributions."""

    votes: dict
    total: int


def tally_votes(codes, alphabet: ScriptCodeAlphabet) -> VoteTally:
    votes = {s: 0 for s in alphabet.scripts}
    total = 0
    for code in codes:
        spec = alphabet.spec(code)
        if spec.kind == "IGNORE":
            continue
        for member in spec.members:
            votes[member] += 1
            total += 1
    return VoteTally(votes=votes, total=total)


def dominant_script(codes, alphabet: ScriptCodeAlphabet) -> str | None:
    """Majority script of a decoded code sequence, or None if nothing voted."""
    tally = tally_votes(codes, alphabet)
    best, best_votes = None, 0
    for script in alphabet.scripts:
        if tally.votes[script] > best_votes:
            best, best_votes = script, tally.votes[script]
    return best


def classify_codes(frame_logits, code_alphabet: ScriptCodeAlphabet) -> str | None:
    """Greedy-decode code logits, then vote."""
    symbols = code_alphabet.symbol_alphabet()
    decoded = ctc_greedy_decode(frame_logits)
    return dominant_script([symbols.symbols[i] for i in decoded], code_alphabet)
