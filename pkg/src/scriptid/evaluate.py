"""Evaluation: script-id error, confusion counts, character error rates.

The pipeline metric runs the full model-selection chain: classify the
line, decode it with the chosen script's recognizer, and compare against
the reference transcript. The oracle metric decodes every line with its
labeled script's recognizer instead, so pipeline minus oracle isolates
the cost of misidentification. CER is micro-averaged edit distance over
glyph-id sequences. Decodes are cached per (line, script), since every
system that picks the same script for a line shares the same transcript.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import DecodeWeights, beam_decode
from .models import CtcModel, ScriptIdModel

UNDETERMINED_LABEL = "UNDETERMINED"


def edit_distance(ref, hyp) -> int:
    """Levenshtein distance between two symbol sequences."""
    ref, hyp = list(ref), list(hyp)
    if len(ref) < len(hyp):
        ref, hyp = hyp, ref
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i]
        for j, h in enumerate(hyp, start=1):
            if r == h:
                current.append(previous[j - 1])
            else:
                current.append(1 + min(previous[j - 1], previous[j], current[-1]))
        previous = current
    return previous[-1]


@dataclass
class EvalReport:
    scripts: tuple[str, ...]
    lines: int
    error_rate: float
    confusion: np.ndarray  # (S, S+1); last column counts undetermined lines
    per_script_cer: dict  # script -> (pipeline, oracle)
    pipeline_cer: float
    oracle_cer: float

    @property
    def delta_cer(self) -> float:
        return self.pipeline_cer - self.oracle_cer


def classify_rows(model, records, batch_size: int = 32) -> list:
    """Predicted script per record; None marks an undetermined baseline vote."""
    if isinstance(model, ScriptIdModel):
        order = sorted(range(len(records)), key=lambda i: (records[i].width, i))
        preds: list = [None] * len(records)
        for lo in range(0, len(order), batch_size):
            chunk = order[lo:lo + batch_size]
            probs = model.posteriors([records[i].image() for i in chunk], batch_size=batch_size)
            for slot, i in enumerate(chunk):
                preds[i] = model.scripts[int(np.argmax(probs[slot]))]
        return preds
    if isinstance(model, CtcModel):
        return [model.classify(r.image()) for r in records]
    raise TypeError(f"cannot classify with {type(model).__name__}")


class _DecodeCache:
    """Per-(line, script) transcript cache shared across systems."""

    def __init__(self, records, ocr_models: dict, lms: dict, weights: DecodeWeights, beam_width: int):
        self.records = records
        self.ocr = ocr_models
        self.lms = lms
        self.weights = weights
        self.beam_width = beam_width
        self._memo: dict = {}

    def transcript(self, index: int, script: str) -> tuple[str, ...]:
        key = (index, script)
        if key not in self._memo:
            model = self.ocr[script]
            logits = model.frame_logits(self.records[index].image())
            prior = model.prior.probabilities if model.prior is not None else None
            decoded = beam_decode(logits, model.alphabet, self.lms.get(script), prior,
                                  self.weights, self.beam_width)
            self._memo[key] = tuple(model.alphabet.symbols[s] for s in decoded)
        return self._memo[key]


def _report(records, scripts, predictions, cache: _DecodeCache) -> EvalReport:
    index = {s: i for i, s in enumerate(scripts)}
    confusion = np.zeros((len(scripts), len(scripts) + 1), dtype=np.int64)
    dist = {s: [0, 0] for s in scripts}  # pipeline, oracle edit distance
    length = {s: 0 for s in scripts}
    for i, (record, predicted) in enumerate(zip(records, predictions)):
        true = record.script_id
        row = index[true]
        confusion[row, len(scripts) if predicted is None else index[predicted]] += 1
        ref = record.transcript
        length[true] += len(ref)
        if predicted is None:
            dist[true][0] += len(ref)  # skipped recognition: full-length error
        else:
            dist[true][0] += edit_distance(ref, cache.transcript(i, predicted))
        dist[true][1] += edit_distance(ref, cache.transcript(i, true))
    total = len(records)
    correct = int(np.trace(confusion[:, : len(scripts)]))
    per_script = {
        s: (dist[s][0] / length[s] if length[s] else 0.0,
            dist[s][1] / length[s] if length[s] else 0.0)
        for s in scripts
    }
    total_len = sum(length.values())
    return EvalReport(
        scripts=tuple(scripts),
        lines=total,
        error_rate=1.0 - correct / total if total else 0.0,
        confusion=confusion,
        per_script_cer=per_script,
        pipeline_cer=sum(d[0] for d in dist.values()) / total_len if total_len else 0.0,
        oracle_cer=sum(d[1] for d in dist.values()) / total_len if total_len else 0.0,
    )


def evaluate_systems(
    records,
    systems: dict,
    ocr_models: dict,
    lms: dict,
    weights: DecodeWeights = DecodeWeights(),
    beam_width: int = 6,
    oracle: bool = False,
) -> dict:
    """EvalReports for several script-id systems over one record list.

    All systems share one decode cache, so correctly classified lines are
    decoded once in total rather than once per system.
    """
    scripts = None
    for model in systems.values():
        model_scripts = model.scripts if isinstance(model, ScriptIdModel) else model.code_alphabet.scripts
        scripts = scripts or tuple(model_scripts)
        if tuple(model_scripts) != scripts:
            raise ValueError("systems disagree on the script catalog")
    missing = set(scripts) - set(ocr_models)
    if missing:
        raise ValueError(f"no recognizer for scripts {sorted(missing)}")
    cache = _DecodeCache(records, ocr_models, lms, weights, beam_width)
    reports = {}
    for name, model in systems.items():
        if oracle:
            predictions = [r.script_id for r in records]
        else:
            predictions = classify_rows(model, records)
        reports[name] = _report(records, scripts, predictions, cache)
    return reports


def evaluate(records, scriptid_model, ocr_models: dict, lms: dict,
             weights: DecodeWeights = DecodeWeights(), beam_width: int = 6,
             oracle: bool = False) -> EvalReport:
    return evaluate_systems(records, {"system": scriptid_model}, ocr_models, lms,
                            weights, beam_width, oracle)["system"]


def recognize(image, scriptid_model, ocr_models: dict, lms: dict,
              weights: DecodeWeights = DecodeWeights(), beam_width: int = 6,
              oracle_script: str | None = None):
    """(chosen script, transcript) for one line; None script skips decoding."""
    if oracle_script is not None:
        script = oracle_script
    else:
        script = scriptid_model.classify(image)
    if script is None:
        return None, ()
    model = ocr_models[script]
    prior = model.prior.probabilities if model.prior is not None else None
    decoded = beam_decode(model.frame_logits(np.asarray(image)), model.alphabet,
                          lms.get(script), prior, weights, beam_width)
    return script, tuple(model.alphabet.symbols[s] for s in decoded)


# ---------------------------------------------------------------------------
# report serialization: TSV blocks under #section headers
# ---------------------------------------------------------------------------


def write_report(report: EvalReport, path) -> None:
    lines = ["#error-rate", f"error-rate\t{report.error_rate!r}", f"lines\t{report.lines}"]
    lines.append("#confusion")
    lines.append("\t".join(["true"] + list(report.scripts) + [UNDETERMINED_LABEL]))
    for i, s in enumerate(report.scripts):
        lines.append("\t".join([s] + [str(int(v)) for v in report.confusion[i]]))
    lines.append("#cer")
    lines.append("script\tpipeline\toracle\tdelta")
    for s in report.scripts:
        p, o = report.per_script_cer[s]
        lines.append(f"{s}\t{p!r}\t{o!r}\t{p - o!r}")
    lines.append(f"overall\t{report.pipeline_cer!r}\t{report.oracle_cer!r}\t{report.delta_cer!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path) -> EvalReport:
    sections: dict = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        if line.startswith("#"):
            current = line[1:]
            sections[current] = []
        else:
            sections[current].append(line.split("\t"))
    header = dict((k, v) for k, v in sections["error-rate"])
    table = sections["confusion"]
    scripts = tuple(table[0][1:-1])
    confusion = np.array([[int(v) for v in row[1:]] for row in table[1:]], dtype=np.int64)
    per_script = {}
    pipeline = oracle = 0.0
    for row in sections["cer"][1:]:
        if row[0] == "overall":
            pipeline, oracle = float(row[1]), float(row[2])
        else:
            per_script[row[0]] = (float(row[1]), float(row[2]))
    return EvalReport(
        scripts=scripts,
        lines=int(header["lines"]),
        error_rate=float(header["error-rate"]),
        confusion=confusion,
        per_script_cer=per_script,
        pipeline_cer=pipeline,
        oracle_cer=oracle,
    )
