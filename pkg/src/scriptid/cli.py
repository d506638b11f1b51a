"""Command-line entry points.

Subcommands: gen-data, train, eval, classify, recognize, dump-activations.
Users are scripts and CI; everything reads and writes files.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .activations import dump_activations
from .ctc import DecodeWeights
from .evaluate import evaluate, recognize, write_report
from .lm import NGramLM
from .models import CtcModel, ScriptIdModel, load_any
from .summarizers import SUMMARIZER_KINDS
from .synthdata import generate_dataset, read_pgm
from .train import (
    load_catalog,
    load_split,
    train_base_model,
    train_ocr_model,
    train_scriptid,
)

log = logging.getLogger(__name__)


def _load_image(path) -> np.ndarray:
    img = read_pgm(path)
    if img.shape[0] != 40:
        raise SystemExit(f"{path}: expected a height-40 line image, got height {img.shape[0]}")
    return (img.astype(np.float32) / 255.0)[:, :, None]


def _load_ocr_dir(ocr_dir):
    ocr_dir = Path(ocr_dir)
    models, lms = {}, {}
    for path in sorted(ocr_dir.glob("*.ckpt")):
        model = CtcModel.from_checkpoint(path)
        script = path.stem
        models[script] = model
        lm_path = path.with_suffix(".nglm")
        if lm_path.exists():
            lms[script] = NGramLM.load(lm_path, symbols=model.alphabet.real_symbols)
    if not models:
        raise SystemExit(f"no recognizer checkpoints (*.ckpt) found in {ocr_dir}")
    return models, lms


def _cmd_gen_data(args) -> int:
    cfg = cfgmod.load_config(args.config)
    corpus = cfgmod.corpus_config(cfg)
    manifests = generate_dataset(corpus, args.out)
    for split, path in manifests.items():
        print(f"{split}\t{path}")
    return 0


def _cmd_train(args) -> int:
    cfg = cfgmod.load_config(args.config)
    train_cfg = cfgmod.train_config(cfg, seed=args.seed)
    enc = cfgmod.encoder_config(cfg)
    head = cfgmod.head_config(cfg)
    records = load_split(args.data, "train")
    catalog = load_catalog(args.data)
    kind = args.model
    out = Path(args.out)
    if kind in SUMMARIZER_KINDS:
        model = train_scriptid(records, kind, catalog.scripts, train_cfg, encoder=enc, head=head)
        model.save(out)
    elif kind == "base":
        model = train_base_model(records, catalog, train_cfg, encoder=enc, head=head)
        model.save(out)
    elif kind.startswith("ocr:"):
        script = kind.split(":", 1)[1]
        if script not in catalog.scripts:
            raise SystemExit(f"unknown script {script!r}; catalog has {catalog.scripts}")
        model, lm = train_ocr_model(records, script, train_cfg, encoder=enc, head=head)
        model.save(out)
        lm.save(out.with_suffix(".nglm"))
    else:
        raise SystemExit(f"unknown model kind {kind!r}; expected base|max|mean|gate|lstm|ocr:<script>")
    print(f"saved\t{out}")
    return 0


def _cmd_eval(args) -> int:
    scriptid_model = load_any(args.scriptid)
    ocr_models, lms = _load_ocr_dir(args.ocr_dir)
    records = load_split(args.data, args.split)
    report = evaluate(records, scriptid_model, ocr_models, lms,
                      weights=DecodeWeights(), beam_width=args.beam, oracle=args.oracle)
    write_report(report, args.report)
    print(f"lines\t{report.lines}")
    print(f"script-id-error\t{report.error_rate:.4f}")
    print(f"pipeline-cer\t{report.pipeline_cer:.4f}")
    print(f"oracle-cer\t{report.oracle_cer:.4f}")
    print(f"delta-cer\t{report.delta_cer:.4f}")
    print(f"report\t{args.report}")
    return 0


def _cmd_classify(args) -> int:
    model = load_any(args.scriptid)
    image = _load_image(args.image)
    if isinstance(model, ScriptIdModel):
        post = model.posterior(image)
        scripts = model.scripts
        probs = post.probabilities
    else:
        if model.code_alphabet is None:
            raise SystemExit("this checkpoint cannot vote: no script-code rules attached")
        scripts = model.code_alphabet.scripts
        probs = model.vote_shares(image)
    for script, p in zip(scripts, probs):
        print(f"{script}\t{p:.6f}")
    return 0


def _cmd_recognize(args) -> int:
    scriptid_model = load_any(args.scriptid)
    ocr_models, lms = _load_ocr_dir(args.ocr_dir)
    image = _load_image(args.image)
    script, transcript = recognize(image, scriptid_model, ocr_models, lms, beam_width=args.beam)
    print(f"script\t{script if script is not None else 'UNDETERMINED'}")
    print(f"transcript\t{' '.join(transcript)}")
    return 0


def _cmd_dump_activations(args) -> int:
    model = load_any(args.scriptid)
    if not isinstance(model, ScriptIdModel):
        raise SystemExit("activation dumps need an encoder-summarizer checkpoint")
    image = _load_image(args.image)
    for path in dump_activations(model, image, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scriptid",
                                     description="Line-level script identification and OCR model selection")
    parser.add_argument("--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a script-id, baseline, or recognizer model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="base|max|mean|gate|lstm|ocr:<script>")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate the full pipeline on a split")
    p.add_argument("--data", required=True)
    p.add_argument("--scriptid", required=True)
    p.add_argument("--ocr-dir", required=True)
    p.add_argument("--oracle", action="store_true", help="use true labels for model selection")
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--beam", type=int, default=6)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("classify", help="print the per-script posterior for one image")
    p.add_argument("--scriptid", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("recognize", help="classify then transcribe one image")
    p.add_argument("--scriptid", required=True)
    p.add_argument("--ocr-dir", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--beam", type=int, default=6)
    p.set_defaults(func=_cmd_recognize)

    p = sub.add_parser("dump-activations", help="write activation maps as PGM images")
    p.add_argument("--scriptid", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_dump_activations)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
