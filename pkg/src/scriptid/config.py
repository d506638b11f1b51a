"""INI-style configuration with a closed schema.

"[section]" headers with "key = value" lines. Unknown sections or keys
are rejected with a diagnostic rather than ignored, so typos fail fast.
Every section is optional; omitted keys take the library defaults.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .ctc import DecodeWeights
from .encoder import ConvSpec, EncoderConfig, InceptionSpec, PoolSpec
from .summarizers import HeadConfig
from .synthdata import CorpusConfig, NoiseParams
from .train import TrainConfig


class ConfigError(ValueError):
    """Unknown keys, malformed values, or unusable combinations."""


def _parse_inception(text: str):
    modules = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            d1, d2 = (int(v) for v in part.split(":"))
        except ValueError:
            raise ConfigError(f"bad inception spec {part!r}; expected 'd1:d2' pairs") from None
        modules.append(InceptionSpec(d1, d2))
    if not modules:
        raise ConfigError("inception list cannot be empty")
    return tuple(modules)


_SCHEMA = {
    "corpus": {
        "scripts": int,
        "private_glyphs": int,
        "shared_glyphs": int,
        "train_lines": int,
        "eval_lines": int,
        "heavy_eval_lines": int,
        "min_len": int,
        "max_len": int,
        "distractor_fraction": float,
        "shared_fraction": float,
        "eval_distractor_fraction": float,
        "heavy_distractor_fraction": float,
        "vertical_fraction": float,
        "sigma": float,
        "blur_radius": int,
        "baseline_jitter": int,
        "contrast_min": float,
        "contrast_max": float,
        "seed": int,
    },
    "model": {
        "feature_dim": int,
        "stem_channels": int,
        "inception": _parse_inception,
        "head_channels": int,
        "head_kernel_width": int,
        "lstm_units": int,
        "lstm_hidden": int,
    },
    "train": {
        "steps": int,
        "batch_size": int,
        "learning_rate": float,
        "seed": int,
        "log_every": int,
        "lm_order": int,
        "lm_k": float,
        "prior_decay": float,
        "prior_floor": float,
    },
    "decode": {
        "beam_width": int,
        "lambda_optical": float,
        "lambda_prior": float,
        "lambda_lm": float,
    },
}


def load_config(path) -> dict:
    """Parse and validate; returns {section: {key: typed value}}."""
    parser = configparser.ConfigParser(interpolation=None)
    text = Path(path).read_text(encoding="utf-8")
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as err:
        raise ConfigError(f"{path}: {err}") from None
    out: dict = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            try:
                out[section][key] = _SCHEMA[section][key](raw)
            except ConfigError:
                raise
            except ValueError:
                raise ConfigError(f"{path}: bad value {raw!r} for {section}.{key}") from None
    return out


def corpus_config(cfg: dict) -> CorpusConfig:
    section = dict(cfg.get("corpus", {}))
    noise_keys = {"sigma", "blur_radius", "baseline_jitter", "contrast_min", "contrast_max"}
    noise_args = {k: section.pop(k) for k in list(section) if k in noise_keys}
    try:
        return CorpusConfig(noise=NoiseParams(**noise_args), **section)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def encoder_config(cfg: dict) -> EncoderConfig:
    section = cfg.get("model", {})
    stem_channels = section.get("stem_channels", 16)
    return EncoderConfig(
        stem=ConvSpec(5, 5, 2, 2, stem_channels),
        stem_pool=PoolSpec("max", 2, 2, 2, 2),
        inception=section.get("inception", (InceptionSpec(16, 32), InceptionSpec(16, 32))),
        final_pool=PoolSpec("max", 2, 1, 2, 1),
        feature_dim=section.get("feature_dim", 64),
    )


def head_config(cfg: dict) -> HeadConfig:
    section = cfg.get("model", {})
    return HeadConfig(
        channels=section.get("head_channels", 64),
        kernel_width=section.get("head_kernel_width", 3),
        lstm_units=section.get("lstm_units", 64),
        lstm_hidden=section.get("lstm_hidden", 64),
    )


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    if seed is not None:
        section["seed"] = seed
    try:
        return TrainConfig(**section)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def decode_weights(cfg: dict) -> DecodeWeights:
    section = cfg.get("decode", {})
    return DecodeWeights(
        optical=section.get("lambda_optical", 1.0),
        prior=section.get("lambda_prior", 1.0),
        lm=section.get("lambda_lm", 1.0),
    )


def beam_width(cfg: dict) -> int:
    return cfg.get("decode", {}).get("beam_width", 6)
