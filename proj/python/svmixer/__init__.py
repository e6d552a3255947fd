"""Attention-free speaker-verification encoder with teacher distillation."""

import json

from ._core import (
    SAMPLE_RATE,
    ChecksumError,
    CheckError,
    ConfigError,
    ConfigMismatchError,
    DataError,
    DimensionError,
    Error,
    FormatError,
    Model,
    NumericalError,
    cosine_score,
    eer,
    gradcheck,
    load_model,
    min_dcf,
    read_features,
    read_wav,
    synth_utterance,
    transformer_layer_cost,
    write_features,
    write_wav,
)
from . import _core


def _dump(config):
    if config is None or isinstance(config, str):
        return config
    return json.dumps(config)


def canonical_config():
    return json.loads(_core.canonical_config())


def desk_student_config():
    return json.loads(_core.desk_student_config())


def frames_for_samples(samples, config=None):
    return _core.frames_for_samples(samples, _dump(config))


def count_params(config=None):
    return _core.count_params(_dump(config) or _core.canonical_config())


def count_macs(config=None, frames=149):
    return _core.count_macs(_dump(config) or _core.canonical_config(), frames)


def encoder_layer_cost(config=None, frames=149):
    return _core.encoder_layer_cost(_dump(config) or _core.canonical_config(), frames)


def make_model(config=None, seed=0):
    return Model(_dump(config), seed)


def train_synthetic(run_config=None):
    """Returns (model, info) where info holds steps, step_losses, metrics_jsonl, val_eer."""
    return _core.train_synthetic(_dump(run_config or {}))
