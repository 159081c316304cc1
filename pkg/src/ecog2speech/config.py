"""Experiment configuration: a JSON document validated against a strict schema."""

from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema

from .errors import ConfigurationError

_INT = {"type": "integer"}
_NUM = {"type": "number"}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


SCHEMA = _obj({
    "stimuli": _obj({"words": {"type": "integer", "minimum": 1},
                     "reps": {"type": "integer", "minimum": 1},
                     "seed": _INT}),
    "teacher": _obj({"mode": {"enum": ["linear", "gated-nonlinear"]},
                     "kind": {"enum": ["strf", "diagonal"]},
                     "taps": {"type": "integer", "minimum": 1},
                     "noise_snr_db": {"type": ["number", "null"]},
                     "gain": _NUM,
                     "inhibition": {"type": "number", "minimum": 0},
                     "decay": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                               "minItems": 2, "maxItems": 2},
                     "seed": _INT}),
    "dsp": _obj({"filterbank": _obj({"num_bands": {"type": "integer", "minimum": 4},
                                     "f_low": {"type": "number", "exclusiveMinimum": 0},
                                     "f_high": {"type": "number", "exclusiveMinimum": 0},
                                     "bandwidth": {"type": "number", "exclusiveMinimum": 0}}),
                 "speech_rate": {"type": "integer", "minimum": 1},
                 "ecog_rate": {"type": "number", "minimum": 300},
                 "lag_s": {"type": "number", "minimum": 0}}),
    "model": _obj({"variant": {"enum": ["linear", "resnet", "wavenet"]},
                   "in_channels": _INT, "out_channels": _INT,
                   "linear_filter": _INT, "resnet_blocks": _INT, "resnet_filter": _INT,
                   "resnet_features": _INT, "initial_filter": _INT, "initial_features": _INT,
                   "dilated_filter": _INT, "dilated_features": _INT, "residual_filter": _INT,
                   "residual_features": _INT, "skip_filter": _INT, "skip_features": _INT,
                   "post_features": _INT, "dilations": {"type": "array", "items": _INT},
                   "wavenet_blocks": _INT, "dropout": _NUM, "batchnorm": {"type": "boolean"},
                   "bn_momentum": _NUM, "bn_eps": _NUM,
                   "init": {"enum": [None, "he", "zeros"]}}),
    "train": _obj({"batch_size": {"type": "integer", "minimum": 1},
                   "max_epochs": {"type": "integer", "minimum": 1},
                   "patience": {"type": "integer", "minimum": 1},
                   "lr": {"type": "number", "exclusiveMinimum": 0},
                   "dropout": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
                   "seed": _INT, "fold": {"type": "integer", "minimum": 0},
                   "hop": {"type": "integer", "minimum": 1},
                   "val_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                   "max_batches": {"type": ["integer", "null"], "minimum": 1}}),
    "folds": _obj({"k": {"type": "integer", "minimum": 2}}),
})

DEFAULTS = {
    "stimuli": {"words": 50, "reps": 3, "seed": 0},
    "teacher": {"mode": "linear", "kind": "strf", "taps": 8, "noise_snr_db": None, "gain": 1.0,
                "inhibition": 0.6, "decay": [1.0, 3.0], "seed": 0},
    "dsp": {"filterbank": {"num_bands": 128, "f_low": 180.0, "f_high": 7000.0,
                           "bandwidth": 1.0 / 12.0},
            "speech_rate": 24000, "ecog_rate": 3051, "lag_s": 0.168},
    "model": {"variant": "wavenet"},
    "train": {},
    "folds": {"k": 3},
}


def json_pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path)


def validate(doc: dict) -> None:
    """Raise ConfigurationError carrying the JSON pointer of the first violation."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = json_pointer(err.absolute_path)
        raise ConfigurationError(f"{pointer}: {err.message}", pointer=pointer)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def with_defaults(doc: dict) -> dict:
    validate(doc)
    return _merge(DEFAULTS, doc)


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}", pointer="")
    if not isinstance(doc, dict):
        raise ConfigurationError("configuration must be a JSON object", pointer="")
    return with_defaults(doc)
