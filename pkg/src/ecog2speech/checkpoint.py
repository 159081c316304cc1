"""Checkpoint directories: ``config.json``, ``params/<name>.ctsr``, ``norm_stats.ctsr``, ``meta.json``."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np

from . import ctsr
from .data import NormStats
from .errors import FormatError
from .models import Decoder, ModelConfig, build_model

CHECKPOINT_VERSION = 1


def save_checkpoint(path, model: Decoder, norm_stats: Optional[NormStats] = None,
                    meta: Optional[dict] = None) -> Path:
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    config = {"version": CHECKPOINT_VERSION, "seed": model.seed, "model": model.config.to_dict()}
    (path / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True))
    for name, arr in model.state_dict().items():
        ctsr.save(path / "params" / f"{name}.ctsr", arr)
    if norm_stats is not None:
        ctsr.save(path / "norm_stats.ctsr", norm_stats.to_array(),
                  {"electrodes": int(norm_stats.ecog_mean.size)})
    (path / "meta.json").write_text(json.dumps(meta or {}, indent=2, sort_keys=True))
    return path


def load_checkpoint(path) -> tuple[Decoder, Optional[NormStats], dict]:
    """Rebuild the model in eval mode. Errors name the offending file or tensor."""
    path = Path(path)
    cfg_path = path / "config.json"
    if not cfg_path.exists():
        raise FormatError(f"{path} has no config.json")
    config = json.loads(cfg_path.read_text())
    version = config.get("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version!r}; this build reads {CHECKPOINT_VERSION}")
    model = build_model(ModelConfig.from_dict(config["model"]), config.get("seed", 0))
    state = {}
    for name in list(model.parameters()) + list(model.buffers()):
        f = path / "params" / f"{name}.ctsr"
        if not f.exists():
            raise FormatError(f"checkpoint is missing tensor {name!r}")
        try:
            state[name] = ctsr.load(f)
        except FormatError as exc:
            raise FormatError(f"tensor {name!r}: {exc}") from exc
    model.load_state_dict(state)
    model.eval()
    stats = None
    ns = path / "norm_stats.ctsr"
    if ns.exists():
        side = ctsr.load_sidecar(ns) if ns.with_suffix(".json").exists() else {}
        stats = NormStats.from_array(ctsr.load(ns), side.get("electrodes", model.config.in_channels))
    meta_path = path / "meta.json"
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return model, stats, meta
