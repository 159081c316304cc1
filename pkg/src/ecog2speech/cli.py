"""``c2s``: batch command-line driver for the whole pipeline.

Every command prints a JSON summary on success. Failures print a JSON error
object on stderr and exit nonzero: 2 for configuration or input problems,
3 for training divergence, 1 for anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import ctsr
from .checkpoint import load_checkpoint
from .config import load_config, with_defaults
from .data import (align, fold_windows, kfold_split, load_session, normalize, save_session,
                   segment)
from .dsp import FRAME_RATE, FilterBankSpec, Spectrogram
from .errors import ConfigurationError, DivergenceError, FormatError, ShapeError
from .inversion import invert_spectrogram
from .models import ModelConfig, build_model, count_params, layer_table, receptive_field
from .probe import probe_all, write_probe
from .session import SessionConfig, StimulusConfig, TeacherConfig, build_session, stimulus_spectrogram
from .synth import synth_stimuli
from .training import TrainConfig, crossval_run, evaluate, mean_report, run_fold, write_report
from .wavio import read_wav, write_wav

log = logging.getLogger("ecog2speech")


class CommandError(Exception):
    """A refusal that is the user's to fix (existing output, missing input)."""


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise CommandError(f"{out} exists and is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> dict:
    cfg = load_config(args.config) if getattr(args, "config", None) else with_defaults({})
    if getattr(args, "seed", None) is not None:
        for section in ("stimuli", "teacher", "train"):
            cfg[section]["seed"] = args.seed
    if getattr(args, "variant", None):
        cfg["model"] = {**cfg["model"], "variant": args.variant}
    return cfg


def _filterbank(cfg) -> FilterBankSpec:
    return FilterBankSpec(**cfg["dsp"]["filterbank"])


def _model_config(cfg) -> ModelConfig:
    return ModelConfig.from_dict(cfg["model"])


def _train_config(cfg, **over) -> TrainConfig:
    return TrainConfig.from_dict({**cfg["train"], **{k: v for k, v in over.items() if v is not None}})


# -- commands ----------------------------------------------------------------------

def cmd_synth(args) -> dict:
    cfg = _config(args)
    out = _prepare_out(args.out, args.force)
    scfg = SessionConfig(StimulusConfig(**cfg["stimuli"]), TeacherConfig(**cfg["teacher"]),
                         cfg["dsp"]["lag_s"])
    stim = synth_stimuli(scfg.stimuli.words, scfg.stimuli.reps, scfg.stimuli.seed,
                         cfg["dsp"]["speech_rate"])
    spec, notes = stimulus_spectrogram(stim, scfg.lag_s, _filterbank(cfg))
    rec, meta = build_session(scfg, spec, notes)
    meta["experiment"] = cfg
    save_session(out, rec, meta)
    if args.audio:
        write_wav(out / "stimuli.wav", stim.waveform)
    return {"session": str(out), "frames": rec.num_frames, "annotations": len(rec.annotations)}


def cmd_preprocess(args) -> dict:
    cfg = _config(args)
    out = _prepare_out(args.out, args.force)
    speech = read_wav(args.audio)
    want = cfg["dsp"]["speech_rate"]
    if speech.sample_rate != want:
        raise ConfigurationError(f"audio is {speech.sample_rate} Hz, config expects {want} Hz",
                                 pointer="/dsp/speech_rate")
    raw = ctsr.load(args.ecog)
    rate = ctsr.load_sidecar(args.ecog).get("sample_rate", cfg["dsp"]["ecog_rate"])
    if abs(rate - cfg["dsp"]["ecog_rate"]) > 1e-9:
        raise ConfigurationError(f"ECoG is {rate} Hz, config expects {cfg['dsp']['ecog_rate']} Hz",
                                 pointer="/dsp/ecog_rate")
    lag = cfg["dsp"]["lag_s"]
    rec = align(speech, raw, rate, lag, _filterbank(cfg))
    save_session(out, rec, {"lag_s": lag, "speech_rate": speech.sample_rate, "ecog_rate": rate,
                            "frame_rate": FRAME_RATE, "source": [str(args.audio), str(args.ecog)]})
    return {"session": str(out), "lag_ms": round(lag * 1000, 3),
            "speech_frames": rec.spec.num_frames, "ecog_frames": rec.ecog.num_frames}


def cmd_train(args) -> dict:
    cfg = _config(args)
    out = _prepare_out(args.out, args.force)
    rec, _ = load_session(args.session)
    tcfg = _train_config(cfg, fold=args.fold)
    _, rep = run_fold(rec, _model_config(cfg), tcfg, cfg["folds"]["k"], out)
    (out / "experiment.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    return {"checkpoint": str(out / "checkpoint"), "fold": rep.fold, "cc_mean": rep.cc_mean,
            "mse": rep.mse, "epochs": len(rep.train_history)}


def cmd_eval(args) -> dict:
    model, stats, meta = load_checkpoint(args.checkpoint)
    if stats is None:
        raise FormatError(f"{args.checkpoint} has no norm_stats.ctsr")
    rec, _ = load_session(args.session)
    fold = meta.get("fold", 0) if args.fold is None else args.fold
    k = meta.get("k", 3)
    win = fold_windows(rec, kfold_split(rec, k), fold)
    segs = segment(normalize(rec, stats))
    rep = evaluate(model, segs, win.test, fold, win.test_utterances).to_dict()
    if args.out:
        write_report(args.out, rep)
    return {"fold": fold, "cc_mean": rep["cc_mean"], "mse": rep["mse"]}


def _fold_job(payload):
    session, cfg, fold, out = payload
    rec, _ = load_session(session)
    _, rep = run_fold(rec, _model_config(cfg), _train_config(cfg, fold=fold), cfg["folds"]["k"],
                      Path(out) / f"fold_{fold}")
    return rep.to_dict()


def cmd_crossval(args) -> dict:
    cfg = _config(args)
    out = _prepare_out(args.out, args.force)
    k = cfg["folds"]["k"]
    if args.jobs <= 1:
        rec, _ = load_session(args.session)
        summary = crossval_run(rec, _model_config(cfg), _train_config(cfg), k, out)
        reports = summary["folds"]
    else:
        jobs = [(args.session, cfg, f, str(out)) for f in range(k)]
        reports = []
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            for f, fut in enumerate([pool.submit(_fold_job, j) for j in jobs]):
                try:
                    reports.append(fut.result())
                except (DivergenceError, ConfigurationError) as exc:
                    reports.append({"fold": f, "error": type(exc).__name__, "message": str(exc)})
        write_report(out / "mean_report.json", mean_report(reports))
    (out / "experiment.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))
    mean = json.loads((out / "mean_report.json").read_text())
    failed = [r for r in reports if "error" in r]
    if failed and len(failed) == len(reports):
        raise DivergenceError(-1, -1, "every fold failed")
    return {"folds": k, "cc_mean": mean.get("cc_mean"), "mse": mean.get("mse"),
            "failed": [r["fold"] for r in failed]}


def cmd_probe(args) -> dict:
    model, stats, meta = load_checkpoint(args.checkpoint)
    out = _prepare_out(args.out, args.force)
    amp = args.amplitude if args.amplitude is not None else meta.get("dataset_max")
    if amp is None:
        raise FormatError("checkpoint meta.json lacks dataset_max; pass --amplitude")
    irmap = probe_all(model, amp, None if args.normalized else stats, source=str(args.checkpoint))
    manifest = write_probe(out, irmap, iterations=args.iterations, seed=args.seed or 0,
                           audio=not args.no_audio)
    return {"probe": str(out), "electrodes": manifest["electrodes"], "units": manifest["units"]}


def cmd_invert(args) -> dict:
    values = ctsr.load(args.spec)
    side = ctsr.load_sidecar(args.spec)
    if values.ndim != 2:
        raise ShapeError(f"spectrogram must be bands x frames, got {values.shape}")
    centers = side.get("band_centers") or list(range(1, values.shape[0] + 1))
    target = Spectrogram(values, centers, side.get("frame_rate", FRAME_RATE))
    import warnings

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        wav = invert_spectrogram(target, iterations=args.iterations, seed=args.seed or 0)
    write_wav(args.out, wav)
    return {"wav": str(args.out), "samples": int(wav.samples.size),
            "warnings": [str(w.message) for w in caught]}


def cmd_info(args) -> dict:
    if args.checkpoint:
        model, _, _ = load_checkpoint(args.checkpoint)
        mcfg = model.config
    else:
        mcfg = _model_config(_config(args))
        model = build_model(mcfg, 0)
    rf = receptive_field(mcfg)
    info = {"variant": mcfg.variant, "receptive_field_frames": rf,
            "receptive_field_ms": rf * 1000 // FRAME_RATE, "params": count_params(mcfg),
            "layers": [{"name": n, "shape": list(s), "count": c} for n, s, c in layer_table(model)]}
    if not args.json:
        print(f"receptive_field_frames: {rf} ({info['receptive_field_ms']} ms)")
        print(f"params: {info['params']}")
        for row in info["layers"]:
            print(f"  {row['name']:<32} {str(tuple(row['shape'])):<16} {row['count']}")
        return None
    return info


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="c2s", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        return sp

    s = add("synth", cmd_synth, "generate a synthetic teacher-encoded session")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--audio", action="store_true", help="also write stimuli.wav")
    s.add_argument("--force", action="store_true")

    s = add("preprocess", cmd_preprocess, "align a speech WAV with raw ECoG")
    s.add_argument("--audio", required=True)
    s.add_argument("--ecog", required=True, help="electrodes x samples CTSR")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")

    for name, fn, help_ in (("train", cmd_train, "train one fold"),
                            ("crossval", cmd_crossval, "train and evaluate every fold")):
        s = add(name, fn, help_)
        s.add_argument("--session", required=True)
        s.add_argument("--config")
        s.add_argument("--out", required=True)
        s.add_argument("--variant", choices=["linear", "resnet", "wavenet"])
        s.add_argument("--seed", type=int)
        s.add_argument("--force", action="store_true")
        if name == "train":
            s.add_argument("--fold", type=int)
        else:
            s.add_argument("--jobs", type=int, default=1)

    s = add("eval", cmd_eval, "evaluate a checkpoint on its test fold")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--session", required=True)
    s.add_argument("--fold", type=int)
    s.add_argument("--out", help="report.json path")

    s = add("probe", cmd_probe, "impulse-probe every electrode")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--iterations", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.add_argument("--normalized", action="store_true", help="keep responses in z-scored units")
    s.add_argument("--no-audio", action="store_true")
    s.add_argument("--force", action="store_true")

    s = add("invert", cmd_invert, "spectrogram CTSR to WAV")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, default=100)
    s.add_argument("--seed", type=int)

    s = add("info", cmd_info, "receptive field, parameter count and layer table")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--config")
    s.add_argument("--variant", choices=["linear", "resnet", "wavenet"])
    s.add_argument("--json", action="store_true")
    return p


def _error(kind: str, exc: BaseException, **extra) -> dict:
    return {"error": kind, "message": str(exc), **extra}


def main(argv=None) -> int:
    level = os.environ.get("C2S_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except DivergenceError as exc:
        print(json.dumps(_error("DivergenceError", exc, epoch=exc.epoch, batch=exc.batch)),
              file=sys.stderr)
        return 3
    except ConfigurationError as exc:
        extra = {"path": exc.pointer} if exc.pointer is not None else {}
        print(json.dumps(_error("ConfigurationError", exc, **extra)), file=sys.stderr)
        return 2
    except (FormatError, ShapeError, CommandError, FileNotFoundError) as exc:
        print(json.dumps(_error(type(exc).__name__, exc)), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable report
        log.debug("unhandled error", exc_info=True)
        print(json.dumps(_error(type(exc).__name__, exc)), file=sys.stderr)
        return 1
    if result is not None:
        _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
