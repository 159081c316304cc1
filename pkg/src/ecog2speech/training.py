"""Mini-batch training with early stopping, evaluation metrics and k-fold runs."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import save_checkpoint
from .data import (WINDOW, FoldWindows, NormStats, PairedRecording, SegmentSet, compute_norm_stats,
                   fold_windows, kfold_split, normalize, segment)
from .errors import ConfigurationError, DivergenceError
from .models import Decoder, ModelConfig, build_model
from .optim import AdamState, adam_step
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    dropout: Optional[float] = None  # overrides the model config when set
    seed: int = 0
    fold: int = 0
    hop: int = 1  # keep every hop-th training window
    val_fraction: float = 0.1
    max_batches: Optional[int] = None  # per epoch; None means a full pass

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ConfigurationError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.hop < 1:
            raise ConfigurationError(f"hop must be >= 1, got {self.hop}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigurationError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


# -- metrics ----------------------------------------------------------------------

def mse(pred, target) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean((p - t) ** 2))


def pearson_per_band(pred, target, tol: float = 1e-12) -> tuple[np.ndarray, list]:
    """Pearson CC of each row (band) over columns (frames).

    A band whose prediction or target is constant gets CC 0 and is listed
    in the returned flags.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise ConfigurationError(f"prediction {p.shape} and target {t.shape} differ in shape")
    pc = p - p.mean(axis=1, keepdims=True)
    tc = t - t.mean(axis=1, keepdims=True)
    sp = np.sqrt(np.sum(pc * pc, axis=1))
    st = np.sqrt(np.sum(tc * tc, axis=1))
    ok = (sp > tol * max(1.0, np.abs(p).max(initial=0.0))) & (st > tol * max(1.0, np.abs(t).max(initial=0.0)))
    cc = np.zeros(p.shape[0])
    cc[ok] = np.sum(pc * tc, axis=1)[ok] / (sp[ok] * st[ok])
    return np.clip(cc, -1.0, 1.0), [int(b) for b in np.flatnonzero(~ok)]


@dataclass
class EvalReport:
    fold: int
    mse: float
    cc_per_band: list
    cc_mean: float
    per_word: list = field(default_factory=list)
    constant_bands: list = field(default_factory=list)
    train_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# -- inference --------------------------------------------------------------------

def predict(model: Decoder, ecog_windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode outputs for ``N x E x L`` windows."""
    was = model.training
    model.eval()
    try:
        with T.no_grad():
            outs = [model(Tensor(ecog_windows[i:i + batch_size])).data
                    for i in range(0, len(ecog_windows), batch_size)]
    finally:
        model.train(was)
    return np.concatenate(outs) if outs else np.zeros((0, model.config.out_channels, 0), np.float32)


def evaluate(model: Decoder, segs: SegmentSet, offsets=None, fold: int = 0,
             utterances: Optional[list] = None) -> EvalReport:
    """MSE and per-band CC over the concatenated frames of the chosen windows."""
    offsets = segs.offsets if offsets is None else np.asarray(offsets)
    if len(offsets) == 0:
        raise ConfigurationError("no test windows to evaluate")
    x, y = segs.subset(offsets).batch(np.arange(len(offsets)))
    pred = predict(model, x)
    flat_p = pred.transpose(1, 0, 2).reshape(pred.shape[1], -1)
    flat_t = y.transpose(1, 0, 2).reshape(y.shape[1], -1)
    cc, flags = pearson_per_band(flat_p, flat_t)
    per_word = []
    for i, a in enumerate(utterances or []):
        wcc, _ = pearson_per_band(pred[i], y[i])
        per_word.append({"word_id": int(a.word_id), "rep": int(a.repetition), "cc": float(wcc.mean())})
    if flags:
        log.warning("constant bands %s scored as CC 0", flags)
    return EvalReport(fold, mse(flat_p, flat_t), cc.tolist(), float(cc.mean()), per_word, flags)


# -- training ---------------------------------------------------------------------

def _loss_on(model: Decoder, segs: SegmentSet, offsets: np.ndarray, batch_size: int) -> float:
    total, count = 0.0, 0
    for i in range(0, len(offsets), batch_size):
        x, y = segs.subset(offsets[i:i + batch_size]).batch(np.arange(min(batch_size, len(offsets) - i)))
        p = predict(model, x, batch_size)
        total += float(np.sum((p.astype(np.float64) - y) ** 2))
        count += y.size
    return total / count


def train(model: Decoder, segs: SegmentSet, windows: FoldWindows, cfg: TrainConfig,
          on_epoch=None) -> tuple[Decoder, list]:
    """Minimise window MSE with Adam; returns the model at its best validation epoch.

    ``history`` holds ``{epoch, train_loss, val_loss}`` per epoch. When there
    are no validation windows the training loss drives early stopping.
    """
    train_offs = np.asarray(windows.train)
    val_offs = np.asarray(windows.val)
    if len(train_offs) == 0:
        raise ConfigurationError("fold has no training windows")
    rng = np.random.default_rng([cfg.seed, 11])
    model.reseed_dropout([cfg.seed, 12])
    if cfg.dropout is not None:
        for m in _dropouts(model):
            m.rate = cfg.dropout
    params = model.parameters()
    state = AdamState(lr=cfg.lr)
    history, best, best_state, stale = [], np.inf, model.state_dict(), 0
    train_view = segs.subset(train_offs)
    for epoch in range(cfg.max_epochs):
        model.train()
        order = rng.permutation(len(train_offs))
        batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
        if cfg.max_batches is not None:
            batches = batches[:cfg.max_batches]
        losses = []
        for b, idx in enumerate(batches):
            x, y = train_view.batch(idx)
            for p in params.values():
                p.grad = None
            loss = T.mse_loss(model(Tensor(x)), Tensor(y))
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergenceError(epoch, b, value)
            loss.backward()
            adam_step(params, state)
            losses.append(value)
        train_loss = float(np.mean(losses))
        val_loss = _loss_on(model, segs, val_offs, 256) if len(val_offs) else train_loss
        if not np.isfinite(val_loss):
            raise DivergenceError(epoch, len(batches), val_loss)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(history[-1])
        if val_loss < best:
            best, best_state, stale = val_loss, model.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    return model, history


def _dropouts(model):
    from .models import Dropout

    stack = [model]
    while stack:
        m = stack.pop()
        for _, child in m.children():
            if isinstance(child, Dropout):
                yield child
            stack.append(child)


# -- folds ------------------------------------------------------------------------

@dataclass
class FoldData:
    windows: FoldWindows
    stats: NormStats
    segs: SegmentSet


def prepare_fold(rec: PairedRecording, k: int, fold: int, hop: int = 1,
                 val_fraction: float = 0.1) -> FoldData:
    """Fold windows plus a recording normalised on that fold's training frames."""
    plan = kfold_split(rec, k)
    win = fold_windows(rec, plan, fold, hop=hop, val_fraction=val_fraction)
    frames = np.unique(np.concatenate([win.train_frames, _frames_of(win.val)]))
    stats = compute_norm_stats(rec, frames)
    norm = normalize(rec, stats)
    return FoldData(win, stats, segment(norm))


def _frames_of(offsets, length: int = WINDOW) -> np.ndarray:
    if len(offsets) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.unique((np.asarray(offsets)[:, None] + np.arange(length)).ravel())


def dataset_max(segs: SegmentSet, offsets) -> float:
    """Largest normalised envelope value over the given windows' frames."""
    return float(segs.ecog[:, _frames_of(offsets, segs.length)].max())


def run_fold(rec: PairedRecording, model_cfg: ModelConfig, cfg: TrainConfig, k: int,
             out_dir=None, model_seed: Optional[int] = None) -> tuple[Decoder, EvalReport]:
    fd = prepare_fold(rec, k, cfg.fold, cfg.hop, cfg.val_fraction)
    model = build_model(model_cfg, cfg.seed if model_seed is None else model_seed)
    t0 = time.perf_counter()
    model, history = train(model, fd.segs, fd.windows, cfg)
    report = evaluate(model, fd.segs, fd.windows.test, cfg.fold, fd.windows.test_utterances)
    report.train_history = history
    log.info("fold %d cc_mean %.4f mse %.4f (%.1fs)", cfg.fold, report.cc_mean, report.mse,
             time.perf_counter() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        train_frames = np.unique(np.concatenate([fd.windows.train_frames, _frames_of(fd.windows.val)]))
        meta = {"fold": cfg.fold, "k": k, "seed": cfg.seed, "epochs": len(history),
                "cc_mean": report.cc_mean, "mse": report.mse, "train": asdict(cfg),
                "dataset_max": float(fd.segs.ecog[:, train_frames].max())}
        save_checkpoint(out / "checkpoint", model, fd.stats, meta)
        write_report(out / "report.json", report.to_dict())
    return model, report


def write_report(path, report: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True))


def mean_report(reports: list) -> dict:
    ok = [r for r in reports if "error" not in r]
    out = {"folds": [r["fold"] for r in ok], "failed": [r for r in reports if "error" in r]}
    if ok:
        out["mse"] = float(np.mean([r["mse"] for r in ok]))
        out["cc_per_band"] = np.mean([r["cc_per_band"] for r in ok], axis=0).tolist()
        out["cc_mean"] = float(np.mean([r["cc_mean"] for r in ok]))
    return out


def crossval_run(rec: PairedRecording, model_cfg: ModelConfig, cfg: TrainConfig, k: int,
                 out_dir=None, folds=None) -> dict:
    """Train and evaluate every fold; a failing fold is recorded, not raised."""
    reports = []
    for fold in (range(k) if folds is None else folds):
        fold_cfg = TrainConfig(**{**asdict(cfg), "fold": fold})
        try:
            _, rep = run_fold(rec, model_cfg, fold_cfg, k,
                              None if out_dir is None else Path(out_dir) / f"fold_{fold}")
            reports.append(rep.to_dict())
        except (DivergenceError, ConfigurationError, FloatingPointError) as exc:
            log.error("fold %d failed: %s", fold, exc)
            reports.append({"fold": fold, "error": type(exc).__name__, "message": str(exc)})
    summary = {"folds": reports, "mean": mean_report(reports)}
    if out_dir is not None:
        write_report(Path(out_dir) / "mean_report.json", summary["mean"])
    return summary
