"""Training loop: deterministic length-bucketed batching, Adam on batch MSE,
dev-set early stopping, resumable checkpoints, JSONL reports."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .corpus import DEFAULT_FRAME_PERIOD, normalize_score
from .errors import TrainingError, ValidationError
from .evaluation import pcc
from .nnet import autograd as ag
from .scorer import (
    batch_forward,
    collate,
    compute_duration_stats,
    config_from_dict,
    config_to_dict,
    init_params,
    prepare_utterance,
)

MONITORS = ("dev_mse", "dev_pcc")


@dataclass
class TrainConfig:
    lr: float = 0.002
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 7
    seed: int = 0
    monitor: str = "dev_mse"
    min_improvement: float = 1e-6
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lr < 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.patience > self.max_epochs:
            raise ValidationError(
                f"patience {self.patience} exceeds max_epochs {self.max_epochs}"
            )
        if self.monitor not in MONITORS:
            raise ValidationError(f"monitor must be one of {MONITORS}, got {self.monitor!r}")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_pcc: float | None
    # Wall clock, in-memory only: persisted artifacts must stay byte-identical
    # across reruns, so it is stripped from report and state files.
    seconds: float = 0.0


@dataclass
class TrainReport:
    monitor: str
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_value: float | None = None
    stop_reason: str = ""


def _row(stats: EpochStats) -> dict:
    row = dataclasses.asdict(stats)
    row.pop("seconds")
    return row


def save_report(report: TrainReport, path) -> None:
    with open(path, "w") as f:
        for e in report.epochs:
            f.write(json.dumps(_row(e)) + "\n")
        f.write(json.dumps({"summary": {
            "monitor": report.monitor,
            "best_epoch": report.best_epoch,
            "best_value": report.best_value,
            "stop_reason": report.stop_reason,
            "epochs_run": len(report.epochs),
        }}) + "\n")


# Batches are built per epoch from scratch: a (seed, epoch)-keyed permutation,
# length-sorted windows of 8 batches to limit padding waste, then a shuffle of
# the batch order. Stateless, so resuming at epoch E reproduces the exact
# batches the uninterrupted run would have used.
def make_batches(count: int, lengths, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    if count < 1:
        raise ValidationError("cannot batch an empty split")
    lengths = np.asarray(lengths)
    rng = np.random.default_rng([seed, epoch])
    perm = rng.permutation(count)
    batches = []
    window = batch_size * 8
    for start in range(0, count, window):
        chunk = perm[start:start + window]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        for b in range(0, len(chunk), batch_size):
            batches.append(chunk[b:b + batch_size])
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def _global_grad_norm(params: nnet.ParamSet) -> float:
    total = 0.0
    for _, t in params.items():
        if t.grad is not None:
            total += float((t.grad * t.grad).sum())
    return float(np.sqrt(total))


def _clip_grads(params: nnet.ParamSet, max_norm: float) -> None:
    norm = _global_grad_norm(params)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for _, t in params.items():
            if t.grad is not None:
                t.grad *= scale


def _dev_metrics(params, scorer_cfg, items, targets, batch_size: int):
    preds = np.empty(len(items))
    with ag.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start:start + batch_size]
            out = batch_forward(params, scorer_cfg, collate(chunk))
            preds[start:start + len(chunk)] = out.data
    dev_mse = float(np.mean((preds - targets) ** 2))
    try:
        dev_pcc = pcc(preds, targets)
    except ValidationError:
        dev_pcc = None
    return dev_mse, dev_pcc


def _monitor_value(monitor: str, dev_mse: float, dev_pcc: float | None):
    return dev_mse if monitor == "dev_mse" else dev_pcc


def _improved(monitor: str, value, best, min_improvement: float) -> bool:
    if value is None:
        return False
    if best is None:
        return True
    if monitor == "dev_mse":
        return value <= best - min_improvement
    return value >= best + min_improvement


def train(train_records, dev_records, scorer_cfg, train_cfg: TrainConfig,
          codebook=None, cluster_sequences=None, alignments=None, inventory=None,
          frame_period: float = DEFAULT_FRAME_PERIOD,
          checkpoint_dir=None, resume: bool = False):
    """Fit a scorer; returns (best-dev params, final scorer config, TrainReport).

    The config comes back because the baseline fills its duration statistics
    from the training split. With checkpoint_dir set, every epoch persists
    last/best params, optimizer state and a state.json; resume=True continues
    bit-compatibly from them.
    """
    if not train_records or not dev_records:
        raise ValidationError("train and dev splits must both be nonempty")
    prepare_kwargs = dict(codebook=codebook, cluster_sequences=cluster_sequences,
                          alignments=alignments, inventory=inventory,
                          frame_period=frame_period, feature_cache={})
    train_items = [prepare_utterance(r, scorer_cfg, **prepare_kwargs) for r in train_records]
    dev_items = [prepare_utterance(r, scorer_cfg, **prepare_kwargs) for r in dev_records]
    train_targets = np.array([normalize_score(r.score_raw) for r in train_records])
    dev_targets = np.array([normalize_score(r.score_raw) for r in dev_records])
    lengths = np.array([it["length"] for it in train_items])

    if scorer_cfg.variant == "asr_based" and not resume:
        mean, std = compute_duration_stats([it["durations"] for it in train_items])
        scorer_cfg = dataclasses.replace(scorer_cfg, duration_mean=mean, duration_std=std)

    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    params = init_params(scorer_cfg, train_cfg.seed)
    adam = nnet.init_adam(params, lr=train_cfg.lr)
    report = TrainReport(monitor=train_cfg.monitor)
    best_values = params.copy_values()
    best = None
    bad_streak = 0
    start_epoch = 1

    if resume:
        if ckpt_dir is None:
            raise ValidationError("resume requires a checkpoint directory")
        state = json.loads((ckpt_dir / "state.json").read_text())
        header, tensors = nnet.read_checkpoint(ckpt_dir / "last.ckpt")
        saved_cfg = config_from_dict(header["scorer"])
        ours, theirs = config_to_dict(scorer_cfg), config_to_dict(saved_cfg)
        for stat in ("duration_mean", "duration_std"):  # filled by the first run
            ours.pop(stat, None)
            theirs.pop(stat, None)
        if ours != theirs:
            raise ValidationError("checkpoint scorer config does not match this run")
        scorer_cfg = saved_cfg
        params.load_values(tensors)
        adam = nnet.read_adam_state(ckpt_dir / "last.ckpt.opt")
        _, best_tensors = nnet.read_checkpoint(ckpt_dir / "best.ckpt")
        best_values = {k: np.asarray(v) for k, v in best_tensors.items()}
        best = state["best_value"]
        bad_streak = state["bad_streak"]
        start_epoch = state["epoch"] + 1
        report.best_epoch = state["best_epoch"]
        report.best_value = best
        for row in state["rows"]:
            report.epochs.append(EpochStats(**row))

    header = {"scorer": config_to_dict(scorer_cfg),
              "train": dataclasses.asdict(train_cfg)}

    stop_reason = "max_epochs"
    for epoch in range(start_epoch, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        epoch_sq_sum = 0.0
        for batch_no, batch_idx in enumerate(
                make_batches(len(train_items), lengths, train_cfg.batch_size,
                             train_cfg.seed, epoch)):
            params.zero_grad()
            inputs = collate([train_items[i] for i in batch_idx])
            preds = batch_forward(params, scorer_cfg, inputs)
            loss = nnet.mse_loss(preds, train_targets[batch_idx])
            value = loss.item()
            if not np.isfinite(value):
                ids = [train_items[i]["id"] for i in batch_idx]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batch_no} (utterances {ids})"
                )
            loss.backward()
            if train_cfg.grad_clip is not None:
                _clip_grads(params, train_cfg.grad_clip)
            nnet.adam_step(params, adam)
            epoch_sq_sum += value * len(batch_idx)
        train_loss = epoch_sq_sum / len(train_items)

        dev_mse, dev_pcc = _dev_metrics(params, scorer_cfg, dev_items, dev_targets,
                                        train_cfg.batch_size)
        value = _monitor_value(train_cfg.monitor, dev_mse, dev_pcc)
        if _improved(train_cfg.monitor, value, best, train_cfg.min_improvement):
            best = value
            best_values = params.copy_values()
            report.best_epoch = epoch
            report.best_value = best
            bad_streak = 0
        else:
            bad_streak += 1

        report.epochs.append(EpochStats(
            epoch=epoch, train_loss=train_loss, dev_loss=dev_mse, dev_pcc=dev_pcc,
            seconds=time.perf_counter() - t0,
        ))

        if ckpt_dir is not None:
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            nnet.write_checkpoint(ckpt_dir / "last.ckpt", header, params)
            nnet.write_adam_state(ckpt_dir / "last.ckpt.opt", adam)
            _write_values(ckpt_dir / "best.ckpt", header, best_values)
            (ckpt_dir / "state.json").write_text(json.dumps({
                "epoch": epoch, "bad_streak": bad_streak,
                "best_epoch": report.best_epoch, "best_value": best,
                "rows": [_row(e) for e in report.epochs],
            }, sort_keys=True) + "\n")

        if bad_streak >= train_cfg.patience:
            stop_reason = "early_stopping"
            break

    report.stop_reason = stop_reason
    params.load_values(best_values)
    return params, scorer_cfg, report


def _write_values(path, header: dict, values: dict) -> None:
    ps = nnet.ParamSet()
    for name, arr in values.items():
        ps.add(name, arr.copy())
    nnet.write_checkpoint(path, header, ps)


def load_scorer_checkpoint(path):
    """Read (params, scorer config) back from a checkpoint for prediction."""
    header, tensors = nnet.read_checkpoint(path)
    if "scorer" not in header:
        raise ValidationError(f"{path}: checkpoint carries no scorer config")
    cfg = config_from_dict(header["scorer"])
    params = init_params(cfg, seed=0)
    params.load_values(tensors)
    return params, cfg
