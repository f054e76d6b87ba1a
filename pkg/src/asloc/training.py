"""Optimization loop, training schedules, and per-epoch selection diagnostics.

Records in a batch share one stacked forward/backward pass through each
network (both are row-local), with per-video selection and losses computed on
slices. Gradients are averaged over the batch in fixed record order so runs
are bit-reproducible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset, VideoRecord, batch_iter
from .errors import ConfigError, NumericError
from .model import (
    AslModel,
    SelectionState,
    _sigmoid,
    build_pos_neg,
    fuse_selection,
    init_model,
    losses_from_state,
    output_gradients,
    topk_per_class,
)
from .numerics import adam_step, init_adam, make_rng, mlp_backward, mlp_forward


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 1e-4
    schedule: str = "joint"  # joint | f-then-g | alt:<n>:<m>
    seed: int = 0
    q: float = 0.7
    beta: float = 0.5
    k_ratio: float = 0.125
    hidden: int = 512
    actionness_loss: str = "gce"
    class_rate_cap: float | None = None
    early_stop: bool = False

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.hidden < 1:
            raise ConfigError("epochs, batch_size and hidden must be positive")
        if self.class_rate_cap is not None and not 0.0 < self.class_rate_cap <= 1.0:
            raise ConfigError("class_rate_cap must be in (0, 1]")
        parse_schedule(self.schedule)


@dataclass
class EpochLog:
    epoch: int
    mean_l_cls: float
    mean_l_asl: float
    tpos_action_fraction: float | None  # needs ground truth
    g_membership_accuracy: float
    tpos_iou_mean: float | None  # vs previous epoch; absent at epoch 0
    tpos_iou_std: float | None


def parse_schedule(schedule: str):
    """Returns a (f_active, g_active) predicate over (epoch, total_epochs)."""
    if schedule == "joint":
        return lambda epoch, total: (True, True)
    if schedule == "f-then-g":
        return lambda epoch, total: (True, False) if epoch < total // 2 else (False, True)
    if schedule.startswith("alt:"):
        parts = schedule.split(":")
        if len(parts) != 3:
            raise ConfigError(f"bad alternating schedule {schedule!r}, expected alt:<n>:<m>")
        n, m = int(parts[1]), int(parts[2])
        if n < 1 or m < 1:
            raise ConfigError("alternating phase lengths must be >= 1")
        return lambda epoch, total: (
            (True, False) if epoch % (n + m) < n else (False, True)
        )
    raise ConfigError(f"unknown schedule {schedule!r}")


def tpos_consecutive_iou(prev: np.ndarray, curr: np.ndarray) -> float:
    """Jaccard overlap of two index sets; 1.0 when both are empty."""
    prev_set, curr_set = set(prev.tolist()), set(curr.tolist())
    union = prev_set | curr_set
    if not union:
        return 1.0
    return len(prev_set & curr_set) / len(union)


def g_membership_accuracy(actionness: np.ndarray, t_pos: np.ndarray, t_neg: np.ndarray) -> float:
    """Fraction of instances where (a_t > 0.5) matches positive-set membership."""
    predicted = actionness > 0.5
    actual = np.zeros(actionness.shape[0], dtype=bool)
    actual[t_pos] = True
    return float(np.mean(predicted == actual))


def subsample_tpos(
    t_pos: np.ndarray,
    gt_mask: np.ndarray,
    target_rate: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Drop action-containing positives until their fraction is <= target_rate.

    Returns the reduced positive set; callers move the removed indices to the
    negative set. A target above the current rate is a no-op.
    """
    action_idx = t_pos[gt_mask[t_pos]]
    other = int(t_pos.size - action_idx.size)
    if t_pos.size == 0 or action_idx.size / t_pos.size <= target_rate:
        return t_pos
    # largest a with a / (a + other) <= target_rate
    if target_rate >= 1.0:
        keep = action_idx.size
    else:
        keep = int(np.floor(target_rate * other / (1.0 - target_rate)))
    drop = rng.choice(action_idx, size=action_idx.size - keep, replace=False)
    keep_mask = np.ones(gt_mask.shape[0], dtype=bool)
    keep_mask[drop] = False
    return t_pos[keep_mask[t_pos]]


def _forward_batch(model: AslModel, batch: list[VideoRecord]):
    """One stacked forward pass per network; per-record selection states."""
    stacked = np.vstack([rec.features for rec in batch])
    f_out, f_cache = mlp_forward(model.classifier, stacked)
    g_out, g_cache = mlp_forward(model.actionness, stacked)
    states = []
    offset = 0
    for rec in batch:
        t = rec.num_instances
        cas = f_out[offset : offset + t].T
        actionness = _sigmoid(g_out[offset : offset + t, 0])
        fused = fuse_selection(actionness, cas, model.beta)
        k = model.k_for(t)
        topk = topk_per_class(fused, k)
        t_pos, t_neg = build_pos_neg(topk, rec.labels, t)
        states.append(SelectionState(cas, actionness, fused, k, topk, t_pos, t_neg))
        offset += t
    return states, f_cache, g_cache


def train(dataset: Dataset, config: TrainConfig) -> tuple[AslModel, list[EpochLog]]:
    """Train both networks under the configured schedule.

    Raises NumericError with the epoch index if the loss diverges.
    """
    config.validate()
    if not dataset.records:
        raise ConfigError("cannot train on an empty dataset")
    active_at = parse_schedule(config.schedule)
    model = init_model(
        config.seed,
        dataset.feature_dim,
        dataset.num_classes,
        hidden=config.hidden,
        beta=config.beta,
        k_ratio=config.k_ratio,
        q=config.q,
        actionness_loss=config.actionness_loss,
    )
    f_adam = init_adam(
        model.classifier.arrays(), lr=config.lr, weight_decay=config.weight_decay
    )
    g_adam = init_adam(
        model.actionness.arrays(), lr=config.lr, weight_decay=config.weight_decay
    )

    logs: list[EpochLog] = []
    prev_tpos: dict[str, np.ndarray] = {}
    prev_mean_total = None
    stall_count = 0
    for epoch in range(config.epochs):
        f_active, g_active = active_at(epoch, config.epochs)
        cap_rng = make_rng(config.seed, 7, epoch)
        cls_losses, asl_losses, accs, fracs, ious = [], [], [], [], []
        curr_tpos: dict[str, np.ndarray] = {}
        for batch in batch_iter(dataset, config.batch_size, epoch, config.seed):
            try:
                states, f_cache, g_cache = _forward_batch(model, batch)
            except NumericError as exc:
                raise NumericError(f"diverged at epoch {epoch}: {exc}") from exc
            gf_rows, gg_rows = [], []
            for rec, state in zip(batch, states):
                if config.class_rate_cap is not None and rec.gt_segments is not None:
                    reduced = subsample_tpos(
                        state.t_pos, rec.gt_mask(), config.class_rate_cap, cap_rng
                    )
                    keep = np.zeros(rec.num_instances, dtype=bool)
                    keep[reduced] = True
                    state.t_pos = reduced
                    state.t_neg = np.flatnonzero(~keep)
                losses = losses_from_state(model, rec, state)
                gf, gg = output_gradients(model, rec, state)
                gf_rows.append(gf / len(batch))
                gg_rows.append(gg / len(batch))
                cls_losses.append(losses.l_cls)
                asl_losses.append(losses.l_asl)
                accs.append(g_membership_accuracy(state.actionness, state.t_pos, state.t_neg))
                if rec.gt_segments is not None and state.t_pos.size:
                    fracs.append(float(np.mean(rec.gt_mask()[state.t_pos])))
                if rec.id in prev_tpos:
                    ious.append(tpos_consecutive_iou(prev_tpos[rec.id], state.t_pos))
                curr_tpos[rec.id] = state.t_pos
            if f_active:
                f_grads, _ = mlp_backward(model.classifier, f_cache, np.vstack(gf_rows))
                adam_step(model.classifier.arrays(), f_grads.arrays(), f_adam)
            if g_active:
                g_grads, _ = mlp_backward(model.actionness, g_cache, np.vstack(gg_rows))
                adam_step(model.actionness.arrays(), g_grads.arrays(), g_adam)

        mean_total = float(np.mean(cls_losses) + np.mean(asl_losses))
        if not np.isfinite(mean_total):
            raise NumericError(f"diverged at epoch {epoch}")
        logs.append(
            EpochLog(
                epoch=epoch,
                mean_l_cls=float(np.mean(cls_losses)),
                mean_l_asl=float(np.mean(asl_losses)),
                tpos_action_fraction=float(np.mean(fracs)) if fracs else None,
                g_membership_accuracy=float(np.mean(accs)),
                tpos_iou_mean=float(np.mean(ious)) if ious else None,
                tpos_iou_std=float(np.std(ious)) if ious else None,
            )
        )
        prev_tpos = curr_tpos
        if config.early_stop:
            if prev_mean_total is not None and prev_mean_total - mean_total < 1e-5:
                stall_count += 1
                if stall_count >= 10:
                    break
            else:
                stall_count = 0
            prev_mean_total = mean_total
    return model, logs


EPOCH_LOG_COLUMNS = [
    "epoch",
    "mean_l_cls",
    "mean_l_asl",
    "tpos_action_fraction",
    "g_membership_accuracy",
    "tpos_iou_mean",
    "tpos_iou_std",
]


def write_epoch_log(logs: list[EpochLog], path: str) -> None:
    """One CSV row per epoch; absent diagnostics are empty fields."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPOCH_LOG_COLUMNS)
        for log in logs:
            writer.writerow(
                [
                    log.epoch,
                    repr(log.mean_l_cls),
                    repr(log.mean_l_asl),
                    "" if log.tpos_action_fraction is None else repr(log.tpos_action_fraction),
                    repr(log.g_membership_accuracy),
                    "" if log.tpos_iou_mean is None else repr(log.tpos_iou_mean),
                    "" if log.tpos_iou_std is None else repr(log.tpos_iou_std),
                ]
            )


def read_epoch_log(path: str) -> list[EpochLog]:
    logs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            logs.append(
                EpochLog(
                    epoch=int(row["epoch"]),
                    mean_l_cls=float(row["mean_l_cls"]),
                    mean_l_asl=float(row["mean_l_asl"]),
                    tpos_action_fraction=(
                        float(row["tpos_action_fraction"]) if row["tpos_action_fraction"] else None
                    ),
                    g_membership_accuracy=float(row["g_membership_accuracy"]),
                    tpos_iou_mean=float(row["tpos_iou_mean"]) if row["tpos_iou_mean"] else None,
                    tpos_iou_std=float(row["tpos_iou_std"]) if row["tpos_iou_std"] else None,
                )
            )
    return logs
