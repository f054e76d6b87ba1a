"""Localization metrics: AP@IoU / mAP, instance confusion, Recall@N, FP taxonomy.

All metrics work in instance-index space with inclusive segment lengths.
Matching is greedy in descending score order: a proposal is a true positive
when it overlaps an unmatched same-class ground-truth segment at or above the
IoU threshold, and each ground-truth segment can be matched at most once.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError, DataError
from .inference import Proposal

THUMOS_GRID = tuple(round(0.1 * i, 2) for i in range(1, 10))
ANET_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(0, 10))

FP_CATEGORIES = ("background", "localization", "double-detection", "wrong-label")


@dataclass
class EvalConfig:
    iou_thresholds: tuple[float, ...] = THUMOS_GRID

    def validate(self) -> None:
        thrs = self.iou_thresholds
        if not thrs or any(not 0.0 < t < 1.0 for t in thrs):
            raise ConfigError("IoU thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(thrs, thrs[1:])):
            raise ConfigError("IoU thresholds must be strictly increasing")


@dataclass
class EvalReport:
    ap: dict[tuple[int, float], float]  # (class, iou) -> AP
    ap_at_iou: dict[float, float]  # mean over classes with ground truth
    map: float  # mean over the threshold grid
    confusion: tuple[int, int, int, int]  # (TP, FP, FN, TN) instance counts
    recall_at_n: float | None = None
    recall_n_used: int | None = None
    fp_taxonomy: dict[str, int] = field(default_factory=dict)


def segment_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Inclusive-count intersection over union of two segments."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def _sorted_proposals(proposals: list[Proposal]) -> list[Proposal]:
    return sorted(proposals, key=lambda p: (-p.score, p.start, p.end, p.video_id))


def _match(
    proposals: list[Proposal],
    gt: dict[str, list[tuple[int, int]]],
    iou_thr: float,
) -> list[bool]:
    """Greedy score-order matching; returns a TP flag per sorted proposal."""
    matched: dict[str, list[bool]] = {vid: [False] * len(segs) for vid, segs in gt.items()}
    flags = []
    for p in proposals:
        segs = gt.get(p.video_id, [])
        best_iou, best_idx = 0.0, -1
        for i, seg in enumerate(segs):
            if matched[p.video_id][i]:
                continue
            iou = segment_iou((p.start, p.end), seg)
            if iou > best_iou:
                best_iou, best_idx = iou, i
        if best_idx >= 0 and best_iou >= iou_thr:
            matched[p.video_id][best_idx] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def ap_at_iou(
    proposals: list[Proposal],
    gt: dict[str, list[tuple[int, int]]],
    iou_thr: float,
) -> float:
    """AP for one class: sum of precision at true-positive ranks over #GT."""
    num_gt = sum(len(segs) for segs in gt.values())
    if num_gt == 0:
        raise ConfigError("AP is undefined without ground-truth segments")
    ordered = _sorted_proposals(proposals)
    flags = _match(ordered, gt, iou_thr)
    tp = 0
    total = 0.0
    for rank, flag in enumerate(flags, start=1):
        if flag:
            tp += 1
            total += tp / rank
    return total / num_gt


def _gt_by_class(dataset: Dataset) -> dict[int, dict[str, list[tuple[int, int]]]]:
    by_class: dict[int, dict[str, list[tuple[int, int]]]] = {}
    for rec in dataset.records:
        for c, start, end in rec.gt_segments or []:
            by_class.setdefault(c, {}).setdefault(rec.id, []).append((start, end))
    return by_class


def instance_confusion(
    selected_mask: np.ndarray, gt_mask: np.ndarray
) -> tuple[int, int, int, int]:
    """(TP, FP, FN, TN) counts; FP is a context error, FN an actionness error."""
    tp = int(np.sum(selected_mask & gt_mask))
    fp = int(np.sum(selected_mask & ~gt_mask))
    fn = int(np.sum(~selected_mask & gt_mask))
    tn = int(np.sum(~selected_mask & ~gt_mask))
    return tp, fp, fn, tn


def recall_at_n(actionness: np.ndarray, gt_mask: np.ndarray, n: int) -> tuple[float, int]:
    """Fraction of the top-n instances by actionness that contain any action.

    Ties resolve to the lower index. Returns (recall, n actually used); when
    fewer than n instances exist, all are used.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    used = min(n, actionness.shape[0])
    order = np.argsort(-actionness, kind="stable")[:used]
    return float(np.mean(gt_mask[order])), used


def classify_false_positives(
    proposals: list[Proposal], dataset: Dataset, iou_thr: float = 0.5
) -> dict[str, int]:
    """Simplified false-positive taxonomy at one matching threshold.

    Each false positive gets exactly one category, checked in order:
    double-detection (>= thr overlap with an already-matched same-class
    segment), wrong-label (>= thr overlap with a different-class segment),
    localization (partial same-class overlap below thr), else background.
    """
    by_class = _gt_by_class(dataset)
    counts = dict.fromkeys(FP_CATEGORIES, 0)
    all_gt = [
        (rec.id, c, (start, end))
        for rec in dataset.records
        for c, start, end in rec.gt_segments or []
    ]
    for c in sorted({p.class_index for p in proposals}):
        class_props = _sorted_proposals([p for p in proposals if p.class_index == c])
        gt = by_class.get(c, {})
        flags = _match(class_props, gt, iou_thr)
        for p, is_tp in zip(class_props, flags):
            if is_tp:
                continue
            seg = (p.start, p.end)
            same = [
                segment_iou(seg, g) for g in gt.get(p.video_id, [])
            ]
            diff = [
                segment_iou(seg, g)
                for vid, gc, g in all_gt
                if vid == p.video_id and gc != c
            ]
            if same and max(same) >= iou_thr:
                counts["double-detection"] += 1
            elif diff and max(diff) >= iou_thr:
                counts["wrong-label"] += 1
            elif same and max(same) > 0.0:
                counts["localization"] += 1
            else:
                counts["background"] += 1
    return counts


def selected_masks(proposals: list[Proposal], dataset: Dataset) -> dict[str, np.ndarray]:
    """Per-video mask of instances covered by any final proposal."""
    masks = {rec.id: np.zeros(rec.num_instances, dtype=bool) for rec in dataset.records}
    for p in proposals:
        if p.video_id not in masks:
            raise DataError(f"proposal references unknown video {p.video_id!r}")
        masks[p.video_id][p.start : p.end + 1] = True
    return masks


def evaluate(
    proposals: list[Proposal],
    dataset: Dataset,
    config: EvalConfig,
    actionness_by_video: dict[str, np.ndarray] | None = None,
    recall_n: int = 100,
) -> EvalReport:
    """Full report over a ground-truthed dataset.

    ``actionness_by_video`` (per-video actionness vectors) enables the pooled
    Recall@N diagnostic; without it the field is left absent.
    """
    config.validate()
    by_class = _gt_by_class(dataset)
    if not by_class:
        raise DataError("dataset carries no ground-truth segments")
    known = {rec.id for rec in dataset.records}
    for p in proposals:
        if p.video_id not in known:
            raise DataError(f"proposal references unknown video {p.video_id!r}")

    ap: dict[tuple[int, float], float] = {}
    ap_mean: dict[float, float] = {}
    for thr in config.iou_thresholds:
        values = []
        for c, gt in sorted(by_class.items()):
            class_props = [p for p in proposals if p.class_index == c]
            ap[(c, thr)] = ap_at_iou(class_props, gt, thr)
            values.append(ap[(c, thr)])
        ap_mean[thr] = float(np.mean(values))
    mean_ap = float(np.mean([ap_mean[t] for t in config.iou_thresholds]))

    masks = selected_masks(proposals, dataset)
    selected = np.concatenate([masks[rec.id] for rec in dataset.records])
    gt_mask = np.concatenate([rec.gt_mask() for rec in dataset.records])
    confusion = instance_confusion(selected, gt_mask)

    recall = used = None
    if actionness_by_video is not None:
        pooled = np.concatenate([actionness_by_video[rec.id] for rec in dataset.records])
        recall, used = recall_at_n(pooled, gt_mask, recall_n)

    taxonomy = classify_false_positives(proposals, dataset)
    return EvalReport(
        ap=ap,
        ap_at_iou=ap_mean,
        map=mean_ap,
        confusion=confusion,
        recall_at_n=recall,
        recall_n_used=used,
        fp_taxonomy=taxonomy,
    )


def write_ap_table(report: EvalReport, config: EvalConfig, class_names: list[str], path: str) -> None:
    """CSV with one row per class plus a mean row, one column per IoU."""
    thrs = list(config.iou_thresholds)
    classes = sorted({c for c, _ in report.ap})
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class"] + [f"ap@{t}" for t in thrs])
        for c in classes:
            writer.writerow([class_names[c]] + [repr(report.ap[(c, t)]) for t in thrs])
        writer.writerow(["mean"] + [repr(report.ap_at_iou[t]) for t in thrs])


def write_summary(report: EvalReport, config: EvalConfig, path: str) -> None:
    """Machine-readable key/value summary, one pair per line."""
    tp, fp, fn, tn = report.confusion
    lines = [f"map {report.map!r}"]
    for thr in config.iou_thresholds:
        lines.append(f"ap@{thr} {report.ap_at_iou[thr]!r}")
    lines += [f"tp {tp}", f"fp {fp}", f"fn {fn}", f"tn {tn}"]
    for cat in FP_CATEGORIES:
        lines.append(f"fp_{cat} {report.fp_taxonomy.get(cat, 0)}")
    if report.recall_at_n is not None:
        lines.append(f"recall@{report.recall_n_used} {report.recall_at_n!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
