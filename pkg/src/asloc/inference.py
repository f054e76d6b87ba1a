"""Proposal generation: multi-threshold segment extraction and temporal NMS.

Localization modes mirror the ablations: ``asl`` thresholds the fused
selection sequence, ``asl-s`` the raw class activation sequence, and ``asl-a``
the class-agnostic actionness sequence with the video's argmax class assigned
to every proposal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, VideoRecord
from .errors import ConfigError, DataError
from .model import (
    AslModel,
    compute_actionness,
    compute_cas,
    fuse_selection,
    run_forward,
    video_class_probs,
)

MODE_ASL = "asl"
MODE_ASL_S = "asl-s"
MODE_ASL_A = "asl-a"
MODES = (MODE_ASL, MODE_ASL_S, MODE_ASL_A)

DEFAULT_ALPHAS = tuple(j / 11.0 for j in range(1, 11))


@dataclass(frozen=True)
class Proposal:
    video_id: str
    class_index: int
    start: int  # inclusive
    end: int  # inclusive
    score: float


@dataclass
class InferenceConfig:
    alphas: tuple[float, ...] = DEFAULT_ALPHAS
    nms_iou: float = 0.4
    mode: str = MODE_ASL

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError("nms_iou must be in (0, 1)")
        if not self.alphas or any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ConfigError("thresholds must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.alphas, self.alphas[1:])):
            raise ConfigError("thresholds must be strictly increasing")


def selection_sequence(model: AslModel, record: VideoRecord, mode: str) -> np.ndarray:
    """Per-class localization signal, shape (C, T)."""
    cas = compute_cas(model.classifier, record.features)
    if mode == MODE_ASL_S:
        return cas
    actionness = compute_actionness(model.actionness, record.features)
    if mode == MODE_ASL:
        return fuse_selection(actionness, cas, model.beta)
    if mode == MODE_ASL_A:
        return np.broadcast_to(actionness, cas.shape).copy()
    raise ConfigError(f"unknown mode {mode!r}")


def threshold_segments(row: np.ndarray, alpha: float) -> list[tuple[int, int]]:
    """Maximal runs of consecutive indices with value strictly above alpha."""
    above = np.asarray(row) > alpha
    segments = []
    start = None
    for t, flag in enumerate(above):
        if flag and start is None:
            start = t
        elif not flag and start is not None:
            segments.append((start, t - 1))
            start = None
    if start is not None:
        segments.append((start, len(above) - 1))
    return segments


def score_proposal(row: np.ndarray, start: int, end: int) -> float:
    """Mean of the selection signal over the inclusive segment."""
    return float(np.mean(row[start : end + 1]))


def proposal_iou(a: tuple[int, int], b: tuple[int, int]) -> float:
    """Segment IoU with inclusive instance counting."""
    inter = min(a[1], b[1]) - max(a[0], b[0]) + 1
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0] + 1) + (b[1] - b[0] + 1) - inter
    return inter / union


def nms(proposals: list[Proposal], iou_threshold: float) -> list[Proposal]:
    """Greedy suppression of same-class overlapping proposals.

    The highest-scoring remaining proposal is kept (ties: earlier start, then
    longer); everything overlapping it above the threshold is discarded.
    """
    remaining = sorted(proposals, key=lambda p: (-p.score, p.start, -(p.end - p.start)))
    kept: list[Proposal] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [
            p
            for p in remaining
            if proposal_iou((best.start, best.end), (p.start, p.end)) <= iou_threshold
        ]
    return kept


def localize(model: AslModel, record: VideoRecord, config: InferenceConfig) -> list[Proposal]:
    """Threshold the selection signal at every alpha, score, dedupe, and NMS.

    ``asl`` / ``asl-s`` emit proposals for every class; ``asl-a`` only for the
    video's most probable class.
    """
    config.validate()
    signal = selection_sequence(model, record, config.mode)
    if config.mode == MODE_ASL_A:
        state = run_forward(model, record)
        probs = video_class_probs(state.cas, state.topk)
        classes = [int(np.argmax(probs))]
    else:
        classes = list(range(model.num_classes))
    results: list[Proposal] = []
    for c in classes:
        row = signal[c]
        segments: dict[tuple[int, int], float] = {}
        for alpha in config.alphas:
            for start, end in threshold_segments(row, alpha):
                score = score_proposal(row, start, end)
                prev = segments.get((start, end))
                if prev is None or score > prev:
                    segments[(start, end)] = score
        candidates = [
            Proposal(record.id, c, start, end, score)
            for (start, end), score in sorted(segments.items())
        ]
        results.extend(nms(candidates, config.nms_iou))
    results.sort(key=lambda p: (-p.score, p.start, p.end, p.class_index))
    return results


PROPOSAL_COLUMNS = ["video_id", "class_index", "class_name", "start", "end", "score"]


def write_proposals(proposals: list[Proposal], class_names: list[str], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PROPOSAL_COLUMNS)
        for p in proposals:
            writer.writerow(
                [p.video_id, p.class_index, class_names[p.class_index], p.start, p.end, repr(p.score)]
            )


def read_proposals(path: str) -> list[Proposal]:
    proposals = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            proposals.append(
                Proposal(
                    video_id=row["video_id"],
                    class_index=int(row["class_index"]),
                    start=int(row["start"]),
                    end=int(row["end"]),
                    score=float(row["score"]),
                )
            )
    return proposals


def localize_dataset(
    model: AslModel, dataset: Dataset, config: InferenceConfig
) -> list[Proposal]:
    if model.feature_dim != dataset.feature_dim or model.num_classes != dataset.num_classes:
        raise DataError(
            f"checkpoint ({model.num_classes} classes, d={model.feature_dim}) does not match "
            f"dataset ({dataset.num_classes} classes, d={dataset.feature_dim})"
        )
    proposals: list[Proposal] = []
    for rec in dataset.records:
        proposals.extend(localize(model, rec, config))
    return proposals
