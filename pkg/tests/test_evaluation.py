"""Segment IoU, AP/mAP, instance confusion, Recall@N, and the FP taxonomy."""

import itertools

import numpy as np
import pytest

from asloc.errors import ConfigError, DataError
from asloc.evaluation import (
    ANET_GRID,
    EvalConfig,
    THUMOS_GRID,
    ap_at_iou,
    classify_false_positives,
    evaluate,
    instance_confusion,
    recall_at_n,
    segment_iou,
    selected_masks,
    write_ap_table,
    write_summary,
)
from asloc.inference import Proposal
from asloc.numerics import make_rng
from tests.conftest import make_dataset, make_record


def P(start, end, score, cls=0, vid="v"):
    return Proposal(vid, cls, start, end, score)


# -------------------------------------------------------------------- grids

def test_grids():
    assert THUMOS_GRID == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    assert ANET_GRID == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)
    with pytest.raises(ConfigError):
        EvalConfig(iou_thresholds=(0.5, 0.4)).validate()
    with pytest.raises(ConfigError):
        EvalConfig(iou_thresholds=()).validate()


# -------------------------------------------------------------- segment IoU

def test_segment_iou_values():
    assert segment_iou((2, 5), (2, 5)) == 1.0
    assert segment_iou((0, 3), (4, 9)) == 0.0
    assert segment_iou((0, 9), (5, 14)) == pytest.approx(5 / 15)


def test_segment_iou_symmetric_and_bounded():
    rng = make_rng(71)
    for _ in range(50):
        a = sorted(rng.integers(0, 20, 2).tolist())
        b = sorted(rng.integers(0, 20, 2).tolist())
        a, b = tuple(a), tuple(b)
        iou = segment_iou(a, b)
        assert iou == segment_iou(b, a)
        assert 0.0 <= iou <= 1.0
        assert (iou == 1.0) == (a == b)


# ----------------------------------------------------------------------- AP

def brute_force_ap(proposals, gt, thr):
    """Independent PR computation: sort, greedy-match, integrate precision at
    every recall step (precision-at-TP-rank convention)."""
    ordered = sorted(proposals, key=lambda p: (-p.score, p.start, p.end, p.video_id))
    available = {vid: list(segs) for vid, segs in gt.items()}
    num_gt = sum(len(s) for s in gt.values())
    tp_flags = []
    for p in ordered:
        segs = available.get(p.video_id, [])
        ious = [(segment_iou((p.start, p.end), seg), i) for i, seg in enumerate(segs)]
        ious = [x for x in ious if x[0] >= thr]
        best = max(ious, key=lambda x: x[0], default=None)
        # greedy rule also requires the best available IoU overall to clear thr
        all_best = max((segment_iou((p.start, p.end), seg) for seg in segs), default=0.0)
        if best is not None and best[0] == all_best:
            segs.pop(best[1])
            tp_flags.append(True)
        else:
            tp_flags.append(False)
    total, tp = 0.0, 0
    for rank, flag in enumerate(tp_flags, start=1):
        if flag:
            tp += 1
            total += tp / rank
    return total / num_gt


def test_ap_perfect_ranking():
    gt = {"v": [(0, 4), (10, 14)]}
    props = [P(0, 4, 0.9), P(10, 14, 0.8)]
    assert ap_at_iou(props, gt, 0.5) == 1.0


def test_ap_hand_pr_table():
    # 2 GT; ranked outcomes TP, FP, TP -> (1/1 + 2/3) / 2
    gt = {"v": [(0, 4), (10, 14)]}
    props = [P(0, 4, 0.9), P(20, 24, 0.8), P(10, 14, 0.7)]
    assert ap_at_iou(props, gt, 0.5) == pytest.approx((1.0 + 2 / 3) / 2)


def test_ap_no_proposals():
    assert ap_at_iou([], {"v": [(0, 4)]}, 0.5) == 0.0


def test_ap_no_gt_is_undefined():
    with pytest.raises(ConfigError):
        ap_at_iou([P(0, 1, 0.5)], {}, 0.5)


def test_ap_each_gt_matched_once():
    gt = {"v": [(0, 9)]}
    props = [P(0, 9, 0.9), P(0, 9, 0.8)]  # second is a double detection
    assert ap_at_iou(props, gt, 0.5) == pytest.approx(1.0 / 1.0)


def test_ap_matches_brute_force_on_random_fixtures():
    rng = make_rng(72)
    for _ in range(100):
        gt = {"v": [tuple(sorted(rng.integers(0, 30, 2).tolist())) for _ in range(int(rng.integers(1, 4)))]}
        props = []
        for _ in range(int(rng.integers(0, 11))):
            start = int(rng.integers(0, 30))
            end = start + int(rng.integers(0, 8))
            props.append(P(start, end, float(rng.choice([0.2, 0.5, 0.8]))))
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        assert ap_at_iou(props, gt, thr) == pytest.approx(
            brute_force_ap(props, gt, thr), abs=1e-9
        )


def test_ap_monotone_in_iou_threshold():
    rng = make_rng(73)
    gt = {"v": [(0, 5), (10, 18)]}
    props = [
        P(int(s), int(s) + int(l), float(rng.uniform(0, 1)))
        for s, l in zip(rng.integers(0, 20, 8), rng.integers(0, 10, 8))
    ]
    values = [ap_at_iou(props, gt, t) for t in THUMOS_GRID]
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


# ---------------------------------------------------------------- confusion

def test_confusion_trivial_cases():
    gt = np.array([True, False, True, False])
    assert instance_confusion(gt, gt) == (2, 0, 0, 2)
    all_sel = np.ones(4, dtype=bool)
    none_gt = np.zeros(4, dtype=bool)
    assert instance_confusion(all_sel, none_gt) == (0, 4, 0, 0)


def test_confusion_counting_oracle():
    rng = make_rng(74)
    sel = rng.uniform(size=50) > 0.5
    gt = rng.uniform(size=50) > 0.7
    tp, fp, fn, tn = instance_confusion(sel, gt)
    assert tp == sum(1 for s, g in zip(sel, gt) if s and g)
    assert fp == sum(1 for s, g in zip(sel, gt) if s and not g)
    assert fn == sum(1 for s, g in zip(sel, gt) if not s and g)
    assert tn == sum(1 for s, g in zip(sel, gt) if not s and not g)
    assert tp + fn == int(gt.sum())
    assert fp + tn == int((~gt).sum())


# ----------------------------------------------------------------- Recall@N

def test_recall_at_n_extremes():
    a = np.array([0.9, 0.8, 0.1, 0.2])
    gt = np.array([True, True, False, False])
    assert recall_at_n(a, gt, 2) == (1.0, 2)
    assert recall_at_n(a, np.zeros(4, dtype=bool), 2) == (0.0, 2)


def test_recall_at_n_truncates_to_population():
    a = np.array([0.5, 0.4])
    gt = np.array([True, False])
    assert recall_at_n(a, gt, 100) == (0.5, 2)


def test_recall_at_n_sorting_oracle_with_ties():
    rng = make_rng(75)
    a = rng.choice([0.2, 0.5, 0.8], size=30)
    gt = rng.uniform(size=30) > 0.5
    n = 10
    order = sorted(range(30), key=lambda i: (-a[i], i))[:n]
    expected = float(np.mean(gt[order]))
    assert recall_at_n(a, gt, n) == (expected, n)


def test_recall_at_n_invalid():
    with pytest.raises(ConfigError):
        recall_at_n(np.array([0.5]), np.array([True]), 0)


# -------------------------------------------------------------- FP taxonomy

def taxonomy_dataset():
    recs = [
        make_record(
            np.zeros((40, 2)),
            (0, 1),
            gt=[(0, 0, 9), (1, 20, 29)],
            video_id="v",
        )
    ]
    return make_dataset(recs, 2, 2)


def test_taxonomy_background():
    counts = classify_false_positives([P(35, 39, 0.9)], taxonomy_dataset())
    assert counts["background"] == 1 and sum(counts.values()) == 1


def test_taxonomy_double_detection():
    props = [P(0, 9, 0.9), P(0, 9, 0.8)]
    counts = classify_false_positives(props, taxonomy_dataset())
    assert counts["double-detection"] == 1 and sum(counts.values()) == 1


def test_taxonomy_localization():
    # overlaps the class-0 GT but below 0.5 IoU
    counts = classify_false_positives([P(8, 19, 0.9)], taxonomy_dataset())
    assert counts["localization"] == 1


def test_taxonomy_wrong_label():
    # class-0 proposal sitting on the class-1 segment
    counts = classify_false_positives([P(20, 29, 0.9, cls=0)], taxonomy_dataset())
    assert counts["wrong-label"] == 1


def test_taxonomy_full_scene():
    props = [
        P(0, 9, 0.95),           # TP on class 0
        P(0, 9, 0.90),           # double detection
        P(20, 29, 0.85, cls=0),  # wrong label
        P(7, 16, 0.80),          # localization (IoU with (0,9) = 3/17)
        P(33, 39, 0.75),         # background
    ]
    counts = classify_false_positives(props, taxonomy_dataset())
    assert counts == {
        "background": 1,
        "localization": 1,
        "double-detection": 1,
        "wrong-label": 1,
    }


# ------------------------------------------------------------------ evaluate

def eval_dataset():
    recs = [
        make_record(np.zeros((20, 2)), (0,), gt=[(0, 2, 7)], video_id="a"),
        make_record(np.zeros((20, 2)), (1,), gt=[(1, 5, 14)], video_id="b"),
    ]
    return make_dataset(recs, 2, 2)


def test_evaluate_perfect_proposals():
    props = [P(2, 7, 0.9, cls=0, vid="a"), P(5, 14, 0.9, cls=1, vid="b")]
    report = evaluate(props, eval_dataset(), EvalConfig())
    assert report.map == 1.0
    tp, fp, fn, tn = report.confusion
    assert fp == 0 and fn == 0
    assert tp == 16 and tn == 24
    assert sum(report.fp_taxonomy.values()) == 0


def test_evaluate_empty_proposals():
    report = evaluate([], eval_dataset(), EvalConfig())
    assert report.map == 0.0
    assert report.confusion[0] == 0


def test_evaluate_map_is_mean_of_ap_at_iou():
    rng = make_rng(76)
    props = [
        P(int(s), int(s) + 3, float(rng.uniform(0, 1)), cls=int(c), vid=v)
        for s, c, v in zip(rng.integers(0, 16, 8), rng.integers(0, 2, 8), ["a", "b"] * 4)
    ]
    config = EvalConfig()
    report = evaluate(props, eval_dataset(), config)
    assert report.map == pytest.approx(
        float(np.mean([report.ap_at_iou[t] for t in config.iou_thresholds]))
    )
    for t in config.iou_thresholds:
        assert report.ap_at_iou[t] == pytest.approx(
            float(np.mean([report.ap[(c, t)] for c in (0, 1)]))
        )


def test_evaluate_row_order_invariant():
    rng = make_rng(77)
    props = [
        P(int(s), int(s) + 2, round(float(rng.uniform(0, 1)), 3), cls=int(c), vid=v)
        for s, c, v in zip(rng.integers(0, 16, 10), rng.integers(0, 2, 10), ["a", "b"] * 5)
    ]
    base = evaluate(props, eval_dataset(), EvalConfig())
    shuffled = evaluate(list(reversed(props)), eval_dataset(), EvalConfig())
    assert base == shuffled


def test_evaluate_unknown_video_rejected():
    with pytest.raises(DataError):
        evaluate([P(0, 1, 0.5, vid="ghost")], eval_dataset(), EvalConfig())


def test_evaluate_without_gt_rejected():
    recs = [make_record(np.zeros((4, 2)), (0,), video_id="x")]
    with pytest.raises(DataError):
        evaluate([], make_dataset(recs, 1, 2), EvalConfig())


def test_evaluate_recall_needs_actionness():
    report = evaluate([], eval_dataset(), EvalConfig())
    assert report.recall_at_n is None
    a = {"a": np.linspace(1, 0, 20), "b": np.linspace(0, 1, 20)}
    report = evaluate([], eval_dataset(), EvalConfig(), actionness_by_video=a, recall_n=5)
    assert report.recall_n_used == 5 and 0.0 <= report.recall_at_n <= 1.0


def test_selected_masks_cover_proposals():
    ds = eval_dataset()
    masks = selected_masks([P(0, 3, 0.5, vid="a"), P(2, 5, 0.5, vid="a")], ds)
    assert masks["a"].tolist() == [True] * 6 + [False] * 14
    assert not masks["b"].any()


# ------------------------------------------------------------------- reports

def test_report_files(tmp_path):
    props = [P(2, 7, 0.9, cls=0, vid="a"), P(5, 14, 0.9, cls=1, vid="b")]
    config = EvalConfig()
    report = evaluate(props, eval_dataset(), config)
    ap_path = str(tmp_path / "ap.csv")
    sum_path = str(tmp_path / "summary.txt")
    write_ap_table(report, config, ["zero", "one"], ap_path)
    write_summary(report, config, sum_path)
    ap_lines = open(ap_path).read().strip().splitlines()
    assert ap_lines[0].startswith("class,ap@0.1")
    assert len(ap_lines) == 4  # header + 2 classes + mean
    summary = dict(
        line.split(" ", 1) for line in open(sum_path).read().strip().splitlines()
    )
    assert float(summary["map"]) == report.map
    assert int(summary["tp"]) == report.confusion[0]
    assert "fp_background" in summary
