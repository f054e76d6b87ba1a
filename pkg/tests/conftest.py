"""Shared fixtures and builders for the test suite."""

import numpy as np
import pytest

from asloc.data import Dataset, VideoRecord
from asloc.model import AslModel
from asloc.numerics import MlpParams, make_rng


def make_record(features, labels, gt=None, video_id="vid"):
    return VideoRecord(
        id=video_id,
        features=np.asarray(features, dtype=np.float64),
        labels=tuple(labels),
        gt_segments=gt,
    )


def make_dataset(records, num_classes, feature_dim):
    names = [f"class_{c}" for c in range(num_classes)]
    return Dataset(list(records), num_classes, feature_dim, names)


def zero_mlp(in_dim, hidden, out_dim):
    return MlpParams(
        w1=np.zeros((in_dim, hidden)),
        b1=np.zeros(hidden),
        w2=np.zeros((hidden, out_dim)),
        b2=np.zeros(out_dim),
    )


def zero_model(feature_dim, num_classes, hidden=4, **kwargs):
    return AslModel(
        classifier=zero_mlp(feature_dim, hidden, num_classes),
        actionness=zero_mlp(feature_dim, hidden, 1),
        **kwargs,
    )


@pytest.fixture
def rng():
    return make_rng(1234)
