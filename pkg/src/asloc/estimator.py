"""Scikit-learn style front end over training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .data import Dataset, VideoRecord
from .evaluation import EvalConfig, THUMOS_GRID, evaluate
from .inference import DEFAULT_ALPHAS, InferenceConfig, Proposal, localize, localize_dataset
from .model import compute_actionness
from .training import TrainConfig, train


class AslLocalizer(BaseEstimator):
    """Weakly supervised temporal action localizer.

    fit() consumes a Dataset with video-level labels only; predict() emits
    scored class-labeled segment proposals per video. All hyperparameters are
    plain constructor arguments so the estimator composes with sklearn
    utilities (get_params / set_params / clone).
    """

    def __init__(
        self,
        epochs: int = 100,
        batch_size: int = 16,
        lr: float = 1e-4,
        weight_decay: float = 1e-4,
        hidden: int = 512,
        beta: float = 0.5,
        k_ratio: float = 0.125,
        q: float = 0.7,
        actionness_loss: str = "gce",
        schedule: str = "joint",
        seed: int = 0,
        alphas: tuple[float, ...] = DEFAULT_ALPHAS,
        nms_iou: float = 0.4,
        mode: str = "asl",
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.hidden = hidden
        self.beta = beta
        self.k_ratio = k_ratio
        self.q = q
        self.actionness_loss = actionness_loss
        self.schedule = schedule
        self.seed = seed
        self.alphas = alphas
        self.nms_iou = nms_iou
        self.mode = mode

    def fit(self, dataset: Dataset, y=None) -> "AslLocalizer":
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            weight_decay=self.weight_decay,
            hidden=self.hidden,
            beta=self.beta,
            k_ratio=self.k_ratio,
            q=self.q,
            actionness_loss=self.actionness_loss,
            schedule=self.schedule,
            seed=self.seed,
        )
        self.model_, self.logs_ = train(dataset, config)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("AslLocalizer is not fitted yet; call fit first")

    def _inference_config(self) -> InferenceConfig:
        return InferenceConfig(alphas=tuple(self.alphas), nms_iou=self.nms_iou, mode=self.mode)

    def predict(self, data: Dataset | VideoRecord) -> list[Proposal]:
        self._check_fitted()
        if isinstance(data, VideoRecord):
            return localize(self.model_, data, self._inference_config())
        return localize_dataset(self.model_, data, self._inference_config())

    def transform(self, data: Dataset | VideoRecord) -> dict[str, np.ndarray]:
        """Per-video actionness sequences for the given records."""
        self._check_fitted()
        records = [data] if isinstance(data, VideoRecord) else data.records
        return {
            rec.id: compute_actionness(self.model_.actionness, rec.features) for rec in records
        }

    def score(self, dataset: Dataset, y=None, iou_thresholds=THUMOS_GRID) -> float:
        """mAP of the localized proposals against the dataset's ground truth."""
        self._check_fitted()
        proposals = self.predict(dataset)
        report = evaluate(proposals, dataset, EvalConfig(iou_thresholds=tuple(iou_thresholds)))
        return report.map
