"""Finite-difference verification of the analytic gradients on tiny instances.

Selection indices (top-k sets and the positive/negative partition) are frozen
at the unperturbed parameters, matching the backward pass which treats them as
constants. Instances whose hidden pre-activations sit within 1e-3 of the ReLU
kink are re-drawn, since central differences are meaningless across the kink.
"""

from __future__ import annotations

import numpy as np

from .data import VideoRecord
from .model import AslModel, backward, forward_and_loss, init_model, run_forward
from .numerics import finite_diff_check, make_rng, mlp_forward


def _random_case(seed: int, d: int, t: int, c: int, hidden: int) -> tuple[AslModel, VideoRecord]:
    rng = make_rng(seed, 11)
    model = init_model(seed, d, c, hidden=hidden)
    features = rng.normal(0.0, 1.0, (t, d))
    n_labels = int(rng.integers(1, min(c, 2) + 1))
    labels = tuple(sorted(rng.choice(c, size=n_labels, replace=False).tolist()))
    return model, VideoRecord(id=f"grad_{seed}", features=features, labels=labels)


def _relu_margin(model: AslModel, features: np.ndarray) -> float:
    margins = []
    for net in (model.classifier, model.actionness):
        _, (_, z1, _) = mlp_forward(net, features)
        margins.append(float(np.abs(z1).min()))
    return min(margins)


def gradcheck_case(
    seed: int,
    d: int = 8,
    t: int = 16,
    c: int = 3,
    hidden: int = 6,
    eps: float = 1e-5,
) -> float:
    """Max relative gradient error of the total loss for one random instance."""
    for attempt in range(50):
        model, record = _random_case(seed * 1000 + attempt, d, t, c, hidden)
        if _relu_margin(model, record.features) > 1e-3:
            break
    else:
        raise RuntimeError("could not draw a case away from the ReLU kink")

    frozen = run_forward(model, record)
    arrays = model.classifier.arrays() + model.actionness.arrays()

    def loss_and_grad():
        state, losses = forward_and_loss(model, record, frozen=frozen)
        f_grads, g_grads = backward(model, record, state)
        return losses.total, f_grads.arrays() + g_grads.arrays()

    return finite_diff_check(loss_and_grad, arrays, eps=eps)


def run_gradcheck(seeds: int = 25, tolerance: float = 1e-4, **case_kwargs) -> tuple[float, bool]:
    """Max error across seeds and whether everything stayed under tolerance."""
    worst = max(gradcheck_case(seed, **case_kwargs) for seed in range(seeds))
    return worst, worst < tolerance
