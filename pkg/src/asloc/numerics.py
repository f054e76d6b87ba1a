"""Dense numerics: a two-layer MLP with analytic backprop, Adam, and PRNG helpers.

Everything operates on float64 numpy arrays. The MLP topology is fixed to one
ReLU hidden layer with a linear output, applied independently to every row of
the input (kernel-size-1 semantics over time). Randomness always flows through
generators created by :func:`make_rng`, which is seeded via PCG64 so identical
seeds reproduce bit-identical streams on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


def make_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator keyed on a tuple of integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(k) for k in keys])))


def xavier_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform Glorot initialization in +-sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ShapeError(f"xavier_init needs positive dims, got {fan_in}x{fan_out}")
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class MlpParams:
    """One hidden ReLU layer, linear output. Also reused as a gradient holder."""

    w1: np.ndarray  # (in, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden, out)
    b2: np.ndarray  # (out,)

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))


def init_mlp(rng: np.random.Generator, in_dim: int, hidden: int, out_dim: int) -> MlpParams:
    """Xavier weights, zero biases."""
    return MlpParams(
        w1=xavier_init(rng, in_dim, hidden),
        b1=np.zeros(hidden),
        w2=xavier_init(rng, hidden, out_dim),
        b2=np.zeros(out_dim),
    )


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams(*(np.zeros_like(a) for a in params.arrays()))


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Row-local forward pass.

    Returns the (T, out) output and a cache for :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match in_dim {params.in_dim}")
    z1 = x @ params.w1 + params.b1
    h1 = np.maximum(z1, 0.0)
    out = h1 @ params.w2 + params.b2
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite value in mlp_forward output")
    return out, (x, z1, h1)


def mlp_backward(
    params: MlpParams, cache: tuple, out_grad: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Analytic gradients given d(loss)/d(output).

    Returns (parameter gradients, gradient w.r.t. the input rows).
    """
    x, z1, h1 = cache
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != (x.shape[0], params.out_dim):
        raise ShapeError(
            f"out_grad shape {out_grad.shape} does not match cache ({x.shape[0]}, {params.out_dim})"
        )
    gw2 = h1.T @ out_grad
    gb2 = out_grad.sum(axis=0)
    gh1 = out_grad @ params.w2.T
    gz1 = gh1 * (z1 > 0.0)
    gw1 = x.T @ gz1
    gb1 = gz1.sum(axis=0)
    gx = gz1 @ params.w1.T
    return MlpParams(gw1, gb1, gw2, gb2), gx


@dataclass
class AdamState:
    """Adam moments plus hyperparameters; decoupled weight decay."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def init_adam(
    arrays: list[np.ndarray],
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamState:
    return AdamState(
        lr=lr,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
        weight_decay=weight_decay,
        t=0,
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
    )


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Bias-corrected Adam update, in place.

    Weight decay is decoupled: each parameter is shrunk by lr * wd before the
    moment-based update is applied.
    """
    for idx, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(g))[0])
            raise NumericError(f"non-finite gradient in array {idx} at coordinate {bad}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if state.weight_decay:
            a -= state.lr * state.weight_decay * a
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        a -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def finite_diff_check(loss_and_grad, arrays: list[np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_and_grad`` is a zero-argument callable returning (loss, grads) for
    the current contents of ``arrays``; entries are perturbed in place. The
    relative error is |analytic - numeric| / max(1, |analytic|).
    """
    _, grads = loss_and_grad()
    max_err = 0.0
    for arr, grad in zip(arrays, grads):
        flat = arr.ravel()
        gflat = np.asarray(grad).ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _ = loss_and_grad()
            flat[i] = orig - eps
            lm, _ = loss_and_grad()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NumericError("non-finite loss during finite differencing")
            numeric = (lp - lm) / (2.0 * eps)
            err = abs(numeric - gflat[i]) / max(1.0, abs(gflat[i]))
            max_err = max(max_err, err)
    return max_err
