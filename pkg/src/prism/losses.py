"""The three training objectives and their combination.

    prediction loss   mean Huber between standard forward and target
    intervention loss mean Huber between backdoor-adjusted forward and target
    uniformity loss   log-sum-exp over all ordered pairs (i, j), diagonal
                      included, of exp(2t * cos(a_i, a_j) - 2t); applied to
                      each gene's weight matrix and averaged over the batch

    total = prediction + alpha * intervention + beta * uniformity

The combined scalar is accumulated in exactly that order; the reported
breakdown repeats the same arithmetic on float64 copies of the three
terms so the identity holds bitwise on the reported numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    total: float
    alpha: float
    beta: float
    t: float
    delta: float


def huber(pred: float, target: float, delta: float = 1.0) -> float:
    """Scalar smooth-L1: 0.5*d^2 if |d| <= delta else delta*(|d| - delta/2)."""
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    d = abs(pred - target)
    if d <= delta:
        return 0.5 * d * d
    return delta * (d - 0.5 * delta)


def huber_mean(pred: Tensor, target: Tensor, delta: float) -> Tensor:
    return ad.tmean(ad.huber(pred, target, delta))


def prediction_loss(model, X, S, aux, y, delta: float, h_mask=None) -> Tensor:
    return huber_mean(model.predict(X, S, aux, h_mask=h_mask), y, delta)


def intervention_loss(model, X, S, aux, y, delta: float, A=None, training=False) -> Tensor:
    """Mean Huber between the backdoor-adjusted prediction and the target."""
    pred = model.predict_interventional(X, S, aux, A=A, training=training)
    return huber_mean(pred, y, delta)


def _uniform_core(a_hat: Tensor, t: float) -> Tensor:
    """log sum_{i,j} exp(2t (a_i . a_j) - 2t) for one or a batch of genes.

    `a_hat` is (..., n, d') with unit rows; the sum runs over all ordered
    pairs including the diagonal. Each diagonal term is exp(0) = 1 exactly
    and carries zero gradient, so the diagonal enters as the constant n;
    this keeps the single-vector case exactly zero.
    """
    gram = ad.matmul(a_hat, ad.swap_last2(a_hat))           # (..., n, n)
    n = gram.data.shape[-1]
    e = ad.exp(ad.add_const(ad.scale(gram, 2.0 * t), -2.0 * t))
    off = ad.mul(e, Tensor(1.0 - np.eye(n, dtype=e.data.dtype)))
    return ad.log(ad.add_const(ad.tsum(off, axis=(-2, -1)), float(n)))


def _normalize_rows(A: Tensor) -> Tensor:
    norms = ad.sqrt(ad.tsum(ad.square(A), axis=-1, keepdims=True))
    if np.any(norms.data == 0):
        raise ValueError("uniformity loss needs nonzero weight vectors")
    return ad.div(A, norms)


def uniform_loss(A, t: float) -> Tensor:
    """Diversity penalty on one gene's weight matrix (n, d')."""
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    a = A if isinstance(A, Tensor) else Tensor(np.asarray(A, dtype=np.float64))
    if a.data.ndim != 2:
        raise ValueError(f"expected (n, d') weights, got shape {a.data.shape}")
    return _uniform_core(_normalize_rows(a), t)


def uniform_loss_batched(A: Tensor, t: float) -> Tensor:
    """Per-gene uniformity averaged over the batch; A is (B, n, d')."""
    if t <= 0:
        raise ValueError(f"temperature must be positive, got {t}")
    return ad.tmean(_uniform_core(_normalize_rows(A), t))


def total_loss(
    model,
    X: Tensor,
    S: Tensor,
    aux: Tensor,
    y: Tensor,
    alpha: float,
    beta: float,
    t: float,
    delta: float,
    training: bool = False,
    h_mask=None,
) -> tuple[Tensor, LossBreakdown]:
    """Combined objective. Intervention terms are computed only when the
    model has confounder states and the matching coefficient is nonzero,
    so the baseline path is literally the prediction loss alone."""
    if alpha < 0 or beta < 0:
        raise ValueError("loss coefficients must be >= 0")
    l1 = prediction_loss(model, X, S, aux, y, delta, h_mask=h_mask)
    use_intervention = model.config.states > 0 and alpha > 0
    use_uniformity = model.config.states > 0 and beta > 0

    A = None
    if use_intervention or use_uniformity:
        A = model.confounder_weights(S, training=training)

    total = l1
    l2_val = 0.0
    l3_val = 0.0
    if use_intervention:
        l2 = intervention_loss(model, X, S, aux, y, delta, A=A, training=training)
        total = ad.add(total, ad.scale(l2, alpha))
        l2_val = float(l2.data)
    if use_uniformity:
        l3 = uniform_loss_batched(A, t)
        total = ad.add(total, ad.scale(l3, beta))
        l3_val = float(l3.data)

    l1_val = float(l1.data)
    breakdown = LossBreakdown(
        l1=l1_val,
        l2=l2_val,
        l3=l3_val,
        total=l1_val + alpha * l2_val + beta * l3_val,
        alpha=alpha,
        beta=beta,
        t=t,
        delta=delta,
    )
    return total, breakdown
