"""Losses of the proportion regularized pseudo-labeling objective.

Each loss returns its value together with the gradient with respect to the
logits of every input branch it reads (``labeled``, ``weak``, ``strong``).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np

from .constants import PROPORTION_EPSILON
from .exceptions import ArgumentError
from .hypergeom import ProportionVector
from .nn import log_softmax, softmax


@dataclass
class LossOutput:
    value: float
    grads: Dict[str, np.ndarray]
    aux: Dict[str, Any] = field(default_factory=dict)


def _check_logits(logits: np.ndarray, name: str) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ArgumentError(f"{name} must be a (n, K) matrix, got {logits.shape}")
    return logits


def proportion_loss(
    logits_unlabeled: np.ndarray,
    target: ProportionVector,
    epsilon: float = PROPORTION_EPSILON,
    branch: str = "weak",
) -> LossOutput:
    """Cross-entropy between ``target`` and the batch mean of the softmax outputs.

    >>> logits = np.log(np.array([[0.9, 0.1], [0.5, 0.5]]))
    >>> round(proportion_loss(logits, ProportionVector([0.7, 0.3])).value, 4)
    0.6109
    """
    logits = _check_logits(logits_unlabeled, "logits_unlabeled")
    n, K = logits.shape
    if n == 0:
        raise ArgumentError("proportion loss needs a non-empty batch")
    if len(target) != K:
        raise ArgumentError(f"target has {len(target)} classes, logits have {K}")
    q = target.probs
    probs = softmax(logits)
    p_hat = probs.mean(axis=0)

    active = q > 0
    value = -float(np.sum(q[active] * np.log(p_hat[active] + epsilon)))

    # dL/dp_hat, zero for classes with zero target
    g = np.zeros(K)
    g[active] = -q[active] / (p_hat[active] + epsilon)
    grad = probs * (g - (probs @ g)[:, None]) / n
    return LossOutput(value=value, grads={branch: grad}, aux={"p_hat": p_hat})


def supervised_ce(logits_labeled: np.ndarray, labels: np.ndarray) -> LossOutput:
    """Mean cross-entropy of labeled logits, labels 0-based."""
    logits = _check_logits(logits_labeled, "logits_labeled")
    labels = np.asarray(labels, dtype=np.int64)
    n, K = logits.shape
    if n == 0:
        raise ArgumentError("supervised loss needs a non-empty batch")
    if labels.shape != (n,) or np.any(labels < 0) or np.any(labels >= K):
        raise ArgumentError(f"labels must be {n} class indices in [0, {K})")
    rows = np.arange(n)
    value = -float(log_softmax(logits)[rows, labels].mean())
    grad = softmax(logits)
    grad[rows, labels] -= 1.0
    return LossOutput(value=value, grads={"labeled": grad / n})


def consistency_loss(
    logits_weak: np.ndarray, logits_strong: np.ndarray, tau: float
) -> LossOutput:
    """Confidence-masked cross-entropy of strong views against weak-view pseudo-labels.

    Pseudo-labels carry no gradient; the masked sum is divided by the full
    batch size.
    """
    weak = _check_logits(logits_weak, "logits_weak")
    strong = _check_logits(logits_strong, "logits_strong")
    if weak.shape != strong.shape:
        raise ArgumentError(
            f"weak {weak.shape} and strong {strong.shape} batches differ"
        )
    n, K = weak.shape
    probs_weak = softmax(weak)
    pseudo = np.argmax(probs_weak, axis=1) if n else np.zeros(0, dtype=np.int64)
    confidence = probs_weak.max(axis=1) if n else np.zeros(0)
    mask = confidence >= tau

    aux = {
        "mask_rate": float(mask.mean()) if n else 0.0,
        "pseudo_labels": pseudo,
        "mask": mask,
        "pseudo_counts": np.bincount(pseudo[mask], minlength=K),
    }
    if n == 0:
        return LossOutput(
            value=0.0, grads={"weak": weak.copy(), "strong": strong.copy()}, aux=aux
        )

    rows = np.arange(n)
    per_sample = -log_softmax(strong)[rows, pseudo]
    value = float(np.sum(per_sample[mask]) / n)

    grad_strong = softmax(strong)
    grad_strong[rows, pseudo] -= 1.0
    grad_strong *= mask[:, None] / n
    return LossOutput(
        value=value,
        grads={"weak": np.zeros_like(weak), "strong": grad_strong},
        aux=aux,
    )


def combined_loss(
    sup: LossOutput,
    cons: Optional[LossOutput],
    prop: Optional[LossOutput],
    lambda_u: float,
    lambda_prop: float,
) -> LossOutput:
    """``sup + lambda_u * cons + lambda_prop * prop``, gradients per branch.

    A missing component (``None``) contributes nothing.
    """
    value = 0.0
    grads: Dict[str, np.ndarray] = {}
    aux = {}
    for name, component, weight in (
        ("sup", sup, 1.0),
        ("cons", cons, lambda_u),
        ("prop", prop, lambda_prop),
    ):
        if component is None:
            continue
        value += weight * component.value
        aux[name] = component.value
        for branch, grad in component.grads.items():
            if branch in grads:
                if grads[branch].shape != grad.shape:
                    raise ArgumentError(f"gradient shapes differ on branch {branch}")
                grads[branch] = grads[branch] + weight * grad
            else:
                grads[branch] = weight * grad
    return LossOutput(value=value, grads=grads, aux=aux)
