"""Cosine similarity maps, scaled softmax, prediction and the two episode losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DegenerateMaskError
from .injector import AttributeTable, InjectorSolution, design_from_features, fit_prototypes, mean_prototypes
from .masks import SegmentationMask, as_labels
from .tensor import Tensor


@dataclass(frozen=True)
class HeadConfig:
    alpha: float = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


@dataclass
class SimilarityStack:
    """Per-pixel cosine scores, ``(h*w) x (C+1)``; column 0 is background."""

    scores: Tensor
    height: int
    width: int

    @property
    def depth(self) -> int:
        return self.scores.shape[1]

    def maps(self) -> np.ndarray:
        """Scores as a ``(C+1) x h x w`` array."""
        return self.scores.data.T.reshape(self.depth, self.height, self.width)


def similarity(features: Tensor, solution: InjectorSolution | Tensor) -> SimilarityStack:
    """Dot each (already unit) pixel embedding with each unit prototype."""
    protos = solution.prototypes if isinstance(solution, InjectorSolution) else solution
    if features.ndim != 3:
        raise ContractViolation(f"features must be h x w x d, got {features.shape}")
    h, w, d = features.shape
    if protos.ndim != 2 or protos.shape[1] != d:
        raise ContractViolation(f"prototype width {protos.shape} does not match feature depth {d}")
    flat = T.reshape(features, (h * w, d))
    return SimilarityStack(T.matmul(flat, T.transpose(protos)), h, w)


def pixel_logits(stack: SimilarityStack, cfg: HeadConfig) -> Tensor:
    """Log of the softmax over classes of ``alpha * S + beta``, per pixel.

    Returned as log-probabilities (``(h*w) x (C+1)``); ``np.exp`` of the data
    gives the probability stack.
    """
    if stack.depth < 2:
        raise ContractViolation("need background plus at least one class")
    z = T.add(T.scale(stack.scores, cfg.alpha), cfg.beta)
    return T.log_softmax(z, axis=1)


def cross_entropy_loss(log_probs: Tensor, gt) -> Tensor:
    """Summed negative log-probability of the true class over all pixels."""
    labels = as_labels(gt).reshape(-1)
    if labels.shape[0] != log_probs.shape[0]:
        raise ContractViolation(f"{labels.shape[0]} labels for {log_probs.shape[0]} pixels")
    if labels.size and (labels.min() < 0 or labels.max() >= log_probs.shape[1]):
        raise ContractViolation(f"label outside 0..{log_probs.shape[1] - 1}")
    return T.neg(T.sum(T.pick(log_probs, labels)))


def predict(stack: SimilarityStack, cfg: HeadConfig) -> SegmentationMask:
    # np.argmax returns the first maximum, so ties go to the lowest index
    z = cfg.alpha * stack.scores.data + cfg.beta
    return SegmentationMask(np.argmax(z, axis=1).reshape(stack.height, stack.width), "predicted")


def fit_solution(
    support_features: Sequence[Sequence[Tensor]],
    support_masks: Sequence[Sequence],
    attrs: AttributeTable,
    class_names: Sequence[str],
    lam: Tensor,
    mode: str = "ridge",
) -> InjectorSolution:
    phi, a = design_from_features(support_features, support_masks, attrs, class_names)
    if mode == "ridge":
        return fit_prototypes(phi, a, lam, attrs, class_names)
    if mode == "mean":
        return mean_prototypes(phi, len(class_names), [len(s) for s in support_features], class_names)
    raise ValueError(f"unknown prototype mode {mode!r}")


def segmentation_loss(unit_features: Sequence[Tensor], masks: Sequence, solution: InjectorSolution, cfg: HeadConfig) -> Tensor:
    total = None
    for feat, mask in zip(unit_features, masks):
        loss = cross_entropy_loss(pixel_logits(similarity(feat, solution), cfg), mask)
        total = loss if total is None else T.add(total, loss)
    return total


def reverse_alignment_loss(
    query_features: Sequence[Tensor],
    query_predictions: Sequence,
    support_unit_features: Sequence[Tensor],
    support_masks: Sequence,
    attrs: AttributeTable,
    class_names: Sequence[str],
    lam: Tensor,
    cfg: HeadConfig,
    mode: str = "ridge",
) -> tuple[Tensor | None, bool]:
    """Swap roles: fit prototypes on the queries, score the support images.

    ``query_features`` are raw maps pooled with the (constant) predicted
    masks; ``support_unit_features`` are per-pixel normalized support maps and
    ``support_masks`` their labels in episode space.  Every roster class needs
    at least one query whose prediction has both pixels of that class and
    pixels of something else.  Otherwise the result is ``(None, True)`` and
    the caller treats the loss as zero.
    """
    per_class_feats: list[list[Tensor]] = [[] for _ in class_names]
    per_class_masks: list[list] = [[] for _ in class_names]
    for feat, pred in zip(query_features, query_predictions):
        labels = as_labels(pred)
        for ci in range(len(class_names)):
            n = int(np.sum(labels == ci + 1))
            if 0 < n < labels.size:
                per_class_feats[ci].append(feat)
                per_class_masks[ci].append(labels)
    if any(not f for f in per_class_feats):
        return None, True
    try:
        solution = fit_solution(per_class_feats, per_class_masks, attrs, class_names, lam, mode)
    except DegenerateMaskError:
        return None, True
    return segmentation_loss(support_unit_features, support_masks, solution, cfg), False
