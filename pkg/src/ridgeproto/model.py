"""Episode-level forward pass tying extractor, injector and head together."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .backbone import ParameterStore, extract
from .episodes import Episode
from .injector import AttributeTable, InjectorSolution
from .masks import SegmentationMask
from .seghead import HeadConfig, fit_solution, predict, reverse_alignment_loss, segmentation_loss, similarity
from .tensor import Tensor


@dataclass
class EpisodeOutput:
    l_ce: Tensor
    l_r: Tensor | None
    reverse_degenerate: bool
    predictions: list[SegmentationMask]
    solution: InjectorSolution
    pixels: int

    @property
    def total(self) -> Tensor:
        return self.l_ce if self.l_r is None else T.add(self.l_ce, self.l_r)


def regularizer(params: ParameterStore) -> Tensor:
    return T.exp(params.rho)


def forward_episode(
    params: ParameterStore,
    episode: Episode,
    attrs: AttributeTable,
    head: HeadConfig,
    mode: str = "ridge",
    reverse: bool = True,
) -> EpisodeOutput:
    """Query loss, predictions and (optionally) the swapped-role loss."""
    lam = regularizer(params)
    names = episode.class_names
    sup_feats = [[extract(params, s.image) for s in shots] for shots in episode.support]
    sup_masks = [[s.mask for s in shots] for shots in episode.support]
    solution = fit_solution(sup_feats, sup_masks, attrs, names, lam, mode)

    q_feats = [extract(params, q.image) for q in episode.query]
    q_unit = [T.l2_normalize(f) for f in q_feats]
    l_ce = segmentation_loss(q_unit, [q.mask for q in episode.query], solution, head)
    predictions = [predict(similarity(u, solution), head) for u in q_unit]

    pixels = sum(q.mask.labels.size for q in episode.query)
    l_r, degenerate = None, False
    if reverse:
        sup_unit = [T.l2_normalize(f) for fs in sup_feats for f in fs]
        flat_masks = [m for ms in sup_masks for m in ms]
        l_r, degenerate = reverse_alignment_loss(q_feats, predictions, sup_unit, flat_masks, attrs, names, lam, head, mode)
        pixels += sum(m.labels.size for m in flat_masks)
    return EpisodeOutput(l_ce, l_r, degenerate, predictions, solution, pixels)


def predict_episode(params: ParameterStore, episode: Episode, attrs: AttributeTable, head: HeadConfig, mode: str = "ridge") -> list[SegmentationMask]:
    with T.no_grad():
        return forward_episode(params, episode, attrs, head, mode, reverse=False).predictions


def predict_query(
    params: ParameterStore,
    support: Sequence[tuple[np.ndarray, np.ndarray]],
    support_classes: Sequence[str],
    query_image: np.ndarray,
    attrs: AttributeTable,
    head: HeadConfig,
    mode: str = "ridge",
) -> SegmentationMask:
    """Segment one query image from loose ``(image, foreground-bool)`` support pairs.

    Support entries naming the same class are grouped as shots of that class;
    the returned mask labels classes by their order of first appearance.
    """
    order: list[str] = []
    for name in support_classes:
        if name not in order:
            order.append(name)
    feats: list[list[Tensor]] = [[] for _ in order]
    masks: list[list[np.ndarray]] = [[] for _ in order]
    with T.no_grad():
        for (image, fg), name in zip(support, support_classes):
            ci = order.index(name)
            feats[ci].append(extract(params, image))
            masks[ci].append(np.where(np.asarray(fg, dtype=bool), ci + 1, 0))
        solution = fit_solution(feats, masks, attrs, order, regularizer(params), mode)
        unit = T.l2_normalize(extract(params, query_image))
        return predict(similarity(unit, solution), head)
