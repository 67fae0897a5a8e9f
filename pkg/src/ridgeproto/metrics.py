"""Pooled-count mean-IoU and binary-IoU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation
from .masks import as_labels


@dataclass
class IouReport:
    mean_iou: float
    binary_iou: float
    per_class: dict[int, float]
    episodes: int

    def lines(self) -> list[str]:
        out = [f"mean_iou = {self.mean_iou:.6f}", f"binary_iou = {self.binary_iou:.6f}", f"episodes = {self.episodes}"]
        out += [f"class_{c}_iou = {v:.6f}" for c, v in sorted(self.per_class.items())]
        return out

    def text(self) -> str:
        return "\n".join(self.lines())

    def result_line(self, **extra) -> str:
        tail = "".join(f" {k}={v}" for k, v in extra.items())
        return f"RESULT mean_iou={self.mean_iou:.6f} binary_iou={self.binary_iou:.6f}{tail}"


@dataclass
class IouAccumulator:
    """Running intersection/union counts, mergeable by addition."""

    intersection: dict[int, int] = field(default_factory=dict)
    union: dict[int, int] = field(default_factory=dict)
    binary_intersection: list[int] = field(default_factory=lambda: [0, 0])
    binary_union: list[int] = field(default_factory=lambda: [0, 0])
    episodes: int = 0

    def accumulate(self, pred, gt) -> "IouAccumulator":
        """Add one prediction/ground-truth pair; returns ``self``."""
        p, g = as_labels(pred), as_labels(gt)
        if p.shape != g.shape:
            raise ContractViolation(f"prediction {p.shape} and ground truth {g.shape} differ in extent")
        for c in np.union1d(np.unique(p), np.unique(g)):
            c = int(c)
            if c == 0:
                continue
            pc, gc = p == c, g == c
            self.intersection[c] = self.intersection.get(c, 0) + int(np.sum(pc & gc))
            self.union[c] = self.union.get(c, 0) + int(np.sum(pc | gc))
        pf, gf = p > 0, g > 0
        for b, (pb, gb) in enumerate(((~pf, ~gf), (pf, gf))):
            self.binary_intersection[b] += int(np.sum(pb & gb))
            self.binary_union[b] += int(np.sum(pb | gb))
        return self

    def end_episode(self) -> None:
        self.episodes += 1

    def merge(self, other: "IouAccumulator") -> "IouAccumulator":
        out = IouAccumulator(dict(self.intersection), dict(self.union), list(self.binary_intersection), list(self.binary_union), self.episodes + other.episodes)
        for c in other.union:
            out.intersection[c] = out.intersection.get(c, 0) + other.intersection[c]
            out.union[c] = out.union.get(c, 0) + other.union[c]
        for b in range(2):
            out.binary_intersection[b] += other.binary_intersection[b]
            out.binary_union[b] += other.binary_union[b]
        return out

    def finalize(self) -> IouReport:
        if not self.union and sum(self.binary_union) == 0:
            raise ContractViolation("nothing accumulated")
        per_class = {c: self.intersection[c] / u for c, u in sorted(self.union.items()) if u > 0}
        mean_iou = float(np.mean(list(per_class.values()))) if per_class else 0.0
        ious = [i / u for i, u in zip(self.binary_intersection, self.binary_union) if u > 0]
        binary = float(np.mean(ious)) if ious else 0.0
        return IouReport(mean_iou, binary, per_class, self.episodes)


def accumulate(acc: IouAccumulator, pred, gt) -> IouAccumulator:
    return acc.accumulate(pred, gt)


def finalize(acc: IouAccumulator) -> IouReport:
    return acc.finalize()
