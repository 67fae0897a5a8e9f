from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROVENANCES = ("ground_truth", "dense", "bbox", "scribble", "predicted")


@dataclass(frozen=True)
class SegmentationMask:
    """2-d grid of class indices, 0 meaning background."""

    labels: np.ndarray
    provenance: str = "ground_truth"

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ValueError(f"mask must be 2-d, got shape {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ValueError("mask labels must be non-negative")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "labels", labels.astype(np.int64, copy=False))

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def classes(self) -> list[int]:
        """Foreground classes present, ascending."""
        return [int(c) for c in np.unique(self.labels) if c != 0]

    def __eq__(self, other):
        if not isinstance(other, SegmentationMask):
            return NotImplemented
        return self.provenance == other.provenance and np.array_equal(self.labels, other.labels)

    __hash__ = None


def as_labels(mask) -> np.ndarray:
    if isinstance(mask, SegmentationMask):
        return mask.labels
    return np.asarray(mask)
