"""Dataset index, C-way K-shot episode sampling and weak-annotation degradation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractViolation, DegenerateMaskError, ParseError, SamplingExhaustedError
from .masks import SegmentationMask, as_labels

ANNOTATIONS = ("dense", "bbox", "scribble")
MIN_FG_FRACTION = 0.01
MAX_FG_FRACTION = 0.99
SCRIBBLE_FRACTION = 0.05
SCRIBBLE_MIN = 3


@dataclass(frozen=True)
class Record:
    image_path: str
    mask_path: str
    class_id: int
    fold: int


@dataclass
class DatasetIndex:
    """Immutable view of an on-disk corpus.

    Records whose foreground covers less than 1% or more than 99% of the
    image are dropped when the index is built.
    """

    root: Path
    records: list[Record]
    class_names: dict[int, str]
    class_folds: dict[int, int]
    by_class: dict[int, list[int]] = field(init=False)
    _cache: dict = field(init=False, default_factory=dict, repr=False)

    def __post_init__(self):
        self.by_class = {c: [] for c in sorted(self.class_names)}
        for rid, rec in enumerate(self.records):
            if rec.class_id not in self.class_names:
                raise ContractViolation(f"record {rid} has unknown class {rec.class_id}")
            self.by_class[rec.class_id].append(rid)

    @classmethod
    def load(cls, root) -> "DatasetIndex":
        from .synthdata import CLASSES, MANIFEST, read_pgm

        root = Path(root)
        names: dict[int, str] = {}
        for lineno, line in enumerate((root / CLASSES).read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split()
            if len(parts) != 2:
                raise ParseError("expected 'class_id name'", line=lineno)
            names[int(parts[0])] = parts[1]
        records, folds = [], {}
        for lineno, line in enumerate((root / MANIFEST).read_text(encoding="utf-8").splitlines(), start=1):
            parts = line.split()
            if len(parts) != 4:
                raise ParseError("expected 'image_path mask_path class_id fold'", line=lineno)
            rec = Record(parts[0], parts[1], int(parts[2]), int(parts[3]))
            if folds.setdefault(rec.class_id, rec.fold) != rec.fold:
                raise ParseError(f"class {rec.class_id} assigned to two folds", line=lineno)
            mask = read_pgm(root / rec.mask_path)
            frac = float(np.mean(mask == rec.class_id))
            if MIN_FG_FRACTION <= frac <= MAX_FG_FRACTION:
                records.append(rec)
        for c in names:
            folds.setdefault(c, -1)
        return cls(root=root, records=records, class_names=names, class_folds=folds)

    @property
    def folds(self) -> list[int]:
        return sorted({f for f in self.class_folds.values() if f >= 0})

    def classes(self, split: str, held_out: int) -> list[int]:
        """Class ids usable for ``split`` ("train" or "test") given the held-out fold."""
        if held_out not in self.folds:
            raise ContractViolation(f"fold {held_out} not in {self.folds}")
        if split == "test":
            return [c for c in sorted(self.class_folds) if self.class_folds[c] == held_out]
        if split == "train":
            return [c for c in sorted(self.class_folds) if self.class_folds[c] not in (held_out, -1)]
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")

    def image(self, rid: int) -> np.ndarray:
        """Float32 RGB in [0, 1]."""
        from .synthdata import read_ppm

        key = ("img", rid)
        if key not in self._cache:
            self._cache[key] = read_ppm(self.root / self.records[rid].image_path).astype(np.float32) / 255.0
        return self._cache[key]

    def mask(self, rid: int) -> np.ndarray:
        from .synthdata import read_pgm

        key = ("mask", rid)
        if key not in self._cache:
            self._cache[key] = read_pgm(self.root / self.records[rid].mask_path).astype(np.int64)
        return self._cache[key]


@dataclass(frozen=True)
class Shot:
    record_id: int
    image: np.ndarray
    mask: SegmentationMask


@dataclass(frozen=True)
class Episode:
    """One few-shot task.

    Masks are in episode label space: roster position ``ci`` is label
    ``ci + 1``; 0 is background.  ``support[ci]`` lists the shots of roster
    class ``ci``; ``query`` holds ``n_q`` images per roster class.
    """

    roster: tuple[int, ...]
    class_names: tuple[str, ...]
    support: tuple[tuple[Shot, ...], ...]
    query: tuple[Shot, ...]
    annotation_mode: str = "dense"

    @property
    def ways(self) -> int:
        return len(self.roster)

    @property
    def shots(self) -> int:
        return len(self.support[0]) if self.support else 0

    def support_ids(self) -> set[int]:
        return {s.record_id for shots in self.support for s in shots}

    def query_ids(self) -> set[int]:
        return {s.record_id for s in self.query}

    def to_global(self, mask) -> np.ndarray:
        """Map episode labels back to dataset class ids."""
        lut = np.array((0,) + self.roster, dtype=np.int64)
        return lut[as_labels(mask)]


def episode_labels(global_mask: np.ndarray, roster: Sequence[int]) -> np.ndarray:
    out = np.zeros(global_mask.shape, dtype=np.int64)
    for ci, c in enumerate(roster):
        out[global_mask == c] = ci + 1
    return out


def sample_episode(
    index: DatasetIndex,
    split: str,
    c: int,
    k: int,
    n_q: int,
    rng: np.random.Generator,
    held_out: int = 0,
    annotation_mode: str = "dense",
) -> Episode:
    """Uniformly draw ``c`` classes, then ``k`` support and ``n_q`` query images for each.

    Images are drawn without replacement within the episode, so support and
    query never share a record.  Only support masks are degraded.
    """
    if annotation_mode not in ANNOTATIONS:
        raise ValueError(f"annotation mode must be one of {ANNOTATIONS}")
    if c < 1 or k < 1 or n_q < 1:
        raise ContractViolation("c, k and n_q must be >= 1")
    pool = index.classes(split, held_out)
    if len(pool) < c:
        raise SamplingExhaustedError(f"{split} split has {len(pool)} classes, episode needs {c}")
    roster = sorted(int(x) for x in rng.choice(pool, size=c, replace=False))
    support, query = [], []
    for ci, cls_id in enumerate(roster):
        ids = index.by_class[cls_id]
        if len(ids) < k + n_q:
            raise SamplingExhaustedError(f"class {cls_id} has {len(ids)} images, episode needs {k + n_q}")
        chosen = [ids[j] for j in rng.choice(len(ids), size=k + n_q, replace=False)]
        shots = []
        for rid in chosen[:k]:
            mask = SegmentationMask(episode_labels(index.mask(rid), roster))
            shots.append(Shot(rid, index.image(rid), degrade_mask(mask, annotation_mode, rng)))
        support.append(tuple(shots))
        for rid in chosen[k:]:
            query.append(Shot(rid, index.image(rid), SegmentationMask(episode_labels(index.mask(rid), roster))))
    return Episode(
        roster=tuple(roster),
        class_names=tuple(index.class_names[r] for r in roster),
        support=tuple(support),
        query=tuple(query),
        annotation_mode=annotation_mode,
    )


# ------------------------------------------------------------------ weak labels


def degrade_mask(mask: SegmentationMask, mode: str, rng: np.random.Generator | None = None) -> SegmentationMask:
    """Replace a dense mask by a bounding-box or scribble annotation.

    ``bbox`` fills each class's tight box (later classes overwrite earlier
    ones); ``scribble`` keeps a connected random walk covering about 5% of
    each class's pixels (at least 3), all inside the class region.
    """
    if mode == "dense":
        return mask
    labels = as_labels(mask)
    classes = [int(c) for c in np.unique(labels) if c != 0]
    if not classes:
        raise DegenerateMaskError("mask has no foreground to degrade")
    out = np.zeros_like(labels)
    if mode == "bbox":
        for c in classes:
            rows, cols = np.nonzero(labels == c)
            out[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1] = c
        return SegmentationMask(out, "bbox")
    if mode == "scribble":
        if rng is None:
            raise ValueError("scribble degradation needs a random generator")
        for c in classes:
            for r, q in _scribble(labels == c, rng):
                out[r, q] = c
        return SegmentationMask(out, "scribble")
    raise ValueError(f"unknown annotation mode {mode!r}")


_STEPS = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _component(region: np.ndarray, start: tuple[int, int]) -> int:
    seen = {start}
    frontier = [start]
    h, w = region.shape
    while frontier:
        r, c = frontier.pop()
        for dr, dc in _STEPS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and region[nr, nc] and (nr, nc) not in seen:
                seen.add((nr, nc))
                frontier.append((nr, nc))
    return len(seen)


def _scribble(region: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int]]:
    rows, cols = np.nonzero(region)
    n = rows.size
    cy, cx = rows.mean(), cols.mean()
    i0 = int(np.argmin((rows - cy) ** 2 + (cols - cx) ** 2))
    start = (int(rows[i0]), int(cols[i0]))
    budget = min(max(SCRIBBLE_MIN, math.ceil(SCRIBBLE_FRACTION * n)), _component(region, start))
    h, w = region.shape
    path = [start]
    visited = {start}
    cur = start
    steps = 0
    while len(visited) < budget and steps < 100 * budget:
        steps += 1
        nbrs = [(cur[0] + dr, cur[1] + dc) for dr, dc in _STEPS]
        nbrs = [p for p in nbrs if 0 <= p[0] < h and 0 <= p[1] < w and region[p]]
        fresh = [p for p in nbrs if p not in visited]
        options = fresh or nbrs
        cur = options[int(rng.integers(len(options)))]
        if cur not in visited:
            visited.add(cur)
            path.append(cur)
    return path
