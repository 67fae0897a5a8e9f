"""Attribute tables, design-matrix assembly and prototype fitting.

For every support image of class ``c`` two matched columns enter the ridge
problem: the pooled foreground embedding paired with ``a_c`` and the pooled
background embedding paired with ``a_bg``.  Columns are ordered by roster
position, then shot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .backbone import masked_average_pool
from .errors import ContractViolation, UnknownClassError
from .linalg import ridge_solve
from .tensor import Tensor

BACKGROUND = "background"
PROTOTYPE_EPS = 1e-8
MODES = ("ridge", "mean")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


@dataclass
class AttributeTable:
    """Class-name -> unit attribute vector, plus the background vector."""

    background: np.ndarray
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    normalize: bool = True

    def __post_init__(self):
        bg = np.asarray(self.background, dtype=np.float64).reshape(-1)
        self.background = _unit(bg) if self.normalize else bg
        clean = {}
        for name, vec in self.entries.items():
            if name == BACKGROUND:
                continue
            clean[name] = self._check(name, vec)
        self.entries = clean
        if not np.all(np.isfinite(self.background)):
            raise ValueError("background vector is not finite")

    def _check(self, name, vec) -> np.ndarray:
        v = np.asarray(vec, dtype=np.float64).reshape(-1)
        if v.shape[0] != self.d_a:
            raise ValueError(f"attribute {name!r} has length {v.shape[0]}, expected {self.d_a}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"attribute {name!r} is not finite")
        return _unit(v) if self.normalize else v

    @property
    def d_a(self) -> int:
        return self.background.shape[0]

    def __contains__(self, name) -> bool:
        return name == BACKGROUND or name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def vector(self, name: str) -> np.ndarray:
        if name == BACKGROUND:
            return self.background
        try:
            return self.entries[name]
        except KeyError:
            raise UnknownClassError(name) from None

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """``d_a x (1 + len(names))`` with the background column first."""
        return np.stack([self.background] + [self.vector(n) for n in names], axis=1)


@dataclass
class InjectorSolution:
    """Fitted injector for one episode.

    ``prototypes`` is ``(C+1) x d``: row 0 is background, row ``i`` the
    ``i``-th roster class.  ``W`` is None for the mean-pooled baseline.
    """

    W: Tensor | None
    lam: float
    class_names: tuple[str, ...]
    prototypes: Tensor

    def prototype(self, index: int) -> np.ndarray:
        return self.prototypes.data[index]


def design_from_features(
    support_features: Sequence[Sequence[Tensor]],
    support_masks: Sequence[Sequence],
    attrs: AttributeTable,
    class_names: Sequence[str],
) -> tuple[Tensor, np.ndarray]:
    """Build ``(Phi, A)`` from raw support feature maps.

    ``support_features[ci][k]`` is the map of shot ``k`` of roster class
    ``ci``; its mask labels that class as ``ci + 1``.
    """
    if len(support_features) != len(class_names) or len(support_masks) != len(class_names):
        raise ContractViolation("support layout does not match the roster")
    cols: list[Tensor] = []
    a_cols: list[np.ndarray] = []
    for ci, name in enumerate(class_names):
        a_c = attrs.vector(name)
        for feat, mask in zip(support_features[ci], support_masks[ci]):
            fg, bg = masked_average_pool(feat, mask, ci + 1)
            cols += [fg, bg]
            a_cols += [a_c, attrs.background]
    if not cols:
        raise ContractViolation("empty support set")
    return T.stack(cols, axis=1), np.stack(a_cols, axis=1)


def assemble_design(episode, params, attrs: AttributeTable) -> tuple[Tensor, np.ndarray]:
    """Design matrices for an :class:`~ridgeproto.episodes.Episode`."""
    from .backbone import extract

    feats = [[extract(params, shot.image) for shot in shots] for shots in episode.support]
    masks = [[shot.mask for shot in shots] for shots in episode.support]
    return design_from_features(feats, masks, attrs, episode.class_names)


def _unit_rows(m: Tensor) -> Tensor:
    unit = T.l2_normalize(m)
    keep = np.linalg.norm(m.data.astype(np.float64), axis=1) >= PROTOTYPE_EPS
    if keep.all():
        return unit
    return T.mul(unit, Tensor(np.repeat(keep[:, None], m.shape[1], axis=1).astype(m.dtype)))


def fit_prototypes(
    phi: Tensor,
    a: np.ndarray,
    lam: Tensor,
    attrs: AttributeTable,
    class_names: Sequence[str],
) -> InjectorSolution:
    """Solve for ``W`` and emit ``normalize(W a_c)`` for background and each class.

    A prototype whose unnormalized norm falls below ``PROTOTYPE_EPS`` is the
    zero vector.
    """
    W = ridge_solve(phi, a, lam)
    targets = attrs.matrix(class_names).astype(W.dtype)
    raw = T.transpose(T.matmul(W, Tensor(targets)))  # (C+1) x d
    return InjectorSolution(W=W, lam=float(lam.data.reshape(-1)[0]), class_names=tuple(class_names), prototypes=_unit_rows(raw))


def mean_prototypes(phi: Tensor, num_classes: int, shots_per_class: Sequence[int], class_names: Sequence[str]) -> InjectorSolution:
    """Baseline without attributes: normalized mean of pooled embeddings.

    Background is the mean over every support background column.
    """
    ncols = phi.shape[1]
    counts = list(shots_per_class)
    if len(counts) != num_classes or 2 * sum(counts) != ncols:
        raise ContractViolation("column layout does not match shot counts")
    sel = np.zeros((ncols, num_classes + 1), dtype=phi.dtype)
    col = 0
    for ci, k in enumerate(counts):
        for _ in range(k):
            sel[col, ci + 1] = 1.0 / k
            sel[col + 1, 0] = 1.0 / sum(counts)
            col += 2
    means = T.transpose(T.matmul(phi, Tensor(sel)))  # (C+1) x d
    return InjectorSolution(W=None, lam=float("nan"), class_names=tuple(class_names), prototypes=_unit_rows(means))


def synthetic_background(class_vectors: Mapping[str, np.ndarray] | np.ndarray, seed_vector: np.ndarray) -> np.ndarray:
    """Unit vector from ``seed_vector`` made orthogonal to every class vector."""
    mats = np.stack(list(class_vectors.values()), axis=1) if isinstance(class_vectors, Mapping) else np.asarray(class_vectors)
    u, sv, _ = np.linalg.svd(mats, full_matrices=False)
    q = u[:, sv > 1e-10 * max(sv.max(initial=0.0), 1.0)]
    v = np.asarray(seed_vector, dtype=np.float64)
    for _ in range(2):  # second pass removes round-off leakage
        v = v - q @ (q.T @ v)
    n = np.linalg.norm(v)
    if n < 1e-10:
        raise ValueError("class vectors span the attribute space; no orthogonal background exists")
    return v / n
