"""Convolutional feature extractor and masked average pooling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ContractViolation, DegenerateMaskError
from .masks import as_labels
from .tensor import Tensor

RHO_NAME = "injector.rho"
LAMBDA_INIT = 100.0


@dataclass(frozen=True)
class FeatureExtractorConfig:
    in_channels: int = 3
    block_channels: tuple[int, ...] = (16, 32, 32)
    kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "block_channels", tuple(int(c) for c in self.block_channels))
        if self.in_channels < 1 or not self.block_channels or min(self.block_channels) < 1:
            raise ValueError("all channel extents must be >= 1")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel extent must be odd, got {self.kernel}")

    @property
    def d(self) -> int:
        return self.block_channels[-1]


class ParameterStore:
    """Named leaf tensors, iterated in sorted-name order."""

    def __init__(self, tensors: dict[str, Tensor] | None = None):
        self._tensors: dict[str, Tensor] = {}
        for name, t in (tensors or {}).items():
            self[name] = t

    def __setitem__(self, name: str, t: Tensor) -> None:
        if not t.requires_grad:
            t = Tensor(t.data, requires_grad=True)
        self._tensors[name] = t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        for name in self.names():
            yield name, self._tensors[name]

    def zero_grad(self) -> None:
        for _, t in self.items():
            t.zero_grad()

    def copy(self) -> "ParameterStore":
        return ParameterStore({n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.items()})

    @property
    def dtype(self):
        return self[self.names()[0]].dtype

    def config(self) -> FeatureExtractorConfig:
        """Recover the extractor layout from the stored kernel shapes."""
        kernels = [self[f"conv{i}.kernel"] for i in range(self.num_blocks())]
        if not kernels:
            raise ContractViolation("parameter store holds no convolution blocks")
        return FeatureExtractorConfig(
            in_channels=kernels[0].shape[2],
            block_channels=tuple(k.shape[3] for k in kernels),
            kernel=kernels[0].shape[0],
        )

    def num_blocks(self) -> int:
        n = 0
        while f"conv{n}.kernel" in self._tensors:
            n += 1
        return n

    @property
    def rho(self) -> Tensor:
        return self[RHO_NAME]


def init_params(config: FeatureExtractorConfig, rng: np.random.Generator, dtype=np.float32) -> ParameterStore:
    """He-normal kernels, zero biases, and ``rho = ln(100)`` so lambda starts at 100."""
    store = ParameterStore()
    c_in = config.in_channels
    k = config.kernel
    for i, c_out in enumerate(config.block_channels):
        std = math.sqrt(2.0 / (k * k * c_in))
        store[f"conv{i}.kernel"] = Tensor(rng.normal(0.0, std, size=(k, k, c_in, c_out)).astype(dtype), requires_grad=True)
        store[f"conv{i}.bias"] = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
        c_in = c_out
    store[RHO_NAME] = Tensor(np.array([math.log(LAMBDA_INIT)], dtype=dtype), requires_grad=True)
    return store


def extract(params: ParameterStore, image) -> Tensor:
    """Per-pixel embedding map ``h x w x d`` at full image resolution."""
    if not isinstance(image, Tensor):
        image = Tensor(np.asarray(image, dtype=params.dtype))
    n = params.num_blocks()
    if image.ndim != 3:
        raise ContractViolation(f"image must be h x w x c, got {image.shape}")
    k = params["conv0.kernel"].shape[0]
    if image.shape[0] < k or image.shape[1] < k:
        raise ContractViolation(f"image {image.shape[:2]} smaller than kernel {k}")
    x = image
    for i in range(n):
        x = T.conv2d(x, params[f"conv{i}.kernel"], params[f"conv{i}.bias"])
        if i < n - 1:
            x = T.relu(x)
    return x


def masked_average_pool(features: Tensor, mask, class_id: int, normalize: bool = True) -> tuple[Tensor, Tensor]:
    """Mean feature over pixels labelled ``class_id`` and over all other pixels.

    Returns ``(fg, bg)``, each L2-normalized unless ``normalize`` is False.
    Raises DegenerateMaskError if either region is empty.
    """
    labels = as_labels(mask)
    if features.ndim != 3 or labels.shape != features.shape[:2]:
        raise ContractViolation(f"mask {labels.shape} does not match features {features.shape}")
    inside = (labels == class_id).reshape(-1)
    n_in = int(inside.sum())
    n_out = inside.size - n_in
    if n_in == 0 or n_out == 0:
        raise DegenerateMaskError(f"class {class_id} covers {n_in} of {inside.size} pixels")
    h, w, d = features.shape
    flat = T.reshape(features, (h * w, d))
    dt = features.dtype
    w_in = (inside / n_in).astype(dt)[None, :]
    w_out = ((~inside) / n_out).astype(dt)[None, :]
    fg = T.reshape(T.matmul(Tensor(w_in), flat), (d,))
    bg = T.reshape(T.matmul(Tensor(w_out), flat), (d,))
    if normalize:
        fg, bg = T.l2_normalize(fg), T.l2_normalize(bg)
    return fg, bg
