"""Hand-built tiny episodes for gradient checks."""

import numpy as np

from ridgeproto.backbone import FeatureExtractorConfig, init_params
from ridgeproto.episodes import Episode, Shot
from ridgeproto.injector import AttributeTable
from ridgeproto.masks import SegmentationMask

MICRO_EXTRACTOR = FeatureExtractorConfig(block_channels=(3, 4), kernel=3)


def _shot(rng, rid, size):
    img = rng.uniform(0.2, 0.5, size=(size, size, 3))
    mask = np.zeros((size, size), np.int64)
    r0, c0 = rng.integers(0, size - 4, size=2)
    mask[r0 : r0 + 4, c0 : c0 + 3] = 1
    img[mask == 1] = rng.uniform(0.6, 1.0, size=3)
    img += rng.normal(0, 0.03, size=img.shape)
    return Shot(rid, img, SegmentationMask(mask, "dense"))


def micro_episode(seed=0, size=8, d_a=4):
    """C=1, K=1, one query; attributes deliberately not orthogonal."""
    rng = np.random.default_rng(seed)
    attrs = AttributeTable(background=rng.normal(size=d_a), entries={"thing": rng.normal(size=d_a)})
    ep = Episode(roster=(1,), class_names=("thing",), support=((_shot(rng, 0, size),),), query=(_shot(rng, 1, size),))
    params = init_params(MICRO_EXTRACTOR, rng, dtype=np.float64)
    for name, t in params.items():
        if name.endswith("bias"):
            t.data = rng.normal(0, 0.1, size=t.shape)
    params.rho.data = np.array([np.log(2.0)])  # lambda = 2 keeps the lambda gradient visible
    return params, ep, attrs
