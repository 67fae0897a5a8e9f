import numpy as np
import pytest

from oracles import central_difference, loop_pool, naive_conv2d
from ridgeproto import tensor as T
from ridgeproto.backbone import RHO_NAME, FeatureExtractorConfig, ParameterStore, extract, init_params, masked_average_pool
from ridgeproto.errors import ContractViolation, DegenerateMaskError
from ridgeproto.masks import SegmentationMask
from ridgeproto.tensor import Tape, Tensor


def params64(rng, channels=(3, 4), kernel=3):
    return init_params(FeatureExtractorConfig(block_channels=channels, kernel=kernel), rng, dtype=np.float64)


def test_config_validation():
    with pytest.raises(ValueError):
        FeatureExtractorConfig(kernel=2)
    with pytest.raises(ValueError):
        FeatureExtractorConfig(block_channels=(4, 0))
    assert FeatureExtractorConfig().d == 32


def test_store_is_name_sorted_and_learnable(rng):
    p = params64(rng)
    assert p.names() == sorted(p.names())
    assert all(t.requires_grad for _, t in p.items())
    assert RHO_NAME in p.names()
    assert abs(np.exp(p.rho.item()) - 100.0) < 1e-9
    assert p.config() == FeatureExtractorConfig(block_channels=(3, 4))


def test_zero_image_zero_bias_gives_zero_map(rng):
    p = params64(rng)
    assert not extract(p, np.zeros((7, 5, 3))).data.any()


@pytest.mark.parametrize("h, w", [(3, 3), (6, 9), (11, 4)])
def test_output_shape(rng, h, w):
    assert extract(params64(rng), rng.random((h, w, 3))).shape == (h, w, 4)


def test_image_smaller_than_kernel(rng):
    with pytest.raises(ContractViolation):
        extract(params64(rng, kernel=5), rng.random((4, 4, 3)))


def test_two_blocks_match_composed_oracle(rng):
    p = params64(rng)
    for name, t in p.items():
        if name.endswith("bias"):
            t.data = rng.normal(size=t.shape)
    img = rng.random((6, 6, 3))
    h = np.maximum(naive_conv2d(img, p["conv0.kernel"].data, p["conv0.bias"].data), 0)
    ref = naive_conv2d(h, p["conv1.kernel"].data, p["conv1.bias"].data)
    np.testing.assert_allclose(extract(p, img).data, ref, atol=1e-6)


def test_pool_fixture_2x2():
    feats = Tensor(np.array([[[1.0], [2.0]], [[3.0], [4.0]]]))
    mask = np.array([[1, 1], [0, 0]])
    fg, bg = masked_average_pool(feats, mask, 1, normalize=False)
    assert fg.data.tolist() == [1.5] and bg.data.tolist() == [3.5]
    fg, bg = masked_average_pool(feats, mask, 1)
    assert fg.data.tolist() == [1.0] and bg.data.tolist() == [1.0]


def test_pool_constant_map(rng):
    v = rng.normal(size=4)
    feats = Tensor(np.broadcast_to(v, (5, 5, 4)).copy())
    mask = (rng.random((5, 5)) < 0.5).astype(int)
    mask[0, 0], mask[0, 1] = 1, 0
    fg, bg = masked_average_pool(feats, mask, 1)
    np.testing.assert_allclose(fg.data, v / np.linalg.norm(v), atol=1e-12)
    np.testing.assert_allclose(bg.data, v / np.linalg.norm(v), atol=1e-12)


def test_pool_matches_loop_oracle(rng):
    f = rng.normal(size=(8, 8, 4))
    mask = rng.integers(0, 3, size=(8, 8))
    fg, bg = masked_average_pool(Tensor(f), mask, 2, normalize=False)
    ofg, obg = loop_pool(f, mask, 2)
    np.testing.assert_allclose(fg.data, ofg, atol=1e-6)
    np.testing.assert_allclose(bg.data, obg, atol=1e-6)


def test_pool_norms_and_other_classes_in_background(rng):
    f = rng.normal(size=(6, 6, 5))
    mask = np.zeros((6, 6), int)
    mask[:2] = 1
    mask[4:] = 2
    fg, bg = masked_average_pool(Tensor(f), mask, 1)
    assert abs(np.linalg.norm(fg.data) - 1) < 1e-5 and abs(np.linalg.norm(bg.data) - 1) < 1e-5
    ref_bg = f[2:].reshape(-1, 5).mean(axis=0)
    np.testing.assert_allclose(bg.data, ref_bg / np.linalg.norm(ref_bg), atol=1e-12)


def test_pool_permutation_invariance(rng):
    f = rng.normal(size=(6, 6, 3))
    mask = (rng.random((6, 6)) < 0.4).astype(int)
    mask[0, 0], mask[0, 1] = 1, 0
    flat = f.reshape(36, 3).copy()
    inside = np.flatnonzero(mask.reshape(-1) == 1)
    outside = np.flatnonzero(mask.reshape(-1) != 1)
    flat[inside] = flat[rng.permutation(inside)]
    flat[outside] = flat[rng.permutation(outside)]
    a = masked_average_pool(Tensor(f), mask, 1)
    b = masked_average_pool(Tensor(flat.reshape(6, 6, 3)), mask, 1)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x.data, y.data, atol=1e-12)


@pytest.mark.parametrize("fill", [0, 1])
def test_pool_degenerate(fill):
    with pytest.raises(DegenerateMaskError):
        masked_average_pool(Tensor(np.ones((3, 3, 2))), np.full((3, 3), fill), 1)


def test_pool_shape_mismatch():
    with pytest.raises(ContractViolation):
        masked_average_pool(Tensor(np.ones((3, 3, 2))), np.zeros((3, 4), int), 1)


def test_pool_accepts_segmentation_mask(rng):
    f = Tensor(rng.normal(size=(4, 4, 2)))
    labels = np.eye(4, dtype=np.int64)
    a = masked_average_pool(f, labels, 1)
    b = masked_average_pool(f, SegmentationMask(labels, "dense"), 1)
    assert np.array_equal(a[0].data, b[0].data)


def test_pool_gradient(rng):
    f = Tensor(rng.normal(size=(5, 5, 3)), requires_grad=True)
    mask = (rng.random((5, 5)) < 0.5).astype(int)
    mask[0, 0], mask[0, 1] = 1, 0
    r1, r2 = rng.normal(size=3), rng.normal(size=3)

    def build():
        fg, bg = masked_average_pool(f, mask, 1)
        return T.add(T.sum(T.mul(fg, Tensor(r1))), T.sum(T.mul(T.mul(bg, bg), Tensor(r2))))

    with Tape() as tape:
        T.backward(build())
    tape.clear()

    def fn():
        with T.no_grad():
            return float(build().item())

    n = central_difference(fn, f.data)
    assert np.linalg.norm(f.grad - n) / np.linalg.norm(n) < 1e-4


def test_parameter_store_copy_is_independent(rng):
    p = params64(rng)
    q = p.copy()
    q["conv0.bias"].data += 1
    assert not np.array_equal(p["conv0.bias"].data, q["conv0.bias"].data)
    assert isinstance(q, ParameterStore)
