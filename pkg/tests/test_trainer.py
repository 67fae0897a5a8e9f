import math

import numpy as np
import pytest

from micro import MICRO_EXTRACTOR, micro_episode
from oracles import central_difference
from ridgeproto import tensor as T
from ridgeproto.backbone import RHO_NAME, FeatureExtractorConfig
from ridgeproto.checkpoint import load_checkpoint, save_checkpoint
from ridgeproto.errors import TrainingAborted
from ridgeproto.model import forward_episode, predict_query
from ridgeproto.seghead import HeadConfig
from ridgeproto.trainer import TrainConfig, desk_profile, evaluate, lr_at, new_checkpoint, run, train, train_step

SMALL = FeatureExtractorConfig(block_channels=(8, 8))


def micro_cfg(**kw):
    base = dict(dtype="float64", extractor=MICRO_EXTRACTOR)
    base.update(kw)
    return TrainConfig(**base)


def snapshot(params):
    return {n: t.data.copy() for n, t in params.items()}


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 1e-3
    assert math.isclose(lr_at(15000, cfg), 1e-4, rel_tol=1e-12)
    assert math.isclose(lr_at(25000, cfg), 1e-5, rel_tol=1e-12)
    assert lr_at(9999, cfg) == 1e-3


@pytest.mark.parametrize("kw", [dict(lr0=0.0), dict(momentum=1.0), dict(momentum=-0.1), dict(lr_decay_factor=0.0), dict(lr_decay_factor=1.5), dict(dtype="float16"), dict(prototype_mode="x")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_defaults():
    cfg = TrainConfig()
    assert (cfg.episodes_total, cfg.momentum, cfg.weight_decay, cfg.lr_decay_every) == (30000, 0.9, 5e-4, 10000)
    d = desk_profile()
    assert (d.episodes_total, d.n_eval, d.c_way, d.k_shot) == (2000, 200, 1, 1)


def test_zero_learning_rate_leaves_params_bit_identical():
    params, ep, attrs = micro_episode(0)
    before = snapshot(params)
    train_step(params, {}, ep, attrs, micro_cfg(), lr=0.0)
    for n, t in params.items():
        assert t.data.tobytes() == before[n].tobytes()


def test_single_step_is_finite_difference_descent():
    params, ep, attrs = micro_episode(1)
    cfg = micro_cfg(momentum=0.0, weight_decay=0.0)
    before = snapshot(params)
    pixels = forward_episode(params, ep, attrs, cfg.head).pixels

    def f():
        with T.no_grad():
            return forward_episode(params, ep, attrs, cfg.head).total.item() / pixels

    numeric = {n: central_difference(f, t.data) for n, t in params.items()}
    eta = 1e-3
    train_step(params, {}, ep, attrs, cfg, lr=eta)
    for n, t in params.items():
        expected = before[n] - eta * numeric[n]
        step, want = t.data - before[n], expected - before[n]
        assert np.linalg.norm(step - want) / np.linalg.norm(want) < 1e-3


def test_weight_decay_skips_rho():
    params, ep, attrs = micro_episode(2)
    before = snapshot(params)
    train_step(params, {}, ep, attrs, micro_cfg(momentum=0.0, weight_decay=0.1), losses=(), lr=0.5)
    for n, t in params.items():
        if n == RHO_NAME:
            assert t.data.tobytes() == before[n].tobytes()
        else:
            np.testing.assert_allclose(t.data, before[n] * (1 - 0.05), rtol=1e-12)


def test_disabled_losses_never_change_params():
    params, ep, attrs = micro_episode(3)
    before = snapshot(params)
    velocity = {}
    for _ in range(3):
        train_step(params, velocity, ep, attrs, micro_cfg(weight_decay=0.0), losses=())
    for n, t in params.items():
        assert t.data.tobytes() == before[n].tobytes()


def test_momentum_accumulates():
    params, ep, attrs = micro_episode(4)
    cfg = micro_cfg(momentum=0.5, weight_decay=0.0)
    velocity = {}
    train_step(params, velocity, ep, attrs, cfg, losses=(), lr=0.1)
    assert all(not v.any() for v in velocity.values())
    train_step(params, velocity, ep, attrs, cfg, lr=0.1)
    v1 = {n: v.copy() for n, v in velocity.items()}
    params.zero_grad()
    train_step(params, velocity, ep, attrs, cfg, losses=(), lr=0.1)
    for n in v1:
        np.testing.assert_allclose(velocity[n], 0.5 * v1[n], rtol=1e-12)


def test_non_finite_loss_aborts():
    params, ep, attrs = micro_episode(5)
    params["conv1.bias"].data[0] = np.nan
    with pytest.raises(TrainingAborted, match="non-finite"):
        train_step(params, {}, ep, attrs, micro_cfg())


def test_training_reduces_loss(desk_dataset):
    index, attrs = desk_dataset
    cfg = desk_profile(episodes_total=200, extractor=SMALL, lr0=1e-2, seed=3)
    ckpt = new_checkpoint(cfg, attrs)
    from ridgeproto.episodes import sample_episode
    from ridgeproto.synthdata import stream

    losses = []
    for it in range(cfg.episodes_total):
        ep = sample_episode(index, "train", 1, 1, 1, stream(cfg.seed, "train", it), cfg.held_out)
        res = train_step(ckpt.params, ckpt.velocity, ep, attrs, cfg, it)
        losses.append(res.l_ce + res.l_r)
        assert math.exp(ckpt.params.rho.item()) > 0
    assert np.mean(losses[-20:]) < np.mean(losses[:20])


def test_resume_is_bit_identical(small_dataset, tmp_path):
    index, attrs = small_dataset
    cfg = desk_profile(episodes_total=24, extractor=SMALL, seed=8)
    full = train(cfg, index, attrs)
    half = train(cfg, index, attrs, until=11)
    save_checkpoint(half, tmp_path / "half.stf")
    resumed = train(cfg, index, attrs, resume=load_checkpoint(tmp_path / "half.stf"))
    assert resumed.episode == full.episode == 24
    for (n, a), (_, b) in zip(full.params.items(), resumed.params.items()):
        assert a.data.tobytes() == b.data.tobytes(), n
    for n in full.velocity:
        assert full.velocity[n].tobytes() == resumed.velocity[n].tobytes()


def test_run_writes_checkpoint_and_report(small_dataset, tmp_path):
    index, attrs = small_dataset
    path = tmp_path / "c.stf"
    cfg = desk_profile(episodes_total=5, n_eval=4, extractor=SMALL, checkpoint=str(path), eval_every=2)
    ckpt, rep = run(cfg, index, attrs)
    assert path.exists() and load_checkpoint(path).episode == 5
    assert 0 <= rep.mean_iou <= 1 and rep.episodes == 4


def test_oracle_predictor_scores_one(small_dataset):
    index, attrs = small_dataset
    rep = evaluate(None, index, attrs, 1, 10, ways=2, predictor=lambda ep: [q.mask for q in ep.query])
    assert rep.mean_iou == 1.0 and rep.binary_iou == 1.0


def test_evaluation_is_seeded(small_dataset):
    index, attrs = small_dataset
    ckpt = new_checkpoint(desk_profile(extractor=SMALL), attrs)
    a = evaluate(ckpt.params, index, attrs, 0, 6, seed=1)
    b = evaluate(ckpt.params, index, attrs, 0, 6, seed=1)
    assert a == b


def test_predict_query_labels_in_first_appearance_order(small_dataset):
    index, attrs = small_dataset
    params = new_checkpoint(desk_profile(extractor=SMALL), attrs).params
    rid_a, rid_b = index.by_class[1][0], index.by_class[2][0]
    support = [(index.image(rid_a), index.mask(rid_a) > 0), (index.image(rid_b), index.mask(rid_b) > 0)]
    names = [index.class_names[1], index.class_names[2]]
    pred = predict_query(params, support, names, index.image(rid_a), attrs, HeadConfig())
    assert pred.labels.shape == index.mask(rid_a).shape
    assert set(np.unique(pred.labels)) <= {0, 1, 2}
