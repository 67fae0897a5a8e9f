"""Episodic meta-training with momentum SGD, step learning-rate decay and evaluation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .backbone import RHO_NAME, FeatureExtractorConfig, ParameterStore, init_params
from .checkpoint import Checkpoint, save_checkpoint
from .episodes import ANNOTATIONS, DatasetIndex, Episode, sample_episode
from .errors import DomainError, SingularMatrixError, TrainingAborted
from .injector import AttributeTable
from .metrics import IouAccumulator, IouReport
from .model import forward_episode, predict_episode
from .seghead import HeadConfig
from .synthdata import stream

logger = logging.getLogger(__name__)

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass(frozen=True)
class TrainConfig:
    episodes_total: int = 30000
    lr0: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 10000
    c_way: int = 1
    k_shot: int = 1
    n_query: int = 1
    annotation_mode: str = "dense"
    seed: int = 0
    eval_every: int = 0
    n_eval: int = 1000
    held_out: int = 0
    checkpoint: str | None = None
    prototype_mode: str = "ridge"
    dtype: str = "float32"
    extractor: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must lie in (0, 1]")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.annotation_mode not in ANNOTATIONS:
            raise ValueError(f"annotation_mode must be one of {ANNOTATIONS}")
        if self.prototype_mode not in ("ridge", "mean"):
            raise ValueError("prototype_mode must be 'ridge' or 'mean'")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]


def desk_profile(**overrides) -> TrainConfig:
    """1-way 1-shot, 2000 episodes, 200 evaluation episodes."""
    base = dict(episodes_total=2000, n_eval=200, lr_decay_every=10000)
    base.update(overrides)
    return TrainConfig(**base)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    return cfg.lr0 * cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


@dataclass
class StepResult:
    l_ce: float
    l_r: float
    reverse_degenerate: bool
    lr: float


def episode_loss(params, episode, attrs, cfg: TrainConfig, losses=("ce", "r")):
    """Summed episode loss and the forward output; ``losses`` selects terms."""
    out = forward_episode(params, episode, attrs, cfg.head, cfg.prototype_mode, reverse="r" in losses)
    terms = []
    if "ce" in losses:
        terms.append(out.l_ce)
    if "r" in losses and out.l_r is not None:
        terms.append(out.l_r)
    total = terms[0] if terms else None
    for t in terms[1:]:
        total = T.add(total, t)
    return total, out


def train_step(
    params: ParameterStore,
    velocity: dict[str, np.ndarray],
    episode: Episode,
    attrs: AttributeTable,
    cfg: TrainConfig,
    iteration: int = 0,
    losses=("ce", "r"),
    lr: float | None = None,
) -> StepResult:
    """One forward/backward pass and one momentum-SGD update, in place.

    ``v <- mu v - lr (g + wd theta)`` then ``theta <- theta + v``; the
    regularizer's log-parameter is exempt from weight decay.  ``lr``
    overrides the schedule (0 is allowed here, unlike ``lr0``).
    """
    params.zero_grad()
    where = f"iteration {iteration} (seed {cfg.seed}, roster {episode.roster})"
    with T.Tape() as tape:
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                total, out = episode_loss(params, episode, attrs, cfg, losses)
        except (DomainError, SingularMatrixError) as exc:
            tape.clear()
            raise TrainingAborted(f"numerical failure at {where}: {exc}") from exc
        if total is not None:
            loss = T.scale(total, 1.0 / out.pixels)
            if not np.isfinite(loss.data).all():
                tape.clear()
                raise TrainingAborted(f"non-finite loss at {where}")
            T.backward(loss)
    tape.clear()
    if lr is None:
        lr = lr_at(iteration, cfg)
    dt = params.dtype.type
    mu, eta, wd = dt(cfg.momentum), dt(lr), dt(cfg.weight_decay)
    for name, p in params.items():
        g = p.grad
        if name != RHO_NAME:
            g = g + wd * p.data
        v = velocity.get(name)
        v = -eta * g if v is None else mu * v - eta * g
        velocity[name] = v.astype(p.dtype, copy=False)
        p.data = p.data + velocity[name]
    l_r = 0.0 if out.l_r is None else float(out.l_r.item())
    return StepResult(float(out.l_ce.item()), l_r, out.reverse_degenerate, lr)


def evaluate(
    params: ParameterStore,
    index: DatasetIndex,
    attrs: AttributeTable,
    held_out: int,
    n_episodes: int,
    ways: int = 1,
    shots: int = 1,
    annotation: str = "dense",
    seed: int = 0,
    head: HeadConfig = HeadConfig(),
    mode: str = "ridge",
    n_query: int = 1,
    predictor: Callable[[Episode], list] | None = None,
) -> IouReport:
    """Pooled IoU over seeded test episodes from the held-out fold.

    ``predictor`` replaces the model (one mask per query) for harness tests.
    """
    acc = IouAccumulator()
    for e in range(n_episodes):
        rng = stream(seed, "eval", e)
        ep = sample_episode(index, "test", ways, shots, n_query, rng, held_out, annotation)
        preds = predictor(ep) if predictor is not None else predict_episode(params, ep, attrs, head, mode)
        for q, pred in zip(ep.query, preds):
            acc.accumulate(ep.to_global(pred), ep.to_global(q.mask))
        acc.end_episode()
    return acc.finalize()


def new_checkpoint(cfg: TrainConfig, attrs: AttributeTable | None = None) -> Checkpoint:
    params = init_params(cfg.extractor, stream(cfg.seed, "init"), dtype=cfg.np_dtype)
    return Checkpoint(params=params, velocity={}, episode=0, seed=cfg.seed, mode=cfg.prototype_mode, attrs=attrs)


def train(
    cfg: TrainConfig,
    index: DatasetIndex,
    attrs: AttributeTable,
    resume: Checkpoint | None = None,
    until: int | None = None,
    log_every: int = 0,
) -> Checkpoint:
    """Train from ``resume`` (or a fresh init) up to episode ``until``."""
    ckpt = resume if resume is not None else new_checkpoint(cfg, attrs)
    if ckpt.attrs is None:
        ckpt.attrs = attrs
    stop = cfg.episodes_total if until is None else min(until, cfg.episodes_total)
    recent = []
    while ckpt.episode < stop:
        it = ckpt.episode
        ep = sample_episode(index, "train", cfg.c_way, cfg.k_shot, cfg.n_query, stream(cfg.seed, "train", it), cfg.held_out, cfg.annotation_mode)
        res = train_step(ckpt.params, ckpt.velocity, ep, attrs, cfg, it)
        ckpt.episode += 1
        recent.append(res.l_ce + res.l_r)
        if log_every and ckpt.episode % log_every == 0:
            logger.info("episode %d loss %.4f lambda %.4g", ckpt.episode, float(np.mean(recent)), math.exp(ckpt.params.rho.item()))
            recent.clear()
        if cfg.eval_every and ckpt.episode % cfg.eval_every == 0 and ckpt.episode < stop:
            rep = evaluate(ckpt.params, index, attrs, cfg.held_out, cfg.n_eval, cfg.c_way, cfg.k_shot, cfg.annotation_mode, cfg.seed, cfg.head, cfg.prototype_mode)
            logger.info("episode %d %s", ckpt.episode, rep.result_line())
            if cfg.checkpoint:
                save_checkpoint(ckpt, cfg.checkpoint)
    return ckpt


def run(cfg: TrainConfig, index: DatasetIndex, attrs: AttributeTable, resume: Checkpoint | None = None) -> tuple[Checkpoint, IouReport]:
    """Full training followed by held-out evaluation; writes the checkpoint if configured."""
    ckpt = train(cfg, index, attrs, resume)
    report = evaluate(ckpt.params, index, attrs, cfg.held_out, cfg.n_eval, cfg.c_way, cfg.k_shot, cfg.annotation_mode, cfg.seed, cfg.head, cfg.prototype_mode)
    if cfg.checkpoint:
        save_checkpoint(ckpt, cfg.checkpoint)
    return ckpt, report


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **kw)
