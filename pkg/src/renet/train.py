"""SGD training loop: step-decayed learning rate, classical momentum with
coupled weight decay, epoch-wise shuffling, per-sample-seeded augmentation,
periodic snapshots, and the independent multi-model bagging procedure.

Update rule (per parameter):

    v <- momentum * v + lr * (grad + weight_decay * param)
    param <- param - v

Determinism contract: (seed, config, dataset) fully determines the loss
curve and the final parameters. Augmentation rng is keyed by
(seed, epoch, sample index), never by scheduling order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Graph, NumericsError, Tensor
from .model import Model, ModelSpec
from .preprocess import AugmentRanges

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "TrainDivergence",
    "lr_schedule",
    "sgd_step",
    "train",
    "train_bagging",
    "BaggingEnsemble",
    "write_loss_csv",
]


class TrainDivergence(ArithmeticError):
    """Training produced a non-finite loss/update and was aborted."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr0: float = 0.005
    lr_drop_every: int = 50000
    lr_factor: float = 10.0
    max_iters: int = 200000
    weight_decay: float = 0.0005
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True
    aug_ranges: AugmentRanges = field(default_factory=AugmentRanges)
    snapshot_every: int = 10000
    snapshots_keep: int = 3

    def __post_init__(self):
        positive = {
            "batch_size": self.batch_size,
            "lr0": self.lr0,
            "lr_drop_every": self.lr_drop_every,
            "max_iters": self.max_iters,
            "snapshot_every": self.snapshot_every,
        }
        for key, value in positive.items():
            if value <= 0:
                raise ValueError(f"{key} must be positive, got {value}")
        if self.lr_factor <= 1:
            raise ValueError(f"lr_factor must be > 1, got {self.lr_factor}")
        if self.weight_decay < 0 or self.momentum < 0:
            raise ValueError("weight_decay and momentum must be >= 0")


@dataclass
class TrainState:
    iteration: int = 0
    velocity: dict = field(default_factory=dict)  # name -> momentum buffer
    history: list = field(default_factory=list)  # (iter, lr, loss) rows


@dataclass
class TrainResult:
    model: Model
    history: list
    state: TrainState
    wall_seconds: float = 0.0


def lr_schedule(iteration, cfg):
    """Step decay: lr0 / factor^floor(iter / drop_every)."""
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    return cfg.lr0 / cfg.lr_factor ** (iteration // cfg.lr_drop_every)


def sgd_step(params, state, lr, cfg):
    """Apply one momentum update to every parameter with a gradient."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
        update = p.grad + cfg.weight_decay * p.data if cfg.weight_decay else p.grad
        v = cfg.momentum * v + lr * update
        if not np.isfinite(v).all():
            raise NumericsError(f"non-finite update for parameter {name!r}")
        p.data = p.data - v
        state.velocity[name] = v


def _sub_rng(*key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def _write_snapshot(model, out_dir, iteration, keep):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"snapshot_{iteration:07d}.renm"
    model.save(path)
    snaps = sorted(out_dir.glob("snapshot_*.renm"))
    for old in snaps[:-keep]:
        old.unlink()
    return path


def train(model, dataset, cfg, out_dir=None, log=None):
    """Run up to cfg.max_iters mini-batch steps over `dataset`.

    `dataset` is a TrainingSet. Shuffles each epoch without replacement,
    drops ragged tails (the batch is the whole set when it is smaller than
    batch_size), augments in the data path when configured, snapshots
    periodically when `out_dir` is given. Divergence aborts with a
    diagnostic snapshot.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    batch = min(cfg.batch_size, n)
    aug = cfg.aug_ranges if cfg.augment else None
    if aug is not None and dataset.transforms is None:
        raise ValueError("augmentation needs crop transforms; build the set from crops/cache")
    state = TrainState()
    shuffle_rng = _sub_rng(cfg.seed, 1)
    started = time.perf_counter()
    epoch = 0

    try:
        while state.iteration < cfg.max_iters:
            order = shuffle_rng.permutation(n)
            for lo in range(0, n - batch + 1, batch):
                if state.iteration >= cfg.max_iters:
                    break
                idx = order[lo : lo + batch]
                if aug is None:
                    xb = dataset.patches[idx]
                    yb = dataset.labels[idx]
                else:
                    xs, ys = [], []
                    for i in idx:
                        px, py = dataset.sample(int(i), aug, _sub_rng(cfg.seed, 2, epoch, int(i)))
                        xs.append(px)
                        ys.append(py)
                    xb = np.stack(xs)
                    yb = np.stack(ys)

                it = state.iteration
                lr = lr_schedule(it, cfg)
                g = Graph(training=True, rng=_sub_rng(cfg.seed, 3, it))
                out = model.forward_graph(g, Tensor(model._as_batch(xb)))
                loss = g.mse_loss(out, Tensor(yb.astype(model.dtype)))
                loss_val = float(loss.data)
                g.backward(loss)
                sgd_step(model.params, state, lr, cfg)
                model.zero_grads()
                state.history.append((it, lr, loss_val))
                state.iteration = it + 1

                if out_dir and state.iteration % cfg.snapshot_every == 0:
                    _write_snapshot(model, out_dir, state.iteration, cfg.snapshots_keep)
                if log and (state.iteration % 100 == 0 or state.iteration == 1):
                    log(f"iter {state.iteration} lr {lr:g} loss {loss_val:.6f}")
            epoch += 1
    except NumericsError as exc:
        snap = _write_snapshot(model, out_dir, state.iteration, cfg.snapshots_keep) if out_dir else None
        where = f" (diagnostic snapshot: {snap})" if snap else ""
        raise TrainDivergence(f"aborted at iteration {state.iteration}: {exc}{where}") from exc
    except KeyboardInterrupt:
        if out_dir:
            _write_snapshot(model, out_dir, state.iteration, cfg.snapshots_keep)
        raise

    return TrainResult(
        model=model,
        history=state.history,
        state=state,
        wall_seconds=time.perf_counter() - started,
    )


def write_loss_csv(history, path):
    lines = ["iter,lr,loss"]
    lines += [f"{it},{lr:.10g},{loss:.10g}" for it, lr, loss in history]
    Path(path).write_text("\n".join(lines) + "\n")


class BaggingEnsemble:
    """Average of independently trained models; accumulation in float64."""

    def __init__(self, members):
        if len(members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        specs = {m.spec.output_dim for m in members}
        if len(specs) != 1:
            raise ValueError("ensemble members disagree on output width")
        self.members = list(members)

    @property
    def spec(self):
        return self.members[0].spec

    def member_predictions(self, x):
        return np.stack([m.predict(x).astype(np.float64) for m in self.members])

    def predict(self, x):
        return self.member_predictions(x).mean(axis=0)


def train_bagging(dataset, cfg, spec=None, k=4, member_seeds=None, out_dir=None, log=None):
    """Train K networks independently on the same data with different
    random order, initialization and augmentation; predictions average."""
    if k < 2:
        raise ValueError("bagging needs k >= 2")
    spec = spec or ModelSpec(variant="basic")
    if member_seeds is None:
        member_seeds = [cfg.seed * 1000 + i for i in range(k)]
    if len(member_seeds) != k:
        raise ValueError("member_seeds length must equal k")
    members = []
    histories = []
    for i, seed in enumerate(member_seeds):
        member_cfg = replace(cfg, seed=seed)
        member_dir = Path(out_dir) / f"member{i}" if out_dir else None
        if log:
            log(f"training bagging member {i + 1}/{k} (seed {seed})")
        result = train(Model(spec, seed=seed), dataset, member_cfg, out_dir=member_dir, log=log)
        members.append(result.model)
        histories.append(result.history)
    return BaggingEnsemble(members), histories
