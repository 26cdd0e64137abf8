"""Mini-batch BPTT training with early stopping, evaluation, random
hyperparameter search, and the REN-vs-QDREN paired comparison.
"""
from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SplitDataset, Story
from .model import ModelConfig, ModelParams, forward, init_params
from .output import loss as output_loss
from .tensor import (AdamState, NumericError, RMSPropState, Tape, adam_step,
                     backward, clip_gradients, rmsprop_step, tape_scope, zero_grads)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    seconds: float


@dataclass
class TrainReport:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = 0.0
    stopping_reason: str = ""

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,val_acc"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.train_loss:.6f},{e.val_loss:.6f},{e.val_acc:.6f}")
        return "\n".join(lines) + "\n"


def story_loss(params: ModelParams, story: Story, config: ModelConfig,
               rng=None, training=False) -> T.Tensor:
    logits, _, candidates = forward(params, story, config, rng=rng, training=training)
    if candidates is None:
        target = story.answer
    else:
        target = candidates.index(story.answer)
    return output_loss(logits, target, params.regularized(), config.l2)


def _predict_story(params: ModelParams, story: Story, config: ModelConfig) -> int:
    """Predicted vocab id; argmax over (candidate-restricted) logits, ties
    broken by lowest vocab id (candidate lists are sorted ascending)."""
    logits, _, candidates = forward(params, story, config, training=False)
    idx = int(np.argmax(logits.data))
    return idx if candidates is None else candidates[idx]


def evaluate(params: ModelParams, split: list[Story],
             config: ModelConfig) -> tuple[float, float]:
    """(accuracy, error rate) over a split; error = 1 - accuracy."""
    if not split:
        raise ValueError("cannot evaluate an empty split")
    workers = int(os.environ.get("QDREN_THREADS", "1"))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            preds = list(ex.map(lambda s: _predict_story(params, s, config), split))
    else:
        preds = [_predict_story(params, s, config) for s in split]
    correct = sum(p == s.answer for p, s in zip(preds, split))
    acc = correct / len(split)
    return acc, 1.0 - acc


def _validation_loss(params: ModelParams, split: list[Story],
                     config: ModelConfig) -> float:
    cfg = dataclasses.replace(config, l2=0.0)
    total = 0.0
    for story in split:
        total += float(story_loss(params, story, cfg, training=False).data)
    return total / len(split)


def _make_optimizer(config: ModelConfig, tensors):
    if config.optimizer == "adam":
        state = AdamState(tensors)
        return state, adam_step
    state = RMSPropState(tensors)
    return state, rmsprop_step


def train_epoch(params: ModelParams, train_split: list[Story], config: ModelConfig,
                opt_state, opt_step, rng: np.random.Generator,
                epoch: int) -> float:
    """One pass of shuffled mini-batches; returns mean train loss.

    Gradients are averaged over the batch, clipped by global norm, then
    applied. The last partial batch is kept. A non-finite loss aborts.
    """
    order = rng.permutation(len(train_split))
    tensors = params.tensors()
    total_loss = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = [train_split[i] for i in order[start:start + config.batch_size]]
        zero_grads(tensors)
        batch_loss = 0.0
        for story in batch:
            tape = Tape()
            with tape_scope(tape):
                loss = story_loss(params, story, config, rng=rng, training=True)
            if not np.isfinite(loss.data):
                grads_norm = T.global_norm(
                    {k: (p.grad if p.grad is not None else np.zeros(1)) for k, p in tensors.items()})
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(accumulated grad norm {grads_norm:.3g})")
            backward(tape, loss, tensors)
            batch_loss += float(loss.data)
        total_loss += batch_loss
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) / len(batch)
                 for k, p in tensors.items()}
        params.pin_pad_row()
        grads["E"][0, :] = 0.0
        grads = clip_gradients(grads, config.clip_norm)
        opt_step(opt_state, tensors, grads, config.lr)
        params.pin_pad_row()
    return total_loss / len(train_split)


def train(config: ModelConfig, dataset: SplitDataset,
          patience: int = 50) -> tuple[ModelParams, TrainReport]:
    """Train with early stopping on validation accuracy.

    Stops once `patience` epochs pass without improvement (patience=0
    runs exactly one epoch) or at config.max_epochs; returns the best
    parameters, not the last.
    """
    if not dataset.train or not dataset.valid:
        raise ValueError("dataset needs non-empty train and validation splits")
    config = config.for_dataset(dataset)
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng)
    opt_state, opt_step = _make_optimizer(config, params.tensors())

    report = TrainReport()
    best_params = params.copy()
    best_acc = -1.0
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        train_loss = train_epoch(params, dataset.train, config, opt_state,
                                 opt_step, rng, epoch)
        val_loss = _validation_loss(params, dataset.valid, config)
        val_acc, _ = evaluate(params, dataset.valid, config)
        report.epochs.append(EpochStats(epoch, train_loss, val_loss, val_acc,
                                        time.perf_counter() - t0))
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = params.copy()
            report.best_epoch = epoch
            stale = 0
        else:
            stale += 1
        if stale >= patience:
            report.stopping_reason = f"no improvement for {patience} epochs"
            break
    else:
        report.stopping_reason = f"reached max_epochs={config.max_epochs}"
    report.best_val_acc = best_acc
    return best_params, report


# ---------------------------------------------------------------------------
# Random hyperparameter search


@dataclass
class SearchSpace:
    """Candidate lists per hyperparameter; drawn uniformly with replacement."""

    lr: list[float] = field(default_factory=lambda: [0.01, 0.001, 0.0001])
    z: list[int] = field(default_factory=lambda: [20, 30, 40, 50])
    l2: list[float] = field(default_factory=lambda: [0.0, 0.001, 0.0001])
    dropout: list[float] = field(default_factory=lambda: [0.3, 0.5, 0.7])
    window: list[int] = field(default_factory=lambda: [3, 5])
    optimizer: list[str] = field(default_factory=lambda: ["adam"])
    batch_size: list[int] = field(default_factory=lambda: [32])

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name):
                raise ValueError(f"search space list {f.name!r} is empty")

    def draw(self, rng: np.random.Generator) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            values = getattr(self, f.name)
            out[f.name] = values[rng.integers(len(values))]
        return out


@dataclass
class Trial:
    index: int
    draw: dict
    val_acc: float
    val_loss: float
    best_epoch: int


def random_search(space: SearchSpace, budget: int, dataset: SplitDataset,
                  base_config: ModelConfig, train_subsample: int | None = None,
                  seed: int = 0, patience: int = 10) -> list[Trial]:
    """`budget` independent uniform draws; each trained on the (sub)sampled
    training split, validated on the full validation split. Ranked by
    validation accuracy, ties by trial index. Deterministic per seed."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    rng = np.random.default_rng(seed)
    seeds = np.random.SeedSequence(seed).spawn(budget)
    trials = []
    for i in range(budget):
        draw = space.draw(rng)
        sub = dataset.train
        if train_subsample is not None and train_subsample < len(sub):
            pick = np.random.default_rng(seeds[i]).choice(
                len(sub), size=train_subsample, replace=False)
            sub = [dataset.train[j] for j in pick]
        cfg = dataclasses.replace(
            base_config, seed=int(seeds[i].generate_state(1)[0] % (2 ** 31)),
            **draw)
        trial_ds = dataclasses.replace(dataset, train=sub)
        _, report = train(cfg, trial_ds, patience=patience)
        last = report.epochs[report.best_epoch - 1]
        trials.append(Trial(index=i, draw=draw, val_acc=report.best_val_acc,
                            val_loss=last.val_loss, best_epoch=report.best_epoch))
    return sorted(trials, key=lambda t: (-t.val_acc, t.index))


# ---------------------------------------------------------------------------
# Paired REN / QDREN comparison


@dataclass
class ModeComparison:
    seeds: list[int]
    ren_acc: list[float]
    qdren_acc: list[float]

    @property
    def deltas(self) -> list[float]:
        return [q - r for q, r in zip(self.qdren_acc, self.ren_acc)]

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.deltas))


def compare_modes(dataset: SplitDataset, config: ModelConfig, seeds: list[int],
                  patience: int = 20, split: str = "test") -> ModeComparison:
    """Train REN and QDREN on identical data/seed pairs; report accuracies
    on the requested split per seed."""
    if len(seeds) < 3:
        raise ValueError("need at least 3 seeds for a paired comparison")
    eval_split = getattr(dataset, split)
    result = ModeComparison(seeds=list(seeds), ren_acc=[], qdren_acc=[])
    for seed in seeds:
        for mode in ("REN", "QDREN"):
            cfg = dataclasses.replace(config, mode=mode, seed=seed)
            params, _ = train(cfg, dataset, patience=patience)
            acc, _ = evaluate(params, eval_split, cfg.for_dataset(dataset))
            (result.ren_acc if mode == "REN" else result.qdren_acc).append(acc)
    return result
