"""SGD training loop with alternating spatial/temporal weight freezing.

Each cycle of ``i_s + i_t`` minibatch iterations first spends ``i_s``
iterations with the spatial kernels frozen (only temporal and shared
parameters step), then ``i_t`` iterations with the temporal kernels frozen.
Gradients are still computed for frozen parameters; only the optimizer step
is gated, and a frozen group's momentum buffers are untouched while frozen.
Shared parameters (pointwise convs, batch norm, the linear head) step every
iteration, and batch-norm running statistics update every iteration
regardless of phase.

The loss is binary cross-entropy on sigmoid probabilities; the learning
rate follows cosine annealing from its initial value down to zero over the
full run, evaluated per iteration.  With ``freezing=False`` the loop
degrades to plain joint SGD over all three groups.

All randomness (batch order, per-sample augmentation) is derived from
(config seed, epoch, sample index), so runs are reproducible and training
can resume from a checkpoint mid-stream with an identical loss trace.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .augment import StandardAugs, clip_blend, default_temporal_count, random_mask, standard_augs, temporal_dropout, temporal_repeat
from .data import ClipDataset
from .model import Model, NamedParam
from .partition import ParamGroup, partition
from .tensor import Tensor, add, backward, log, mul, tmean, tsum

__all__ = [
    "Phase",
    "active_group",
    "cosine_lr",
    "bce_loss",
    "SgdState",
    "sgd_step",
    "TrainConfig",
    "TrainingDivergedError",
    "Trainer",
    "train",
]


class TrainingDivergedError(RuntimeError):
    pass


class Phase(enum.Enum):
    TEMPORAL_UPDATE = "temporal"  # spatial weights frozen
    SPATIAL_UPDATE = "spatial"  # temporal weights frozen


def active_group(counter: int, i_s: int, i_t: int) -> Phase:
    """Phase of the freeze cycle at the given iteration counter.

    The first ``i_s`` iterations of every cycle freeze the spatial group
    (temporal group training), the remaining ``i_t`` freeze the temporal
    group.  Shared parameters are active in both phases.
    """
    if i_s < 1 or i_t < 1:
        raise ValueError(f"freeze ratio requires i_s >= 1 and i_t >= 1, got {i_s}:{i_t}")
    if counter < 0:
        raise ValueError(f"counter must be non-negative, got {counter}")
    return Phase.TEMPORAL_UPDATE if counter % (i_s + i_t) < i_s else Phase.SPATIAL_UPDATE


def cosine_lr(iteration: int, total_iters: int, lr0: float) -> float:
    """Cosine annealing from lr0 at iteration 0 down to 0 at total_iters."""
    if total_iters <= 0:
        raise ValueError(f"total_iters must be positive, got {total_iters}")
    if not 0 <= iteration <= total_iters:
        raise ValueError(f"iteration {iteration} outside [0, {total_iters}]")
    return lr0 * (1.0 + math.cos(math.pi * iteration / total_iters)) / 2.0


def bce_loss(yhat: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy -sum(y*log(p) + (1-y)*log(1-p)), optionally / N.

    ``yhat`` must hold probabilities strictly inside (0, 1); the model's
    clamped-logit sigmoid guarantees that in double precision.  Labels must
    be exactly 0 or 1.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    y = labels.data if isinstance(labels, Tensor) else np.asarray(labels)
    y = y.astype(yhat.dtype)
    if y.shape != yhat.shape:
        raise ValueError(f"bce_loss: labels shape {y.shape} != predictions shape {yhat.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("bce_loss: labels must be 0 or 1")
    if np.any(yhat.data <= 0) or np.any(yhat.data >= 1):
        raise ValueError("bce_loss: predictions must lie strictly inside (0, 1)")
    term = add(mul(Tensor(y), log(yhat)), mul(Tensor(1.0 - y), log(1.0 - yhat)))
    if reduction == "mean":
        return mul(tmean(term), -1.0)
    return mul(tsum(term), -1.0)


@dataclass
class SgdState:
    """Per-group momentum buffers; untouched while the group is frozen."""

    momentum: float
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(
    params: list[tuple[NamedParam, Tensor]],
    grads: dict[Tensor, Tensor],
    state: SgdState,
    lr: float,
) -> None:
    """v <- mu*v + g; theta <- theta - lr*v, applied to the given group only."""
    for named, tensor in params:
        grad = grads.get(tensor)
        if grad is None:
            raise ValueError(f"missing gradient for active parameter {named.name}")
        g = grad.data.astype(tensor.dtype, copy=False)
        if g.shape != tensor.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {named.name} shape {tensor.shape}"
            )
        buf = state.buffers.get(named.name)
        if buf is None:
            buf = np.zeros_like(tensor.data)
        buf = state.momentum * buf + g
        state.buffers[named.name] = buf
        tensor.data -= tensor.dtype.type(lr) * buf


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    clip_len: int = 8
    epochs: int = 40
    lr: float = 0.05
    momentum: float = 0.9
    freeze_spatial_iters: int = 20  # i_s
    freeze_temporal_iters: int = 1  # i_t
    seed: int = 0
    freezing: bool = True  # False = naive joint training
    flip: bool = True
    cutout: bool = True
    noise: bool = True
    fake_clip_augs: bool = True
    fake_aug_prob: float = 0.5
    loss_reduction: str = "mean"
    eval_every: int = 0  # epochs between eval rows; 0 disables

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("initial learning rate must be > 0")
        if self.freeze_spatial_iters < 1 or self.freeze_temporal_iters < 1:
            raise ValueError("freeze ratio components must be >= 1")
        if not 0.0 <= self.fake_aug_prob <= 1.0:
            raise ValueError("fake_aug_prob must be in [0, 1]")
        if self.loss_reduction not in ("sum", "mean"):
            raise ValueError("loss_reduction must be 'sum' or 'mean'")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


# Salt values for the per-purpose random streams.
_SALT_ORDER = 3
_SALT_FAKE = 11
_SALT_STD = 13


class Trainer:
    """Resumable training loop; ``run(max_iters)`` may be called repeatedly."""

    def __init__(
        self,
        model: Model,
        dataset: ClipDataset,
        config: TrainConfig,
        eval_sets: dict[str, ClipDataset] | None = None,
    ):
        if len(dataset) == 0:
            raise ValueError("training dataset is empty")
        labels = set(int(v) for v in dataset.labels)
        if labels != {0, 1}:
            raise ValueError(f"training dataset must contain both labels, got {sorted(labels)}")
        self.model = model
        self.dataset = dataset
        self.config = config
        self.eval_sets = dict(eval_sets) if eval_sets else {}

        groups = partition(model)
        tensors = model.param_tensors()
        self.group_params: dict[ParamGroup, list[tuple[NamedParam, Tensor]]] = {
            ParamGroup.SPATIAL: [(p, tensors[p.name]) for p in groups.spatial],
            ParamGroup.TEMPORAL: [(p, tensors[p.name]) for p in groups.temporal],
            ParamGroup.SHARED: [(p, tensors[p.name]) for p in groups.shared],
        }
        self.sgd: dict[ParamGroup, SgdState] = {
            g: SgdState(momentum=config.momentum) for g in ParamGroup
        }

        self.iters_per_epoch = len(dataset) // config.batch_size
        if self.iters_per_epoch == 0:
            raise ValueError(
                f"dataset of {len(dataset)} clips is smaller than one batch of {config.batch_size}"
            )
        self.total_iters = config.epochs * self.iters_per_epoch
        self.counter = 0  # freeze-schedule counter, one tick per minibatch
        self.iteration = 0
        self.rows: list[dict] = []
        self.base_rng = np.random.default_rng([config.seed])
        self._real_pool = dataset.real_indices()
        self._order_cache: tuple[int, np.ndarray] | None = None

    # -- deterministic randomness -------------------------------------------
    def _epoch_order(self, epoch: int) -> np.ndarray:
        if self._order_cache is not None and self._order_cache[0] == epoch:
            return self._order_cache[1]
        order = np.random.default_rng([self.config.seed, _SALT_ORDER, epoch]).permutation(
            len(self.dataset)
        )
        self._order_cache = (epoch, order)
        return order

    def _augment_sample(self, index: int, epoch: int) -> tuple[np.ndarray, int]:
        cfg = self.config
        clip = self.dataset.clips[index]
        label = int(self.dataset.labels[index])
        if cfg.fake_clip_augs and label == 0:
            rng = np.random.default_rng([cfg.seed, _SALT_FAKE, epoch, int(index)])
            if rng.random() < cfg.fake_aug_prob:
                length = clip.shape[1]
                kind = int(rng.integers(0, 3))
                if kind == 2 and len(self._real_pool) < 2:
                    kind = int(rng.integers(0, 2))
                if kind == 0:
                    count = default_temporal_count(length, rng)
                    idx = sorted(int(i) for i in rng.choice(length, size=count, replace=False))
                    clip = temporal_dropout(clip, idx)
                elif kind == 1:
                    count = default_temporal_count(length, rng)
                    idx = sorted(int(i) for i in rng.choice(length, size=count, replace=False))
                    clip = temporal_repeat(clip, idx)
                else:
                    others = self._real_pool[self._real_pool != index]
                    partner = self.dataset.clips[int(rng.choice(others))]
                    mask = random_mask(clip.shape[2], clip.shape[3], rng)
                    clip = clip_blend(clip, partner, mask)
                label = 1
        if cfg.flip or cfg.cutout or cfg.noise:
            rng = np.random.default_rng([cfg.seed, _SALT_STD, epoch, int(index)])
            clip = standard_augs(
                clip, rng, StandardAugs(flip=cfg.flip, cutout=cfg.cutout, noise=cfg.noise)
            )
        return np.asarray(clip, dtype=np.float32), label

    def _load_batch(self, indices: np.ndarray, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        clips, labels = [], []
        for i in indices:
            clip, label = self._augment_sample(int(i), epoch)
            clips.append(clip)
            labels.append(label)
        return np.stack(clips), np.asarray(labels, dtype=np.float64)

    # -- main loop ------------------------------------------------------------
    def run(self, max_iters: int | None = None) -> list[dict]:
        """Train until done (or for ``max_iters`` more iterations); returns new rows."""
        cfg = self.config
        produced: list[dict] = []
        while self.iteration < self.total_iters:
            if max_iters is not None and len(produced) >= max_iters:
                break
            epoch = self.iteration // self.iters_per_epoch
            pos = self.iteration % self.iters_per_epoch
            order = self._epoch_order(epoch)
            batch_idx = order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
            x, y = self._load_batch(batch_idx, epoch)

            lr = cosine_lr(self.iteration, self.total_iters, cfg.lr)
            yhat = self.model.forward(x, mode="train")
            loss = bce_loss(yhat, y, reduction=cfg.loss_reduction)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise TrainingDivergedError(
                    f"non-finite loss {loss_val} at iteration {self.iteration}"
                )
            grads = backward(loss)

            if cfg.freezing:
                phase = active_group(self.counter, cfg.freeze_spatial_iters, cfg.freeze_temporal_iters)
                phase_name = phase.value
                stepped = (
                    ParamGroup.TEMPORAL if phase is Phase.TEMPORAL_UPDATE else ParamGroup.SPATIAL
                )
                sgd_step(self.group_params[stepped], grads, self.sgd[stepped], lr)
            else:
                phase_name = "joint"
                sgd_step(self.group_params[ParamGroup.SPATIAL], grads, self.sgd[ParamGroup.SPATIAL], lr)
                sgd_step(self.group_params[ParamGroup.TEMPORAL], grads, self.sgd[ParamGroup.TEMPORAL], lr)
            sgd_step(self.group_params[ParamGroup.SHARED], grads, self.sgd[ParamGroup.SHARED], lr)

            row = {
                "iter": self.iteration,
                "epoch": epoch,
                "phase": phase_name,
                "lr": lr,
                "loss": loss_val,
                "eval_auc": "",
            }
            self.counter += 1
            self.iteration += 1
            self.rows.append(row)
            produced.append(row)

            end_of_epoch = self.iteration % self.iters_per_epoch == 0
            if (
                end_of_epoch
                and cfg.eval_every > 0
                and self.eval_sets
                and ((epoch + 1) % cfg.eval_every == 0 or self.iteration == self.total_iters)
            ):
                for row_ in self._eval_rows(epoch):
                    self.rows.append(row_)
                    produced.append(row_)
        return produced

    def _eval_rows(self, epoch: int) -> list[dict]:
        from .metrics import run_eval

        report = run_eval(self.model, self.eval_sets)
        out = []
        for name, auc_value in report.aucs.items():
            out.append(
                {
                    "iter": self.iteration - 1,
                    "epoch": epoch,
                    "phase": f"eval_{name}",
                    "lr": "",
                    "loss": "",
                    "eval_auc": auc_value,
                }
            )
        return out

    # -- persistence hooks ------------------------------------------------------
    def momentum_arrays(self) -> dict[str, np.ndarray]:
        merged: dict[str, np.ndarray] = {}
        for state in self.sgd.values():
            merged.update(state.buffers)
        return merged

    def restore(self, counter: int, iteration: int, momentum: dict[str, np.ndarray], rng_state: dict | None = None) -> None:
        self.counter = int(counter)
        self.iteration = int(iteration)
        names = {p.name: g for g in ParamGroup for p, _ in self.group_params[g]}
        for name, buf in momentum.items():
            if name not in names:
                raise ValueError(f"momentum buffer for unknown parameter {name!r}")
            self.sgd[names[name]].buffers[name] = np.array(buf)
        if rng_state is not None:
            self.base_rng.bit_generator.state = rng_state


def train(
    model: Model,
    dataset: ClipDataset,
    config: TrainConfig,
    eval_sets: dict[str, ClipDataset] | None = None,
) -> tuple[Model, list[dict]]:
    """Train to completion; returns the model and the full metric log."""
    trainer = Trainer(model, dataset, config, eval_sets=eval_sets)
    trainer.run()
    return model, trainer.rows
