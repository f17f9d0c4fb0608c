"""Instance construction, padded batching, Adam with warmup and clipping,
and the epoch loop with validation early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import EgoIndex
from .model import ModelParams, loss_and_grads
from .tokens import CANONICAL, TokenSequence, TokenVariant, Vocabulary, encode_instance

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, step: int, lr: float, grad_norm: float, loss: float):
        self.step, self.lr, self.grad_norm, self.loss = step, lr, grad_norm, loss
        super().__init__(f"non-finite training state at step {step}: loss={loss}, lr={lr:g}, grad_norm={grad_norm}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 20
    warmup_steps: int = 100
    grad_clip: float = 1.0
    seed: int = 0
    loss_on: str = "all"  # "all" | "target"
    cap: int = 64

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        for name in ("batch_size", "max_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")
        if self.warmup_steps < 0 or self.grad_clip <= 0:
            raise ValueError("warmup_steps must be >= 0 and grad_clip > 0")
        if self.loss_on not in ("all", "target"):
            raise ValueError(f"loss_on must be 'all' or 'target', got {self.loss_on!r}")


@dataclass(frozen=True)
class TrainingInstance:
    ids: tuple[int, ...]
    ego: str
    target_start: int  # index of the first target-segment token in ids


def training_sequences(
    index: EgoIndex,
    vocab: Vocabulary,
    steps: Sequence[int],
    variant: TokenVariant = CANONICAL,
    context_length: int = 1024,
    deletions: bool = False,
) -> list[TokenSequence]:
    """One sequence per (ego, target step) with nonempty ground truth."""
    seqs = []
    for k in steps:
        if k < 2:
            continue
        for ego in index.active_egos(k):
            seqs.append(encode_instance(vocab, index.history(ego, k), ego, k, variant, context_length, deletions))
    return seqs


def make_instances(sequences: Sequence[TokenSequence], vocab: Vocabulary, context_length: int) -> list[TrainingInstance]:
    if not sequences:
        raise TrainingError("empty training set")
    out = []
    for s in sequences:
        ids = s.input_ids + s.target_ids + (vocab.eot_id,)
        if len(ids) > context_length:
            raise TrainingError(f"instance for {s.ego!r} has {len(ids)} tokens > context {context_length}")
        out.append(TrainingInstance(ids, s.ego, len(s.input_ids)))
    return out


def batch_and_mask(
    instances: Sequence[TrainingInstance], pad_id: int, loss_on: str = "all"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-pad to the longest instance.

    Returns ``(ids, targets, mask)`` of shape ``(B, L)``. ``targets[b, i]`` is
    the token at ``i + 1`` (``pad_id`` where nothing is predicted) and
    ``mask`` marks positions that count toward the loss.
    """
    if not instances:
        raise TrainingError("empty batch")
    L = max(len(x.ids) for x in instances)
    ids = np.full((len(instances), L), pad_id, dtype=np.int64)
    targets = np.full((len(instances), L), pad_id, dtype=np.int64)
    for b, x in enumerate(instances):
        n = len(x.ids)
        ids[b, :n] = x.ids
        targets[b, : n - 1] = x.ids[1:]
        if loss_on == "target":
            # predictions of tokens before the target segment are not scored
            targets[b, : max(x.target_start - 1, 0)] = pad_id
    return ids, targets, targets != pad_id


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam; updates ``params`` and ``state`` in place."""
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {k} {params[k].shape}")
        m = state.m.setdefault(k, np.zeros_like(g))
        v = state.v.setdefault(k, np.zeros_like(g))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if lr != 0.0:
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warmup over ``warmup_steps`` (1-based step), then constant."""
    if cfg.warmup_steps == 0:
        return cfg.lr
    return cfg.lr * min(1.0, step / cfg.warmup_steps)


@dataclass
class EpochRecord:
    epoch: int
    step: int
    loss: float
    val_ndcg5: float
    val_jaccard: float
    lr: float

    def csv(self) -> str:
        return f"{self.epoch},{self.step},{self.loss!r},{self.val_ndcg5!r},{self.val_jaccard!r},{self.lr!r}"


LOG_HEADER = "epoch,step,loss,val_ndcg5,val_jaccard,lr"


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    best_val_ndcg5: float

    def log_csv(self) -> str:
        return "\n".join([LOG_HEADER] + [r.csv() for r in self.history]) + "\n"


Validator = Callable[[ModelParams], tuple[float, float]]


def train(
    instances: Sequence[TrainingInstance],
    params: ModelParams,
    cfg: TrainConfig,
    pad_id: int,
    validate: Validator | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Minimize next-token NLL over ``instances``.

    After every epoch ``validate`` (if given) returns validation
    ``(NDCG@5, Jaccard)``; the parameters with the best NDCG@5 are returned
    and training stops after ``patience`` epochs without improvement.
    Without a validator the final parameters are returned.
    """
    if not instances:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    drop_rng = np.random.default_rng([cfg.seed, 1])
    params = params.copy()
    state = AdamState()
    history: list[EpochRecord] = []
    best = (-math.inf, 0, params.copy())
    stale = 0
    step = 0
    order = np.arange(len(instances))
    for epoch in range(1, cfg.max_epochs + 1):
        rng.shuffle(order)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = [instances[i] for i in order[lo: lo + cfg.batch_size]]
            ids, targets, _ = batch_and_mask(batch, pad_id, cfg.loss_on)
            step += 1
            lr = lr_at(step, cfg)
            loss, grads = loss_and_grads(params, ids, targets, pad_id, drop_rng)
            norm = clip_global_norm(grads, cfg.grad_clip)
            if not (math.isfinite(loss) and math.isfinite(norm)):
                raise TrainingDiverged(step, lr, norm, loss)
            adam_step(params.arrays, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps)
            losses.append(loss)
        val_ndcg, val_jac = validate(params) if validate else (math.nan, math.nan)
        rec = EpochRecord(epoch, step, float(np.mean(losses)), val_ndcg, val_jac, lr)
        history.append(rec)
        if on_epoch:
            on_epoch(rec)
        log.debug("epoch %d loss %.4f val_ndcg5 %.4f", epoch, rec.loss, val_ndcg)
        if validate is None:
            continue
        if val_ndcg > best[0]:
            best = (val_ndcg, epoch, params.copy())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if validate is None:
        return TrainResult(params, history, len(history), math.nan)
    return TrainResult(best[2], history, best[1], best[0])
