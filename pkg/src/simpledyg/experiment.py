"""End-to-end pipeline: prepare a graph, train seeded models, score them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .generate import DEFAULT_CAP, RankedPrediction, multi_step_batch, predict_steps
from .graph import EgoIndex, Split, TemporalGraph, TimeGrid, normalize_times, segment_time, split_dataset
from .metrics import jaccard, jaccard_max_over_k, ndcg_at_k, recency_frequency_baseline
from .model import ModelConfig, ModelParams, init_model
from .tokens import TokenVariant, Vocabulary, build_vocab
from .train import TrainConfig, TrainResult, make_instances, train, training_sequences

log = logging.getLogger(__name__)

TruthFn = Callable[[str, int], set]


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class DataConfig:
    T: int = 13
    variant: TokenVariant = TokenVariant()
    context_length: int = 1024
    deletions: bool = False
    extra_steps: int = 0  # temporal tokens reserved for rollouts past T


@dataclass(frozen=True)
class ModelSpec:
    """Model hyperparameters minus what the data determines (vocab, context)."""

    layers: int = 2
    heads: int = 2
    d_model: int = 128
    d_ff: int | None = None
    dropout: float = 0.0
    position: str = "learned"
    init_std: float = 0.02

    def config(self, vocab_size: int, context_length: int, seed: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            layers=self.layers,
            heads=self.heads,
            d_model=self.d_model,
            d_ff=self.d_ff,
            context_length=context_length,
            seed=seed,
            dropout=self.dropout,
            position=self.position,
            init_std=self.init_std,
        )


@dataclass
class Prepared:
    graph: TemporalGraph  # normalized
    grid: TimeGrid
    index: EgoIndex
    vocab: Vocabulary
    split: Split
    data: DataConfig

    @property
    def train_steps(self) -> list[int]:
        # sliding targets 2..T-2, never touching val/test steps
        return list(range(2, self.grid.T - 1))


def prepare(graph: TemporalGraph, data: DataConfig) -> Prepared:
    g = normalize_times(graph)
    grid, steps = segment_time(g, data.T)
    index = EgoIndex(g, grid, steps)
    vocab = build_vocab(g, data.T, data.extra_steps)
    return Prepared(g, grid, index, vocab, split_dataset(g, grid, index), data)


@dataclass
class Scores:
    ndcg5: float
    jaccard: float
    per_ego: dict[str, tuple[float, float]] = field(default_factory=dict)


def score_generated(preds: Sequence[RankedPrediction], truth: TruthFn) -> Scores:
    per = {}
    for p in preds:
        t = truth(p.ego, p.step)
        per[p.ego] = (ndcg_at_k(p.nodes, t, 5), jaccard(p.nodes, t))
    return _mean_scores(per)


def score_ranked(ranked: Mapping[str, Sequence[str]], step: int, truth: TruthFn) -> Scores:
    per = {}
    for ego, lst in ranked.items():
        t = truth(ego, step)
        per[ego] = (ndcg_at_k(lst, t, 5), jaccard_max_over_k(lst, t))
    return _mean_scores(per)


def _mean_scores(per: dict[str, tuple[float, float]]) -> Scores:
    if not per:
        raise ExperimentError("no egos to score")
    arr = np.array(list(per.values()))
    return Scores(float(arr[:, 0].mean()), float(arr[:, 1].mean()), per)


def _egos_with_truth(candidates: Sequence[str], step: int, truth: TruthFn) -> list[str]:
    return [e for e in candidates if truth(e, step)]


def index_truth(index: EgoIndex) -> TruthFn:
    return index.truth


def evaluate_model(
    params: ModelParams,
    prep: Prepared,
    step: int,
    egos: Sequence[str] | None = None,
    truth: TruthFn | None = None,
    cap: int = DEFAULT_CAP,
    rank: str = "generation",
) -> Scores:
    truth = truth or prep.index.truth
    egos = _egos_with_truth(egos if egos is not None else prep.graph.nodes, step, truth)
    if not egos:
        raise ExperimentError(f"no egos with ground truth at step {step}")
    preds = predict_steps(params, prep.vocab, prep.index, egos, step, prep.data.variant, cap, rank, prep.data.deletions)
    if rank == "first_position":
        return score_ranked({p.ego: p.nodes for p in preds}, step, truth)
    return score_generated(preds, truth)


def evaluate_baseline(prep: Prepared, step: int, egos: Sequence[str] | None = None, truth: TruthFn | None = None) -> Scores:
    truth = truth or prep.index.truth
    egos = _egos_with_truth(egos if egos is not None else prep.graph.nodes, step, truth)
    if not egos:
        raise ExperimentError(f"no egos with ground truth at step {step}")
    ranked = {e: recency_frequency_baseline(prep.index.history(e, step - 1)) for e in egos}
    return score_ranked(ranked, step, truth)


def evaluate_multi_step(
    params: ModelParams,
    prep: Prepared,
    horizon: int,
    egos: Sequence[str],
    truth: TruthFn,
    cap: int = DEFAULT_CAP,
) -> list[Scores]:
    """Per-step scores of a rollout starting at the test step."""
    start = prep.split.test_step
    rolls = multi_step_batch(params, prep.vocab, prep.index, list(egos), start, horizon, prep.data.variant, cap)
    out = []
    for j in range(horizon):
        preds = [r[j] for r in rolls if truth(r[j].ego, r[j].step)]
        out.append(score_generated(preds, truth))
    return out


def train_model(
    prep: Prepared,
    model: ModelSpec,
    train_cfg: TrainConfig,
    seed: int,
    val_egos: Sequence[str] | None = None,
    truth: TruthFn | None = None,
    on_epoch=None,
    init: ModelParams | None = None,
) -> TrainResult:
    data = prep.data
    seqs = training_sequences(prep.index, prep.vocab, prep.train_steps, data.variant, data.context_length, data.deletions)
    instances = make_instances(seqs, prep.vocab, data.context_length)
    cfg = model.config(len(prep.vocab), data.context_length, seed)
    params = init if init is not None else init_model(cfg, _feature_rows(prep))
    val_step = prep.split.val_step
    truth = truth or prep.index.truth
    val = _egos_with_truth(val_egos if val_egos is not None else prep.graph.nodes, val_step, truth)

    def validate(p: ModelParams) -> tuple[float, float]:
        s = evaluate_model(p, prep, val_step, val, truth, train_cfg.cap)
        return s.ndcg5, s.jaccard

    return train(instances, params, replace(train_cfg, seed=seed), prep.vocab.pad_id,
                 validate if val else None, on_epoch)


def _feature_rows(prep: Prepared):
    feats = prep.graph.features
    if not feats:
        return None
    return {prep.vocab.node_id(n): v for n, v in feats.items() if n in prep.vocab.index}


@dataclass
class MetricReport:
    method: str
    ndcg5: tuple[float, float]
    jaccard: tuple[float, float]
    runs: int
    per_run: list[Scores] = field(default_factory=list)

    @classmethod
    def from_runs(cls, method: str, runs: Sequence[Scores]) -> "MetricReport":
        n = np.array([r.ndcg5 for r in runs])
        j = np.array([r.jaccard for r in runs])
        # population std over runs; a single run has std 0
        return cls(method, (float(n.mean()), float(n.std())), (float(j.mean()), float(j.std())), len(runs), list(runs))

    def csv_row(self) -> str:
        return f"{self.ndcg5[0]!r},{self.ndcg5[1]!r},{self.jaccard[0]!r},{self.jaccard[1]!r},{self.method}"


REPORT_HEADER = "ndcg5_mean,ndcg5_std,jaccard_mean,jaccard_std,method"


def report_csv(reports: Sequence[MetricReport]) -> str:
    return "\n".join([REPORT_HEADER] + [r.csv_row() for r in reports]) + "\n"


def report_table(reports: Sequence[MetricReport]) -> str:
    width = max([len("method")] + [len(r.method) for r in reports])
    lines = [f"{'method':<{width}}  {'NDCG@5':>13}  {'Jaccard':>13}"]
    for r in reports:
        n = f"{r.ndcg5[0]:.3f}±{r.ndcg5[1]:.3f}"
        j = f"{r.jaccard[0]:.3f}±{r.jaccard[1]:.3f}"
        lines.append(f"{r.method:<{width}}  {n:>13}  {j:>13}")
    return "\n".join(lines) + "\n"


@dataclass
class ExperimentResult:
    model: MetricReport
    baseline: MetricReport
    trained: list[TrainResult]


def run_experiment(
    graph: TemporalGraph,
    data: DataConfig,
    model: ModelSpec,
    train_cfg: TrainConfig,
    runs: int = 1,
    egos: Sequence[str] | None = None,
    truth: TruthFn | None = None,
    seeds: Sequence[int] | None = None,
    method: str | None = None,
    on_epoch=None,
) -> ExperimentResult:
    """Train ``runs`` models (seeds ``train_cfg.seed + r``) and score the test step.

    ``egos`` restricts which nodes are evaluated (default: every node);
    egos without ground truth at the scored step are always skipped.
    Metrics are averaged over egos within a run, then over runs.
    """
    if runs < 1:
        raise ExperimentError("runs must be >= 1")
    prep = prepare(graph, data)
    truth = truth or prep.index.truth
    test_step = prep.split.test_step
    test_egos = _egos_with_truth(egos if egos is not None else prep.graph.nodes, test_step, truth)
    if not test_egos:
        raise ExperimentError("empty test set")
    seeds = list(seeds) if seeds is not None else [train_cfg.seed + r for r in range(runs)]
    scores, trained = [], []
    for r, seed in enumerate(seeds[:runs]):
        res = train_model(prep, model, train_cfg, seed, egos, truth, on_epoch)
        trained.append(res)
        s = evaluate_model(res.params, prep, test_step, test_egos, truth, train_cfg.cap)
        log.info("run %d seed %d: ndcg5 %.4f jaccard %.4f (best epoch %d)", r, seed, s.ndcg5, s.jaccard, res.best_epoch)
        scores.append(s)
    base = evaluate_baseline(prep, test_step, test_egos, truth)
    name = method or f"SimpleDyG[{data.variant.name}]"
    return ExperimentResult(
        MetricReport.from_runs(name, scores),
        MetricReport.from_runs("recency-frequency", [base]),
        trained,
    )
