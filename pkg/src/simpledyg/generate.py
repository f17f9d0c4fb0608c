"""Greedy autoregressive decoding with end-token halting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .graph import EgoIndex, Interaction, Op
from .model import ModelParams, sinusoidal_table
from .tokens import (
    CANONICAL,
    ENDOFTEXT,
    TokenVariant,
    Vocabulary,
    encode_instance,
)

DEFAULT_CAP = 64


class GenerationError(ValueError):
    pass


@dataclass
class RankedPrediction:
    ego: str
    step: int
    nodes: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    halted: bool = False

    def format(self) -> str:
        pairs = ",".join(f"{n}:{s:.6g}" for n, s in zip(self.nodes, self.scores))
        return f"{self.ego}\t{self.step}\t{pairs}\t{int(self.halted)}"


def _ln(x, gain, bias, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * gain + bias


def _gelu(v):
    return 0.5 * v * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * v * (1.0 + 0.044715 * (v * v))))


def _softmax(s):
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class KVDecoder:
    """Incremental forward pass with cached keys/values, one row per sequence.

    Rows may have different lengths; each row keeps its own write position.
    Arithmetic mirrors :class:`simpledyg.model.Forward` exactly, so cached
    logits agree with a full recomputation up to floating-point reassociation.
    """

    def __init__(self, params: ModelParams, batch: int, capacity: int):
        cfg = params.config
        self.p = params.arrays
        self.cfg = cfg
        self.capacity = min(capacity, cfg.context_length)
        shape = (batch, cfg.heads, self.capacity, cfg.head_dim)
        self.k = [np.zeros(shape) for _ in range(cfg.layers)]
        self.v = [np.zeros(shape) for _ in range(cfg.layers)]
        self.length = np.zeros(batch, dtype=np.int64)
        self._pos = (
            self.p["pos_emb"] if cfg.position == "learned" else sinusoidal_table(cfg.context_length, cfg.d_model)
        )

    def _split(self, x):
        b, n, _ = x.shape
        return x.reshape(b, n, self.cfg.heads, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def feed(self, ids: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """Append ``ids[b, :lengths[b]]`` to each row; return logits at each row's last new token."""
        B, n = ids.shape
        cfg, p = self.cfg, self.p
        start = self.length.copy()
        if np.any(start + lengths > self.capacity):
            raise GenerationError("sequence would exceed the context length")
        positions = start[:, None] + np.arange(n)[None, :]
        valid = np.arange(n)[None, :] < lengths[:, None]
        positions = np.where(valid, positions, 0)
        H = p["tok_emb"][ids] + self._pos[positions]
        key_pos = np.arange(self.capacity)
        # allowed[b, i, j]: query i of row b may see cache slot j
        allowed = key_pos[None, None, :] <= positions[:, :, None]
        rows = np.arange(B)[:, None]
        for l in range(cfg.layers):
            pre = f"layer{l}."
            q = self._split(H @ p[pre + "wq"])
            kn = self._split(H @ p[pre + "wk"])
            vn = self._split(H @ p[pre + "wv"])
            kc, vc = self.k[l], self.v[l]
            # padded (invalid) tokens are never written to the cache
            for j in range(n):
                m = valid[:, j]
                if not np.any(m):
                    continue
                kc[np.nonzero(m)[0], :, positions[m, j]] = kn[m, :, j]
                vc[np.nonzero(m)[0], :, positions[m, j]] = vn[m, :, j]
            scores = (q @ kc.transpose(0, 1, 3, 2)) / math.sqrt(cfg.head_dim)
            scores = np.where(allowed[:, None], scores, -1e300)
            att = _softmax(scores) @ vc
            att = att.transpose(0, 2, 1, 3).reshape(B, n, cfg.d_model) @ p[pre + "wo"]
            H = _ln(H + att, p[pre + "ln1.gain"], p[pre + "ln1.bias"], cfg.ln_eps)
            ff = _gelu(H @ p[pre + "ff1.w"] + p[pre + "ff1.b"]) @ p[pre + "ff2.w"] + p[pre + "ff2.b"]
            H = _ln(H + ff, p[pre + "ln2.gain"], p[pre + "ln2.bias"], cfg.ln_eps)
        last = H[rows[:, 0], np.maximum(lengths - 1, 0)]
        self.length = start + lengths
        return _ln(last, p["ln_f.gain"], p["ln_f.bias"], cfg.ln_eps) @ p["head"]


def generate_batch(
    params: ModelParams,
    prefixes: Sequence[Sequence[int]],
    cap: int,
    stop_ids: Sequence[int],
) -> list[tuple[list[int], list[float], bool]]:
    """Greedy decoding for several prompts at once.

    Each result is ``(generated ids, chosen-token probabilities, halted)``.
    Generation stops per row on a stop id, after ``cap`` tokens, or at the
    context limit. Ties in the argmax go to the lowest token id.
    """
    if cap < 1:
        raise GenerationError("cap must be >= 1")
    cfg = params.config
    B = len(prefixes)
    if B == 0:
        return []
    lens = np.array([len(x) for x in prefixes], dtype=np.int64)
    if lens.min() < 1:
        raise GenerationError("empty prefix")
    if lens.max() >= cfg.context_length:
        raise GenerationError(f"prefix of {lens.max()} tokens leaves no room in context {cfg.context_length}")
    ids = np.zeros((B, lens.max()), dtype=np.int64)
    for b, x in enumerate(prefixes):
        ids[b, : len(x)] = x
    dec = KVDecoder(params, B, int(lens.max()) + cap)
    logits = dec.feed(ids, lens)
    stops = set(int(s) for s in stop_ids)
    out: list[list[int]] = [[] for _ in range(B)]
    probs: list[list[float]] = [[] for _ in range(B)]
    halted = np.zeros(B, dtype=bool)
    alive = np.ones(B, dtype=bool)
    while True:
        p = _softmax(logits)
        choice = p.argmax(axis=-1)
        step_len = np.zeros(B, dtype=np.int64)
        for b in np.nonzero(alive)[0]:
            tok = int(choice[b])
            out[b].append(tok)
            probs[b].append(float(p[b, tok]))
            if tok in stops:
                halted[b] = True
                alive[b] = False
            elif len(out[b]) >= cap or dec.length[b] + 1 >= dec.capacity or dec.length[b] + 1 >= cfg.context_length:
                alive[b] = False
            else:
                step_len[b] = 1
        if not alive.any():
            break
        nxt = np.where(alive, choice, 0)[:, None]
        logits = dec.feed(nxt, step_len)
    return [(out[b], probs[b], bool(halted[b])) for b in range(B)]


def generate(params: ModelParams, prefix: Sequence[int], cap: int, stop_ids: Sequence[int]) -> tuple[list[int], bool]:
    toks, _, halted = generate_batch(params, [prefix], cap, stop_ids)[0]
    return toks, halted


def stop_ids_for(vocab: Vocabulary, variant: TokenVariant) -> list[int]:
    ids = [vocab[ENDOFTEXT]]
    if variant.close_out is not None:
        ids.append(vocab[variant.close_out])
    return ids


def _to_prediction(vocab, ego, step, toks, probs, halted) -> RankedPrediction:
    pred = RankedPrediction(ego, step, halted=halted)
    seen = set()
    for t, s in zip(toks, probs):
        if vocab.is_node(t) and t not in seen:
            seen.add(t)
            pred.nodes.append(vocab.symbols[t])
            pred.scores.append(s)
    return pred


def first_position_ranking(params: ModelParams, vocab: Vocabulary, prefixes: Sequence[Sequence[int]], k: int = 20):
    """Alternative ranking: node tokens sorted by next-token probability after the prompt."""
    lens = np.array([len(x) for x in prefixes], dtype=np.int64)
    ids = np.zeros((len(prefixes), lens.max()), dtype=np.int64)
    for b, x in enumerate(prefixes):
        ids[b, : len(x)] = x
    dec = KVDecoder(params, len(prefixes), int(lens.max()))
    p = _softmax(dec.feed(ids, lens))[:, : vocab.num_nodes]
    order = np.argsort(-p, axis=-1, kind="stable")[:, :k]
    return [([vocab.symbols[i] for i in row], [float(p[b, i]) for i in row]) for b, row in enumerate(order)]


def predict_steps(
    params: ModelParams,
    vocab: Vocabulary,
    index: EgoIndex,
    egos: Sequence[str],
    step: int,
    variant: TokenVariant = CANONICAL,
    cap: int = DEFAULT_CAP,
    rank: str = "generation",
    deletions: bool = False,
) -> list[RankedPrediction]:
    """Predict each ego's step-``step`` neighbors from its history through ``step - 1``."""
    ctx = params.config.context_length
    prefixes = []
    for ego in egos:
        seq = encode_instance(vocab, index.history(ego, step - 1), ego, step, variant, ctx, deletions)
        prefixes.append(seq.prefix_ids())
    return _decode(params, vocab, egos, [step] * len(egos), prefixes, variant, cap, rank)


def _decode(params, vocab, egos, steps, prefixes, variant, cap, rank):
    if rank == "first_position":
        ranked = first_position_ranking(params, vocab, prefixes)
        return [RankedPrediction(e, s, nodes, scores, False) for e, s, (nodes, scores) in zip(egos, steps, ranked)]
    if rank != "generation":
        raise GenerationError(f"unknown ranking mode {rank!r}")
    results = generate_batch(params, prefixes, cap, stop_ids_for(vocab, variant))
    return [_to_prediction(vocab, e, s, *r) for e, s, r in zip(egos, steps, results)]


def predict_step(
    params: ModelParams,
    vocab: Vocabulary,
    index: EgoIndex,
    ego: str,
    step: int,
    variant: TokenVariant = CANONICAL,
    cap: int = DEFAULT_CAP,
) -> RankedPrediction:
    return predict_steps(params, vocab, index, [ego], step, variant, cap)[0]


def multi_step_batch(
    params: ModelParams,
    vocab: Vocabulary,
    index: EgoIndex,
    egos: Sequence[str],
    start_step: int,
    horizon: int,
    variant: TokenVariant = CANONICAL,
    cap: int = DEFAULT_CAP,
) -> list[list[RankedPrediction]]:
    """Roll predictions forward ``horizon`` steps from ``start_step``.

    Step ``start_step + j`` conditions on the real history through
    ``start_step - 1`` plus the generated nodes of the earlier rollout
    steps, appended as ordinary history interactions.
    """
    if horizon < 1:
        raise GenerationError("horizon must be >= 1")
    last = start_step + horizon - 1
    if last > vocab.max_step:
        from .graph import ConfigError

        raise ConfigError(
            f"rollout to step {last} needs reserved temporal tokens; vocabulary stops at {vocab.max_step}"
        )
    ctx = params.config.context_length
    hist = {e: list(index.history(e, start_step - 1)) for e in egos}
    out: list[list[RankedPrediction]] = [[] for _ in egos]
    for j in range(horizon):
        step = start_step + j
        prefixes = [
            encode_instance(vocab, hist[e], e, step, variant, ctx).prefix_ids() for e in egos
        ]
        preds = _decode(params, vocab, egos, [step] * len(egos), prefixes, variant, cap, "generation")
        for i, (e, pr) in enumerate(zip(egos, preds)):
            out[i].append(pr)
            # generated nodes become history of this step, in generation order
            for r, node in enumerate(pr.nodes):
                hist[e].append(Interaction(node, step, float(step) + r * 1e-6, Op.ADD))
    return out


def multi_step(
    params: ModelParams,
    vocab: Vocabulary,
    index: EgoIndex,
    ego: str,
    start_step: int,
    horizon: int,
    variant: TokenVariant = CANONICAL,
    cap: int = DEFAULT_CAP,
) -> list[RankedPrediction]:
    return multi_step_batch(params, vocab, index, [ego], start_step, horizon, variant, cap)[0]


def format_predictions(preds: Sequence[RankedPrediction]) -> str:
    return "".join(p.format() + "\n" for p in preds)
