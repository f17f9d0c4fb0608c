"""Decoder-only post-LN Transformer over token ids, built on :mod:`simpledyg.tensor`."""

from __future__ import annotations

import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np

from . import tensor as tc
from .tensor import Tape, Var

CHECKPOINT_MAGIC = b"SDYG1\n"


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 2
    d_model: int = 128
    d_ff: int | None = None  # defaults to 4 * d_model
    context_length: int = 1024
    seed: int = 0
    init_std: float = 0.02
    ln_eps: float = 1e-5
    dropout: float = 0.0
    position: str = "learned"  # "learned" | "sinusoidal"

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.layers < 1:
            raise ModelConfigError("layers must be >= 1")
        if self.heads < 1 or self.d_model % self.heads:
            raise ModelConfigError(f"d_model={self.d_model} not divisible by heads={self.heads}")
        if self.context_length < 8:
            raise ModelConfigError("context_length must be >= 8")
        if self.vocab_size < 1:
            raise ModelConfigError("vocab_size must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError("dropout must lie in [0, 1)")
        if self.position not in ("learned", "sinusoidal"):
            raise ModelConfigError(f"unknown position encoding {self.position!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads


def _layer_names(l: int) -> list[str]:
    p = f"layer{l}."
    return [p + n for n in ("wq", "wk", "wv", "wo", "ln1.gain", "ln1.bias",
                            "ff1.w", "ff1.b", "ff2.w", "ff2.b", "ln2.gain", "ln2.bias")]


def sinusoidal_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.arrays.values())


def init_model(
    cfg: ModelConfig,
    features: Mapping[int, np.ndarray] | None = None,
) -> ModelParams:
    """Seeded N(0, init_std^2) weights, unit LN gains, zero biases.

    ``features`` maps token ids to feature vectors; those rows of the token
    embedding become a seeded random projection of the features.
    """
    root = np.random.SeedSequence(cfg.seed)
    weight_seed, proj_seed = root.spawn(2)
    rng = np.random.default_rng(weight_seed)
    d, V, s = cfg.d_model, cfg.vocab_size, cfg.init_std

    def normal(*shape):
        return rng.normal(0.0, s, size=shape)

    a: dict[str, np.ndarray] = {"tok_emb": normal(V, d)}
    if cfg.position == "learned":
        a["pos_emb"] = normal(cfg.context_length, d)
    for l in range(cfg.layers):
        p = f"layer{l}."
        for w in ("wq", "wk", "wv", "wo"):
            a[p + w] = normal(d, d)
        a[p + "ln1.gain"], a[p + "ln1.bias"] = np.ones(d), np.zeros(d)
        a[p + "ff1.w"], a[p + "ff1.b"] = normal(d, cfg.d_ff), np.zeros(cfg.d_ff)
        a[p + "ff2.w"], a[p + "ff2.b"] = normal(cfg.d_ff, d), np.zeros(d)
        a[p + "ln2.gain"], a[p + "ln2.bias"] = np.ones(d), np.zeros(d)
    a["ln_f.gain"], a["ln_f.bias"] = np.ones(d), np.zeros(d)
    a["head"] = normal(d, V)

    if features:
        dims = {np.asarray(v).shape for v in features.values()}
        if len(dims) != 1:
            raise ModelConfigError(f"feature vectors have mixed shapes {sorted(dims)}")
        (F,) = dims.pop()
        proj = feature_projection(proj_seed, F, d, s)
        for tok, vec in features.items():
            if not 0 <= tok < V:
                raise ModelConfigError(f"feature for out-of-range token {tok}")
            a["tok_emb"][tok] = np.asarray(vec, dtype=np.float64) @ proj
    return ModelParams(cfg, a)


def feature_projection(seed, F: int, d: int, scale: float = 0.02) -> np.ndarray:
    """Random F->d map; rows of unit-scale features land near the init scale."""
    return np.random.default_rng(seed).normal(0.0, scale / math.sqrt(F), size=(F, d))


def causal_mask(n: int) -> np.ndarray:
    return np.tril(np.ones((n, n), dtype=bool))


class Forward:
    """One forward pass; holds the tape and parameter Vars when training."""

    def __init__(self, params: ModelParams, train: bool = False, rng: np.random.Generator | None = None):
        self.params = params
        self.cfg = params.config
        self.tape = Tape() if train else None
        self.vars = {k: Var(v, self.tape) for k, v in params.arrays.items()}
        self.rng = rng
        self.train = train

    def _dropout(self, x: Var) -> Var:
        if not self.train or self.cfg.dropout == 0.0:
            return x
        keep = (self.rng.random(x.shape) >= self.cfg.dropout) / (1.0 - self.cfg.dropout)
        return multiply_const(x, keep)

    def attention(self, H: Var, l: int, mask: np.ndarray) -> Var:
        p, v, cfg = f"layer{l}.", self.vars, self.cfg
        q = tc.split_heads(tc.affine(H, v[p + "wq"]), cfg.heads)
        k = tc.split_heads(tc.affine(H, v[p + "wk"]), cfg.heads)
        val = tc.split_heads(tc.affine(H, v[p + "wv"]), cfg.heads)
        scores = tc.scale(tc.matmul(q, k, transpose_b=True), 1.0 / math.sqrt(cfg.head_dim))
        probs = self._dropout(tc.softmax_rows(scores, mask))
        heads = tc.merge_heads(tc.matmul(probs, val))
        return tc.affine(heads, v[p + "wo"])

    def ffn(self, H: Var, l: int) -> Var:
        p, v = f"layer{l}.", self.vars
        return tc.affine(tc.gelu(tc.affine(H, v[p + "ff1.w"], v[p + "ff1.b"])), v[p + "ff2.w"], v[p + "ff2.b"])

    def block(self, H: Var, l: int, mask: np.ndarray) -> Var:
        p, v, eps = f"layer{l}.", self.vars, self.cfg.ln_eps
        att = self._dropout(self.attention(H, l, mask))
        Hh = tc.layer_norm_rows(tc.add(H, att), v[p + "ln1.gain"], v[p + "ln1.bias"], eps)
        ff = self._dropout(self.ffn(Hh, l))
        return tc.layer_norm_rows(tc.add(Hh, ff), v[p + "ln2.gain"], v[p + "ln2.bias"], eps)

    def embed(self, ids: np.ndarray) -> Var:
        n = ids.shape[-1]
        tok = tc.gather_embed(ids, self.vars["tok_emb"])
        if self.cfg.position == "learned":
            pos = tc.gather_embed(np.arange(n), self.vars["pos_emb"])
        else:
            pos = tc.constant(sinusoidal_table(n, self.cfg.d_model))
        return self._dropout(tc.add(tok, pos))

    def hidden(self, ids) -> Var:
        ids = np.asarray(ids, dtype=np.int64)
        n = ids.shape[-1]
        if n > self.cfg.context_length:
            raise ValueError(f"sequence of {n} tokens exceeds context_length {self.cfg.context_length}")
        if n == 0:
            raise ValueError("empty sequence")
        if ids.min() < 0 or ids.max() >= self.cfg.vocab_size:
            raise IndexError(f"token id out of range for vocab_size {self.cfg.vocab_size}")
        mask = causal_mask(n)
        H = self.embed(ids)
        for l in range(self.cfg.layers):
            H = self.block(H, l, mask)
        return H

    def logits(self, ids) -> Var:
        H = self.hidden(ids)
        v = self.vars
        Hf = tc.layer_norm_rows(H, v["ln_f.gain"], v["ln_f.bias"], self.cfg.ln_eps)
        return tc.affine(Hf, v["head"])

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (x.grad if x.grad is not None else np.zeros_like(x.value)) for k, x in self.vars.items()}


def multiply_const(x: Var, c: np.ndarray) -> Var:
    tape = x.tape
    out = Var(x.value * c, tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._acc(out.grad * c)

        tape.record(backward)
    return out


def forward(ids, params: ModelParams) -> np.ndarray:
    """Logits ``(..., N, V)``; row i scores the token at position i + 1."""
    return Forward(params).logits(ids).value


def loss_and_grads(
    params: ModelParams,
    ids: np.ndarray,
    targets: np.ndarray,
    ignore: int | None,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    fw = Forward(params, train=True, rng=rng)
    loss = tc.cross_entropy_next_token(fw.logits(ids), targets, ignore)
    fw.tape.backward(loss)
    return float(loss.value), fw.grads()


def save_checkpoint(path_or_buf, params: ModelParams, meta: Mapping | None = None) -> None:
    """``SDYG1`` header, one JSON metadata line, then raw little-endian float64 arrays."""
    names = params.names()
    header = {
        "config": asdict(params.config),
        "arrays": [{"name": n, "shape": list(params.arrays[n].shape)} for n in names],
        "meta": dict(meta or {}),
    }
    blob = io.BytesIO()
    blob.write(CHECKPOINT_MAGIC)
    blob.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for n in names:
        blob.write(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())
    data = blob.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(data)
    else:
        with open(path_or_buf, "wb") as f:
            f.write(data)


def load_checkpoint(path_or_buf) -> tuple[ModelParams, dict]:
    if hasattr(path_or_buf, "read"):
        data = path_or_buf.read()
    else:
        with open(path_or_buf, "rb") as f:
            data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError("not a SDYG1 checkpoint")
    nl = data.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(data[len(CHECKPOINT_MAGIC):nl])
    cfg = ModelConfig(**header["config"])
    offset = nl + 1
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape)
        arrays[spec["name"]] = arr.astype(np.float64)
        offset += 8 * count
    if offset != len(data):
        raise ValueError("trailing bytes in checkpoint")
    return ModelParams(cfg, arrays), header.get("meta", {})


def params_digest(params: ModelParams) -> str:
    h = hashlib.sha256()
    for n in params.names():
        h.update(n.encode())
        h.update(np.ascontiguousarray(params.arrays[n], dtype="<f8").tobytes())
    return h.hexdigest()
