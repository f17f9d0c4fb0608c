"""Vocabulary and ego-sequence encoding with temporal alignment tokens.

Canonical layout for an ego ``a`` whose target step is ``K``::

    input : <|hist|> a <|time1|> S1 ... <|timeK-1|> S(K-1) <|endofhist|>
    target: <|pred|> <|timeK|> SK <|endofpred|>

Training instances additionally end with ``<|endoftext|>``. Ablation
variants swap or drop the structural and temporal tokens.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .graph import ConfigError, Interaction, Op, TemporalGraph

HIST = "<|hist|>"
ENDOFHIST = "<|endofhist|>"
PRED = "<|pred|>"
ENDOFPRED = "<|endofpred|>"
ENDOFTEXT = "<|endoftext|>"
DEL = "[del]"
PAD = "[pad]"
SPECIALS = (HIST, ENDOFHIST, PRED, ENDOFPRED, ENDOFTEXT, DEL, PAD)


def time_symbol(t: int) -> str:
    return f"<|time{t}|>"


class TokenError(ValueError):
    pass


class SpecialMode(str, Enum):
    DISTINCT = "distinct"
    SAME = "same"  # input delimiters reused around the target
    NONE = "none"


class TemporalMode(str, Enum):
    DISTINCT = "distinct"
    SAME = "same"  # every step marked with <|time1|>
    NONE = "none"


@dataclass(frozen=True)
class TokenVariant:
    special: SpecialMode = SpecialMode.DISTINCT
    temporal: TemporalMode = TemporalMode.DISTINCT

    @classmethod
    def parse(cls, special: str, temporal: str) -> "TokenVariant":
        return cls(SpecialMode(special), TemporalMode(temporal))

    @property
    def name(self) -> str:
        return f"{self.special.value}/{self.temporal.value}"

    @property
    def open_in(self) -> str | None:
        return None if self.special is SpecialMode.NONE else HIST

    @property
    def close_in(self) -> str | None:
        return None if self.special is SpecialMode.NONE else ENDOFHIST

    @property
    def open_out(self) -> str | None:
        return {SpecialMode.DISTINCT: PRED, SpecialMode.SAME: HIST, SpecialMode.NONE: None}[self.special]

    @property
    def close_out(self) -> str | None:
        return {SpecialMode.DISTINCT: ENDOFPRED, SpecialMode.SAME: ENDOFHIST, SpecialMode.NONE: None}[
            self.special
        ]

    def time_token(self, t: int) -> str | None:
        if self.temporal is TemporalMode.NONE:
            return None
        return time_symbol(1 if self.temporal is TemporalMode.SAME else t)


CANONICAL = TokenVariant()
ALL_VARIANTS = tuple(TokenVariant(s, t) for s in SpecialMode for t in TemporalMode)


class Vocabulary:
    """Node tokens first (graph order), then the 7 specials, then temporal tokens."""

    def __init__(self, nodes: Sequence[str], num_steps: int, extra_steps: int = 0):
        if num_steps < 2:
            raise ConfigError(f"need at least 2 time steps, got {num_steps}")
        if extra_steps < 0:
            raise ConfigError("extra_steps must be >= 0")
        self.num_steps = num_steps
        self.extra_steps = extra_steps
        temporals = [time_symbol(t) for t in range(1, num_steps + extra_steps + 1)]
        reserved = set(SPECIALS) | set(temporals)
        clash = [n for n in nodes if n in reserved]
        if clash:
            raise TokenError(f"node ids collide with reserved tokens: {clash[:3]}")
        self.symbols: list[str] = list(nodes) + list(SPECIALS) + temporals
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise TokenError("duplicate node ids")
        self.num_nodes = len(nodes)

    @classmethod
    def build(cls, g: TemporalGraph, T: int, extra_steps: int = 0) -> "Vocabulary":
        return cls(g.nodes, T, extra_steps)

    def __len__(self) -> int:
        return len(self.symbols)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.symbols == other.symbols

    def __getitem__(self, symbol: str) -> int:
        try:
            return self.index[symbol]
        except KeyError:
            raise TokenError(f"unknown token {symbol!r}") from None

    @property
    def max_step(self) -> int:
        return self.num_steps + self.extra_steps

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def eot_id(self) -> int:
        return self.index[ENDOFTEXT]

    def is_node(self, i: int) -> bool:
        return 0 <= i < self.num_nodes

    def node_id(self, node: str) -> int:
        i = self[node]
        if not self.is_node(i):
            raise TokenError(f"{node!r} is not a node token")
        return i

    def encode(self, symbols: Iterable[str]) -> list[int]:
        return [self[s] for s in symbols]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return decode_tokens(ids, self)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.symbols).encode()).hexdigest()[:16]


def build_vocab(g: TemporalGraph, T: int, extra_steps: int = 0) -> Vocabulary:
    return Vocabulary.build(g, T, extra_steps)


def decode_tokens(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab.symbols):
            raise TokenError(f"token id {i} out of range for vocabulary of {len(vocab)}")
        out.append(vocab.symbols[i])
    return out


@dataclass(frozen=True)
class TokenSequence:
    input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    ego: str
    variant: TokenVariant
    target_step: int

    def __len__(self) -> int:
        return len(self.input_ids) + len(self.target_ids)

    def symbols(self, vocab: Vocabulary) -> tuple[list[str], list[str]]:
        return decode_tokens(self.input_ids, vocab), decode_tokens(self.target_ids, vocab)

    def prefix_ids(self) -> list[int]:
        """Input plus the target's leading structural tokens: the generation prompt."""
        prefix = list(self.input_ids)
        opened = _leading_structure(self.variant)
        prefix.extend(self.target_ids[:opened])
        return prefix


def _leading_structure(variant: TokenVariant) -> int:
    return (variant.open_out is not None) + (variant.temporal is not TemporalMode.NONE)


def _step_segment(items: Sequence[Interaction], deletions: bool) -> list[list[str]]:
    """Per interaction its token group: [node] or [[del], node]."""
    groups = []
    for it in items:
        if it.op is Op.DELETE:
            if deletions:
                groups.append([DEL, it.neighbor])
        else:
            groups.append([it.neighbor])
    return groups


def minimum_length(target_step: int, variant: TokenVariant, training: bool = True) -> int:
    """Structural tokens plus the ego token for a given target step."""
    n = 1 + (4 if variant.special is not SpecialMode.NONE else 0)
    if variant.temporal is not TemporalMode.NONE:
        n += target_step
    return n + (1 if training else 0)


def encode_instance(
    vocab: Vocabulary,
    history: Sequence[Interaction],
    ego: str,
    target_step: int,
    variant: TokenVariant = CANONICAL,
    context_length: int = 1024,
    deletions: bool = False,
) -> TokenSequence:
    """Encode ``history`` (steps <= target_step) into input/target ids.

    Interactions at ``target_step`` form the target; earlier ones the input.
    One slot of ``context_length`` is reserved for ``<|endoftext|>``. When
    the sequence is too long the oldest node tokens are dropped first (input
    history, then the tail of the target); the ego and all structural tokens
    are always kept. Deletion events are dropped unless ``deletions`` is set.
    """
    if target_step < 2:
        raise TokenError("target_step must be >= 2 (no history before step 1)")
    if target_step > vocab.max_step:
        raise ConfigError(f"target_step {target_step} exceeds reserved temporal tokens ({vocab.max_step})")
    if context_length < minimum_length(target_step, variant):
        raise ConfigError(
            f"context_length {context_length} below structural minimum "
            f"{minimum_length(target_step, variant)} for step {target_step}"
        )
    by_step: dict[int, list[Interaction]] = {t: [] for t in range(1, target_step + 1)}
    for it in history:
        if it.step > target_step or it.step < 1:
            raise TokenError(f"interaction at step {it.step} outside 1..{target_step}")
        by_step[it.step].append(it)
    for items in by_step.values():
        items.sort(key=lambda it: it.time)  # stable: input order on ties

    hist_groups = {t: _step_segment(by_step[t], deletions) for t in range(1, target_step)}
    tgt_groups = _step_segment(by_step[target_step], deletions)

    budget = context_length - 1
    structural = minimum_length(target_step, variant, training=False)
    n_nodes = sum(len(g) for gs in hist_groups.values() for g in gs) + sum(len(g) for g in tgt_groups)
    excess = structural + n_nodes - budget
    for t in range(1, target_step):
        while excess > 0 and hist_groups[t]:
            excess -= len(hist_groups[t].pop(0))
    while excess > 0 and tgt_groups:
        excess -= len(tgt_groups.pop())

    inp: list[str] = []
    if variant.open_in:
        inp.append(variant.open_in)
    inp.append(ego)
    for t in range(1, target_step):
        tok = variant.time_token(t)
        if tok:
            inp.append(tok)
        for g in hist_groups[t]:
            inp.extend(g)
    if variant.close_in:
        inp.append(variant.close_in)

    out: list[str] = []
    if variant.open_out:
        out.append(variant.open_out)
    tok = variant.time_token(target_step)
    if tok:
        out.append(tok)
    for g in tgt_groups:
        out.extend(g)
    if variant.close_out:
        out.append(variant.close_out)

    return TokenSequence(tuple(vocab.encode(inp)), tuple(vocab.encode(out)), ego, variant, target_step)


def format_corpus(seqs: Iterable[TokenSequence], vocab: Vocabulary, eot: bool = True) -> str:
    lines = []
    for s in seqs:
        syms = decode_tokens(s.input_ids + s.target_ids, vocab)
        if eot:
            syms.append(ENDOFTEXT)
        lines.append(" ".join(syms))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_corpus(text: str, vocab: Vocabulary) -> list[list[int]]:
    return [vocab.encode(line.split()) for line in text.splitlines() if line.strip()]
