"""Dense float64 kernels with reverse-mode gradients.

Every primitive takes and returns :class:`Var` objects. When at least one
input requires a gradient, the primitive appends a backward closure to the
input's :class:`Tape`; :meth:`Tape.backward` replays those closures in reverse
order exactly once. Without a tape the same functions act as a plain numpy
forward pass, which is what inference uses.

Arrays may carry leading batch dimensions; "rows" always means the last axis.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

# Additive mask sentinel: exp(MASKED - max) underflows to exactly 0.0.
MASKED = -1e300


class TapeError(RuntimeError):
    pass


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered record of backward closures for one forward pass."""

    def __init__(self) -> None:
        self._records: list[Callable[[], None]] = []
        self._consumed = False

    def __len__(self) -> int:
        return len(self._records)

    def record(self, fn: Callable[[], None]) -> None:
        if self._consumed:
            raise TapeError("tape already replayed; start a new forward pass")
        self._records.append(fn)

    def var(self, value, requires_grad: bool = True) -> "Var":
        return Var(value, tape=self if requires_grad else None)

    def backward(self, out: "Var") -> None:
        if self._consumed:
            raise TapeError("tape already replayed")
        if out.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {out.value.shape}")
        self._consumed = True
        out.grad = np.ones_like(out.value)
        for fn in reversed(self._records):
            fn()
        self._records.clear()


class Var:
    __slots__ = ("value", "grad", "tape")

    def __init__(self, value, tape: Tape | None = None) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _acc(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Var(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(value) -> Var:
    return Var(value)


def _tape_of(*xs: Var | None) -> Tape | None:
    tape = None
    for x in xs:
        if x is not None and x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise TapeError("inputs recorded on different tapes")
            tape = x.tape
    return tape


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{name}: non-finite values in output")


def affine(H: Var, W: Var, b: Var | None = None) -> Var:
    """``H @ W (+ b)`` with ``b`` broadcast over rows."""
    if H.shape[-1] != W.shape[0] or W.value.ndim != 2:
        raise ShapeError(f"affine: cannot multiply {H.shape} by {W.shape}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} does not match {W.shape}")
    val = H.value @ W.value
    if b is not None:
        val = val + b.value
    tape = _tape_of(H, W, b)
    out = Var(val, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if H.requires_grad:
                H._acc(g @ W.value.T)
            if W.requires_grad:
                h2 = H.value.reshape(-1, H.shape[-1])
                W._acc(h2.T @ g.reshape(-1, g.shape[-1]))
            if b is not None and b.requires_grad:
                b._acc(g.reshape(-1, g.shape[-1]).sum(axis=0))

        tape.record(backward)
    return out


def matmul(A: Var, B: Var, transpose_b: bool = False) -> Var:
    """Batched ``A @ B`` (or ``A @ B^T``) over matching leading dimensions."""
    bv = np.swapaxes(B.value, -1, -2) if transpose_b else B.value
    if A.shape[-1] != bv.shape[-2] or A.shape[:-2] != bv.shape[:-2]:
        raise ShapeError(f"matmul: cannot multiply {A.shape} by {bv.shape}")
    tape = _tape_of(A, B)
    out = Var(A.value @ bv, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if A.requires_grad:
                A._acc(g @ np.swapaxes(bv, -1, -2))
            if B.requires_grad:
                gb = np.swapaxes(A.value, -1, -2) @ g
                B._acc(np.swapaxes(gb, -1, -2) if transpose_b else gb)

        tape.record(backward)
    return out


def add(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    out = Var(a.value + b.value, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a._acc(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._acc(_unbroadcast(g, b.shape))

        tape.record(backward)
    return out


def scale(x: Var, c: float) -> Var:
    tape = _tape_of(x)
    out = Var(x.value * c, tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._acc(out.grad * c)

        tape.record(backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Var) -> Var:
    """tanh-approximated GELU."""
    v = x.value
    v2 = v * v
    inner = _GELU_C * v * (1.0 + 0.044715 * v2)
    t = np.tanh(inner)
    tape = _tape_of(x)
    out = Var(0.5 * v * (1.0 + t), tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is None:
                return
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * v2)
            d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t**2) * dinner
            x._acc(out.grad * d)

        tape.record(backward)
    return out


def softmax_rows(S: Var, mask: np.ndarray | None = None) -> Var:
    """Row-wise softmax; ``mask`` is boolean with True meaning *allowed*.

    Masked entries receive probability exactly 0. A row with no allowed
    entry raises ``ValueError``.
    """
    s = S.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            allowed = np.broadcast_to(mask, s.shape)
        except ValueError:
            raise ShapeError(f"softmax_rows: mask {mask.shape} vs scores {s.shape}") from None
        if not np.all(allowed.any(axis=-1)):
            raise ValueError("softmax_rows: fully masked row")
        s = np.where(allowed, s, MASKED)
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    tape = _tape_of(S)
    out = Var(p, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            S._acc(p * (g - (g * p).sum(axis=-1, keepdims=True)))

        tape.record(backward)
    return out


def layer_norm_rows(H: Var, gain: Var, bias: Var, eps: float = 1e-5) -> Var:
    """Per-row normalization with population variance, then ``* gain + bias``."""
    if eps <= 0:
        raise ValueError("layer_norm_rows: eps must be positive")
    d = H.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm_rows: gain/bias {gain.shape}/{bias.shape} for width {d}")
    h = H.value
    mu = h.mean(axis=-1, keepdims=True)
    xc = h - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    tape = _tape_of(H, gain, bias)
    out = Var(xhat * gain.value + bias.value, tape)
    if tape is not None:

        def backward() -> None:
            g = out.grad
            if g is None:
                return
            if gain.requires_grad:
                gain._acc((g * xhat).reshape(-1, d).sum(axis=0))
            if bias.requires_grad:
                bias._acc(g.reshape(-1, d).sum(axis=0))
            if H.requires_grad:
                gx = g * gain.value
                H._acc(
                    inv
                    * (
                        gx
                        - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                    )
                )

        tape.record(backward)
    return out


def gather_embed(ids, E: Var) -> Var:
    """Row lookup ``E[ids]``; the backward pass scatter-adds into ``E``."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= E.shape[0]):
        raise IndexError(f"gather_embed: id out of range for table with {E.shape[0]} rows")
    out = Var(E.value[idx].reshape(idx.shape + (E.shape[1],)), _tape_of(E))
    if E.requires_grad:

        def backward() -> None:
            if out.grad is None:
                return
            dE = np.zeros_like(E.value)
            np.add.at(dE, idx.reshape(-1), out.grad.reshape(-1, E.shape[1]))
            E._acc(dE)

        E.tape.record(backward)
    return out


def split_heads(X: Var, heads: int) -> Var:
    """(..., N, d) -> (..., heads, N, d/heads)."""
    *lead, n, d = X.shape
    if d % heads:
        raise ShapeError(f"split_heads: width {d} not divisible by {heads}")
    dk = d // heads
    nl = len(lead)
    perm = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    val = X.value.reshape(*lead, n, heads, dk).transpose(perm)
    tape = _tape_of(X)
    out = Var(val, tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                X._acc(out.grad.transpose(perm).reshape(X.shape))

        tape.record(backward)
    return out


def merge_heads(X: Var) -> Var:
    """(..., heads, N, dk) -> (..., N, heads*dk); inverse of :func:`split_heads`."""
    *lead, heads, n, dk = X.shape
    nl = len(lead)
    perm = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    val = X.value.transpose(perm).reshape(*lead, n, heads * dk)
    tape = _tape_of(X)
    out = Var(val, tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                g = out.grad.reshape(*lead, n, heads, dk).transpose(perm)
                X._acc(g)

        tape.record(backward)
    return out


def cross_entropy_next_token(logits: Var, targets, ignore: int | None = None) -> Var:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    For a 2-D ``(N, V)`` input this is the mean over positions whose target
    is not ``ignore``. A 3-D ``(B, N, V)`` input is treated as ``B``
    independent instances: each instance's mean is taken first, then the
    mean over instances with at least one counted position.
    """
    lv = logits.value
    tg = np.asarray(targets, dtype=np.int64)
    if tg.shape != lv.shape[:-1]:
        raise ShapeError(f"cross_entropy: targets {tg.shape} vs logits {lv.shape}")
    keep = np.ones(tg.shape, dtype=bool) if ignore is None else tg != ignore
    if np.any(tg[keep] >= lv.shape[-1]) or np.any(tg[keep] < 0):
        raise IndexError(f"cross_entropy: target id out of range for {lv.shape[-1]} classes")
    batched = lv.ndim == 3
    l3 = lv if batched else lv[None]
    t3 = np.where(keep, tg, 0) if batched else np.where(keep, tg, 0)[None]
    k3 = keep if batched else keep[None]

    z = l3 - l3.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    total = ez.sum(axis=-1, keepdims=True)
    logp = z - np.log(total)
    picked = np.take_along_axis(logp, t3[..., None], axis=-1)[..., 0]
    counts = k3.sum(axis=-1)
    live = counts > 0
    if not np.any(live):
        raise ValueError("cross_entropy: every position is ignored")
    # weight of each position in the final mean
    w = np.where(k3, 1.0, 0.0) / np.where(live, counts, 1)[:, None] / live.sum()
    loss = -(picked * w).sum()
    tape = _tape_of(logits)
    out = Var(loss, tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is None:
                return
            g = ez / total
            np.put_along_axis(g, t3[..., None], np.take_along_axis(g, t3[..., None], axis=-1) - 1.0, axis=-1)
            g *= w[..., None] * out.grad
            logits._acc(g if batched else g[0])

        tape.record(backward)
    return out


def sum_all(x: Var) -> Var:
    tape = _tape_of(x)
    out = Var(x.value.sum(), tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._acc(np.broadcast_to(out.grad, x.shape))

        tape.record(backward)
    return out


def weighted_sum(x: Var, weights: np.ndarray) -> Var:
    """Scalar ``sum(x * weights)``; handy as a probe in gradient checks."""
    weights = np.asarray(weights, dtype=np.float64)
    tape = _tape_of(x)
    out = Var((x.value * weights).sum(), tape)
    if tape is not None:

        def backward() -> None:
            if out.grad is not None:
                x._acc(weights * out.grad)

        tape.record(backward)
    return out


def numeric_grad(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    h: float = 1e-5,
) -> list[np.ndarray]:
    """Central finite differences of scalar ``f`` w.r.t. each array in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f(arrays)
            a[i] = old - h
            fm = f(arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Largest absolute difference divided by the larger of the two max magnitudes."""
    num = np.max(np.abs(a - b)) if a.size else 0.0
    den = max(np.max(np.abs(a)) if a.size else 0.0, np.max(np.abs(b)) if b.size else 0.0, 1e-8)
    return float(num / den)
