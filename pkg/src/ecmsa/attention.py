"""Channel attention (eSE) and the efficient cross-modal self-attention block.

Shapes follow the ops convention: visual maps are ``(C, H, W)`` or
``(B, C, H, W)``; sentence vectors are ``(D,)`` or ``(B, D)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import ops
from .errors import NumericError, ShapeError, ValidationError
from .rng import Rng
from .tensor import Tensor, as_tensor

SCALES = ("inv-sqrt-d", "none")


@dataclass
class EseParams:
    w: Tensor  # (C, C)
    b: Tensor  # (C,)

    def __post_init__(self):
        c = self.w.shape[0]
        if self.w.shape != (c, c) or self.b.shape != (c,):
            raise ShapeError(f"eSE weight {self.w.shape} / bias {self.b.shape} are not (C, C) / (C,)")

    @property
    def channels(self) -> int:
        return self.w.shape[0]


@dataclass
class EcmsaParams:
    w_text: Tensor  # (C, D)
    b_text: Tensor  # (C,)
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    ese_pre: EseParams
    ese_post: EseParams

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def d_text(self) -> int:
        return self.w_text.shape[1]

    def named(self) -> dict:
        return {
            "w_text": self.w_text, "b_text": self.b_text,
            "w_q": self.w_q, "w_k": self.w_k, "w_v": self.w_v,
            "ese_pre/w": self.ese_pre.w, "ese_pre/b": self.ese_pre.b,
            "ese_post/w": self.ese_post.w, "ese_post/b": self.ese_post.b,
        }

    @classmethod
    def from_named(cls, d: dict) -> "EcmsaParams":
        return cls(d["w_text"], d["b_text"], d["w_q"], d["w_k"], d["w_v"],
                   EseParams(d["ese_pre/w"], d["ese_pre/b"]),
                   EseParams(d["ese_post/w"], d["ese_post/b"]))

    def num_params(self) -> int:
        return sum(t.size for t in self.named().values())


@dataclass(frozen=True)
class EcmsaConfig:
    use_ese: bool = True
    use_residual: bool = True
    attn_scale: str = "inv-sqrt-d"

    def __post_init__(self):
        if self.attn_scale not in SCALES:
            raise ValidationError(f"attn_scale must be one of {SCALES}, got {self.attn_scale!r}")

    def with_ablation(self, ablation: str) -> "EcmsaConfig":
        if ablation == "no-ese":
            return replace(self, use_ese=False)
        if ablation == "no-res":
            return replace(self, use_residual=False)
        return self


@dataclass
class EcmsaActivations:
    f_fused: Tensor
    q: Tensor
    k: Tensor
    v: Tensor
    attn: Tensor
    v_hat: Tensor
    out: Tensor
    extras: dict = field(default_factory=dict)


def ese_forward(x, p: EseParams) -> Tensor:
    """Gate channels by ``sigmoid(W avgpool(x) + b)``; one FC layer, no bottleneck."""
    x = as_tensor(x)
    if x.ndim < 3 or x.shape[-3] != p.channels:
        raise ShapeError(f"eSE with {p.channels} channels cannot gate input {x.shape}")
    s = ops.sigmoid(ops.linear(ops.pool_avg_global(x), p.w, p.b))
    return ops.mul_channel(x, s)


def ecmsa_forward(v_in, f2, p: EcmsaParams, cfg: EcmsaConfig = EcmsaConfig()):
    """Fuse a visual map with a sentence vector; returns ``(out, activations)``.

    1. ``t = W_t f2 + b_t`` is broadcast over space and multiplied into ``v_in``.
    2. eSE on the fused map (skipped when ``use_ese`` is false).
    3. Positions become ``N = H*W`` rows of C features; ``q, k, v`` are 1x1
       projections of those rows.
    4. ``attn = softmax(q k^T * scale)`` over keys, ``scale = 1/sqrt(C)`` or 1.
    5. ``v_hat = attn v`` reshaped back to ``(C, H, W)``, then eSE again.
    6. ``out = v_in + v_hat`` with the residual, else ``v_hat``.
    """
    v_in = as_tensor(v_in)
    f2 = as_tensor(getattr(f2, "values", f2))
    if v_in.ndim not in (3, 4):
        raise ShapeError(f"eCMSA expects (C, H, W) or (B, C, H, W), got {v_in.shape}")
    c, h, w = v_in.shape[-3:]
    if c != p.channels:
        raise ShapeError(f"eCMSA block has {p.channels} channels, input has {c}")
    if f2.shape[-1] != p.d_text:
        raise ShapeError(f"text vector has dim {f2.shape[-1]}, block expects {p.d_text}")
    batched = v_in.ndim == 4
    if batched and f2.shape != (v_in.shape[0], p.d_text):
        raise ShapeError(f"batched input needs text of shape ({v_in.shape[0]}, {p.d_text}), got {f2.shape}")
    if not batched and f2.ndim != 1:
        raise ShapeError(f"unbatched input needs a 1-D text vector, got {f2.shape}")

    t = ops.linear(f2, p.w_text, p.b_text)
    fused = ops.mul_channel(v_in, t)
    if cfg.use_ese:
        fused = ese_forward(fused, p.ese_pre)

    n = h * w
    lead = v_in.shape[:-3]
    rows = ops.transpose(ops.reshape(fused, lead + (c, n)))  # (..., N, C)
    q = ops.linear(rows, p.w_q)
    k = ops.linear(rows, p.w_k)
    v = ops.linear(rows, p.w_v)
    logits = ops.matmul(q, ops.transpose(k))
    if cfg.attn_scale == "inv-sqrt-d":
        logits = ops.scale(logits, 1.0 / math.sqrt(c))
    attn = ops.softmax_rows(logits)
    if not np.isfinite(attn.data).all():
        raise NumericError("non-finite attention weights")
    v_hat_rows = ops.matmul(attn, v)
    v_hat = ops.reshape(ops.transpose(v_hat_rows), v_in.shape)
    if cfg.use_ese:
        v_hat = ese_forward(v_hat, p.ese_post)
    out = ops.add(v_in, v_hat) if cfg.use_residual else v_hat
    return out, EcmsaActivations(fused, q, k, v, attn, v_hat, out)


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def _xavier(rng: Rng, shape, fan_in, fan_out) -> Tensor:
    a = xavier_bound(fan_in, fan_out)
    return Tensor(rng.uniform(-a, a, shape), requires_grad=True)


def init_params(c: int, d_text: int, rng: Rng) -> EcmsaParams:
    """Xavier-uniform weights and zero biases; each tensor draws from its own substream."""
    if c < 1 or d_text < 1:
        raise ValidationError("channel count and text dim must be positive")

    def sq(key):
        return _xavier(rng.split(key), (c, c), c, c)

    def zeros(n):
        return Tensor(np.zeros(n), requires_grad=True)

    return EcmsaParams(
        w_text=_xavier(rng.split("w_text"), (c, d_text), d_text, c),
        b_text=zeros(c),
        w_q=sq("w_q"), w_k=sq("w_k"), w_v=sq("w_v"),
        ese_pre=EseParams(sq("ese_pre/w"), zeros(c)),
        ese_post=EseParams(sq("ese_post/w"), zeros(c)),
    )


def num_params(c: int, d_text: int) -> int:
    """Closed-form parameter count of one block."""
    return c * d_text + c + 3 * c * c + 2 * (c * c + c)
