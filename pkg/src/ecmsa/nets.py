"""Toy U-structure saliency networks with attachable eCMSA blocks.

Level numbering counts from the bottom up.  Level 1 is the bottleneck
feature map; level ``i >= 2`` is the decoder output ``i - 1`` steps above
it.  In ``mini-u2`` every encoder stage is a nested one-level U block
(conv in, down, bottom conv, up, fuse, residual add); ``in:i`` attaches at
the bottom of the i-th nested block from the bottom, ``out:i`` at outer
level ``i`` exactly as for ``unet``.

Attachment strings follow ``[in:<i|i-j>][|out:<i|i-j>]``; a bare ``i`` or
``i-j`` is read as ``in:``, and comma lists such as ``in:1,3`` are accepted.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ops
from .attention import EcmsaConfig, EcmsaParams, ecmsa_forward, init_params
from .errors import ShapeError, UsageError, ValidationError
from .rng import Rng
from .tensor import Tensor, as_tensor

ARCHS = ("unet", "mini-u2")


@dataclass(frozen=True)
class NetConfig:
    arch: str = "unet"
    depth: int = 3
    base_channels: int = 16
    input_size: int = 64
    d_text: int = 768
    # initial logit of the output heads; saliency masks are mostly background,
    # and starting at p = 0.5 makes the first optimizer steps overshoot
    head_bias: float = -2.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValidationError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.depth < 1 or self.base_channels < 1 or self.d_text < 1:
            raise ValidationError("depth, base_channels and d_text must be positive")
        if self.input_size % (2 ** self.depth):
            raise ValidationError(f"input_size {self.input_size} is not divisible by 2^{self.depth}")


@dataclass(frozen=True)
class AttachmentSpec:
    inner: frozenset = frozenset()
    outer: frozenset = frozenset()

    @property
    def empty(self) -> bool:
        return not self.inner and not self.outer

    def points(self) -> list:
        return [f"in:{i}" for i in sorted(self.inner)] + [f"out:{i}" for i in sorted(self.outer)]

    def __str__(self):
        parts = []
        for tag, levels in (("in", self.inner), ("out", self.outer)):
            if levels:
                parts.append(f"{tag}:" + _compress(levels))
        return "|".join(parts)


def _compress(levels) -> str:
    runs, out = [], []
    for i in sorted(levels):
        if runs and i == runs[-1][1] + 1:
            runs[-1][1] = i
        else:
            runs.append([i, i])
    for lo, hi in runs:
        out.append(str(lo) if lo == hi else f"{lo}-{hi}")
    return ",".join(out)


_RANGE = re.compile(r"^(\d+)(?:-(\d+))?$")


def _expand(text: str, source: str) -> frozenset:
    if "," in text:
        out = frozenset()
        for piece in text.split(","):
            out |= _expand(piece, source)
        return out
    m = _RANGE.match(text)
    if not m:
        raise ValidationError(f"malformed level range {text!r} in attachment {source!r}")
    lo = int(m.group(1))
    hi = int(m.group(2) or lo)
    if lo < 1 or hi < lo:
        raise ValidationError(f"invalid level range {text!r} in attachment {source!r}")
    return frozenset(range(lo, hi + 1))


def parse_attachment(s: str, depth: int | None = None) -> AttachmentSpec:
    s = (s or "").strip()
    inner, outer = frozenset(), frozenset()
    if s:
        seen = set()
        for part in s.split("|"):
            part = part.strip()
            tag, sep, rng = part.partition(":")
            if not sep:
                tag, rng = "in", part
            if tag not in ("in", "out") or tag in seen:
                raise ValidationError(f"malformed attachment {s!r}")
            seen.add(tag)
            levels = _expand(rng, s)
            if tag == "in":
                inner = levels
            else:
                outer = levels
    spec = AttachmentSpec(inner, outer)
    if depth is not None:
        top = max(spec.inner | spec.outer, default=0)
        if top > depth:
            raise ValidationError(f"attachment {s!r} uses level {top} beyond depth {depth}")
    return spec


@dataclass
class SaliencyOutput:
    mask: Tensor
    aux_masks: list = field(default_factory=list)


def _he_uniform(rng: Rng, shape) -> Tensor:
    fan_in = int(np.prod(shape[1:]))
    a = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-a, a, shape), requires_grad=True)


class Network:
    """Parameters live in ``self.params`` keyed by stable path strings."""

    def __init__(self, cfg: NetConfig, attach: AttachmentSpec, ecmsa_cfg: EcmsaConfig, rng: Rng):
        if cfg.arch == "unet" and attach.outer:
            raise ValidationError("unet has no outer/inner distinction; use in:<levels>")
        top = max(attach.inner | attach.outer, default=0)
        if top > cfg.depth:
            raise ValidationError(f"attachment level {top} exceeds depth {cfg.depth}")
        self.cfg = cfg
        self.attach = attach
        self.ecmsa_cfg = ecmsa_cfg
        self.params: dict = {}
        self.blocks: dict = {}
        self._rng = rng
        self._build()
        del self._rng

    # -- construction ------------------------------------------------------------

    def _conv(self, key, cin, cout, k=3, bias=0.0):
        self.params[f"{key}/w"] = _he_uniform(self._rng.split(f"{key}/w"), (cout, cin, k, k))
        self.params[f"{key}/b"] = Tensor(np.full(cout, float(bias)), requires_grad=True)

    def _block(self, point, channels):
        p = init_params(channels, self.cfg.d_text, self._rng.split(f"ecmsa/{point}"))
        self.blocks[point] = p
        for name, t in p.named().items():
            self.params[f"ecmsa/{point}/{name}"] = t

    def channels(self, level: int) -> int:
        """Channels of encoder level ``level`` (1 = top); ``depth + 1`` is the bottleneck."""
        return self.cfg.base_channels * 2 ** (level - 1)

    def _build(self):
        d = self.cfg.depth
        cin = 3
        for lvl in range(1, d + 1):
            c = self.channels(lvl)
            if self.cfg.arch == "unet":
                self._conv(f"enc{lvl}/conv1", cin, c)
                self._conv(f"enc{lvl}/conv2", c, c)
            else:
                m = max(c // 2, 1)
                self._conv(f"enc{lvl}/rsu/in", cin, c)
                self._conv(f"enc{lvl}/rsu/down", c, m)
                self._conv(f"enc{lvl}/rsu/bottom", m, m)
                self._conv(f"enc{lvl}/rsu/fuse", 2 * m, c)
                inner_level = d + 1 - lvl
                if inner_level in self.attach.inner:
                    self._block(f"in:{inner_level}", m)
            cin = c
        cb = self.channels(d + 1)
        self._conv("bottleneck/conv1", cin, cb)
        self._conv("bottleneck/conv2", cb, cb)
        outer = self.attach.inner if self.cfg.arch == "unet" else self.attach.outer
        tag = "in" if self.cfg.arch == "unet" else "out"
        if 1 in outer:
            self._block(f"{tag}:1", cb)
        below = cb
        for lvl in range(d, 0, -1):
            c = self.channels(lvl)
            self._conv(f"dec{lvl}/conv1", below + c, c)
            self._conv(f"dec{lvl}/conv2", c, c)
            point_level = d + 2 - lvl
            if point_level in outer:
                self._block(f"{tag}:{point_level}", c)
            if self.cfg.arch == "mini-u2" and lvl > 1:
                self._conv(f"side{lvl}", c, 1, k=1, bias=self.cfg.head_bias)
            below = c
        self._conv("head", below, 1, k=1, bias=self.cfg.head_bias)

    # -- inference -----------------------------------------------------------------

    def block_configs(self) -> dict:
        return {point: self.ecmsa_cfg for point in self.blocks}

    def num_params(self) -> int:
        return sum(t.size for t in self.params.values())

    def _attend(self, point, x, f2):
        if point not in self.blocks:
            return x
        out, _ = ecmsa_forward(x, f2, self.blocks[point], self.ecmsa_cfg)
        return out

    def _conv_relu(self, key, x):
        return ops.relu(ops.conv2d(x, self.params[f"{key}/w"], self.params[f"{key}/b"]))

    def _rsu(self, lvl, x, f2):
        key = f"enc{lvl}/rsu"
        hx = self._conv_relu(f"{key}/in", x)
        e1 = self._conv_relu(f"{key}/down", hx)
        bottom = self._conv_relu(f"{key}/bottom", ops.pool_max_2x2(e1))
        bottom = self._attend(f"in:{self.cfg.depth + 1 - lvl}", bottom, f2)
        up = ops.upsample_nearest_2x(bottom)
        fused = self._conv_relu(f"{key}/fuse", ops.concat([up, e1], axis=-3))
        return ops.add(hx, fused)

    def forward(self, image, f2=None) -> SaliencyOutput:
        x = as_tensor(image)
        if x.ndim not in (3, 4) or x.shape[-3] != 3:
            raise ShapeError(f"image must be (3, H, W) or (B, 3, H, W), got {x.shape}")
        h, w = x.shape[-2:]
        step = 2 ** self.cfg.depth
        if h % step or w % step:
            raise ShapeError(f"spatial size {h}x{w} not divisible by 2^{self.cfg.depth}")
        text = None
        if self.blocks:
            if f2 is None:
                raise UsageError("network has eCMSA blocks; a text embedding is required")
            text = as_tensor(getattr(f2, "values", f2))

        d = self.cfg.depth
        outer_tag = "in" if self.cfg.arch == "unet" else "out"
        skips = []
        for lvl in range(1, d + 1):
            if self.cfg.arch == "unet":
                x = self._conv_relu(f"enc{lvl}/conv2", self._conv_relu(f"enc{lvl}/conv1", x))
            else:
                x = self._rsu(lvl, x, text)
            skips.append(x)
            x = ops.pool_max_2x2(x)
        x = self._conv_relu("bottleneck/conv2", self._conv_relu("bottleneck/conv1", x))
        x = self._attend(f"{outer_tag}:1", x, text)

        aux = []
        for lvl in range(d, 0, -1):
            x = ops.concat([ops.upsample_nearest_2x(x), skips[lvl - 1]], axis=-3)
            x = self._conv_relu(f"dec{lvl}/conv2", self._conv_relu(f"dec{lvl}/conv1", x))
            x = self._attend(f"{outer_tag}:{d + 2 - lvl}", x, text)
            if self.cfg.arch == "mini-u2" and lvl > 1:
                s = ops.conv2d(x, self.params[f"side{lvl}/w"], self.params[f"side{lvl}/b"])
                for _ in range(lvl - 1):
                    s = ops.upsample_nearest_2x(s)
                aux.append(ops.sigmoid(s))
        mask = ops.sigmoid(ops.conv2d(x, self.params["head/w"], self.params["head/b"]))
        return SaliencyOutput(mask, aux)

    __call__ = forward

    # -- persistence ---------------------------------------------------------------

    def state_dict(self) -> dict:
        return {k: t.data for k, t in self.params.items()}

    def load_state_dict(self, state: dict):
        missing = set(self.params) ^ set(state)
        if missing:
            raise ValidationError(f"checkpoint keys do not match network: {sorted(missing)[:5]}")
        for k, t in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeError(f"{k}: checkpoint shape {arr.shape} != {t.shape}")
            t.data = arr.copy()

    def config_dict(self) -> dict:
        return {
            "net": asdict(self.cfg),
            "attachment": str(self.attach),
            "ecmsa": asdict(self.ecmsa_cfg),
        }


def build(cfg: NetConfig, attach: AttachmentSpec | str = "", rng: Rng | None = None,
          ecmsa_cfg: EcmsaConfig = EcmsaConfig()) -> Network:
    if isinstance(attach, str):
        attach = parse_attachment(attach, cfg.depth)
    return Network(cfg, attach, ecmsa_cfg, rng if rng is not None else Rng(0))


def forward(net: Network, image, f2=None) -> SaliencyOutput:
    return net.forward(image, f2)


def from_config(config: dict, state: dict | None = None) -> Network:
    net = build(NetConfig(**config["net"]), parse_attachment(config["attachment"]),
                Rng(0), EcmsaConfig(**config["ecmsa"]))
    if state is not None:
        net.load_state_dict(state)
    return net
