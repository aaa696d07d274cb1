"""Training protocol: AdamW, step-based cosine schedule, seeded batches.

Random streams all derive from ``TrainConfig.seed``:

* parameter init: ``Rng(seed).split("init")``
* epoch ``e`` order: ``Rng(seed).split(f"shuffle/{e}").permutation(n)``
* augmentation of sample ``id`` in epoch ``e``:
  ``Rng(seed ^ fnv1a64(id)).split(e)``

Batches are consecutive slices of the concatenated epoch orders.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .attention import EcmsaConfig
from .dataio.augment import AugmentConfig, augment, sample_rng
from .errors import UsageError, ValidationError
from .metrics import MetricReport, evaluate_dataset
from .nets import NetConfig, Network, build, parse_attachment
from .rng import Rng
from .serialize import save_checkpoint
from .tensor import Tensor, no_grad
from .text import COLOR_LEXICON, FileEncoder, Lexicon, ToyEncoder

log = logging.getLogger(__name__)

ABLATIONS = ("none", "no-ese", "no-res", "no-color", "no-objects")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-5
    batch_size: int = 8
    steps: int = 200
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    ablation: str = "none"
    attachment: str = ""
    aux_weight: float = 0.5
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValidationError("lr0 must be positive")
        if self.steps < 1 or self.batch_size < 1:
            raise ValidationError("steps and batch_size must be at least 1")
        if self.ablation not in ABLATIONS:
            raise ValidationError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augment"]["contrast_range"] = list(self.augment.contrast_range)
        return d


@dataclass
class TrainTrace:
    steps: list = field(default_factory=list)   # {"step", "lr", "loss"}
    checkpoint: str | None = None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(s, sort_keys=True) + "\n" for s in self.steps)

    def write(self, path):
        Path(path).write_text(self.to_jsonl())

    @property
    def losses(self) -> list:
        return [s["loss"] for s in self.steps]


def cosine_lr(step: int, total: int, lr0: float) -> float:
    if total < 1 or not 0 <= step <= total:
        raise ValidationError(f"cosine_lr needs 0 <= step <= total, got {step}/{total}")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * step / total))


class AdamWState:
    def __init__(self, params: dict):
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, cfg: TrainConfig):
    """One decoupled-weight-decay Adam update, in place on ``params``."""
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or state.m[k].shape != g.shape:
            raise ValidationError(f"{k}: gradient shape {g.shape} does not match parameter {p.data.shape}")
        m = state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / c1
        v_hat = v / c2
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * p.data)


def ablation_encoder(encoder, ablation: str, colors: Lexicon = COLOR_LEXICON,
                     entities: Lexicon | None = None):
    """Encoder with the ablation's word mask applied before encoding."""
    if ablation not in ("no-color", "no-objects"):
        return encoder
    if isinstance(encoder, FileEncoder):
        raise UsageError(f"ablation {ablation} needs captions; precomputed embeddings cannot be masked")
    lex = colors if ablation == "no-color" else entities
    if lex is None:
        raise ValidationError("ablation no-objects needs a user-supplied entity lexicon")
    return ToyEncoder(encoder.dim, mask=lex)


def net_for(net_cfg: NetConfig, cfg: TrainConfig) -> Network:
    ecmsa_cfg = EcmsaConfig().with_ablation(cfg.ablation)
    return build(net_cfg, parse_attachment(cfg.attachment, net_cfg.depth),
                 Rng(cfg.seed).split("init"), ecmsa_cfg)


def _loss(net: Network, images, masks, text, aux_weight: float):
    out = net.forward(Tensor._wrap(images), text)
    target = Tensor._wrap(masks[:, None])
    loss = ops.bce_loss(out.mask, target)
    for aux in out.aux_masks:
        loss = ops.add(loss, ops.scale(ops.bce_loss(aux, target), aux_weight))
    return loss


def train(net: Network, records, encoder, cfg: TrainConfig, out_dir=None,
          colors: Lexicon = COLOR_LEXICON, entities: Lexicon | None = None) -> TrainTrace:
    records = [r for r in records if r.split == "train"]
    if not records:
        raise ValidationError("no training records in the manifest")
    use_text = bool(net.blocks)
    enc = ablation_encoder(encoder, cfg.ablation, colors, entities) if use_text else None
    data = [r.load() for r in records]
    if enc is not None and enc.dim != net.cfg.d_text:
        raise ValidationError(f"encoder dim {enc.dim} != network d_text {net.cfg.d_text}")
    texts = np.stack([enc(r.caption, r.id).values for r in records]) if enc else None

    n = len(records)
    multiple = 2 ** net.cfg.depth
    root = Rng(cfg.seed)
    state = AdamWState(net.params)
    trace = TrainTrace()
    order = np.empty(0, dtype=np.int64)
    epoch_of = np.empty(0, dtype=np.int64)
    epoch = 0
    for step in range(cfg.steps):
        while order.size < (step + 1) * cfg.batch_size:
            order = np.concatenate([order, root.split(f"shuffle/{epoch}").permutation(n)])
            epoch_of = np.concatenate([epoch_of, np.full(n, epoch)])
            epoch += 1
        idx = order[step * cfg.batch_size:(step + 1) * cfg.batch_size]
        eps = epoch_of[step * cfg.batch_size:(step + 1) * cfg.batch_size]
        imgs, msks = [], []
        for i, e in zip(idx, eps):
            img, msk = augment(*data[i], cfg.augment, sample_rng(cfg.seed, records[i].id).split(int(e)), multiple)
            imgs.append(img)
            msks.append(msk)
        images, masks = np.stack(imgs), np.stack(msks)
        text = Tensor._wrap(texts[idx]) if texts is not None else None

        lr = cosine_lr(step, cfg.steps, cfg.lr0)
        for p in net.params.values():
            p.grad = None
        loss = _loss(net, images, masks, text, cfg.aux_weight)
        loss.backward()
        adamw_step(net.params, {k: p.grad for k, p in net.params.items()}, state, lr, cfg)
        trace.steps.append({"step": step, "lr": lr, "loss": loss.item()})
        if step % 50 == 0 or step == cfg.steps - 1:
            log.info("step %d lr %.3g loss %.5f", step, lr, loss.item())

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "checkpoint.ckpt"
        save_checkpoint(ckpt, net.state_dict(), {**net.config_dict(), "train": cfg.to_dict(),
                                                 "text_dim": net.cfg.d_text})
        trace.checkpoint = str(ckpt)
        trace.write(out / "trace.jsonl")
    return trace


class NetPredictor:
    """Adapter for :func:`evaluate_dataset`: caption -> embedding -> mask."""

    def __init__(self, net: Network, encoder=None):
        self.net = net
        self.encoder = encoder

    def predict(self, rec, image=None):
        if image is None:
            image, _ = rec.load()
        text = self.encoder(rec.caption, rec.id).values if self.net.blocks else None
        with no_grad():
            out = self.net.forward(Tensor._wrap(image), text)
        return out.mask.data[0]


@dataclass(frozen=True)
class Variant:
    name: str
    attachment: str = ""
    ablation: str = "none"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        """``NAME=ATTACH[@ABLATION]``, e.g. ``U-Net|1=in:1@no-color``."""
        name, sep, rest = text.partition("=")
        if not sep or not name:
            raise ValidationError(f"variant must look like NAME=ATTACH[@ABLATION], got {text!r}")
        attach, _, ablation = rest.partition("@")
        return cls(name, attach, ablation or "none")


@dataclass
class Comparison:
    rows: list      # dicts with name/attachment/ablation and MetricReport fields
    reports: dict   # name -> MetricReport

    COLUMNS = ("MaxFb", "MAE", "MaxEm", "Sm", "infer time/s")

    def to_json(self, timing: bool = False) -> str:
        rows = []
        for r in self.rows:
            r = dict(r)
            if not timing:
                r.pop("infer_seconds")
            rows.append(r)
        return json.dumps({"columns": list(self.COLUMNS), "rows": rows}, sort_keys=True, indent=1)

    def table(self) -> str:
        width = max([len("Method")] + [len(r["name"]) for r in self.rows])
        lines = ["Method".ljust(width) + " | " + "  ".join(c.rjust(12) for c in self.COLUMNS)]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            vals = [r["max_f_beta"], r["mae"], r["max_e_m"], r["s_m"], r["infer_seconds"]]
            lines.append(r["name"].ljust(width) + " | " + "  ".join(f"{v:12.4f}" for v in vals))
        return "\n".join(lines) + "\n"


def run_comparison(records, variants, net_cfg: NetConfig, cfg: TrainConfig, encoder,
                   out_dir=None, entities: Lexicon | None = None) -> Comparison:
    variants = [Variant.parse(v) if isinstance(v, str) else v for v in variants]
    if len(variants) < 2:
        raise ValidationError("a comparison needs at least two variants")
    names = [v.name for v in variants]
    if len(set(names)) != len(names):
        raise ValidationError(f"variant names must be unique: {names}")
    test = [r for r in records if r.split == "test"]
    if not test:
        raise ValidationError("no test records in the manifest")
    out = Path(out_dir) if out_dir is not None else None
    rows, reports = [], {}
    for i, v in enumerate(variants):
        vcfg = replace(cfg, attachment=v.attachment, ablation=v.ablation)
        net = net_for(net_cfg, vcfg)
        vdir = out / f"variant{i:02d}" if out is not None else None
        train(net, records, encoder, vcfg, vdir, entities=entities)
        enc = ablation_encoder(encoder, v.ablation, entities=entities) if net.blocks else None
        report = evaluate_dataset(NetPredictor(net, enc), test)
        reports[v.name] = report
        if vdir is not None:
            (vdir / "report.json").write_text(report.to_json(timing=False))
            (vdir / "variant.json").write_text(json.dumps(asdict(v), sort_keys=True))
        rows.append({
            "name": v.name, "attachment": v.attachment, "ablation": v.ablation,
            "max_f_beta": report.max_f_beta, "mae": report.mae, "max_e_m": report.max_e_m,
            "s_m": report.s_m, "infer_seconds": report.mean_infer_seconds,
            "num_params": net.num_params(),
        })
        log.info("%s: MaxFb %.4f MAE %.4f", v.name, report.max_f_beta, report.mae)
    result = Comparison(rows, reports)
    if out is not None:
        (out / "comparison.json").write_text(result.to_json(timing=False))
        (out / "timing.json").write_text(json.dumps(
            {r["name"]: r["infer_seconds"] for r in rows}, sort_keys=True, indent=1))
        (out / "table.txt").write_text(result.table())
        (out / "config.json").write_text(json.dumps(
            {"net": asdict(net_cfg), "train": cfg.to_dict(), "variants": [asdict(v) for v in variants]},
            sort_keys=True, indent=1))
    return result
