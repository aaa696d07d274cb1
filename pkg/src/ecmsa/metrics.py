"""Saliency evaluation: MaxF-beta, MAE, MaxE-measure, S-measure, inference time.

Binarization at threshold ``t_i = i / (T - 1)`` for ``i = 0 .. T-1``
(``T = 256`` by default) marks a pixel foreground when ``pred > t_i``.
Ratios with a zero denominator (precision with no predicted foreground,
recall with an empty ground truth) are defined as 0.

Dataset aggregates for MaxF-beta and MaxE-measure average the per-threshold
quantities over images first and maximize afterwards; ``per_image_max=True``
instead averages each image's own maximum.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGroundTruth, MissingPrediction, ShapeError

BETA_SQ = 0.3
N_THRESHOLDS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int


def _as_pair(pred, gt):
    pred = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    gt = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    pred = pred.reshape(pred.shape[-2:]) if pred.ndim == 3 and pred.shape[0] == 1 else pred
    gt = gt.reshape(gt.shape[-2:]) if gt.ndim == 3 and gt.shape[0] == 1 else gt
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} must be equal 2-D shapes")
    return pred, gt > 0.5


def threshold_values(n: int = N_THRESHOLDS) -> np.ndarray:
    return np.arange(n) / (n - 1)


def confusion_counts(pred, gt, t: float) -> ConfusionCounts:
    pred, g = _as_pair(pred, gt)
    fm = pred > t
    tp = int(np.count_nonzero(fm & g))
    fp = int(np.count_nonzero(fm & ~g))
    fn = int(np.count_nonzero(~fm & g))
    return ConfusionCounts(tp, fp, fn, g.size - tp - fp - fn)


def count_curves(pred, gt, thresholds: int = N_THRESHOLDS):
    """``(tp, fp)`` integer arrays over all thresholds, plus ``(n_fg, n)``."""
    pred, g = _as_pair(pred, gt)
    th = threshold_values(thresholds)
    # k = number of thresholds strictly below the pixel; foreground at t_i iff i < k
    k = np.searchsorted(th, pred.ravel(), side="left")
    gflat = g.ravel()
    hist_fg = np.bincount(k[gflat], minlength=thresholds + 1)
    hist_bg = np.bincount(k[~gflat], minlength=thresholds + 1)
    tp = np.cumsum(hist_fg[::-1])[::-1][1:]
    fp = np.cumsum(hist_bg[::-1])[::-1][1:]
    return tp.astype(np.int64), fp.astype(np.int64), int(gflat.sum()), gflat.size


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def f_beta(precision, recall, beta_sq: float = BETA_SQ):
    """``(1 + b2) P R / (b2 P + R)`` with 0/0 taken as 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    return _ratio((1.0 + beta_sq) * p * r, beta_sq * p + r)


def pr_curve(pred, gt, thresholds: int = N_THRESHOLDS):
    tp, fp, n_fg, _ = count_curves(pred, gt, thresholds)
    return _ratio(tp, tp + fp), _ratio(tp, n_fg)


def mae(pred, gt) -> float:
    pred, g = _as_pair(pred, gt)
    # correctly rounded sum, so the value does not depend on summation order
    return math.fsum(np.abs(pred - g).ravel()) / pred.size


def max_f_beta(pred, gt, beta_sq: float = BETA_SQ, thresholds: int = N_THRESHOLDS):
    """Return ``(max F-beta, curve)`` with curve keys precision/recall/f."""
    _, g = _as_pair(pred, gt)
    if not g.any():
        raise DegenerateGroundTruth("ground truth has no foreground pixels")
    p, r = pr_curve(pred, gt, thresholds)
    f = f_beta(p, r, beta_sq)
    return float(f.max()), {"precision": p, "recall": r, "f": f}


def e_measure_curve(pred, gt, thresholds: int = N_THRESHOLDS) -> np.ndarray:
    """Enhanced-alignment score at every threshold.

    With binary maps the alignment matrix takes one value per
    (gt, prediction) combination, so each threshold reduces to four terms
    weighted by the confusion counts.
    """
    tp, fp, n_fg, n = count_curves(pred, gt, thresholds)
    fn = n_fg - tp
    tn = n - n_fg - fp
    if n_fg == 0:
        return (n - tp - fp) / n
    if n_fg == n:
        return tp / n
    mu_g = n_fg / n
    mu_f = (tp + fp) / n
    score = np.zeros(thresholds)
    for gv, fv, cnt in ((1.0, 1.0, tp), (0.0, 1.0, fp), (1.0, 0.0, fn), (0.0, 0.0, tn)):
        a = gv - mu_g
        b = fv - mu_f
        den = a * a + b * b
        xi = _ratio(2.0 * a * b, den)
        enhanced = (1.0 + xi) ** 2 / 4.0
        score += np.where(cnt > 0, cnt * enhanced, 0.0)
    return score / n


def max_e_m(pred, gt, thresholds: int = N_THRESHOLDS) -> float:
    return float(e_measure_curve(pred, gt, thresholds).max())


# -- S-measure ------------------------------------------------------------------

def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma)


def s_object(pred, g) -> float:
    fg = pred[g]
    bg = 1.0 - pred[~g]
    return (fg.size * _object_score(fg) + bg.size * _object_score(bg)) / g.size


def _round_half_up(v: float) -> int:
    return int(np.floor(v + 0.5))


def centroid(g) -> tuple:
    """1-based ``(X, Y)`` split point: rounded mean column/row of the foreground."""
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return _round_half_up(w / 2), _round_half_up(h / 2)
    cols = np.arange(1, w + 1)
    rows = np.arange(1, h + 1)
    x = _round_half_up((g.sum(axis=0) * cols).sum() / total)
    y = _round_half_up((g.sum(axis=1) * rows).sum() / total)
    return x, y


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x = p.mean()
    y = g.mean()
    if n > 1:
        sx = ((p - x) ** 2).sum() / (n - 1)
        sy = ((g - y) ** 2).sum() / (n - 1)
        sxy = ((p - x) * (g - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0:
        return alpha / beta
    return 1.0 if beta == 0 else 0.0


def s_region(pred, g) -> float:
    x, y = centroid(g)
    gf = g.astype(np.float64)
    total = 0.0
    for rs in (slice(0, y), slice(y, None)):
        for cs in (slice(0, x), slice(x, None)):
            pb, gb = pred[rs, cs], gf[rs, cs]
            if pb.size:
                total += pb.size * _ssim(pb, gb)
    return total / g.size


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    pred, g = _as_pair(pred, gt)
    y = g.mean()
    if y == 0:
        return float(1.0 - pred.mean())
    if y == 1:
        return float(pred.mean())
    q = alpha * s_object(pred, g) + (1.0 - alpha) * s_region(pred, g)
    return float(max(q, 0.0))


# -- dataset evaluation --------------------------------------------------------------

@dataclass
class MetricReport:
    max_f_beta: float
    mae: float
    max_e_m: float
    s_m: float
    mean_infer_seconds: float
    per_image: list = field(default_factory=list)
    thresholds_used: int = N_THRESHOLDS
    mode: str = "dataset-mean"

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, timing: bool = True) -> str:
        d = self.to_dict()
        if not timing:
            d.pop("mean_infer_seconds")
            for row in d["per_image"]:
                row.pop("infer_seconds", None)
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d.setdefault("mean_infer_seconds", 0.0)
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    def row(self) -> list:
        return [self.max_f_beta, self.mae, self.max_e_m, self.s_m, self.mean_infer_seconds]


def load_prediction_dir(path, ids) -> dict:
    from .dataio.raster import read_raster

    root = Path(path)
    preds = {}
    for sid in ids:
        f = root / f"{sid}.pgm"
        if not f.is_file():
            raise MissingPrediction(f"no prediction for id {sid!r} in {root}")
        preds[sid] = read_raster(f)
    return preds


def evaluate_dataset(source, records, *, beta_sq: float = BETA_SQ, thresholds: int = N_THRESHOLDS,
                     per_image_max: bool = False, alpha: float = 0.5) -> MetricReport:
    """Score predictions for every record.

    ``source`` is a mapping ``id -> (H, W) prediction``, a directory of
    ``<id>.pgm`` maps, or a predictor with ``predict(record, image) -> array`` whose
    calls are timed.
    """
    records = list(records)
    if isinstance(source, (str, Path)):
        source = load_prediction_dir(source, [r.id for r in records])
    timed = hasattr(source, "predict")

    rows, precisions, recalls, e_curves = [], [], [], []
    any_fg = False
    for rec in records:
        image, gt = rec.load()
        seconds = 0.0
        if timed:
            t0 = time.perf_counter()
            pred = source.predict(rec, image)
            seconds = time.perf_counter() - t0
        else:
            if rec.id not in source:
                raise MissingPrediction(f"no prediction for id {rec.id!r}")
            pred = source[rec.id]
        pred, _ = _as_pair(pred, gt)
        p, r = pr_curve(pred, gt, thresholds)
        e = e_measure_curve(pred, gt, thresholds)
        has_fg = bool(gt.any())
        any_fg |= has_fg
        precisions.append(p)
        recalls.append(r)
        e_curves.append(e)
        rows.append({
            "id": rec.id,
            "max_f_beta": float(f_beta(p, r, beta_sq).max()) if has_fg else 0.0,
            "mae": mae(pred, gt),
            "max_e_m": float(e.max()),
            "s_m": s_measure(pred, gt, alpha),
            "infer_seconds": seconds,
        })
    if not records:
        raise DegenerateGroundTruth("empty dataset")
    if not any_fg:
        raise DegenerateGroundTruth("no image in the dataset has foreground pixels")

    n = len(rows)
    if per_image_max:
        mf = sum(r["max_f_beta"] for r in rows) / n
        me = sum(r["max_e_m"] for r in rows) / n
        mode = "per-image-max"
    else:
        p_mean = np.mean(precisions, axis=0)
        r_mean = np.mean(recalls, axis=0)
        mf = float(f_beta(p_mean, r_mean, beta_sq).max())
        me = float(np.mean(e_curves, axis=0).max())
        mode = "dataset-mean"
    return MetricReport(
        max_f_beta=mf,
        mae=sum(r["mae"] for r in rows) / n,
        max_e_m=me,
        s_m=sum(r["s_m"] for r in rows) / n,
        mean_infer_seconds=sum(r["infer_seconds"] for r in rows) / n,
        per_image=rows,
        thresholds_used=thresholds,
        mode=mode,
    )


def write_pr_csv(path, pred, gt, thresholds: int = N_THRESHOLDS):
    p, r = pr_curve(pred, gt, thresholds)
    th = threshold_values(thresholds)
    with open(path, "w") as fh:
        fh.write("threshold,precision,recall\n")
        for t, a, b in zip(th, p, r):
            fh.write(f"{float(t)!r},{float(a)!r},{float(b)!r}\n")
