"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

Criteria 3 and 4 share the nine training runs of the ``synthetic_runs``
fixture (three variants on three seeds); that fixture alone takes about
ten minutes on a laptop CPU.
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from ecmsa.attention import EcmsaConfig, ecmsa_forward, init_params
from ecmsa.cli import main
from ecmsa.dataio import (caption_stats, decode, encode, load_manifest, split_records, write_manifest,
                          write_synth_dataset)
from ecmsa.gradcheck import full_suite
from ecmsa.metrics import (confusion_counts, count_curves, evaluate_dataset, mae, max_e_m, max_f_beta,
                           s_measure, threshold_values)
from ecmsa.nets import NetConfig
from ecmsa.rng import Rng
from ecmsa.tensor import Tensor
from ecmsa.text import ToyEncoder
from ecmsa.training import (AdamWState, NetPredictor, TrainConfig, ablation_encoder, adamw_step, cosine_lr,
                            net_for, train)

SEEDS = (0, 1, 2)
TOY_NET = NetConfig(arch="unet", depth=3, base_channels=8, input_size=64, d_text=32)
TOY_TRAIN = dict(lr0=5e-3, steps=400, batch_size=8)
ATTACH = "in:1-2"


@pytest.fixture
def verdict(capsys):
    def say(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n} ({title}): {detail}")
        assert ok, detail
    return say


# -- 1 -----------------------------------------------------------------------------

def test_criterion_1_gradient_correctness(verdict):
    t0 = time.perf_counter()
    results = full_suite(0)
    elapsed = time.perf_counter() - t0
    bad = [r.name for r in results if not r.ok]
    net = results[-1]
    ok = not bad and net.error <= 1e-4 and elapsed < 120
    verdict(1, "gradient correctness", ok,
            f"{len(results) - len(bad)}/{len(results)} checks, worst layer err "
            f"{max(r.error for r in results[:-1]):.2e}, network err {net.error:.2e}, {elapsed:.1f}s"
            + (f", failing {bad}" if bad else ""))


# -- 2 -----------------------------------------------------------------------------

def test_criterion_2_metric_oracles(verdict):
    worst = {"f": 0.0, "e": 0.0, "s": 0.0}
    exact = True
    for seed in range(100):
        pred, gt = oracles.random_pair(seed)
        exact &= mae(pred, gt) == oracles.mae(pred, gt)
        tp, fp, n_fg, n = count_curves(pred, gt)
        for i, t in enumerate(threshold_values()):
            ref = oracles.confusion(pred, gt, t)
            c = confusion_counts(pred, gt, t)
            exact &= (c.tp, c.fp, c.fn, c.tn) == ref and (tp[i], fp[i]) == ref[:2]
        worst["f"] = max(worst["f"], abs(max_f_beta(pred, gt)[0] - oracles.max_f(pred, gt)))
        worst["e"] = max(worst["e"], abs(max_e_m(pred, gt) - oracles.max_e(pred, gt)))
        worst["s"] = max(worst["s"], abs(s_measure(pred, gt) - oracles.s_measure(pred, gt)))
    perfect = True
    for seed in range(10):
        _, gt = oracles.random_pair(seed)
        perfect &= (max_f_beta(gt, gt)[0], mae(gt, gt), max_e_m(gt, gt), s_measure(gt, gt)) == (1.0, 0.0, 1.0, 1.0)
    ok = exact and perfect and max(worst.values()) <= 1e-9
    verdict(2, "metric oracle equivalence", ok,
            f"MAE/counts exact={exact}, max |dF|={worst['f']:.1e} |dE|={worst['e']:.1e} "
            f"|dS|={worst['s']:.1e}, perfect cases exact={perfect}")


# -- 3 and 4 ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def synthetic_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("twoblob")
    records = load_manifest(write_synth_dataset(root, 200, 50, 64, seed=0))
    test = split_records(records, "test")
    enc = ToyEncoder(TOY_NET.d_text)
    runs = {}
    for seed in SEEDS:
        for name, attach, ablation in (("baseline", "", "none"), ("ecmsa", ATTACH, "none"),
                                       ("no-color", ATTACH, "no-color")):
            t0 = time.perf_counter()
            cfg = TrainConfig(seed=seed, attachment=attach, ablation=ablation, **TOY_TRAIN)
            net = net_for(TOY_NET, cfg)
            train(net, records, enc, cfg)
            venc = ablation_encoder(enc, ablation) if net.blocks else None
            report = evaluate_dataset(NetPredictor(net, venc), test)
            runs[seed, name] = (report.max_f_beta, time.perf_counter() - t0)
    return runs


@pytest.mark.slow
def test_criterion_3_cross_modal_benefit(synthetic_runs, verdict):
    gains = {s: synthetic_runs[s, "ecmsa"][0] - synthetic_runs[s, "baseline"][0] for s in SEEDS}
    seconds = sum(synthetic_runs[s, v][1] for s in SEEDS for v in ("baseline", "ecmsa"))
    ok = all(g >= 0.05 for g in gains.values()) and seconds < 15 * 60
    detail = ", ".join(f"seed {s}: {synthetic_runs[s, 'baseline'][0]:.4f} -> "
                       f"{synthetic_runs[s, 'ecmsa'][0]:.4f} (+{gains[s]:.4f})" for s in SEEDS)
    verdict(3, "cross-modal benefit", ok, f"{detail}; {seconds:.0f}s for six runs")


@pytest.mark.slow
def test_criterion_4_no_color_degrades(synthetic_runs, verdict):
    drops = {s: synthetic_runs[s, "ecmsa"][0] - synthetic_runs[s, "no-color"][0] for s in SEEDS}
    ok = all(d >= 0.03 for d in drops.values())
    detail = ", ".join(f"seed {s}: {synthetic_runs[s, 'ecmsa'][0]:.4f} -> "
                       f"{synthetic_runs[s, 'no-color'][0]:.4f} (-{drops[s]:.4f})" for s in SEEDS)
    verdict(4, "no-color ablation direction", ok, detail)


# -- 5 -----------------------------------------------------------------------------

def test_criterion_5_protocol_fidelity(tmp_path, verdict):
    records = load_manifest(write_synth_dataset(tmp_path, 6, 0, 32, seed=1))
    net_cfg = NetConfig(arch="unet", depth=2, base_channels=4, input_size=32, d_text=8)
    default = TrainConfig(steps=12, batch_size=2)
    tr = train(net_for(net_cfg, default), records, None, default)
    lrs = [s["lr"] for s in tr.steps]
    trace_ok = lrs == [cosine_lr(i, 12, default.lr0) for i in range(12)]
    step0_ok = lrs[0] == 5e-5 and default.lr0 == 5e-5
    p = {"w": Tensor(np.ones(1))}
    adamw_step(p, {"w": np.zeros(1)}, AdamWState(p), 0.1, TrainConfig(weight_decay=0.01))
    shrunk = float(p["w"].data[0])
    decay_ok = abs(shrunk - 0.999) <= 1e-15
    verdict(5, "protocol fidelity", trace_ok and step0_ok and decay_ok,
            f"lr trace exact={trace_ok}, step-0 lr={lrs[0]!r}, zero-grad AdamW 1.0 -> {shrunk!r}")


# -- 6 -----------------------------------------------------------------------------

def test_criterion_6_determinism(tmp_path, verdict):
    data = tmp_path / "data"
    main(["synth", "--n", "8", "--n-test", "4", "--size", "32", "--seed", "2", "--out", str(data)])
    flags = ["--manifest", str(data / "manifest.jsonl"), "--variant", "base=", "--variant", "att=in:1",
             "--variant", "nc=in:1@no-color", "--depth", "2", "--base", "4", "--size", "32", "--dim", "8",
             "--steps", "6", "--batch", "2", "--lr", "1e-3", "--seed", "5"]
    codes = [main(["compare", *flags, "--out", str(tmp_path / run)]) for run in ("a", "b")]
    names = ["comparison.json"] + [f"variant{i:02d}/{f}" for i in range(3)
                                   for f in ("trace.jsonl", "checkpoint.ckpt", "report.json")]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in names]
    ok = codes == [0, 0] and all(same)
    verdict(6, "determinism", ok, f"{sum(same)}/{len(same)} artifacts byte-identical across two compare runs")


# -- 7 -----------------------------------------------------------------------------

def test_criterion_7_structural_invariants(verdict):
    r = np.random.default_rng(7)
    shape_ok = rows_ok = res_ok = True
    worst_rows = 0.0
    for case in range(60):
        c, h, w, d = (int(r.integers(1, 7)), int(r.integers(1, 5)), int(r.integers(1, 5)), int(r.integers(1, 10)))
        p = init_params(c, d, Rng(case))
        for t in p.named().values():
            t.data = t.data + 0.1 * r.normal(size=t.shape)
        v_in, f2 = r.normal(size=(c, h, w)), r.normal(size=d)
        out, acts = ecmsa_forward(Tensor(v_in), Tensor(f2), p, EcmsaConfig())
        out_nr, acts_nr = ecmsa_forward(Tensor(v_in), Tensor(f2), p, EcmsaConfig(use_residual=False))
        shape_ok &= out.shape == v_in.shape == out_nr.shape
        dev = float(np.max(np.abs(acts.attn.data.sum(axis=1) - 1)))
        worst_rows = max(worst_rows, dev)
        rows_ok &= dev <= 1e-9
        res_ok &= np.array_equal(out.data, v_in + acts.v_hat.data) and np.array_equal(out_nr.data, acts_nr.v_hat.data)
    p = init_params(4, 3, Rng(99))
    v1 = r.normal(size=(4, 1, 1))
    o1, a1 = ecmsa_forward(Tensor(v1), Tensor(r.normal(size=3)), p, EcmsaConfig())
    degen_ok = a1.attn.data.tolist() == [[1.0]] and o1.shape == (4, 1, 1) and np.isfinite(o1.data).all()
    ok = shape_ok and rows_ok and res_ok and degen_ok
    verdict(7, "structural invariants", ok,
            f"60-case (C,H,W,D) sweep shapes={shape_ok}, max |row sum - 1|={worst_rows:.1e}, "
            f"residual/no-res algebra exact={res_ok}, 1x1 case={degen_ok}")


# -- 8 -----------------------------------------------------------------------------

def test_criterion_8_data_tooling(tmp_path, verdict):
    path = write_synth_dataset(tmp_path / "d", 5, 3, 32, seed=4)
    recs = load_manifest(path)
    write_manifest(tmp_path / "d" / "copy.jsonl", recs)
    manifest_ok = load_manifest(tmp_path / "d" / "copy.jsonl") == recs and len(recs) == 8
    r = np.random.default_rng(8)
    codec_ok = True
    for shape in ((3, 7, 5), (6, 9), (3, 1, 1)):
        a = r.random(shape)
        codec_ok &= float(np.max(np.abs(decode(encode(a)) - a))) <= 1 / 255
    codec_ok &= np.array_equal(decode(b"P5\n2 2\n255\n" + bytes([0, 255, 255, 0])), [[0, 1], [1, 0]])
    s = caption_stats(["a red bird", "two white dogs on grass"])
    stats_ok = (s.length_histogram, s.mean_length, s.color_word_histogram, s.mean_color_words) == \
        ({3: 1, 5: 1}, 4.0, {1: 2}, 1.0)
    duts = os.environ.get("ECMSA_DUTS_MANIFEST")
    duts_ok, duts_note = True, "DUTS-CM check skipped (set ECMSA_DUTS_MANIFEST to run it)"
    if duts:
        real = load_manifest(Path(duts), check_files=False)
        tr = caption_stats(split_records(real, "train")).mean_length
        te = caption_stats(split_records(real, "test")).mean_length
        duts_ok = abs(tr - 7.26) <= 0.01 and abs(te - 8.71) <= 0.01
        duts_note = f"DUTS-CM mean caption length train {tr:.3f}, test {te:.3f}"
    ok = manifest_ok and codec_ok and stats_ok and duts_ok
    verdict(8, "data tooling", ok,
            f"manifest round-trip={manifest_ok}, codec round-trip={codec_ok}, stats fixture={stats_ok}; {duts_note}")
