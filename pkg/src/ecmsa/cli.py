"""Command-line front end: ``ecmsa <subcommand> [flags]``.

Exit codes: 0 ok, 1 runtime failure, 2 validation or usage failure.
Every artifact gets a JSON config echo next to it.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataio import (AugmentConfig, caption_stats, load_manifest, read_raster, scan_manifest,
                     write_raster, write_synth_dataset)
from .errors import EcmsaError, UsageError, ValidationError
from .gradcheck import full_suite
from .metrics import evaluate_dataset, load_prediction_dir, write_pr_csv
from .nets import ARCHS, NetConfig, from_config
from .serialize import load_checkpoint
from .tensor import Tensor, no_grad
from .text import COLOR_LEXICON, DEFAULT_DIM, EmbeddingFile, FileEncoder, Lexicon, ToyEncoder
from .training import (ABLATIONS, NetPredictor, TrainConfig, Variant, ablation_encoder, net_for,
                       run_comparison, train)

log = logging.getLogger("ecmsa")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _echo(path: Path, args, **extra):
    """Write the invocation's flags beside ``path``."""
    path = Path(path)
    target = path / "config.json" if path.is_dir() else path.with_name(path.name + ".config.json")
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    target.write_text(json.dumps({"version": __version__, "flags": flags, **extra},
                                 sort_keys=True, indent=1, default=str) + "\n")


def _lexicon(path):
    return Lexicon.load(path) if path else None


def _encoder(args, dim: int):
    if getattr(args, "embeddings", None):
        table = EmbeddingFile.load(args.embeddings)
        if table.dim != dim:
            raise ValidationError(f"embedding file has dim {table.dim}, network expects {dim}")
        return FileEncoder(table)
    return ToyEncoder(dim)


def _net_cfg(args) -> NetConfig:
    return NetConfig(arch=args.arch, depth=args.depth, base_channels=args.base,
                     input_size=args.size, d_text=args.dim)


def _train_cfg(args, **over) -> TrainConfig:
    aug = AugmentConfig(enabled=not args.no_augment)
    return TrainConfig(lr0=args.lr, batch_size=args.batch, steps=args.steps,
                       weight_decay=args.wd, seed=args.seed, augment=aug, **over)


def _predictor(ckpt_path, args):
    state, config = load_checkpoint(ckpt_path)
    net = from_config(config, state)
    enc = None
    if net.blocks:
        ablation = config.get("train", {}).get("ablation", "none")
        enc = ablation_encoder(_encoder(args, net.cfg.d_text), ablation,
                               entities=_lexicon(getattr(args, "entities", None)))
    return NetPredictor(net, enc), config


# -- subcommands -------------------------------------------------------------------

def cmd_synth(args):
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    if args.n_test < 0:
        raise UsageError("--n-test must be non-negative")
    path = write_synth_dataset(args.out, args.n, args.n_test, args.size, args.seed)
    _echo(Path(args.out), args)
    print(path)


def cmd_validate(args):
    records, problems = scan_manifest(args.manifest)
    for lineno, exc in problems:
        print(f"line {lineno}: {exc}", file=sys.stderr)
    if problems:
        return EXIT_INVALID
    print(f"ok: {len(records)} records")
    return EXIT_OK


def cmd_stats(args):
    records = load_manifest(args.manifest, check_files=False)
    colors = Lexicon.load(args.colors) if args.colors else COLOR_LEXICON
    st = caption_stats(records, colors)
    print(st.to_json())
    if args.csv:
        st.write_csv(args.csv)
        _echo(Path(args.csv), args)


def cmd_embed(args):
    records = load_manifest(args.manifest, check_files=False)
    enc = ablation_encoder(ToyEncoder(args.dim), args.ablation, entities=_lexicon(args.entities))
    table = EmbeddingFile({r.id: enc(r.caption, r.id).values for r in records}, args.dim)
    table.save(args.out)
    _echo(Path(args.out), args, encoder="toy-hash")
    print(f"wrote {len(records)} embeddings of dim {args.dim} to {args.out}")


def cmd_train(args):
    records = load_manifest(args.manifest)
    cfg = _train_cfg(args, attachment=args.attach, ablation=args.ablation)
    net = net_for(_net_cfg(args), cfg)
    out = Path(args.out)
    trace = train(net, records, _encoder(args, args.dim), cfg, out, entities=_lexicon(args.entities))
    _echo(out, args, train=cfg.to_dict(), net=asdict(net.cfg))
    print(f"final loss {trace.losses[-1]:.6f}; checkpoint {trace.checkpoint}")


def cmd_eval(args):
    records = [r for r in load_manifest(args.manifest) if r.split == args.split]
    if not records:
        raise ValidationError(f"manifest has no {args.split!r} records")
    if bool(args.checkpoint) == bool(args.pred_dir):
        raise UsageError("give exactly one of --checkpoint or --pred-dir")
    if args.checkpoint:
        source, _ = _predictor(args.checkpoint, args)
    else:
        source = load_prediction_dir(args.pred_dir, [r.id for r in records])
    report = evaluate_dataset(source, records, per_image_max=args.per_image_max)
    text = report.to_json()
    if args.out:
        Path(args.out).write_text(text)
        _echo(Path(args.out), args)
    if args.pr_csv:
        if args.checkpoint:
            raise UsageError("--pr-csv needs --pred-dir")
        # pooled curve: all maps stacked into one tall image
        preds = np.concatenate([source[r.id] for r in records], axis=0)
        gts = np.concatenate([r.load()[1] for r in records], axis=0)
        write_pr_csv(args.pr_csv, preds, gts)
    print("MaxFb {:.4f} | MAE {:.4f} | MaxEm {:.4f} | Sm {:.4f} | infer {:.4f}s".format(*report.row()))


def cmd_infer(args):
    predictor, config = _predictor(args.checkpoint, args)
    image = read_raster(args.image)
    if image.ndim != 3:
        raise ValidationError("--image must be a color PPM")
    net = predictor.net
    text = None
    if net.blocks:
        if args.caption is None and not (args.embeddings and args.id):
            raise UsageError("this checkpoint needs --caption, or --embeddings with --id")
        text = predictor.encoder(args.caption or "", args.id).values
    with no_grad():
        mask = net.forward(Tensor._wrap(image), text).mask.data[0]
    write_raster(args.out, mask)
    _echo(Path(args.out), args, checkpoint_config=config)
    print(args.out)


def cmd_compare(args):
    records = load_manifest(args.manifest)
    variants = [Variant.parse(v) for v in args.variant]
    out = Path(args.out)
    result = run_comparison(records, variants, _net_cfg(args), _train_cfg(args),
                            _encoder(args, args.dim), out, entities=_lexicon(args.entities))
    _echo(out / "compare", args)
    print(result.table())


def cmd_gradcheck(args):
    results = full_suite(args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'} {r.name:44s} max rel err {r.error:.3e} (tol {r.tol:g})")
    bad = [r for r in results if not r.ok]
    print(f"{len(results) - len(bad)}/{len(results)} checks passed")
    return EXIT_RUNTIME if bad else EXIT_OK


# -- parser --------------------------------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--arch", choices=ARCHS, default="unet")
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base", type=int, default=16, help="channels of the top encoder level")
    p.add_argument("--size", type=int, default=64, help="square input side")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM, help="text embedding length")
    p.add_argument("--lr", type=float, default=5e-5)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--wd", type=float, default=0.01)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--embeddings", help="JSONL embedding file instead of the toy encoder")
    p.add_argument("--entities", help="entity lexicon file for no-objects")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ecmsa", description="Cross-modal saliency toolkit.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write the synthetic two-blob dataset")
    p.add_argument("--n", type=int, required=True, help="training samples")
    p.add_argument("--n-test", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="check a manifest and its files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="caption length and color-word histograms")
    p.add_argument("--manifest", required=True)
    p.add_argument("--colors", help="color lexicon file (default: built-in)")
    p.add_argument("--csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("embed", help="precompute toy caption embeddings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--ablation", choices=("none", "no-color", "no-objects"), default="none")
    p.add_argument("--entities")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train one network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--attach", default="", help='e.g. "in:1-2" or "in:1|out:1"; empty = baseline')
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint or a directory of PGM predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--pred-dir")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--embeddings")
    p.add_argument("--entities")
    p.add_argument("--per-image-max", action="store_true")
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--pr-csv")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write a PGM saliency map for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--caption")
    p.add_argument("--embeddings")
    p.add_argument("--id")
    p.add_argument("--entities")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("compare", help="train and score several variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--variant", action="append", required=True,
                   help="NAME=ATTACH[@ABLATION], repeatable, e.g. 'U-Net|1=in:1@no-color'")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_model_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and a toy network")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        code = args.func(args)
    except (ValidationError, UsageError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (EcmsaError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
