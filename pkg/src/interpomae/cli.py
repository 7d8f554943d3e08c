"""Command-line entry point: ``interpomae <subcommand> ...``.

Every subcommand that writes outputs also writes ``<output>.manifest``, a
key=value file holding the flags, seed and checkpoint hash of the run.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import data as D
from . import evaluation as ev
from . import generate as gen
from .model import ModelConfig, init_params
from .train import TrainConfig, TrainState, fit, load_checkpoint, save_checkpoint, write_log

log = logging.getLogger("interpomae")

DEFAULT_PATCH_LEN = 4
DEFAULT_LATENT_DIM = 8
DEFAULT_HIDDEN = 24
DEFAULT_LAYERS = 2
DEFAULT_INTERP_LAYERS = 3
DEFAULT_EPOCHS = (200, 200, 400)
DEFAULT_BATCH = 32
DEFAULT_LR = 1e-3


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def index_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated patch indices, got {text!r}")


def name_list(text: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in text.split(",") if t.strip())


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(path, args: argparse.Namespace, ckpt=None) -> None:
    with open(path, "w") as fh:
        fh.write(f"command={args.command}\n")
        for key, value in sorted(vars(args).items()):
            if key in ("command", "func"):
                continue
            fh.write(f"{key}={value}\n")
        if ckpt is not None:
            fh.write(f"checkpoint_sha256={sha256(ckpt)}\n")


def mask_spec(args, T: int | None = None) -> D.MaskSpec:
    if args.mask_mode == "blocks":
        return D.Blocks(args.mask_blocks, args.mask_size)
    m = args.mask_m
    if m is None:
        m = math.ceil(T / 3) if T is not None else 0
    return D.Uniform(m)


def _add_mask_flags(p, default_m_help="ceil(T/3)"):
    p.add_argument("--mask-mode", choices=["uniform", "blocks"], default="uniform")
    p.add_argument("--mask-m", type=nonneg_int, default=None, help=f"masked patches (uniform mode; default {default_m_help})")
    p.add_argument("--mask-blocks", type=nonneg_int, default=1, help="number of blocks (blocks mode)")
    p.add_argument("--mask-size", type=positive_int, default=1, help="patches per block (blocks mode)")


def _add_load_flags(p):
    p.add_argument("--id-column", default="auto", help="grouping column; 'auto' uses 'id' when present, '' for none")
    p.add_argument("--drop-columns", type=name_list, default=(), help="comma-separated header columns to ignore, e.g. Date")
    p.add_argument("--window", type=positive_int, default=None, help="cut long series into windows of this length")
    p.add_argument("--stride", type=positive_int, default=1, help="window stride")


def _auto_id(path) -> str | None:
    with open(path) as fh:
        first = fh.readline().strip().split(",")
    return "id" if "id" in [c.strip() for c in first] else None


def load(path, args) -> list[D.Series]:
    id_column = _auto_id(path) if args.id_column == "auto" else args.id_column
    series = D.load_csv(path, id_column or None, args.drop_columns)
    if args.window:
        series = D.make_windows(series, args.window, args.stride)
    return series


def cmd_sines(args) -> None:
    D.write_csv(D.generate_sines(args.n, args.len, args.channels, args.seed), args.out)
    write_manifest(f"{args.out}.manifest", args)


def cmd_train(args) -> None:
    series = load(args.data, args)
    L = series[0].length
    if L % args.patch_len:
        raise D.DataError(
            f"patch length {args.patch_len} does not divide series length {L} (remainder {L % args.patch_len}); "
            "choose --patch-len among the divisors of the series length"
        )
    T = L // args.patch_len
    spec = mask_spec(args, T)
    try:
        D.check_mask_spec(T, spec)
    except D.DataError as exc:
        raise D.DataError(f"{exc}; series of length {L} give T={T} patches at --patch-len {args.patch_len}") from exc
    joint = None
    if args.joint_mask_range is not None:
        if len(args.joint_mask_range) != 2:
            raise D.DataError("--joint-mask-range expects LO,HI")
        joint = D.UniformRange(*args.joint_mask_range)
        D.check_mask_spec(T, joint)
    norm = D.fit_normalizer(series)
    model_cfg = ModelConfig(
        T=T,
        P=args.patch_len,
        C=series[0].channels,
        d=args.latent_dim,
        enc_layers=args.layers,
        dec_layers=args.layers,
        enc_hidden=args.hidden,
        dec_hidden=args.hidden,
        interp_layers=args.interp_layers,
        interp_hidden=args.interp_hidden,
        seed=args.seed,
    )
    train_cfg = TrainConfig(
        args.epochs1, args.epochs2, args.epochs3, args.batch, args.lr, mask_spec=spec, seed=args.seed,
        joint_mask_spec=joint,
    )
    state = TrainState.start(init_params(model_cfg, norm), train_cfg)
    fit(state, D.to_grids(series, args.patch_len, norm))
    save_checkpoint(args.out_ckpt, state)
    write_log(state.history, args.log)
    write_manifest(f"{args.out_ckpt}.manifest", args, args.out_ckpt)


def _bundle(args):
    return load_checkpoint(args.ckpt).bundle


def cmd_generate(args) -> None:
    bundle = _bundle(args)
    spec = mask_spec(args, bundle.config.T)
    series = load(args.data, args)
    out = [gen.synthesize(bundle, s, spec, gen.sub_rng(args.seed, i)) for i, s in enumerate(series)]
    D.write_csv(out, args.out)
    write_manifest(f"{args.out}.manifest", args, args.ckpt)


def cmd_denoise(args) -> None:
    bundle = _bundle(args)
    series = load(args.data, args)
    D.write_csv([gen.denoise(bundle, s) for s in series], args.out)
    write_manifest(f"{args.out}.manifest", args, args.ckpt)


def cmd_impute(args) -> None:
    bundle = _bundle(args)
    missing = D.MaskPattern(bundle.config.T, args.missing)
    series = load(args.data, args)
    D.write_csv([gen.impute(bundle, s, missing) for s in series], args.out)
    write_manifest(f"{args.out}.manifest", args, args.ckpt)


def cmd_augment(args) -> None:
    bundle = _bundle(args)
    spec = mask_spec(args, bundle.config.T)
    series = load(args.data, args)
    pairs = gen.augment(bundle, series, args.k, spec, args.seed)
    D.write_csv([s for s, _ in pairs], args.out)
    gen.write_provenance([p for _, p in pairs], f"{args.out}.provenance.csv")
    write_manifest(f"{args.out}.manifest", args, args.ckpt)


def cmd_evaluate(args) -> None:
    real = load(args.real, args)
    synth = D.load_csv(args.synth, _auto_id(args.synth))  # our own output: already windowed, id-grouped
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = f"{args.name}_" if args.name else ""

    norm = load_checkpoint(args.ckpt).bundle.norm if args.ckpt else D.fit_normalizer(real)
    normalized = lambda ss: [D.Series(norm.apply(s.values), s.id) for s in ss]  # noqa: E731
    X, labels = ev.flatten_for_projection(normalized(real), normalized(synth))

    pca = ev.pca_project(X, 2, labels)
    ev.write_projection(pca, out / f"{prefix}pca.csv")
    ev.write_rows(
        [{"component": i + 1, "explained_variance_ratio": r} for i, r in enumerate(pca.explained_variance_ratio)],
        out / f"{prefix}pca_variance.csv",
    )
    tsne = ev.tsne_project(X, args.perplexity, args.iters, args.seed, labels=labels)
    ev.write_projection(tsne, out / f"{prefix}tsne.csv")
    ev.write_rows(
        [{"iteration": i, "kl": kl} for i, kl in enumerate(tsne.kl_history)], out / f"{prefix}tsne_kl.csv"
    )
    ev.write_rows(
        ev.marginal_report(real, synth),
        out / f"{prefix}marginals.csv",
        "stand-in fidelity metric: per-channel pooled mean/std and two-sample KS statistic",
    )
    prov = Path(f"{args.synth}.provenance.csv")
    if prov.exists():
        by_id = {s.id: s for s in synth}
        groups: dict[str, list] = {}
        for rec in gen.read_provenance(prov):
            groups.setdefault(rec["source_id"], []).append(by_id[rec["id"]])
        groups = {k: v for k, v in groups.items() if len(v) >= 2}
        if groups:
            per_group, grand = ev.diversity_report(groups)
            rows = [{"group": k, "mean_pairwise_distance": v} for k, v in per_group.items()]
            rows.append({"group": "ALL", "mean_pairwise_distance": grand})
            ev.write_rows(rows, out / f"{prefix}diversity.csv", "stand-in diversity metric: mean pairwise Euclidean distance within copies of one source")
    write_manifest(out / f"{prefix}run.manifest", args, args.ckpt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interpomae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sines", help="write a synthetic Sines dataset")
    p.add_argument("--n", type=positive_int, required=True)
    p.add_argument("--len", type=positive_int, default=24)
    p.add_argument("--channels", type=positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sines)

    def data_flags(p):
        p.add_argument("--data", required=True, help="input CSV")
        _add_load_flags(p)

    p = sub.add_parser("train", help="run the three training phases")
    data_flags(p)
    p.add_argument("--patch-len", type=positive_int, default=DEFAULT_PATCH_LEN)
    p.add_argument("--latent-dim", type=positive_int, default=DEFAULT_LATENT_DIM)
    p.add_argument("--hidden", type=positive_int, default=DEFAULT_HIDDEN)
    p.add_argument("--layers", type=positive_int, default=DEFAULT_LAYERS)
    p.add_argument("--interp-layers", type=positive_int, default=DEFAULT_INTERP_LAYERS,
                   help="dense layers in the interpolator, the last one linear (default: two hidden tanh layers + output)")
    p.add_argument("--interp-hidden", type=positive_int, default=None, help="default 4*T*d")
    p.add_argument("--epochs1", type=nonneg_int, default=DEFAULT_EPOCHS[0])
    p.add_argument("--epochs2", type=nonneg_int, default=DEFAULT_EPOCHS[1])
    p.add_argument("--epochs3", type=nonneg_int, default=DEFAULT_EPOCHS[2])
    p.add_argument("--batch", type=positive_int, default=DEFAULT_BATCH)
    p.add_argument("--lr", type=float, default=DEFAULT_LR)
    _add_mask_flags(p)
    p.add_argument("--joint-mask-range", type=index_list, default=None, metavar="LO,HI",
                   help="phase 3 only: draw the masked count uniformly from LO..HI per batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--log", required=True)
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("generate", cmd_generate, "synthesize one series per input series"),
        ("denoise", cmd_denoise, "full-visibility reconstruction"),
        ("impute", cmd_impute, "fill missing patches, keep observed ones"),
        ("augment", cmd_augment, "k synthetic copies per input series"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--ckpt", required=True)
        data_flags(p)
        p.add_argument("--out", required=True)
        if name in ("generate", "augment"):
            _add_mask_flags(p)
            p.add_argument("--seed", type=int, default=0)
        if name == "augment":
            p.add_argument("--k", type=positive_int, default=1)
        if name == "impute":
            p.add_argument("--missing", type=index_list, required=True, help="comma-separated missing patch indices")
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="projection and report CSVs for real vs synthetic data")
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True, help="output of generate/augment (loading flags apply to --real only)")
    _add_load_flags(p)
    p.add_argument("--ckpt", default=None, help="take normalization from this checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="", help="prefix for output files")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=positive_int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"interpomae {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
