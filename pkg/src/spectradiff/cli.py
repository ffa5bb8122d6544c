"""``spectradiff`` command-line interface.

Every subcommand reads and writes files only.  Exit status is 0 on success,
2 for usage errors and 1 for runtime failures; diagnostics go to stderr.
Options may also come from a TOML file given with ``--config``; keys use the
option names with dashes replaced by underscores, and explicit flags win.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .augment import DAParams, generate_da
from .classifier import (ClassifierConfig, augmentation_experiment, format_table,
                         write_confusion, write_experiment)
from .figure import interpolate_rows
from .io import LabeledDataset, SynthSpec, generate_synthetic, load_csv, save_csv
from .metrics import export_pca, similarity_report, write_pca, write_report
from .pipeline import DiffRaman, load_generator, load_vqvae, save_generator, save_vqvae
from .vqvae import VQVAE

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("spectradiff")

METRIC_LENGTH = 1024


class UsageError(Exception):
    """Bad combination of arguments detected after parsing."""


def _read_toml(path):
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid TOML in {path}: {exc}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _align_classes(ds, names):
    """Relabel ``ds`` so its class registry is ``names`` (a superset of its own)."""
    if ds.class_names == tuple(names):
        return ds
    missing = [c for c in ds.class_names if c not in names]
    if missing:
        raise ValueError(f"unknown classes {missing}; expected a subset of {list(names)}")
    remap = np.array([list(names).index(c) for c in ds.class_names], dtype=np.intp)
    labels = remap[ds.labels] if len(ds) else ds.labels
    return LabeledDataset(ds.intensities, labels, names, ds.wavenumbers)


def _load_joined(spec):
    """Load one or more comma-separated CSV paths as a single dataset."""
    paths = [p for p in spec.split(",") if p]
    if not paths:
        raise UsageError(f"empty file list {spec!r}")
    ds = load_csv(paths[0])
    for p in paths[1:]:
        ds = ds.concat(load_csv(p))
    return ds


def _set_name(spec):
    return "+".join(Path(p).stem for p in spec.split(",") if p)


# -- subcommands ---------------------------------------------------------------

def cmd_synth_data(args):
    table = _read_toml(args.spec)
    table = table.get("synth", table)
    known = set(SynthSpec.__dataclass_fields__)
    unknown = sorted(set(table) - known)
    if unknown:
        raise UsageError(f"unknown keys in {args.spec}: {unknown}")
    if args.seed is not None:
        table["seed"] = args.seed
    for key in ("peak_center_range", "peak_width_range", "amplitude_range"):
        if key in table:
            table[key] = tuple(table[key])
    save_csv(generate_synthetic(SynthSpec(**table)), args.out)


def cmd_train_vqvae(args):
    data = load_csv(args.data)
    pixels, _ = DiffRaman(figure_side=args.side).figures(data.intensities)
    vq = VQVAE(args.side, args.d, args.codebook, args.commitment, args.hidden, args.epochs,
               args.batch, args.lr, args.seed)
    vq.fit(pixels)
    last = vq.history_[-1]
    logger.info("vqvae done: loss %.6g, %d codes in use", last["total"], last["codes_used"])
    save_vqvae(args.out, vq, data.class_names, data.wavenumbers)


def cmd_train_ddpm(args):
    data = load_csv(args.data)
    vq, _, _ = load_vqvae(args.vqvae)
    model = DiffRaman(figure_side=vq.figure_side, latent_dim=vq.latent_dim,
                      codebook_size=vq.codebook_size, commitment=vq.commitment,
                      hidden_channels=tuple(vq.hidden_channels), vq_epochs=vq.epochs,
                      steps=args.steps, beta_start=args.beta_start, beta_end=args.beta_end,
                      base_channels=args.base_channels, depth=args.depth,
                      time_embed_dim=args.time_embed_dim, ddpm_epochs=args.epochs,
                      batch_size=args.batch, learning_rate=args.lr,
                      requantize=not args.no_requantize, random_state=args.seed)
    model.vqvae_ = vq
    model.fit_diffusion(data.intensities, data.labels)
    names = [data.class_names[c] for c in model.classes_]
    save_generator(args.out, model, names, data.wavenumbers)


def cmd_sample(args):
    model, names, grid = load_generator(args.ddpm, args.vqvae)
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    if args.cls not in names:
        raise ValueError(f"unknown class {args.cls!r}; known: {list(names)}")
    if args.no_requantize:
        model.requantize = False
    label = model.classes_[names.index(args.cls)]
    X = model.sample(label, args.count, np.random.default_rng(args.seed))
    if grid is None:
        grid = np.arange(X.shape[1], dtype=np.float64)
    save_csv(LabeledDataset(X, np.zeros(len(X), dtype=np.intp), [args.cls], grid), args.out)


def cmd_augment_da(args):
    data = load_csv(args.data)
    blur = None if args.no_blur else tuple(args.blur_range)
    params = DAParams(args.noise_sigma, blur, tuple(args.scale_range))
    save_csv(generate_da(data, args.per_class, params, args.seed), args.out)


def cmd_metrics(args):
    real = load_csv(args.real)
    methods = args.method or [_set_name(p) for p in args.generated]
    if len(methods) != len(args.generated):
        raise UsageError("give one --method per --generated file")
    R = interpolate_rows(real.intensities, METRIC_LENGTH)
    rows = []
    for method, path in zip(methods, args.generated):
        gen = _load_joined(path)
        G = interpolate_rows(gen.intensities, METRIC_LENGTH)
        rows.append((method, similarity_report(R, G)))
        if args.per_class:
            for k, name in enumerate(gen.class_names):
                real_rows = R[real.labels == real.class_names.index(name)] \
                    if name in real.class_names else R[:0]
                gen_rows = G[gen.labels == k]
                if len(real_rows) < 2 or len(gen_rows) < 2:
                    logger.warning("skipping class %s: fewer than 2 spectra", name)
                    continue
                rows.append((f"{method}/{name}", similarity_report(real_rows, gen_rows)))
    write_report(rows, args.out)


def cmd_augment_eval(args):
    real = load_csv(args.real)
    test = _align_classes(load_csv(args.test), real.class_names)
    config = ClassifierConfig(real.n_classes, max_epochs=args.max_epochs, patience=args.patience,
                              batch_size=args.batch, learning_rate=args.lr, seed=args.seed)
    conditions = [("real", None)]
    for path in args.synthetic or ():
        syn = _align_classes(_load_joined(path), real.class_names)
        conditions.append((f"real+{_set_name(path)}", syn))
    rows = []
    for name, syn in conditions:
        res = augmentation_experiment(real, syn, test, config, trials=args.trials,
                                      monitor=args.monitor)
        rows.append((name, res))
        if args.confusion_dir:
            Path(args.confusion_dir).mkdir(parents=True, exist_ok=True)
            for i, rep in enumerate(res.reports):
                write_confusion(rep, Path(args.confusion_dir) / f"{name}_trial{i}.csv")
    write_experiment(rows, args.out)
    print(format_table(rows))


def cmd_export_pca(args):
    sets = {}
    for path in args.input:
        ds = load_csv(path)
        sid = Path(path).stem
        if sid in sets:
            raise UsageError(f"duplicate set id {sid!r}")
        X = interpolate_rows(ds.intensities, METRIC_LENGTH) if len(ds) else \
            np.zeros((0, METRIC_LENGTH))
        sets[sid] = (X, [ds.class_names[k] for k in ds.labels])
    write_pca(export_pca(sets, args.components), args.out, args.components)


# -- parser ----------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="spectradiff",
        description="Class-conditional latent diffusion for 1-D spectra.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress to stderr (-vv for debug)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        if name != "synth-data":
            p.add_argument("--config", help="TOML file of option defaults")
        return p

    p = command("synth-data", cmd_synth_data, "generate a synthetic labelled dataset")
    p.add_argument("--spec", required=True, help="TOML file with generator settings")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, help="overrides the seed in --spec")

    p = command("train-vqvae", cmd_train_vqvae, "train the figure autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--side", type=int, default=32, help="figure side M")
    p.add_argument("--d", type=int, default=16, help="latent dimension")
    p.add_argument("--codebook", type=int, default=1024, help="codebook size N")
    p.add_argument("--commitment", type=float, default=0.25)
    p.add_argument("--hidden", type=_ints, default=(32, 64), help="e.g. 32,64")
    p.add_argument("--epochs", type=int, default=600)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)

    p = command("train-ddpm", cmd_train_ddpm, "train the conditional latent diffusion model")
    p.add_argument("--data", required=True)
    p.add_argument("--vqvae", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--time-embed-dim", type=int, default=128)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--no-requantize", action="store_true",
                   help="decode raw diffusion samples instead of snapping them to the codebook")
    p.add_argument("--seed", type=int, default=0)

    p = command("sample", cmd_sample, "generate spectra of one class")
    p.add_argument("--ddpm", required=True)
    p.add_argument("--vqvae", required=True)
    p.add_argument("--class", dest="cls", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-requantize", action="store_true")
    p.add_argument("--seed", type=int, default=0)

    p = command("augment-da", cmd_augment_da, "classical augmentation baseline")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--noise-sigma", type=float, default=0.02,
                   help="noise std relative to each spectrum's range")
    p.add_argument("--blur-range", type=_floats, default=(0.5, 2.0), help="blur sigma low,high")
    p.add_argument("--no-blur", action="store_true")
    p.add_argument("--scale-range", type=_floats, default=(0.9, 1.1))
    p.add_argument("--seed", type=int, default=0)

    p = command("metrics", cmd_metrics, "similarity of generated to real spectra")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True, action="append",
                   help="CSV (or comma-separated CSVs forming one set); repeat per method")
    p.add_argument("--method", action="append", help="row name per --generated file")
    p.add_argument("--per-class", action="store_true", help="add one row per class")
    p.add_argument("--out", required=True)

    p = command("augment-eval", cmd_augment_eval, "classifier accuracy with and without synthetic data")
    p.add_argument("--real", required=True)
    p.add_argument("--synthetic", action="append",
                   help="CSV (or comma-separated CSVs forming one set); repeat per condition")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--monitor", choices=("validation", "test"), default="validation")
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--confusion-dir", help="write one confusion matrix CSV per trial here")
    p.add_argument("--seed", type=int, default=0)

    p = command("export-pca", cmd_export_pca, "project spectra sets onto shared principal components")
    p.add_argument("--input", required=True, action="append")
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=2)
    return parser


def _apply_config(parser, argv):
    """Parse ``argv`` with defaults taken from the subcommand's ``--config`` file."""
    choices = parser._subparsers._group_actions[0].choices
    cmd = next((a for a in argv if a in choices), None)
    if cmd is not None:
        sub = choices[cmd]
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[argv.index(cmd) + 1:])
        if known.config and any(a.dest == "config" for a in sub._actions):
            table = _read_toml(known.config)
            actions = {a.dest: a for a in sub._actions}
            values = {}
            for key, value in table.items():
                dest = key.replace("-", "_")
                if dest not in actions or dest in ("config", "help"):
                    raise UsageError(f"unknown key {key!r} in {known.config}")
                values[dest] = tuple(value) if isinstance(value, list) else value
                # a value from the file satisfies a required flag
                actions[dest].required = False
            sub.set_defaults(**values)
    return parser.parse_args(argv)


def _limit_threads():
    n = os.environ.get("SPECTRADIFF_THREADS")
    if not n:
        return None
    try:
        n = int(n)
    except ValueError:
        raise UsageError(f"SPECTRADIFF_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=max(1, n))


def main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"spectradiff: error: {exc}", file=sys.stderr)
        return 2
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        limiter = _limit_threads()
        try:
            args.func(args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except UsageError as exc:
        print(f"spectradiff {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report every runtime failure the same way
        logger.debug("traceback", exc_info=True)
        print(f"spectradiff {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
