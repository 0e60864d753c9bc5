"""``corgipile`` command line.

Every subcommand writes its outputs plus a ``<subcommand>.manifest.json`` into
``--out`` (default: ``$CORGIPILE_OUT`` or ``./corgipile-out``).  Exit codes:
0 success, 1 failure (including a failed ``verify``), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from corgipile import __version__
from corgipile.bench import (
    IO_MODES,
    BenchBusyError,
    bench_lock,
    block_size_sweep,
    epoch_overhead_bench,
    fadvise_drop,
    io_scan_bench,
    no_drop,
    write_epoch_csv,
    write_io_csv,
)
from corgipile.dataset import (
    DEFAULT_BLOCK_SIZE,
    MB,
    DatasetFile,
    SyntheticSpec,
    block_size_for,
    full_shuffle,
    generate_synthetic,
    ingest_libsvm,
    order_by_feature,
    order_by_label,
    write_like,
)
from corgipile.errors import ConfigError, CorgiPileError
from corgipile.manifest import RunManifest
from corgipile.parallel import ParallelConfig, parallel_train
from corgipile.plot import PALETTE, line_plot, scatter_plot, stacked_bars
from corgipile.sgd import HISTORY_COLUMNS, LrSchedule, Model, read_history, resolve_kind, train, write_history
from corgipile.shuffle import STRATEGIES, ShuffleConfig, StreamFactory, analyze_order, buffer_blocks
from corgipile.shuffle.order import OrderProfile, profile_sequence

ENV_OUT = "CORGIPILE_OUT"
DEFAULT_OUT = "corgipile-out"
SUBCOMMANDS = (
    "generate", "ingest", "reorder", "shuffle-copy", "train", "analyze-order",
    "verify", "bound", "bench-io", "bench-epoch", "plot",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- shared helpers


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _fraction(s: str) -> float:
    v = float(s)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {s}")
    return v


def _existing(path: str) -> str:
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    return path


def _open(path: str, manifest: RunManifest) -> DatasetFile:
    ds = DatasetFile(_existing(path))
    manifest.dataset_checksums[os.path.basename(path)] = ds.checksum()
    return ds


def _add_shuffle_flags(p: argparse.ArgumentParser, default_strategy: str = "corgipile") -> None:
    p.add_argument("--strategy", choices=STRATEGIES, default=default_strategy)
    p.add_argument("--buffer-frac", type=float, default=0.1, help="buffer (or window) size as a fraction of the data")
    p.add_argument("--double-buffer", action="store_true")
    p.add_argument("--loop-ratio", type=int, default=1, help="MRS looped emissions per scanned emission")
    p.add_argument("--corgipile-epoch", choices=("full", "sample"), default="full")
    p.add_argument("--index-budget", type=int, default=10_000_000)


def _shuffle_config(args, out: Path) -> ShuffleConfig:
    cfg = ShuffleConfig(
        strategy=args.strategy,
        buffer_fraction=args.buffer_frac,
        seed=args.seed,
        double_buffer=args.double_buffer,
        loop_ratio=args.loop_ratio,
        corgipile_epoch=args.corgipile_epoch,
        index_budget=args.index_budget,
        shuffled_copy=str(out / f"shuffled-{args.seed}.ds") if args.strategy == "shuffle_once" else None,
    )
    cfg.validate()
    return cfg


def _block_size(args) -> int:
    if args.block_size < 1:
        raise ConfigError("block size must be >= 1 byte")
    return args.block_size


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True, default=_json_default)
        f.write("\n")


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _write_text(path: Path, text: str) -> None:
    with open(path, "w") as f:
        f.write(text)


# ---------------------------------------------------------------- dataset subcommands


def cmd_generate(args, out: Path, mf: RunManifest) -> int:
    spec = SyntheticSpec(
        m=args.m, d=args.d, task=args.task, num_classes=args.classes, noise_std=args.noise, seed=args.seed,
        order=args.order, order_feature=args.order_feature, block_size_bytes=_block_size(args), separation=args.separation,
    )
    path = out / args.name
    ds = generate_synthetic(spec, path)
    mf.add_output(path)
    print(f"wrote {path}: m={ds.m} d={ds.d} N={ds.N} blocks")
    return 0


def cmd_ingest(args, out: Path, mf: RunManifest) -> int:
    path = out / args.name
    ds = ingest_libsvm(_existing(args.input), path, dim=args.dim, task=args.task, encoding=args.encoding,
                       block_size_bytes=_block_size(args), num_classes=args.classes)
    mf.add_output(path)
    print(f"wrote {path}: m={ds.m} d={ds.d} N={ds.N} blocks")
    return 0


def cmd_reorder(args, out: Path, mf: RunManifest) -> int:
    ds = _open(args.dataset, mf)
    path = out / args.name
    if args.by == "label":
        res = order_by_label(ds, path)
    else:
        res = order_by_feature(ds, args.feature, path)
    mf.add_output(path)
    print(f"wrote {path}: m={res.m} N={res.N} blocks, ordered by {args.by}")
    return 0


def cmd_shuffle_copy(args, out: Path, mf: RunManifest) -> int:
    ds = _open(args.dataset, mf)
    path = out / args.name
    res = full_shuffle(ds, args.seed, path)
    mf.add_output(path)
    print(f"wrote {path}: m={res.m}, seed {args.seed}")
    return 0


# ---------------------------------------------------------------- train


def _default_train_data(out: Path, seed: int, block_size: int | None) -> tuple[str, str]:
    """Label-clustered binary set (m=20000, d=10, 100 blocks) and a shuffled test set."""
    bs = block_size or block_size_for(200, 10)
    tr = generate_synthetic(SyntheticSpec(m=20000, d=10, seed=seed, order="label_clustered", separation=1.0,
                                          block_size_bytes=bs), out / "train.ds")
    te = generate_synthetic(SyntheticSpec(m=5000, d=10, seed=seed + 1000, order="shuffled", separation=1.0,
                                          block_size_bytes=bs), out / "test.ds")
    return str(tr.path), str(te.path)


def _reblock(ds: DatasetFile, block_size: int, path: Path) -> DatasetFile:
    if ds.meta.block_size_bytes == block_size:
        return ds
    m = ds.meta
    from corgipile.dataset import write_dataset

    return write_dataset(path, ds.read_all(), m.task, m.num_classes, m.encoding, block_size)


def _history_plots(histories: dict[str, list], out: Path, prefix: str) -> list[Path]:
    acc = {}
    acc_t = {}
    loss = {}
    for name, hist in histories.items():
        ep = [h.epoch + 1 for h in hist]
        metric = [h.test_acc if not math.isnan(h.test_acc) else h.train_acc for h in hist]
        acc[name] = (ep, metric)
        acc_t[name] = (list(np.cumsum([h.seconds for h in hist])), metric)
        loss[name] = (ep, [h.loss for h in hist])
    paths = []
    for suffix, series, xl, yl, timing in (
        ("accuracy", acc, "epoch", "accuracy (test if available, else train)", False),
        ("accuracy-time", acc_t, "wall time (s)", "accuracy", True),
        ("loss", loss, "epoch", "mean training loss", False),
    ):
        p = out / f"{prefix}{suffix}.svg"
        _write_text(p, line_plot(series, f"{yl} vs {xl}", xl, yl))
        paths.append((p, timing))
    return paths


def cmd_train(args, out: Path, mf: RunManifest) -> int:
    cfg = _shuffle_config(args, out)
    kind = resolve_kind(args.model)
    if args.workers > 1 and args.strategy != "corgipile":
        raise ConfigError("--workers applies to the corgipile strategy")
    if args.data:
        data_path, test_path = args.data, args.test
    else:
        data_path, test_path = _default_train_data(out, args.seed, args.block_size)
        mf.add_output(data_path)
        mf.add_output(test_path)
        print(f"no --data given; generated {data_path} and {test_path}")
    ds = _open(data_path, mf)
    test = _open(test_path, mf) if test_path else None
    if args.block_size is not None and ds.meta.block_size_bytes != args.block_size:
        ds = _reblock(ds, _block_size(args), out / "reblocked.ds")
        print(f"re-blocked training data to {args.block_size} bytes per block: N={ds.N}")
    num_classes = ds.meta.num_classes if kind == "softmax" else 0
    if args.init == "zeros":
        model = Model.zeros(kind, ds.d, num_classes, args.lam)
    else:
        model = Model.gaussian(kind, ds.d, num_classes, args.lam, seed=args.seed)
    if args.schedule == "exp_decay":
        sched = LrSchedule.exp_decay(args.lr, args.decay)
    else:
        n = buffer_blocks(args.buffer_frac, ds.N)
        sched = LrSchedule.theorem(ds.m / ds.N, n, args.mu, args.a)

    def progress(st):
        print(f"epoch {st.epoch + 1}/{args.epochs}: loss={st.loss:.5f} train={st.train_acc:.4f} "
              f"test={st.test_acc:.4f} {st.seconds:.2f}s")

    if args.workers > 1:
        n = buffer_blocks(args.buffer_frac, ds.N)
        pcfg = ParallelConfig(args.workers, max(1, n // args.workers), args.batch_size, args.seed, args.double_buffer)
        result = parallel_train(ds, pcfg, model, sched, args.epochs, eval_ds=test)
        for st in result.history:
            progress(st)
    else:
        result = train(ds, cfg, model, sched, args.epochs, args.batch_size, eval_ds=test, on_epoch=progress)
    hist_path = out / "history.csv"
    write_history(result.history, hist_path)
    mf.add_output(hist_path, timing=True)
    model_path = out / "model.json"
    result.model.save(model_path)
    mf.add_output(model_path)
    for p, timing in _history_plots({args.strategy: result.history}, out, ""):
        mf.add_output(p, timing=timing)
    summary = {
        "strategy": args.strategy,
        "model": kind,
        "epochs": args.epochs,
        "final": {k: v for k, v in vars(result.history[-1]).items() if k != "seconds"} if result.history else None,
        "info": result.info,
    }
    summary_path = out / "summary.json"
    _write_json(summary_path, summary)
    mf.add_output(summary_path, timing=bool(result.info.get("shuffle_once_copy_seconds")))
    return 0


# ---------------------------------------------------------------- order analysis


def _order_plots(prof: OrderProfile, out: Path, prefix: str) -> list[Path]:
    lab = prof.labels
    classes = list(prof.classes)
    colors = [PALETTE[classes.index(v) % len(PALETTE)] for v in lab]
    legend = {f"label {c:g}": PALETTE[i % len(PALETTE)] for i, c in enumerate(classes)}
    scatter = out / f"{prefix}order-scatter.svg"
    _write_text(scatter, scatter_plot(np.arange(len(prof.positions)), prof.positions,
                                      f"{prof.strategy or 'stream'}: tuple id by emission position",
                                      "emission position", "tuple id", colors, legend))
    bars = out / f"{prefix}order-windows.svg"
    _write_text(bars, stacked_bars(prof.window_label_counts, [f"label {c:g}" for c in classes],
                                   f"label counts per {prof.window} emitted tuples", "window", "count"))
    return [scatter, bars]


def cmd_analyze_order(args, out: Path, mf: RunManifest) -> int:
    ds = _open(args.dataset, mf)
    cfg = _shuffle_config(args, out)
    factory = StreamFactory(ds, cfg)
    try:
        stream = factory(args.epoch)
        prof = analyze_order(stream, args.window, args.reference_fraction)
    finally:
        factory.close()
    csv_path = out / "order.csv"
    prof.write_csv(csv_path)
    summary_path = out / "order-summary.json"
    prof.write_summary(summary_path)
    for p in [csv_path, summary_path, *_order_plots(prof, out, "")]:
        mf.add_output(p)
    s = prof.summary()
    print(f"{cfg.strategy}: emitted={s['emitted']} windows={s['windows']} "
          f"mean_abs_dev={s['mean_abs_dev']:.4f} spearman={s['spearman']:.4f}")
    return 0


# ---------------------------------------------------------------- verify / bound


def cmd_verify(args, out: Path, mf: RunManifest) -> int:
    from corgipile.verify import run_identity_suite

    report = run_identity_suite(seed=args.seed, mc_epochs=args.mc_epochs, workdir=out)
    for item in report["checks"]:
        print(f"{'PASS' if item['passed'] else 'FAIL'}  {item['name']}: {item['detail']}")
    path = out / "verify-report.json"
    _write_json(path, report)
    mf.add_output(path)
    ok = all(c["passed"] for c in report["checks"])
    print(f"{sum(c['passed'] for c in report['checks'])}/{len(report['checks'])} identities hold")
    return 0 if ok else 1


def cmd_bound(args, out: Path, mf: RunManifest) -> int:
    from corgipile.theory import SamplingParams, convergence_bound_terms, nonconvex_bound_terms, read_cost_model

    params = SamplingParams(args.N, args.n, args.b)
    m = args.m if args.m is not None else args.N * args.b
    if args.objective == "convex":
        terms = convergence_bound_terms(params, args.S, args.hd, args.sigma2, m)
    else:
        terms = nonconvex_bound_terms(params, args.S, args.hd, args.sigma2, m, args.case)
    row = {
        "N": args.N, "n": args.n, "b": args.b, "S": args.S, "m": m, "h_D": args.hd, "sigma2": args.sigma2,
        "alpha_exact": str(params.alpha), "beta_exact": str(params.beta), "gamma_exact": str(params.gamma),
        **terms.to_dict(),
    }
    if args.t_lat is not None and args.t_t is not None:
        rc = read_cost_model(args.t_lat, args.t_t, args.b, params, args.eps, args.sigma2, args.hd)
        row.update({f"read_cost_{k}": v for k, v in vars(rc).items()})
    if args.format == "json":
        text = json.dumps(row, indent=2, sort_keys=True) + "\n"
        path = out / "bound.json"
    else:
        keys = list(row)
        text = ",".join(keys) + "\n" + ",".join(str(row[k]) for k in keys) + "\n"
        path = out / "bound.csv"
    sys.stdout.write(text)
    _write_text(path, text)
    mf.add_output(path)
    return 0


# ---------------------------------------------------------------- benchmarks


def cmd_bench_io(args, out: Path, mf: RunManifest) -> int:
    hook = no_drop if args.no_cache_drop else fadvise_drop
    with bench_lock(args.lock_file):
        if args.sweep:
            sizes = [int(float(s) * MB) for s in args.sizes.split(",")]
            results = block_size_sweep(out, int(args.total_mb * MB), sizes, args.reps, args.seed, hook)
        else:
            if not args.data:
                raise UsageError("bench-io needs --data or --sweep")
            ds = _open(args.data, mf)
            modes = args.modes.split(",")
            for mode in modes:
                if mode not in IO_MODES:
                    raise UsageError(f"unknown mode {mode!r}; choose from {', '.join(IO_MODES)}")
            results = [io_scan_bench(ds, mode, args.reps, args.seed, hook) for mode in modes]
    path = out / "io.csv"
    write_io_csv(results, path)
    mf.add_output(path, timing=True)
    for r in results:
        print(f"{r.mode:13s} block={r.block_size:>10d}B  {r.regime:16s} "
              f"min={r.min:9.1f} median={r.median:9.1f} max={r.max:9.1f} MB/s")
    if args.sweep:
        med = [r.median for r in results]
        mono = all(b >= a for a, b in zip(med, med[1:]))
        print(f"random-block median throughput non-decreasing in block size: {mono} (informational)")
    return 0


def cmd_bench_epoch(args, out: Path, mf: RunManifest) -> int:
    ds = _open(_existing(args.data), mf)
    configs = []
    for token in args.strategies.split(","):
        name, _, opt = token.partition("+")
        if name not in STRATEGIES:
            raise UsageError(f"unknown strategy {name!r}")
        cfg = ShuffleConfig(name, args.buffer_frac, args.seed, double_buffer=(opt == "double_buffer"),
                            shuffled_copy=str(out / f"shuffled-{args.seed}.ds") if name == "shuffle_once" else None)
        cfg.validate()
        configs.append(cfg)
    kind = resolve_kind(args.model)
    model = Model.zeros(kind, ds.d, ds.meta.num_classes if kind == "softmax" else 0)
    with bench_lock(args.lock_file):
        rows = epoch_overhead_bench(ds, configs, model, args.epochs, args.lr, args.batch_size, args.warmup,
                                    args.compute_us * 1e-6)
    path = out / "epoch.csv"
    write_epoch_csv(rows, path)
    mf.add_output(path, timing=True)
    for r in rows:
        ratio = "" if r.ratio is None else f" ratio={r.ratio:.3f}"
        print(f"{r.label:26s} mean={r.mean:.4f}s std={r.std:.4f}s{ratio}")
    return 0


# ---------------------------------------------------------------- plot


def _read_order_csv(path: str) -> OrderProfile:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["position", "id", "label"]:
            raise ValueError(f"{path}: expected header position,id,label")
        ids, labels = [], []
        for i, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"{path}:{i}: expected 3 fields, got {len(row)}")
            try:
                ids.append(int(row[1]))
                labels.append(float(row[2]))
            except ValueError:
                raise ValueError(f"{path}:{i}: malformed row {row!r}") from None
    return profile_sequence(ids, labels, strategy=Path(path).stem)


def _series_labels(paths: list[str]) -> list[str]:
    stems = [Path(p).stem for p in paths]
    if len(set(stems)) == len(stems):
        return stems
    return [f"{Path(p).parent.name}/{Path(p).stem}" for p in paths]


def cmd_plot(args, out: Path, mf: RunManifest) -> int:
    histories = {}
    for path, label in zip(args.inputs, _series_labels(args.inputs)):
        _existing(path)
        with open(path, newline="") as f:
            header = f.readline().strip().split(",")
        if tuple(header) == HISTORY_COLUMNS:
            histories[label] = read_history(path)
        elif header == ["position", "id", "label"]:
            prof = _read_order_csv(path)
            for p in _order_plots(prof, out, f"{args.prefix}{Path(path).stem}-"):
                mf.add_output(p)
                print(f"wrote {p}")
        else:
            raise ValueError(f"{path}: not a history or order-profile CSV (header {','.join(header)!r})")
    if histories:
        for p, timing in _history_plots(histories, out, args.prefix):
            mf.add_output(p, timing=timing)
            print(f"wrote {p}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="corgipile", description="Out-of-core SGD with block + tuple shuffling.")
    top.add_argument("--version", action="version", version=f"corgipile {__version__}")
    top.add_argument("--replay", metavar="MANIFEST", help="re-run the command recorded in a manifest")
    top.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./{DEFAULT_OUT})")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        p.add_argument("--out", help=argparse.SUPPRESS, dest="sub_out")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        return p

    p = add("generate", cmd_generate, "write a synthetic dataset")
    p.add_argument("--m", type=_positive_int, default=1000)
    p.add_argument("--d", type=_positive_int, default=10)
    p.add_argument("--task", choices=("binary", "multiclass", "regression"), default="binary")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--order", choices=("shuffled", "label_clustered", "feature_ordered"), default="shuffled")
    p.add_argument("--order-feature", type=int, default=0)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("--block-size", "--block_size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--name", default="dataset.ds")

    p = add("ingest", cmd_ingest, "convert a LIBSVM text file")
    p.add_argument("input")
    p.add_argument("--dim", type=_positive_int)
    p.add_argument("--task", choices=("binary", "multiclass", "regression"), default="binary")
    p.add_argument("--classes", type=int)
    p.add_argument("--encoding", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--block-size", "--block_size", type=int, default=DEFAULT_BLOCK_SIZE)
    p.add_argument("--name", default="dataset.ds")

    p = add("reorder", cmd_reorder, "cluster a dataset by label or by one feature")
    p.add_argument("dataset")
    p.add_argument("--by", choices=("label", "feature"), default="label")
    p.add_argument("--feature", type=int, default=0)
    p.add_argument("--name", default="reordered.ds")

    p = add("shuffle-copy", cmd_shuffle_copy, "materialize a fully shuffled copy")
    p.add_argument("dataset")
    p.add_argument("--name", default="shuffled.ds")

    p = add("train", cmd_train, "train a linear model with a shuffling strategy")
    p.add_argument("--data", help="training dataset (default: generate a label-clustered synthetic set)")
    p.add_argument("--test", help="evaluation dataset")
    _add_shuffle_flags(p)
    p.add_argument("--model", default="lr", help="lr | svm | linreg | softmax (or logistic, hinge, squared)")
    p.add_argument("--block-size", "--block_size", type=int, help="re-block the training data to this many bytes")
    p.add_argument("--lr", "--learning-rate", "--learning_rate", dest="lr", type=float, default=0.01)
    p.add_argument("--decay", type=float, default=0.95)
    p.add_argument("--schedule", choices=("exp_decay", "theorem"), default="exp_decay")
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--a", type=float, default=0.0)
    p.add_argument("--epochs", "--max-epoch-num", "--max_epoch_num", dest="epochs", type=int, default=20)
    p.add_argument("--batch-size", type=_positive_int, default=1)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--lam", type=float, default=0.0, help="L2 strength")
    p.add_argument("--init", choices=("zeros", "gaussian"), default="zeros")

    p = add("analyze-order", cmd_analyze_order, "profile the tuple order a strategy emits")
    p.add_argument("dataset")
    _add_shuffle_flags(p, "no_shuffle")
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--window", type=_positive_int, default=20)
    p.add_argument("--reference-fraction", type=float)

    p = add("verify", cmd_verify, "run the sampling/variance/bound identity suite")
    p.add_argument("--mc-epochs", type=_positive_int, default=100_000)

    p = add("bound", cmd_bound, "evaluate convergence-bound terms and the read-cost model")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--b", type=int, required=True)
    p.add_argument("--S", type=_positive_int, default=1)
    p.add_argument("--hd", type=float, default=1.0)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--m", type=int)
    p.add_argument("--objective", choices=("convex", "nonconvex"), default="convex")
    p.add_argument("--case", type=int, choices=(1, 2))
    p.add_argument("--t-lat", type=float)
    p.add_argument("--t-t", type=float)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = add("bench-io", cmd_bench_io, "sequential vs random block/tuple read throughput")
    p.add_argument("--data")
    p.add_argument("--modes", default=",".join(IO_MODES))
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--sweep", action="store_true", help="random-block throughput over several block sizes")
    p.add_argument("--sizes", default="2,10,50", help="block sizes in MB for --sweep")
    p.add_argument("--total-mb", type=float, default=200.0)
    p.add_argument("--no-cache-drop", action="store_true")
    p.add_argument("--lock-file")

    p = add("bench-epoch", cmd_bench_epoch, "per-epoch wall time for each strategy")
    p.add_argument("--data", required=True)
    p.add_argument("--strategies", default="no_shuffle,shuffle_once,epoch_shuffle,sliding_window,mrs,block_only,corgipile,corgipile+double_buffer")
    p.add_argument("--buffer-frac", type=float, default=0.1)
    p.add_argument("--epochs", type=_positive_int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--model", default="lr")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=_positive_int, default=1)
    p.add_argument("--compute-us", type=float, default=0.0, help="simulated extra compute per tuple, microseconds")
    p.add_argument("--lock-file")

    p = add("plot", cmd_plot, "SVG plots from history or order-profile CSVs")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--prefix", default="plot-")
    return top


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.replay:
            return _replay(args)
        if not args.command:
            raise UsageError("missing subcommand; choose from " + ", ".join(SUBCOMMANDS))
        return _dispatch(args, argv)
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except (UsageError, ConfigError, BenchBusyError) as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except (CorgiPileError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def _out_dir(args) -> Path:
    out = args.sub_out or args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _strip_out(argv: list[str]) -> list[str]:
    clean, skip = [], False
    for tok in argv:
        if skip:
            skip = False
            continue
        if tok == "--out":
            skip = True
            continue
        if tok.startswith("--out="):
            continue
        clean.append(tok)
    return clean


def _dispatch(args, argv: list[str]) -> int:
    out = _out_dir(args)
    sub_argv = _strip_out(argv)
    sub_argv = sub_argv[sub_argv.index(args.command):]
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "out", "sub_out", "replay")}
    mf = RunManifest(args.command, sub_argv, flags, getattr(args, "seed", None), os.getcwd())
    code = args.func(args, out, mf)
    mf.finish()
    mf.write(out)
    return code


def _replay(args) -> int:
    mf = RunManifest.load(_existing(args.replay))
    out = Path(args.out or os.environ.get(ENV_OUT) or DEFAULT_OUT).resolve()
    prev = os.getcwd()
    os.chdir(mf.cwd)
    try:
        return run(["--out", str(out), *mf.argv])
    finally:
        os.chdir(prev)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
