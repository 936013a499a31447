"""Command-line front end.

Subcommands chain the library into complete workflows: preprocess pcaps into
vector files, build labeled/balanced/split datasets, train and evaluate the
two model families, predict straight from a pcap, sweep convolution
hyperparameters, and cluster a confusion matrix.

Results go to stdout, JSON-lines logs to stderr.  Exit codes: 0 success,
1 user error, 2 internal error.  All randomness derives from --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

from . import __version__

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2


def log_event(**fields) -> None:
    print(json.dumps(fields), file=sys.stderr)


def _dataset_split_paths(base: Path) -> dict[str, Path]:
    stem = base.name[: -len(".dpkt")] if base.name.endswith(".dpkt") else base.name
    return {part: base.with_name(f"{stem}.{part}.dpkt") for part in ("train", "val", "test")}


def _collect_pcaps(paths: list[str]) -> list[Path]:
    found: list[Path] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            found.extend(sorted(q for q in p.rglob("*.pcap") if q.is_file()))
        else:
            found.append(p)
    return found


def cmd_preprocess(args) -> int:
    from . import dataset as ds_mod
    from . import pcapfile, preprocess

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    import numpy as np

    try:
        for pcap_path in args.pcap:
            source = pcapfile.open_capture(pcap_path)
            vectors, stats = preprocess.preprocess_capture(source)
            rows = (
                np.frombuffer(b"".join(v.raw for v in vectors), dtype=np.uint8).reshape(
                    len(vectors), ds_mod.DIM
                )
                if vectors
                else np.zeros((0, ds_mod.DIM), dtype=np.uint8)
            )
            out_path = out_dir / (Path(pcap_path).stem + ".dpkt")
            labeled = ds_mod.LabeledDataset(
                rows=rows,
                labels=np.zeros(len(vectors), dtype=np.int64),
                classes=[source.label_hint or Path(pcap_path).stem],
            )
            ds_mod.save_dataset(labeled, out_path)
            written.append(out_path)
            print(f"{pcap_path}: frames={stats.frames} kept={stats.kept}")
            for reason, count in stats.counts.items():
                if count:
                    print(f"  {reason.value}: {count}")
            log_event(
                event="preprocessed",
                pcap=str(pcap_path),
                out=str(out_path),
                kept=stats.kept,
                discarded={r.value: c for r, c in stats.counts.items() if c},
            )
    except Exception:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    from . import dataset as ds_mod
    from .errors import EmptyClass

    if args.scheme:
        scheme = ds_mod.load_scheme(args.scheme)
    elif args.task:
        scheme = ds_mod.default_scheme(args.task)
    else:
        print("error: provide --scheme or --task", file=sys.stderr)
        return EXIT_USER

    pcaps = _collect_pcaps(args.inputs)
    if not pcaps:
        print("error: no input pcap files", file=sys.stderr)
        return EXIT_USER
    labeled: list[tuple[Path, int]] = []
    unmatched: list[Path] = []
    for path in pcaps:
        index = ds_mod.label_capture(path, scheme)
        if index is None:
            unmatched.append(path)
        else:
            labeled.append((path, index))
    for path in unmatched:
        print(f"unmatched: {path}", file=sys.stderr)
    if unmatched and args.strict:
        return EXIT_USER

    ds, reports = ds_mod.build_dataset(labeled, scheme.classes)
    log_event(
        event="built",
        files=len(reports),
        rows=len(ds),
        unmatched=[str(p) for p in unmatched],
    )
    print(f"classes ({len(scheme.classes)}):")
    counts = ds.class_counts()
    for name, count in zip(scheme.classes, counts):
        print(f"  {name}: {count}")
    empty = [scheme.classes[i] for i, c in enumerate(counts) if c == 0]
    if empty:
        raise EmptyClass(f"classes with zero rows: {', '.join(empty)}")

    from .seeds import derive_seed

    if args.balance:
        ds = ds_mod.undersample(
            ds, seed=derive_seed(args.seed, "undersample"), balance_ratio=args.balance_ratio
        )
        print("after balancing:")
        for name, count in zip(scheme.classes, ds.class_counts()):
            print(f"  {name}: {count}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.split:
        parts = ds_mod.split(ds, seed=derive_seed(args.seed, "split"))
        paths = _dataset_split_paths(out)
        ds_mod.save_dataset(parts.train, paths["train"])
        ds_mod.save_dataset(parts.validation, paths["val"])
        ds_mod.save_dataset(parts.test, paths["test"])
        print(
            f"split sizes: train={len(parts.train)} "
            f"validation={len(parts.validation)} test={len(parts.test)}"
        )
        for name, path in paths.items():
            log_event(event="wrote", part=name, path=str(path))
    ds_mod.save_dataset(ds, out)
    log_event(event="wrote", part="full", path=str(out))
    print(f"dataset written: {out} ({len(ds)} rows)")
    return EXIT_OK


def _load_split(args):
    from . import dataset as ds_mod

    base = Path(args.dataset)
    paths = _dataset_split_paths(base)
    if all(p.exists() for p in paths.values()):
        return ds_mod.SplitDataset(
            train=ds_mod.load_dataset(paths["train"]),
            validation=ds_mod.load_dataset(paths["val"]),
            test=ds_mod.load_dataset(paths["test"]),
        )
    if args.split_seed is None:
        print(
            "error: no .train/.val/.test siblings next to the dataset; "
            "pass --split-seed to split on the fly",
            file=sys.stderr,
        )
        return None
    full = ds_mod.load_dataset(base)
    return ds_mod.split(full, seed=args.split_seed)


def cmd_train(args) -> int:
    from . import models as models_mod
    from . import training as training_mod
    from .nn.model import save_model

    split = _load_split(args)
    if split is None:
        return EXIT_USER
    n_classes = len(split.train.classes)
    sae_cfg = models_mod.SAEConfig(n_classes=n_classes)
    cnn_cfg = (
        models_mod.char_cnn_config() if n_classes == 12 else models_mod.app_cnn_config()
    )
    cnn_cfg.n_classes = n_classes
    settings = training_mod.TrainSettings()
    if args.config:
        values = training_mod.parse_train_config(Path(args.config).read_text(encoding="utf-8"))
        training_mod.apply_config(values, sae_cfg, cnn_cfg, settings)

    log_lines: list[str] = []

    def log_cb(fields: dict) -> None:
        line = json.dumps(fields)
        log_lines.append(line)
        print(line, file=sys.stderr)

    if args.model == "sae":
        model = models_mod.build_sae(sae_cfg, seed=args.seed, class_names=split.train.classes)
        training_mod.pretrain_sae(
            model,
            split.train.inputs(),
            sae_cfg,
            settings=settings,
            seed=args.seed,
            val_vectors=split.validation.inputs() if len(split.validation) else None,
            log_cb=log_cb,
        )
        run = training_mod.finetune(
            model, split, sae_cfg, settings=settings, seed=args.seed, log_cb=log_cb
        )
    else:
        model = models_mod.build_cnn(cnn_cfg, seed=args.seed, class_names=split.train.classes)
        run = training_mod.finetune(
            model, split, cnn_cfg, settings=settings, seed=args.seed, log_cb=log_cb
        )

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    out.with_suffix(out.suffix + ".trainlog.jsonl").write_text(
        "".join(line + "\n" for line in log_lines), encoding="utf-8"
    )
    log_event(
        event="trained",
        model=args.model,
        out=str(out),
        stop_epoch=run.stop_epoch,
        best_validation_loss=run.best_validation_loss,
        wall_time=round(run.wall_time, 3),
    )
    print(f"model written: {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from . import dataset as ds_mod
    from . import evaluation as ev
    from .errors import EmptyDataset
    from .nn.model import load_model

    model = load_model(args.model)
    test = ds_mod.load_dataset(args.dataset)
    if len(test) == 0:
        raise EmptyDataset(f"{args.dataset}: nothing to evaluate")
    cm = ev.confusion(model, test)
    report = ev.metrics(cm)
    print(ev.format_metrics_table(report))
    if args.out:
        paths = ev.write_report(report, cm, args.out)
        log_event(event="report", **{k: str(v) for k, v in paths.items()})
    return EXIT_OK


def cmd_predict(args) -> int:
    from . import pcapfile, preprocess
    from . import evaluation as ev
    from .nn.model import load_model
    import numpy as np

    model = load_model(args.model)
    source = pcapfile.open_capture(args.pcap)
    vectors, stats = preprocess.preprocess_capture(source)
    log_event(event="preprocessed", pcap=str(args.pcap), kept=stats.kept, frames=stats.frames)
    if not vectors:
        return EXIT_OK
    rows = np.frombuffer(b"".join(v.raw for v in vectors), dtype=np.uint8).reshape(
        len(vectors), preprocess.VECTOR_LEN
    )
    probs = ev.predict_proba(model, rows)
    names = model.class_names or [str(i) for i in range(probs.shape[1])]
    for vec, dist in zip(vectors, probs):
        best = int(dist.argmax())
        print(f"{vec.source_offset[1]},{names[best]},{dist[best]:.6f}")
    return EXIT_OK


def cmd_grid_search(args) -> int:
    from . import models as models_mod
    from . import training as training_mod

    split = _load_split(args)
    if split is None:
        return EXIT_USER
    n_classes = len(split.train.classes)
    base = models_mod.char_cnn_config() if n_classes == 12 else models_mod.app_cnn_config()
    base.n_classes = n_classes
    settings = training_mod.TrainSettings()
    if args.config:
        values = training_mod.parse_train_config(Path(args.config).read_text(encoding="utf-8"))
        training_mod.apply_config(values, models_mod.SAEConfig(), base, settings)
    if args.epochs is not None:
        base.epochs = args.epochs

    def axis(raw: str) -> tuple[int, ...]:
        return tuple(int(v) for v in raw.split(",") if v.strip())

    grid = training_mod.GridSpec(
        c1_sizes=axis(args.c1_sizes),
        c1_counts=axis(args.c1_counts),
        c1_strides=axis(args.c1_strides),
        c2_sizes=axis(args.c2_sizes),
        c2_counts=axis(args.c2_counts),
        c2_strides=axis(args.c2_strides),
        objective=args.paper_objective,
    )
    entries = training_mod.grid_search(
        grid,
        split,
        base,
        settings=settings,
        seed=args.seed,
        log_cb=lambda fields: log_event(**fields),
    )
    csv_text = training_mod.leaderboard_csv(entries)
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        log_event(event="leaderboard", path=str(args.out), entries=len(entries))
    print(csv_text, end="")
    return EXIT_OK


def cmd_cluster_confusion(args) -> int:
    from . import evaluation as ev

    cm = ev.parse_confusion_csv(Path(args.matrix).read_text(encoding="utf-8"))
    normalized = ev.row_normalize(cm)
    dendrogram, groups = ev.cluster_confusion(normalized, args.k)
    for number, group in enumerate(groups, start=1):
        names = ", ".join(cm.classes[i] for i in group)
        print(f"group {number}: {names}")
    if args.out:
        Path(args.out).write_text(ev.dendrogram_lines(dendrogram), encoding="utf-8")
        log_event(event="dendrogram", path=str(args.out), merges=len(dendrogram.merges))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pktclass",
        description="Packet-level traffic classification toolkit",
    )
    parser.add_argument("--threads", type=int, default=None, help="cap numeric library threads")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="pcap files to vector files")
    p.add_argument("--pcap", action="append", required=True, help="input pcap (repeatable)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("make-dataset", help="label, balance and split pcaps into a dataset")
    p.add_argument("inputs", nargs="+", help="pcap files or directories")
    p.add_argument("--scheme", help="label scheme file (glob<TAB>class lines)")
    p.add_argument("--task", choices=["app", "char"], help="use a built-in label scheme")
    p.add_argument("--balance", action="store_true", help="undersample to the minimum class")
    p.add_argument(
        "--balance-ratio",
        type=float,
        default=1.0,
        dest="balance_ratio",
        help="allow classes up to ratio x the minimum count (default 1.0 = exact)",
    )
    p.add_argument("--split", action="store_true", help="write 64/16/20 train/val/test files")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--strict", action="store_true", help="fail when any input is unmatched")
    p.add_argument("--out", required=True, help="output dataset path")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", help="train a model on a split dataset")
    p.add_argument("--model", choices=["sae", "cnn"], required=True)
    p.add_argument("--dataset", required=True, help="dataset path (with .train/.val/.test siblings)")
    p.add_argument("--config", help="flat key=value training configuration file")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split-seed", type=int, default=None, help="split a monolithic dataset file")
    p.add_argument("--out", required=True, help="output model path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", help="directory for the report bundle")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify every kept packet of a pcap")
    p.add_argument("--model", required=True)
    p.add_argument("--pcap", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("grid-search", help="sweep convolution hyperparameters")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="base training configuration")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--split-seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None, help="budget per configuration")
    p.add_argument("--c1-sizes", default="4", dest="c1_sizes")
    p.add_argument("--c1-counts", default="200", dest="c1_counts")
    p.add_argument("--c1-strides", default="3", dest="c1_strides")
    p.add_argument("--c2-sizes", default="5", dest="c2_sizes")
    p.add_argument("--c2-counts", default="200", dest="c2_counts")
    p.add_argument("--c2-strides", default="1", dest="c2_strides")
    p.add_argument(
        "--paper-objective",
        choices=["validation", "test"],
        default="validation",
        dest="paper_objective",
        help="split whose weighted F1 ranks the grid",
    )
    p.add_argument("--out", help="leaderboard CSV path")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("cluster-confusion", help="cluster a confusion matrix into k groups")
    p.add_argument("--matrix", required=True, help="confusion CSV from 'evaluate'")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", help="dendrogram output file")
    p.set_defaults(func=cmd_cluster_confusion)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    log_event(
        event="start",
        command=args.command,
        version=__version__,
        seed=getattr(args, "seed", None),
    )
    from .errors import ToolkitError

    try:
        return args.func(args)
    except (ToolkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


def main_entry() -> None:
    sys.exit(main())
