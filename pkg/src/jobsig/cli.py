"""Command-line interface.

Subcommands cover the whole pipeline: ``synth`` (generate labelled CSV
datasets), ``encode`` (CSV -> .arcd signatures, optionally PNGs), ``train``
(CNN or statistical baseline), ``predict`` (thresholded per-job labels) and
``eval`` (the experiment families, emitting report CSVs plus a JSON
summary).

Progress goes to stderr; data only to files.  Exit codes: 0 success,
1 runtime failure, 2 usage error.  A ``--config path`` file with
``key=value`` lines (keys are long option names) supplies defaults that
explicit flags override.
"""

from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import (
    BaselineHyperparams,
    baseline_scores,
    extract_feature_matrix,
    features_to_csv,
    load_baseline,
    save_baseline,
)
from .cnn import decide_label, forward, history_to_csv, load_model, save_model
from .errors import JobsigError, SchemaError
from .container import atomic_write_bytes
from .gaf import ARCD_MAGIC, FieldKind, export_png, load_signature, partial_signature, save_signature
from .harness import (
    BaselinePipeline,
    CnnPipeline,
    SplitSpec,
    run_channel_ablation,
    run_novel_detection,
    run_partial_signatures,
    run_per_application,
    run_resolution_sweep,
    run_threshold_sweep,
    split_dataset,
    write_report_csv,
    write_summary_json,
)
from .ingest import CANONICAL_CHANNELS, load_dataset, parse_channels
from .resample import AggFn, ResampleSpec
from .synth import PROFILE_SETS, SynthDatasetSpec, generate_dataset, write_dataset

ARCM_MAGIC = b"ARCM"
ARBM_MAGIC = b"ARBM"


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr)


def _parse_thresholds(text: str) -> list[float]:
    """Either ``start:stop:step`` (inclusive) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise SchemaError("threshold range must be start:stop:step")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise SchemaError("threshold step must be positive")
        count = int(round((stop - start) / step))
        values = [round(start + i * step, 10) for i in range(count + 1)]
        return [v for v in values if v <= stop + 1e-12]
    return [float(p) for p in text.split(",") if p.strip()]


def _parse_int_list(text: str) -> list[int]:
    return [int(p) for p in text.split(",") if p.strip()]


def _parse_float_list(text: str) -> list[float]:
    return [float(p) for p in text.split(",") if p.strip()]


def _field_kind(args) -> FieldKind:
    if getattr(args, "gadf_sin", False):
        if args.kind == "gasf":
            raise SchemaError("--gadf-sin only applies to --kind gadf")
        return FieldKind.GADF_SIN
    return FieldKind(args.kind)


def _auto_manifest(args) -> Path | None:
    if args.manifest:
        return Path(args.manifest)
    candidate = Path(args.input) / "manifest.json"
    return candidate if candidate.exists() else None


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> None:
    profiles = PROFILE_SETS[args.classes]()
    spec = SynthDatasetSpec(profiles, jobs_per_class=args.jobs, seed=args.seed)
    records, manifest = generate_dataset(spec)
    out = Path(args.out)
    _progress(f"writing {len(records)} jobs to {out}")
    write_dataset(records, out, manifest=manifest, nodes=args.nodes, seed=args.seed)
    _progress(f"wrote manifest {out / 'manifest.json'}")


# ---------------------------------------------------------------------------
# encode


def _encode_one(task) -> str:
    record, side, agg, kind, channels, fraction, out_dir, png = task
    spec = ResampleSpec(side, AggFn(agg))
    sig = partial_signature(record, fraction, spec, FieldKind(kind), channels)
    path = Path(out_dir) / f"{record.job_id}.arcd"
    save_signature(sig, path)
    if png:
        export_png(sig, path.with_suffix(".png"))
    return record.job_id


def cmd_encode(args) -> None:
    channels = parse_channels(args.channels.split(","))
    kind = _field_kind(args)
    records = load_dataset(args.input, manifest=_auto_manifest(args),
                           min_duration=args.min_duration)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [
        (r, args.l, args.agg, kind.value, channels, args.fraction, str(out), args.png)
        for r in records
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            for job_id in pool.map(_encode_one, tasks):
                _progress(f"encoded {job_id}")
    else:
        for task in tasks:
            _progress(f"encoded {_encode_one(task)}")
    _progress(f"{len(tasks)} signatures in {out}")


# ---------------------------------------------------------------------------
# train


def _load_signature_dir(sigs_dir: str | Path):
    paths = sorted(Path(sigs_dir).glob("*.arcd"))
    if not paths:
        raise SchemaError(f"no .arcd signatures under {sigs_dir}")
    return [load_signature(p) for p in paths]


def _signature_dataset(sigs):
    first = sigs[0]
    for sig in sigs:
        if sig.side != first.side or sig.channels != first.channels:
            raise SchemaError(
                f"signature {sig.job_id!r} has shape {sig.tensor.shape}, "
                f"expected {first.tensor.shape}"
            )
        if sig.label is None:
            raise SchemaError(f"signature {sig.job_id!r} has no label in its sidecar")
    tensors = np.stack([s.tensor for s in sigs])
    labels = [s.label for s in sigs]
    return tensors, labels


def cmd_train(args) -> None:
    out = Path(args.out)
    if args.baseline:
        if not args.input:
            raise SchemaError("--baseline training reads raw jobs: pass --in DIR")
        records = load_dataset(args.input, manifest=_auto_manifest(args),
                               min_duration=args.min_duration, require_labels=True)
        channels = parse_channels(args.channels.split(","))
        pipe = BaselinePipeline(
            channels=channels,
            hyperparams=BaselineHyperparams(seed=args.seed),
        ).fit(records)
        save_baseline(pipe.model, out)
        _progress(f"baseline model -> {out}")
        if args.features_csv:
            features = extract_feature_matrix(records, channels)
            features_to_csv(features, [r.job_id for r in records],
                            [r.label for r in records], args.features_csv, channels)
            _progress(f"features -> {args.features_csv}")
        return

    if not args.sigs:
        raise SchemaError("CNN training reads signatures: pass --sigs DIR")
    sigs = _load_signature_dir(args.sigs)
    tensors, labels = _signature_dataset(sigs)
    # stratified train/val split over the provided signatures
    from .cnn import CnnConfig, build_model, train  # local import to keep CLI import light

    vocab = sorted(set(labels))
    rng = np.random.Generator(np.random.Philox(key=[args.seed, 0xC11]))
    by_class = {v: [i for i, lb in enumerate(labels) if lb == v] for v in vocab}
    val_idx = set()
    for v, idx in by_class.items():
        n_val = max(1, int(round(args.val_frac * len(idx))))
        perm = rng.permutation(len(idx))
        val_idx.update(idx[i] for i in perm[:n_val])
    train_idx = [i for i in range(len(labels)) if i not in val_idx]
    val_list = [i for i in range(len(labels)) if i in val_idx]
    if not train_idx:
        raise SchemaError("validation fraction leaves no training data")

    config = CnnConfig(
        input_side=sigs[0].side,
        channels=sigs[0].channels,
        num_classes=len(vocab),
        dense_units=args.dense_units,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    model = build_model(config, vocab)
    _progress(f"training on {len(train_idx)} signatures ({len(val_list)} validation)")
    start = time.perf_counter()
    model, history = train(
        model,
        (tensors[train_idx], [labels[i] for i in train_idx]),
        (tensors[val_list], [labels[i] for i in val_list]),
    )
    _progress(f"trained {config.epochs} epochs in {time.perf_counter() - start:.1f}s")
    save_model(model, out)
    history_path = args.history or out.with_name(out.stem + "_history.csv")
    if history:
        history_to_csv(history, history_path)
        _progress(f"history -> {history_path}")
    _progress(f"model -> {out}")


# ---------------------------------------------------------------------------
# predict


def cmd_predict(args) -> None:
    model_path = Path(args.model)
    magic = model_path.read_bytes()[:4]
    rows = []
    if magic == ARCM_MAGIC:
        model = load_model(model_path)
        if not args.sigs:
            raise SchemaError("CNN prediction reads signatures: pass --sigs DIR")
        for sig in _load_signature_dir(args.sigs):
            probs = forward(model, sig.tensor)[0]
            label = decide_label(probs, model.class_vocab, args.threshold)
            rows.append((sig.job_id, label, float(probs.max())))
    elif magic == ARBM_MAGIC:
        model = load_baseline(model_path)
        if not args.input:
            raise SchemaError("baseline prediction reads raw jobs: pass --in DIR")
        records = load_dataset(args.input, manifest=_auto_manifest(args),
                               min_duration=args.min_duration)
        features = extract_feature_matrix(records, model.channels)
        scores = baseline_scores(model, features)
        for record, row in zip(records, scores):
            label = decide_label(row, model.class_vocab, args.threshold)
            rows.append((record.job_id, label, float(row.max())))
    else:
        raise SchemaError(f"{model_path}: unrecognized model magic {magic!r}")

    lines = ["job_id,label,max_prob"]
    lines += [f"{job_id},{label},{repr(score)}" for job_id, label, score in rows]
    atomic_write_bytes(args.out, ("\n".join(lines) + "\n").encode("utf-8"))
    _progress(f"{len(rows)} predictions -> {args.out}")


# ---------------------------------------------------------------------------
# eval


def _eval_templates(args):
    channels = parse_channels(args.channels.split(","))
    cnn = CnnPipeline(
        side=args.l,
        kind=_field_kind(args),
        channels=channels,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    base = BaselinePipeline(channels=channels,
                            hyperparams=BaselineHyperparams(seed=args.seed))
    return cnn, base


def cmd_eval(args) -> None:
    records = load_dataset(args.input, manifest=_auto_manifest(args),
                           min_duration=args.min_duration, require_labels=True)
    _progress(f"loaded {len(records)} labelled jobs")
    cnn_template, base_template = _eval_templates(args)
    split = SplitSpec(seed=args.split_seed)
    thresholds = _parse_thresholds(args.thresholds)

    if args.experiment == "sweep":
        train_records, val_records, test_records = split_dataset(records, split)
        _progress("fitting cnn")
        cnn = cnn_template.clone().fit(train_records, val_records)
        _progress("fitting baseline")
        base = base_template.clone().fit(train_records)
        report = run_threshold_sweep({"cnn": cnn, "baseline": base},
                                     test_records, thresholds)
    elif args.experiment == "per-app":
        report = run_per_application(cnn_template, records, k=args.folds,
                                     threshold=args.threshold, seed=args.split_seed)
    elif args.experiment == "novel":
        report = run_novel_detection(cnn_template, records, args.hold_out,
                                     thresholds, split)
    elif args.experiment == "ablation":
        sets = [parse_channels(group.split(",")) for group in args.channel_sets.split("|")]
        report = run_channel_ablation(cnn_template, records, sets,
                                      threshold=args.threshold, split=split)
    elif args.experiment == "partial":
        report = run_partial_signatures(cnn_template, records,
                                        _parse_float_list(args.fractions),
                                        threshold=args.threshold, split=split)
    elif args.experiment == "resolution":
        report = run_resolution_sweep(cnn_template, records,
                                      _parse_int_list(args.lengths),
                                      thresholds, split)
    else:  # pragma: no cover - argparse restricts choices
        raise SchemaError(f"unknown experiment {args.experiment!r}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tag = args.tag or time.strftime("%Y%m%dT%H%M%S", time.gmtime())
    csv_path = out_dir / f"report_{report.kind}_{tag}.csv"
    write_report_csv(report, csv_path)
    write_summary_json([report], out_dir / f"summary_{report.kind}_{tag}.json")
    _progress(f"report -> {csv_path}")


# ---------------------------------------------------------------------------
# parser plumbing


def _add_common_encode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--l", type=int, default=128, help="resampling length / signature side")
    p.add_argument("--agg", choices=[a.value for a in AggFn], default="mean",
                   help="downsampling aggregation")
    p.add_argument("--kind", choices=["gasf", "gadf"], default="gasf",
                   help="angular field variant")
    p.add_argument("--gadf-sin", action="store_true",
                   help="use the sin() convention for the difference field")
    p.add_argument("--channels", default="power,ipc,mem",
                   help="comma list of metric channels")
    p.add_argument("--min-duration", type=float, default=60.0,
                   help="discard jobs shorter than this many seconds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jobsig",
        description="Encode HPC job monitoring traces as image tensors and classify them.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None,
                        help="key=value file of option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labelled synthetic dataset")
    p.add_argument("--classes", choices=sorted(PROFILE_SETS), default="default4")
    p.add_argument("--jobs", type=int, required=True, help="jobs per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--nodes", type=int, default=None,
                   help="write this many jittered per-node copies per job")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", help="encode job CSVs into signature files")
    p.add_argument("--in", dest="input", required=True, help="directory of job CSVs")
    p.add_argument("--manifest", default=None, help="label manifest JSON")
    p.add_argument("--out", required=True, help="output directory for .arcd files")
    _add_common_encode_flags(p)
    p.add_argument("--fraction", type=float, default=1.0,
                   help="encode only the leading fraction of each trace")
    p.add_argument("--png", action="store_true", help="also export PNG visualizations")
    p.add_argument("--workers", type=int, default=1, help="parallel encoding processes")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the CNN (default) or the baseline")
    p.add_argument("--sigs", default=None, help="directory of .arcd signatures (CNN)")
    p.add_argument("--in", dest="input", default=None,
                   help="directory of raw job CSVs (baseline)")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True, help="model output path (.arcm / .arbm)")
    p.add_argument("--baseline", action="store_true",
                   help="train the statistical baseline instead of the CNN")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--dense-units", type=int, default=128)
    p.add_argument("--val-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--history", default=None, help="training history CSV path")
    p.add_argument("--channels", default="power,ipc,mem")
    p.add_argument("--min-duration", type=float, default=60.0)
    p.add_argument("--features-csv", default=None,
                   help="also export the baseline feature matrix")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label jobs with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--sigs", default=None, help="signatures to classify (CNN model)")
    p.add_argument("--in", dest="input", default=None,
                   help="raw job CSVs to classify (baseline model)")
    p.add_argument("--manifest", default=None)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out", required=True, help="predictions CSV path")
    p.add_argument("--min-duration", type=float, default=60.0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="run an experiment family and emit reports")
    p.add_argument("experiment",
                   choices=["sweep", "per-app", "novel", "ablation", "partial", "resolution"])
    p.add_argument("--in", dest="input", required=True, help="directory of job CSVs")
    p.add_argument("--manifest", default=None)
    p.add_argument("--out", required=True, help="report output directory")
    _add_common_encode_flags(p)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--thresholds", default="0:1:0.1")
    p.add_argument("--threshold", type=float, default=0.8,
                   help="single threshold for per-app/ablation/partial")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--hold-out", default=None, help="class to withhold (novel)")
    p.add_argument("--channel-sets", default="power|ipc|mem|power,ipc,mem",
                   help="'|'-separated channel subsets (ablation)")
    p.add_argument("--fractions", default="0.25,0.5,0.75,1.0")
    p.add_argument("--lengths", default="32,64,128")
    p.add_argument("--tag", default=None,
                   help="report filename tag (defaults to a UTC timestamp)")
    p.set_defaults(func=cmd_eval)
    return parser


_HIDDEN_DESTS = {"func", "command", "experiment", "help"}


def _walk_parsers(parser: argparse.ArgumentParser):
    stack = [parser]
    while stack:
        current = stack.pop()
        yield current
        for action in current._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())


def _parser_dests(parser: argparse.ArgumentParser) -> set[str]:
    return {
        a.dest
        for a in parser._actions
        if not isinstance(a, argparse._SubParsersAction)
        and a.dest != argparse.SUPPRESS
        and a.dest not in _HIDDEN_DESTS
    }


def _collect_dests(parser: argparse.ArgumentParser) -> set[str]:
    dests: set[str] = set()
    for p in _walk_parsers(parser):
        dests |= _parser_dests(p)
    return dests


def _apply_defaults(parser: argparse.ArgumentParser, defaults: dict) -> None:
    """Push config-file defaults onto every (sub)parser that owns the option.

    Subcommands parse into a fresh namespace, so set_defaults on the root
    parser alone would not reach them.
    """
    for p in _walk_parsers(parser):
        relevant = {k: v for k, v in defaults.items() if k in _parser_dests(p)}
        if relevant:
            p.set_defaults(**relevant)


def _load_config_file(path: str, parser: argparse.ArgumentParser) -> dict:
    allowed = _collect_dests(parser)
    values: dict = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            parser.error(f"{path}:{line_no}: expected key=value")
        key, _, value = line.partition("=")
        dest = key.strip().replace("-", "_")
        if dest not in allowed:
            parser.error(f"{path}:{line_no}: unknown option {key.strip()!r}")
        values[dest] = value.strip()
    return values


_CONFIG_CASTS = {
    "jobs": int, "seed": int, "nodes": int, "l": int, "workers": int,
    "epochs": int, "batch_size": int, "dense_units": int, "folds": int,
    "split_seed": int,
    "lr": float, "momentum": float, "val_frac": float, "fraction": float,
    "threshold": float, "min_duration": float,
    "png": lambda v: v.lower() in ("1", "true", "yes"),
    "gadf_sin": lambda v: v.lower() in ("1", "true", "yes"),
    "baseline": lambda v: v.lower() in ("1", "true", "yes"),
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()

    # apply --config before the real parse so flags still take precedence;
    # the flag is stripped here so it may appear anywhere on the line
    if "--config" in argv:
        at = argv.index("--config")
        if at + 1 >= len(argv):
            parser.error("--config needs a path")
        raw = _load_config_file(argv[at + 1], parser)
        defaults = {k: _CONFIG_CASTS.get(k, str)(v) for k, v in raw.items()}
        _apply_defaults(parser, defaults)
        del argv[at : at + 2]

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (JobsigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
