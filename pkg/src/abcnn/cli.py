"""``abcnn`` command line: ingest | train | eval | visualize | predict.

Settings come from built-in defaults, then an optional flat ``key=value``
config file (``--config``), then explicit flags. The effective settings
are echoed into the output directory.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import beats as B
from . import metrics as E
from . import model as M
from . import trainer as TR
from . import wfdb_io as W
from .errors import AbcnnError, ConfigError, DataIOError, ShapeError

log = logging.getLogger("abcnn")

# key -> (type, default); keys double as config-file keys
SETTINGS = {
    "data_dir": (str, None),
    "records": (str, "all"),
    "per_subject": (int, 2000),
    "window_len": (int, 240),
    "selection": (str, "first"),
    "split_ratio": (float, 0.8),
    "seed": (int, 0),
    "out": (str, None),
    "heads": (int, 32),
    "lr": (float, 0.0005),
    "batch_size": (int, 128),
    "max_epochs": (int, 50),
    "patience": (int, 20),
    "monitor": (str, "validation"),
    "log_every": (int, 0),
    "loss": (str, "bce"),
    "dropout": (float, 0.3),
    "no_attention": (bool, False),
    "repeats": (int, 5),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(ConfigError.exit_code, f"{self.prog}: error: {message}\n")


def read_config_file(path):
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in SETTINGS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = value
    return values


def _coerce(key, raw):
    typ, _ = SETTINGS[key]
    if raw is None or not isinstance(raw, str):
        return raw
    try:
        if typ is bool:
            return M._parse_bool(raw)
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def effective_settings(args):
    settings = {k: d for k, (_, d) in SETTINGS.items()}
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    for key in SETTINGS:
        v = getattr(args, key, None)
        if v is not None:
            settings[key] = v
    return {k: _coerce(k, v) for k, v in settings.items()}


def _out_dir(settings):
    if not settings["out"]:
        raise ConfigError("an output directory is required (--out)")
    out = Path(settings["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataIOError(f"cannot create {out}: {exc}") from None
    return out


def _write(path, text):
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from None


def _echo_settings(out, command, settings):
    lines = [f"command={command}"] + [f"{k}={'' if v is None else v}" for k, v in settings.items()]
    _write(out / f"{command}_config.txt", "\n".join(lines) + "\n")


def _open_log(out):
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(message)s"))
    handler.stream.write(f"# started {_dt.datetime.now().isoformat(timespec='seconds')}\n")
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def _close_log(handler):
    log.removeHandler(handler)
    handler.close()


# commands

def cmd_ingest(args, settings):
    if not settings["data_dir"]:
        raise ConfigError("ingest needs --data-dir")
    data_dir = Path(settings["data_dir"])
    records = settings["records"]
    if records is None or not str(records).strip():
        raise ConfigError("empty record list; pass --records all or a comma-separated list")
    if str(records).strip().lower() == "all":
        stems = W.list_records(data_dir)
    else:
        names = [r.strip() for r in str(records).split(",") if r.strip()]
        if not names:
            raise ConfigError("empty record list; pass --records all or a comma-separated list")
        if not data_dir.is_dir():
            raise DataIOError(f"{data_dir} is not a directory")
        stems = [data_dir / n for n in names]
    out = _out_dir(settings)
    loaded = []
    for stem in stems:
        try:
            loaded.append(W.load_record(stem))
        except AbcnnError as exc:
            raise type(exc)(f"record {stem.name}: {exc}") from None
    stats = B.SegmentStats()
    pool = B.build_dataset(loaded, settings["per_subject"], seed=settings["seed"],
                           selection=settings["selection"], window_len=settings["window_len"], stats=stats)
    B.write_segments(out / "segments.abseg", pool)
    summary = [f"# seed={settings['seed']}", f"records: {len(loaded)}"] + stats.summary_lines()
    _write(out / "ingest_summary.txt", "\n".join(summary) + "\n")
    _echo_settings(out, "ingest", settings)
    print("\n".join(summary[1:]))
    return 0


def _model_config(settings):
    return M.AbcnnConfig(window_len=settings["window_len"], num_heads=settings["heads"],
                         dropout_rate=settings["dropout"], loss=settings["loss"],
                         attention_enabled=not settings["no_attention"])


def cmd_train(args, settings):
    pool = B.read_segments(args.segments)
    if not pool:
        raise ConfigError(f"{args.segments} holds no segments")
    out = _out_dir(settings)
    config = _model_config(settings)
    _check_shapes(config, pool, args.segments)
    split = B.split_train_test(pool, settings["split_ratio"], seed=settings["seed"])
    opts = TR.TrainOptions(batch_size=settings["batch_size"], max_epochs=settings["max_epochs"],
                           patience=settings["patience"], lr=settings["lr"], seed=settings["seed"],
                           monitor=settings["monitor"], log_every=settings["log_every"])
    handler = _open_log(out)
    try:
        params, history = TR.train(split, config, opts)
    finally:
        _close_log(handler)
    meta = {"seed": settings["seed"], "split_ratio": settings["split_ratio"],
            "best_epoch": history.best_epoch, "stopped_epoch": history.stopped_epoch}
    M.save_checkpoint(out / "checkpoint.abcnn", params, meta)
    _write(out / "history.csv", history.to_csv(f"seed={settings['seed']}"))
    B.write_segments(out / "train.abseg", split.train)
    B.write_segments(out / "test.abseg", split.test)
    _echo_settings(out, "train", settings)
    best = next(r for r in history.epoch_rows() if r.epoch == history.best_epoch)
    print(f"epochs run: {history.stopped_epoch}; best epoch: {history.best_epoch}")
    print(f"best monitored ({opts.monitor}) loss={best.monitor_loss:.6f} accuracy={best.monitor_accuracy:.6f}")
    return 0


def _check_shapes(config, segments, source):
    shape = segments[0].data.shape
    if shape != (config.num_channels, config.window_len):
        raise ShapeError(f"{source}: segments are {list(shape)} but the model config expects "
                         f"[{config.num_channels}, {config.window_len}]")


def _load_pair(args):
    params, meta = M.load_checkpoint(args.checkpoint)
    segments = B.read_segments(args.segments)
    if not segments:
        raise ConfigError(f"{args.segments} holds no segments")
    _check_shapes(params.config, segments, args.segments)
    return params, meta, segments


def cmd_eval(args, settings):
    params, meta, segments = _load_pair(args)
    out = _out_dir(settings)
    X, y = B.stack_segments(segments)
    probs, _, _ = M.predict(params, X)
    seed = settings["seed"]
    seeds = [seed + i for i in range(settings["repeats"])] if settings["repeats"] >= 2 else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        ev = E.evaluate(probs, y, dispersion_seeds=seeds)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    head = f"# seed={seed} checkpoint_seed={meta.get('seed', '')}\n"
    table = E.report_table(ev)
    _write(out / "report.txt", head + table)
    _write(out / "report.csv", head + E.report_csv(ev))
    _write(out / "roc.csv", head + E.roc_csv(ev))
    _write(out / "confusion.csv", head + E.confusion_csv(ev.confusion))
    _echo_settings(out, "eval", settings)
    print(table, end="")
    return 0


def cmd_visualize(args, settings):
    params, meta, segments = _load_pair(args)
    out = _out_dir(settings)
    X, y = B.stack_segments(segments)
    _, _, feats = M.predict(params, X)
    raw, _, _ = E.pca_project(X.reshape(len(X), -1))
    learned, _, _ = E.pca_project(feats)
    head = f"# seed={settings['seed']} checkpoint_seed={meta.get('seed', '')}\n"
    _write(out / "pca_raw.csv", head + E.pca_csv(raw, y))
    _write(out / "pca_learned.csv", head + E.pca_csv(learned, y))
    _echo_settings(out, "visualize", settings)
    print(f"separation ratio raw={E.separation_ratio(raw, y):.6f} "
          f"learned={E.separation_ratio(learned, y):.6f}")
    return 0


def read_segment_csv(path, config=None):
    """One beat as ``[channels, window]`` from a ``ch0,ch1`` column CSV."""
    config = config or M.AbcnnConfig()
    try:
        lines = [l for l in Path(path).read_text().splitlines() if l.strip() and not l.startswith("#")]
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from None
    start = 1 if lines and any(c.isalpha() for c in lines[0]) else 0
    try:
        arr = np.array([[float(v) for v in l.split(",")] for l in lines[start:]], dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"{path}: non-numeric value: {exc}") from None
    want = (config.num_channels, config.window_len)
    if arr.shape == want[::-1]:
        arr = arr.T
    if arr.shape != want:
        raise ShapeError(f"{path}: segment shape {list(arr.shape)} but the model expects {list(want)} "
                         f"(or its transpose)")
    return arr


def cmd_predict(args, settings):
    params, _ = M.load_checkpoint(args.checkpoint)
    seg = B.zscore(read_segment_csv(args.segment, params.config))
    pred = M.predict_one(params, seg)
    names = E.CLASS_NAMES
    print("probabilities: " + " ".join(f"{n}={p:.6f}" for n, p in zip(names, pred.probabilities)))
    print(f"class: {names[pred.predicted_class]}")
    if pred.attention_weights is None:
        print("attention: none")
    else:
        print("attention: " + ",".join(f"{a:.8g}" for a in pred.attention_weights))
    return 0


def build_parser():
    parser = _Parser(prog="abcnn", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="WFDB records -> ABSEG1 segment container")
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--records", help="'all' or comma-separated record names")
    p.add_argument("--per-subject", dest="per_subject", type=int)
    p.add_argument("--window-len", dest="window_len", type=int)
    p.add_argument("--selection", choices=["first", "random"])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train on a segment container")
    p.add_argument("segments")
    p.add_argument("--no-attention", dest="no_attention", action="store_const", const=True)
    p.add_argument("--heads", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--monitor", choices=["test", "validation"])
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--loss", choices=["bce", "categorical"])
    p.add_argument("--dropout", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="classification report, ROC and AUC")
    p.add_argument("checkpoint")
    p.add_argument("segments")
    p.add_argument("--repeats", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("visualize", parents=[common], help="2-D PCA of raw segments and learned features")
    p.add_argument("checkpoint")
    p.add_argument("segments")
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("predict", parents=[common], help="classify one segment CSV")
    p.add_argument("checkpoint")
    p.add_argument("segment")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        settings = effective_settings(args)
        return args.func(args, settings)
    except AbcnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
