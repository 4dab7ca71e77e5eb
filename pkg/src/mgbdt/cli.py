"""Command-line interface: ``mgbdt train | eval | encode | synth``.

Exit codes: 0 on success, 1 on data or model errors, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields

from .data import gen_circles, gen_curve3d, load_csv, stratified_subsample, write_csv
from .eval import accuracy, export_representation, mse, run_cv, write_curves
from .gbdt_core import TreeGrowthParams
from .persist import load_model, save_model
from .trainer import MODES, TrainConfig, encode, fit, predict_model


class UsageError(Exception):
    pass


def parse_structure(text: str) -> list[int]:
    """``"8->16->16->10"`` to ``[8, 16, 16, 10]``."""
    parts = [p.strip() for p in str(text).split("->")]
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"bad structure {text!r}: expected integers joined by '->'") from None
    if len(dims) < 2 or min(dims) < 1:
        raise UsageError(f"bad structure {text!r}: need at least two dims, all >= 1")
    return dims


def format_structure(dims) -> str:
    return "->".join(str(d) for d in dims)


def _categorical(text) -> tuple[str, ...]:
    return tuple(c.strip() for c in str(text).split(",") if c.strip())


@dataclass
class RunConfig:
    """Everything ``train`` needs; a config file and flags both fill it."""

    data: str | None = None
    label: str | None = None
    structure: list[int] | None = None
    mode: str = "classify"
    epochs: int = 50
    alpha: float | None = None
    gamma: float = 0.1
    noise_std: float = 0.3
    k1: int = 5
    k2: int = 5
    max_depth: int = 5
    seed: int = 0
    out: str | None = None
    test: str | None = None
    curves: str | None = None
    categorical: tuple[str, ...] = ()
    subsample: int | None = None

    def train_config(self) -> TrainConfig:
        tree = TreeGrowthParams(max_depth=self.max_depth)
        return TrainConfig(alpha=self.alpha, gamma=self.gamma, k1=self.k1, k2=self.k2,
                           epochs=self.epochs, noise_std=self.noise_std, forward_params=tree,
                           inverse_params=tree, rng_seed=self.seed)


_CONVERTERS = {
    "structure": parse_structure, "epochs": int, "alpha": float, "gamma": float,
    "noise_std": float, "k1": int, "k2": int, "max_depth": int, "seed": int,
    "categorical": _categorical, "subsample": int,
}


def read_config_file(path) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path} line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path} line {n}: unknown key {key!r}")
        out[key] = value
    return out


def _convert(key, value):
    conv = _CONVERTERS.get(key)
    if conv is None or not isinstance(value, str):
        return value
    try:
        return conv(value)
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None


def build_run_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    rc = RunConfig(**{k: _convert(k, v) for k, v in values.items()})
    if rc.mode not in MODES:
        raise UsageError(f"unknown mode {rc.mode!r}")
    missing = [k for k in ("data", "structure", "out") if getattr(rc, k) is None]
    if rc.label is None and rc.mode != "autoencode":
        missing.append("label")
    if missing:
        raise UsageError("missing required settings: " + ", ".join("--" + m for m in missing))
    return rc


def _emit(key, value):
    if isinstance(value, float):
        value = repr(value)
    print(f"{key}={value}")


def _label_kind(mode):
    return "class" if mode == "classify" else "numeric"


def cmd_train(args) -> int:
    rc = build_run_config(args)
    label = rc.label if rc.mode != "autoencode" else None
    train = load_csv(rc.data, label, rc.categorical, label_kind=_label_kind(rc.mode))
    if rc.subsample is not None:
        train = stratified_subsample(train, rc.subsample, rc.seed)
    dims = rc.structure
    if dims[0] != train.width:
        raise ValueError(f"structure input dim {dims[0]} != encoded data width {train.width}")
    if rc.mode == "classify" and len(train.classes) > dims[-1]:
        raise ValueError(f"{len(train.classes)} classes but structure output dim {dims[-1]}")
    test = None
    if rc.test:
        test = load_csv(rc.test, label, spec=train.column_spec, classes=train.classes,
                        label_kind=_label_kind(rc.mode))
    config = rc.train_config()
    model, traces = fit(train.features, train.labels, dims, rc.mode, config,
                        None if test is None else test.features,
                        None if test is None else test.labels)
    model.meta.update(column_spec=train.column_spec, classes=train.classes,
                      label=train.label_name, config=config)
    save_model(model, rc.out)
    if rc.curves:
        write_curves(traces, rc.curves)
    last = traces[-1] if traces else None
    _emit("structure", format_structure(dims))
    _emit("mode", rc.mode)
    _emit("rows", train.n_rows)
    _emit("dropped_rows", train.n_dropped)
    _emit("epochs", len(traces))
    if last is not None:
        _emit("train_loss", last.train_loss)
        if last.train_accuracy is not None:
            _emit("train_accuracy", last.train_accuracy)
        if last.test_loss is not None:
            _emit("test_loss", last.test_loss)
        if last.test_accuracy is not None:
            _emit("test_accuracy", last.test_accuracy)
    _emit("model", rc.out)
    return 0


def _header(path) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _load_for_model(model, path, require_label: bool):
    meta = model.meta
    label = meta.get("label")
    if label is not None and not require_label and label not in _header(path):
        label = None
    return load_csv(path, label, spec=meta.get("column_spec"), classes=meta.get("classes"),
                    label_kind=_label_kind(model.mode))


def cmd_eval(args) -> int:
    model = load_model(args.model)
    ds = _load_for_model(model, args.data, require_label=model.mode != "autoencode")
    if ds.width != model.dims[0]:
        raise ValueError(f"data width {ds.width} != model input dim {model.dims[0]}")
    if args.cv is not None:
        if args.cv < 2:
            raise UsageError("--cv needs k >= 2")
        config = model.meta.get("config") or TrainConfig()
        seed = config.rng_seed if args.seed is None else args.seed
        report = run_cv(ds, model.dims, config, args.cv, seed, mode=model.mode)
        _emit("metric", report.metric)
        _emit("mean", report.mean)
        _emit("std", report.std)
        return 0
    _emit("rows", ds.n_rows)
    if ds.n_unseen:
        _emit("unseen_categories", ds.n_unseen)
    out = predict_model(model, ds.features)
    if model.mode == "classify":
        _emit("accuracy", accuracy(out, ds.labels))
    elif model.mode == "autoencode":
        _emit("mse", mse(out, ds.features))
    else:
        _emit("mse", mse(out, ds.labels.reshape(len(out), -1)))
    return 0


def cmd_encode(args) -> int:
    model = load_model(args.model)
    if not 0 <= args.layer <= model.n_layers:
        raise UsageError(f"--layer must lie in [0, {model.n_layers}], got {args.layer}")
    ds = _load_for_model(model, args.data, require_label=False)
    encode(model, ds.features[:0], 0)  # width check before writing anything
    export_representation(model, ds, args.layer, args.out)
    _emit("rows", ds.n_rows)
    _emit("columns", model.dims[args.layer])
    return 0


def cmd_synth(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be >= 1")
    if args.kind == "circles":
        noise = 0.1 if args.noise_std is None else args.noise_std
        ds = gen_circles(args.n, noise, args.seed)
    else:
        ds = gen_curve3d(args.n, args.seed)
    write_csv(ds, args.out)
    _emit("rows", ds.n_rows)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mgbdt", description="Multi-layered GBDT training.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a model file")
    t.add_argument("--config", help="flat 'key = value' file; flags override it")
    t.add_argument("--data", help="training CSV with a header row")
    t.add_argument("--label", help="label column name")
    t.add_argument("--structure", help="layer dims, e.g. 8->16->16->10")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--epochs", type=int)
    t.add_argument("--alpha", type=float, help="pseudo-label step (default 0.1 classify, 1.0 otherwise)")
    t.add_argument("--gamma", type=float, help="tree shrinkage (default 0.1)")
    t.add_argument("--noise-std", dest="noise_std", type=float, help="inverse training noise (default 0.3)")
    t.add_argument("--k1", type=int, help="inverse boosting rounds per epoch (default 5)")
    t.add_argument("--k2", type=int, help="forward boosting rounds per epoch (default 5)")
    t.add_argument("--max-depth", dest="max_depth", type=int, help="tree depth (default 5)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="model file to write")
    t.add_argument("--test", help="held-out CSV evaluated every epoch")
    t.add_argument("--curves", help="learning-curve CSV to write")
    t.add_argument("--categorical", help="comma-separated columns to one-hot encode")
    t.add_argument("--subsample", type=int, help="train on a stratified subsample of N rows")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model on a CSV, or cross-validate its config")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--cv", type=int, help="k-fold cross-validation with the embedded config")
    e.add_argument("--seed", type=int, help="fold seed (default: the training seed)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("encode", help="export the layer-j representation of a CSV")
    c.add_argument("--model", required=True)
    c.add_argument("--data", required=True)
    c.add_argument("--layer", type=int, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_encode)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--kind", choices=("circles", "curve3d"), required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-std", dest="noise_std", type=float, help="circles radial noise (default 0.1)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mgbdt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"mgbdt {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
