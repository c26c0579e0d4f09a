"""Command-line surface: synth, train, eval, predict, and the two sweeps.

Configuration is a flat JSON document whose keys mirror the ModelConfig /
TrainConfig field names; CLI flags override config keys one-for-one.
Results go to stdout, errors to stderr via logging (level from EF_LOG).
Exit codes: 0 ok, 1 usage, 2 I/O, 3 format/config/shape, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import data as hsidata
from .errors import ConfigError, ContractError, DataError, DivergenceError, FormatError, ShapeError
from .metrics import EvalReport
from .model import ModelConfig, init_model
from .synth import synth_dataset
from .training import (
    TrainConfig,
    apply_state,
    evaluate,
    load_checkpoint,
    predict_map,
    run_pipeline,
    save_checkpoint,
    write_loss_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_FORMAT = 3
EXIT_DIVERGED = 4

PATCH_SWEEP_DEFAULT = [8, 10, 12, 14, 16, 18, 20]
FRACTION_SWEEP_DEFAULT = [0.01, 0.03, 0.05, 0.07, 0.09, 0.10]

log = logging.getLogger("hsiformer")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("EF_LOG", "info").lower(), logging.INFO
    )
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as ex:
        raise ConfigError(f"malformed config JSON: {ex}") from ex
    if not isinstance(doc, dict):
        raise ConfigError("config must be a flat JSON object")
    return doc


def _build_configs(args, overrides: dict):
    doc = dict(_load_config(getattr(args, "config", None)))
    doc.update({k: v for k, v in overrides.items() if v is not None})
    model_fields = {f.name for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(doc) - model_fields - train_fields - {"sweep_patch_sizes", "sweep_fractions"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model_config = ModelConfig(**{k: v for k, v in doc.items() if k in model_fields})
    train_config = TrainConfig(**{k: v for k, v in doc.items() if k in train_fields})
    train_config.patch_size = model_config.patch_size
    return model_config, train_config, doc


def _flag_overrides(args) -> dict:
    threads = getattr(args, "threads", None)
    if getattr(args, "deterministic", False):
        deterministic = True  # forces single-threaded fixed-order reductions
    elif threads is not None and threads > 1:
        deterministic = False  # asking for batch parallelism opts out
    else:
        deterministic = None
    return {
        "seed": getattr(args, "seed", None),
        "patch_size": getattr(args, "patch_size", None),
        "train_fraction": getattr(args, "fraction", None),
        "epochs": getattr(args, "epochs", None),
        "threads": threads,
        "deterministic": deterministic,
    }


def _read_dataset(cube_path, labels_path):
    cube = hsidata.read_cube(cube_path)
    labels = hsidata.read_labels(labels_path)
    if (labels.rows, labels.cols) != (cube.rows, cube.cols):
        raise ConfigError(
            f"cube {cube.rows}x{cube.cols} and labels {labels.rows}x{labels.cols} disagree"
        )
    return cube, labels


def _print_report(report: EvalReport) -> None:
    print(f"oa {report.oa:.6f}")
    print(f"aa {report.aa:.6f}")
    print(f"kappa {report.kappa:.6f}")
    for cls, acc in enumerate(report.per_class_acc, start=1):
        print(f"class_{cls}_acc {acc:.6f}")


# ---------------------------------------------------------------------------
# map rendering: binary PPM with an HSV class palette


def class_palette(num_classes: int) -> np.ndarray:
    """RGB byte triplets: class c at hue 360*(c-1)/C, full saturation/value."""
    colors = np.zeros((num_classes + 1, 3), dtype=np.uint8)  # row 0 = background black
    for cls in range(1, num_classes + 1):
        hue = 360.0 * (cls - 1) / num_classes
        sector = hue / 60.0
        x = 1.0 - abs(sector % 2.0 - 1.0)
        rgb = {
            0: (1.0, x, 0.0),
            1: (x, 1.0, 0.0),
            2: (0.0, 1.0, x),
            3: (0.0, x, 1.0),
            4: (x, 0.0, 1.0),
            5: (1.0, 0.0, x),
        }[int(sector) % 6]
        colors[cls] = [round(255 * v) for v in rgb]
    return colors


def write_ppm(labels: hsidata.LabelMap, path, num_classes=None) -> None:
    num_classes = num_classes or max(1, labels.num_classes)
    palette = class_palette(num_classes)
    image = palette[labels.labels]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{labels.cols} {labels.rows}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    _, train_config, doc = _build_configs(args, _flag_overrides(args))
    cube, labels = synth_dataset(
        classes=args.classes,
        rows=args.rows,
        cols=args.cols,
        bands=args.bands,
        noise_sigma=args.noise_sigma,
        seed=train_config.seed,
    )
    hsidata.write_cube(cube, args.out_cube)
    hsidata.write_labels(labels, args.out_labels)
    print(f"wrote {args.out_cube} ({cube.rows}x{cube.cols}x{cube.bands}) and {args.out_labels}")
    return EXIT_OK


def _model_config_for(cube, labels, doc_model: ModelConfig) -> ModelConfig:
    config = dataclasses.replace(doc_model, bands=cube.bands, classes=labels.num_classes)
    config.validate()
    return config


def cmd_train(args) -> int:
    model_doc, train_config, _ = _build_configs(args, _flag_overrides(args))
    cube, labels = _read_dataset(args.cube, args.labels)
    model_config = _model_config_for(cube, labels, model_doc)
    log.info(
        "training: window %d, %d classes, fraction %.3f, %d epochs",
        model_config.window, model_config.classes, train_config.train_fraction, train_config.epochs,
    )
    params, _split, report, losses = run_pipeline(
        cube, labels, model_config, train_config,
        log=lambda e, l: log.debug("epoch %d loss %.6f", e, l),
    )
    save_checkpoint(args.out, params)
    write_loss_csv(str(args.out) + ".loss.csv", losses)
    _print_report(report)
    print(f"checkpoint {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model_doc, train_config, _ = _build_configs(args, _flag_overrides(args))
    cube, labels = _read_dataset(args.cube, args.labels)
    model_config = _model_config_for(cube, labels, model_doc)
    params = init_model(model_config, train_config.seed)
    apply_state(params, load_checkpoint(args.checkpoint))
    normalized = hsidata.normalize(cube)
    split = hsidata.stratified_split(labels, train_config.train_fraction, train_config.seed)
    report = evaluate(normalized, labels, split, params, model_config)
    _print_report(report)
    if args.out:
        report.write_csv(args.out)
        print(f"report {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model_doc, train_config, _ = _build_configs(args, _flag_overrides(args))
    cube, labels = _read_dataset(args.cube, args.labels)
    model_config = _model_config_for(cube, labels, model_doc)
    params = init_model(model_config, train_config.seed)
    apply_state(params, load_checkpoint(args.checkpoint))
    normalized = hsidata.normalize(cube)
    predicted = predict_map(normalized, labels, params, model_config, all_pixels=args.all_pixels)
    write_ppm(predicted, args.out, num_classes=model_config.classes)
    print(f"map {args.out}")
    return EXIT_OK


def _sweep(args, settings, assign, label: str) -> int:
    model_doc, train_base, doc = _build_configs(args, _flag_overrides(args))
    cube, labels = _read_dataset(args.cube, args.labels)
    rows = []
    for value in settings:
        model_config = _model_config_for(cube, labels, model_doc)
        train_config = dataclasses.replace(train_base)
        assign(model_config, train_config, value)
        model_config.validate()
        log.info("%s sweep: %s = %s", label, label, value)
        _params, split, report, _losses = run_pipeline(cube, labels, model_config, train_config)
        rows.append((value, len(split.train_indices), report))
        print(
            f"{label}={value} train_n={len(split.train_indices)} "
            f"kappa={report.kappa:.4f} oa={report.oa:.4f} aa={report.aa:.4f} "
            f"time={report.train_time_seconds:.2f}s"
        )
    with open(args.out, "w", newline="") as fh:
        fh.write(f"{label},train_count,kappa,oa,aa,train_time_seconds\n")
        for value, train_n, report in rows:
            fh.write(
                f"{value},{train_n},{report.kappa!r},{report.oa!r},{report.aa!r},{report.train_time_seconds!r}\n"
            )
    print(f"sweep csv {args.out}")
    return EXIT_OK


def cmd_sweep_patch(args) -> int:
    _, _, doc = _build_configs(args, _flag_overrides(args))
    settings = doc.get("sweep_patch_sizes", PATCH_SWEEP_DEFAULT)

    def assign(model_config, train_config, value):
        model_config.patch_size = int(value)
        train_config.patch_size = int(value)

    return _sweep(args, settings, assign, "patch")


def cmd_sweep_fraction(args) -> int:
    _, _, doc = _build_configs(args, _flag_overrides(args))
    settings = doc.get("sweep_fractions", FRACTION_SWEEP_DEFAULT)

    def assign(model_config, train_config, value):
        train_config.train_fraction = float(value)

    return _sweep(args, settings, assign, "fraction")


# ---------------------------------------------------------------------------
# argument wiring


def _add_common(parser) -> None:
    parser.add_argument("--config", help="flat JSON config file")
    parser.add_argument("--seed", type=int, help="RNG seed")
    parser.add_argument("--patch-size", dest="patch_size", type=int)
    parser.add_argument("--fraction", type=float, help="training fraction in (0, 1)")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--deterministic", action="store_true", help="force single-threaded fixed-order reductions")


def build_parser() -> _Parser:
    parser = _Parser(prog="hsiformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cube + label map")
    _add_common(p)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--rows", type=int, default=32)
    p.add_argument("--cols", type=int, default=32)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=0.02)
    p.add_argument("--out-cube", required=True)
    p.add_argument("--out-labels", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train and checkpoint a model")
    _add_common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (loss CSV written alongside)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    _add_common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="EvalReport CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="render a predicted class map as PPM")
    _add_common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--all-pixels", action="store_true", help="label every pixel, not only labeled ones")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep-patch", help="train/eval across the patch-size grid")
    _add_common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_sweep_patch)

    p = sub.add_parser("sweep-fraction", help="train/eval across the training-fraction grid")
    _add_common(p)
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True, help="CSV output")
    p.set_defaults(func=cmd_sweep_fraction)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as ex:
        log.error("usage: %s", ex)
        return EXIT_USAGE
    except (FileNotFoundError, PermissionError, IsADirectoryError, OSError) as ex:
        log.error("I/O: %s", ex)
        return EXIT_IO
    except (FormatError, ConfigError, ShapeError, ContractError, DataError) as ex:
        log.error("format: %s", ex)
        return EXIT_FORMAT
    except DivergenceError as ex:
        log.error("divergence: %s", ex)
        return EXIT_DIVERGED


def console_main() -> None:
    raise SystemExit(main())
