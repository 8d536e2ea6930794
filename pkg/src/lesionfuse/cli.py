"""Batch command-line interface.

Subcommands: train, predict, evaluate, inspect.  Exit codes: 0 success,
1 usage error, 2 data error, 3 model-file error.
"""

import argparse
import sys
from pathlib import Path

from . import config, fusion, pipeline
from .errors import BundleError, DataError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="lesionfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train both tasks and write a model bundle")
    p_train.add_argument("--config", required=True, help="flat key = value config file")
    p_train.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override a config value (repeatable)",
    )

    p_pred = sub.add_parser("predict", help="classify images with a trained bundle")
    p_pred.add_argument("--model", required=True, help="model bundle file")
    p_pred.add_argument(
        "--images", required=True, nargs="+",
        help="image files and/or directories of images",
    )
    p_pred.add_argument("--out", required=True, help="output CSV path")

    p_eval = sub.add_parser("evaluate", help="score a bundle against labeled images")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--labels", required=True, help="ground-truth CSV")
    p_eval.add_argument("--images-dir", required=True)
    p_eval.add_argument("--out", required=True, help="text report path")
    p_eval.add_argument("--csv", help="optional CSV row output for batch sweeps")

    p_inspect = sub.add_parser("inspect", help="print bundle metadata and feature layout")
    p_inspect.add_argument("--model", required=True)
    return parser


def _expand_images(args_images) -> list:
    paths = []
    for item in args_images:
        p = Path(item)
        if p.is_dir():
            found = sorted(
                q for q in p.iterdir() if q.suffix.lower() in (".png", ".jpg", ".jpeg")
            )
            if not found:
                raise DataError(f"no images found in directory {p}")
            paths.extend(found)
        else:
            paths.append(p)
    if not paths:
        raise DataError("no input images given")
    return paths


def _cmd_train(args) -> int:
    settings = config.apply_overrides(config.parse_config(args.config), args.set)
    _, metrics = pipeline.run_train(settings)
    for task, tm in metrics.items():
        if tm.report is None:
            print(f"{task.value}: trained (no validation split, weight = {tm.weight})")
        else:
            print(
                f"{task.value}: validation auc = {tm.report.auc:.4f} "
                f"(cnn {tm.auc_cnn:.4f}, forest {tm.auc_forest:.4f}), "
                f"accuracy = {tm.report.accuracy:.4f}, weight = {tm.weight}"
            )
    print(f"bundle written to {Path(settings.output_dir) / 'model.lfsb'}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    rows, n_errors = pipeline.run_predict(args.model, _expand_images(args.images))
    pipeline.write_predictions_csv(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}" + (f" ({n_errors} failed)" if n_errors else ""))
    return EXIT_DATA if n_errors else EXIT_OK


def _cmd_evaluate(args) -> int:
    reports = pipeline.run_evaluate(args.model, args.labels, args.images_dir)
    lines = []
    for task, report in reports.items():
        for line in report.to_text().splitlines():
            lines.append(f"{task.value}.{line}")
    text = "\n".join(lines) + "\n"
    Path(args.out).write_text(text)
    print(text, end="")
    if args.csv:
        rows = ["task," + fusion.EvalReport.CSV_HEADER]
        rows += [f"{task.value},{report.to_csv_row()}" for task, report in reports.items()]
        Path(args.csv).write_text("\n".join(rows) + "\n")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    bundle = pipeline.load_bundle(args.model)
    print(f"bundle version = {pipeline.BUNDLE_VERSION}")
    for key in sorted(bundle.metadata):
        print(f"metadata.{key} = {bundle.metadata[key]}")
    for task in pipeline.TaskId:
        forest = bundle.forests[task]
        net = bundle.cnns[task]
        print(
            f"{task.value}: forest trees = {len(forest.trees)}, "
            f"cnn input side = {net.input_side}, fusion weight = {bundle.weights[task]}"
        )
    print("feature layout (family, offset, length):")
    for name, offset, length in bundle.layout:
        print(f"  {name:16s} {offset:4d} {length:4d}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "predict": _cmd_predict,
        "evaluate": _cmd_evaluate,
        "inspect": _cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except DataError as exc:
        print(f"lesionfuse: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BundleError as exc:
        print(f"lesionfuse: model-file error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
