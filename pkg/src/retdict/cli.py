"""Command-line interface.

Exit codes: 0 success, 1 check failure, 2 malformed input file,
3 more clusters than embeddings, 4 shape mismatch between inputs.
"""

import argparse
import csv
import io as _io
import logging
import sys

from . import io
from .checks import SUITES
from .compress import DistillConfig
from .dictionary import KMeansConfig, lloyd, preprocess
from .exceptions import FormatError
from .harness import TrainConfig, correlation_coefficient_table, generate_toy_task, train_model
from .normalization import Dictionary
from .pipeline import PipelineError, compress_model, load_config, pixel_embeddings, run_pipeline

EXIT_CHECK = 1
EXIT_FORMAT = 2
EXIT_CLUSTERS = 3
EXIT_SHAPE = 4


class CLIError(Exception):
    def __init__(self, code, message):
        self.code = code
        super().__init__(message)


def _task_args(parser):
    g = parser.add_argument_group("toy task")
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--samples-per-class", type=int, default=50)
    g.add_argument("--height", type=int, default=8)
    g.add_argument("--width", type=int, default=8)
    g.add_argument("--noise", type=float, default=0.5)


def _task(args, f, seed):
    return generate_toy_task(seed, args.classes, args.samples_per_class, f,
                             args.height, args.width, args.noise)


def _read(reader, path):
    try:
        return reader(path)
    except FormatError as exc:
        raise CLIError(EXIT_FORMAT, f"{path}: {exc}") from None
    except OSError as exc:
        raise CLIError(EXIT_FORMAT, f"{path}: {exc.strerror or exc}") from None


def cmd_make_embeddings(args):
    train, _ = generate_toy_task(args.seed, args.classes, args.samples_per_class, args.features,
                                 args.height, args.width, args.noise)
    io.write_embeddings(args.out, pixel_embeddings(train.X))
    return 0


def cmd_build_dict(args):
    emb = _read(io.read_embeddings, args.embeddings)
    if args.atoms > emb.count:
        raise CLIError(EXIT_CLUSTERS, f"--atoms {args.atoms} exceeds embedding count {emb.count}")
    emb = preprocess(emb, args.normalize)
    result = lloyd(emb.data, KMeansConfig(args.atoms, args.max_iters, args.tol, args.seed))
    io.write_dictionary(args.out, Dictionary(result.centroids))
    print(f"sse={result.sse!r} iters={result.n_iter}")
    return 0


def cmd_train(args):
    dictionary, _ = _read(io.read_dictionary, args.dict)
    f = dictionary.dim if args.features is None else args.features
    if f != dictionary.dim:
        raise CLIError(EXIT_SHAPE, f"--features {f} does not match dictionary dim {dictionary.dim}")
    train, val = _task(args, f, args.seed)
    cfg = TrainConfig(args.epochs, args.batch_size, args.lr, args.lam, args.seed, args.kernel,
                      not args.freeze_backbone, not args.freeze_retriever, not args.freeze_dict)
    model, records = train_model(cfg, dictionary, train, val)
    io.write_metrics(args.metrics or args.out + ".metrics", records)
    io.write_model(args.out, model)
    print(records[-1].format())
    return 0


def cmd_compress(args):
    model = _read(io.read_model, args.model)
    if args.atoms > model.rd.n_atoms:
        raise CLIError(EXIT_SHAPE, f"--atoms {args.atoms} exceeds the model's {model.rd.n_atoms} atoms")
    train, val = _task(args, model.n_features, args.seed)
    cfg = DistillConfig(args.atoms, args.tau, args.epochs, args.lr, args.batch_size, args.seed)
    records = []
    out = compress_model(model, train, val, cfg, records)
    io.write_metrics(args.metrics or args.out + ".metrics", records)
    io.write_model(args.out, out)
    print(records[-1].format())
    return 0


def cmd_eval(args):
    model = _read(io.read_model, args.model)
    if model.num_classes != args.classes:
        raise CLIError(EXIT_SHAPE, f"model has {model.num_classes} classes, task has {args.classes}")
    _, val = _task(args, model.n_features, args.seed)
    acc = float((model.predict(val.X) == val.y).mean())
    print(f"val_acc={acc!r}")
    return 0


def cmd_inspect(args):
    model = _read(io.read_model, args.model)
    _, val = _task(args, model.n_features, args.seed)
    if not 0 <= args.sample_index < len(val):
        raise CLIError(EXIT_SHAPE, f"--sample-index must be in [0, {len(val)})")
    rows = correlation_coefficient_table(model.encode(val.X[args.sample_index]), model.rd)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["atom", "correlation", "coefficient"])
    for row in rows:
        writer.writerow([row.atom, repr(row.correlation), repr(row.coefficient)])
    io.atomic_write(args.out, buf.getvalue().encode("ascii"))
    return 0


def cmd_check(args):
    kwargs = {} if args.seeds is None else {"seeds": args.seeds}
    count = 0
    for result in SUITES[args.suite](**kwargs):
        count += 1
        if not result.passed:
            print(f"FAIL {result.name}: {result.detail}")
            return EXIT_CHECK
        if args.verbose:
            print(f"ok   {result.name}: {result.detail}")
    print(f"check {args.suite}: {count} passed")
    return 0


def cmd_run_pipeline(args):
    cfg = load_config(args.config)
    if args.out_dir:
        cfg.out_dir = args.out_dir
    try:
        summary = run_pipeline(cfg)
    except PipelineError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FORMAT if isinstance(exc.__cause__, FormatError) else 1
    for key, value in summary.items():
        if key != "paths":
            print(f"{key}={value!r}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="retdict", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-embeddings", help="write toy-task pixel features as an embedding file")
    p.add_argument("--features", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _task_args(p)
    p.set_defaults(func=cmd_make_embeddings)

    p = sub.add_parser("build-dict", help="k-means dictionary from an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--atoms", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--normalize", choices=["none", "standard", "tanh"], default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_dict)

    p = sub.add_parser("train", help="train the toy classifier around a dictionary")
    p.add_argument("--dict", required=True)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--features", type=int, default=None)
    p.add_argument("--freeze-dict", action="store_true")
    p.add_argument("--freeze-retriever", action="store_true")
    p.add_argument("--freeze-backbone", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    _task_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="distill a trained model's dictionary into fewer atoms")
    p.add_argument("--model", required=True)
    p.add_argument("--atoms", type=int, required=True)
    p.add_argument("--tau", type=float, default=0.07)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.003)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", default=None)
    _task_args(p)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("eval", help="validation accuracy of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    _task_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="atom correlation/coefficient table for one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--sample-index", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _task_args(p)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("check", help="run a numerical self-check suite")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--seeds", type=int, default=None)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run-pipeline", help="build, train and compress from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_run_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
