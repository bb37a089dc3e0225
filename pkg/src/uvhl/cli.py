"""Command-line entry point.

    uvhl synth   --n 100 --label-noise 0.2 --seed 1 --out runs/synth
    uvhl cv      --dataset runs/synth/dataset.csv --method uvhl --seed 7
    uvhl score   --dataset d.csv
    uvhl predict --dataset d.csv --k-nn 10
    uvhl report  runs/cv/report.json runs/cv-eq/report.json

Every option can also come from a flat ``key = value`` file passed with
``--config``; flags given on the command line win. Each run writes its fully
resolved options to ``config.txt`` in the output directory, and that file can
be fed back through ``--config`` to reproduce the run.
"""

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from uvhl.data import (
    LABEL_NAMES,
    SynthSpec,
    apply_normalization,
    fit_normalization,
    load_dataset,
    save_dataset,
    synth_generate,
)
from uvhl.errors import SingularityError
from uvhl.eval import (
    DEFAULT_K_POOL,
    METHODS,
    METRICS,
    CVConfig,
    EvalReport,
    Scores,
    ablation,
    cross_validate,
    edge_groups_for,
    method_weights,
    run_fold,
    welch_t_test,
)
from uvhl.solver import predict_labels
from uvhl.uncertainty import TrainConfig, score_cases, train

OUTPUT_ENV = "UVHL_OUTPUT_DIR"
SKIP_IN_CONFIG = {"config", "out", "command", "handler", "reports"}


def _optional_int(text):
    text = str(text).strip()
    return None if text in ("", "none", "None") else int(text)


def _int_list(text):
    """``"2-20"`` or ``"2,3,5"`` -> tuple of ints."""
    text = str(text).strip()
    if not text:
        return ()
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _float_list(text):
    text = str(text).strip()
    return tuple(float(p) for p in text.split(",")) if text else ()


def _str_list(text):
    text = str(text).strip()
    return tuple(p.strip() for p in text.split(",") if p.strip()) if text else ()


def _format(value):
    if value is None:
        return ""
    if isinstance(value, (tuple, list)):
        if value and all(isinstance(v, int) for v in value) and list(value) == list(
                range(value[0], value[0] + len(value))) and len(value) > 2:
            return f"{value[0]}-{value[-1]}"
        return ",".join(str(v) for v in value)
    return str(value)


def read_config_file(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def write_config_file(args, directory):
    lines = [f"# resolved options for 'uvhl {args.command}'"]
    for key in sorted(vars(args)):
        if key not in SKIP_IN_CONFIG:
            lines.append(f"{key} = {_format(getattr(args, key))}")
    (directory / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _add_model_options(p):
    p.add_argument("--hidden", type=_int_list, default="64,32", help="hidden layer sizes")
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--passes", type=int, default=20, help="Monte-Carlo dropout passes")
    p.add_argument("--lambda-u", type=float, default=-1.0, help="weight sharpness; negative down-weights uncertain cases")


def _add_graph_options(p, methods=METHODS):
    p.add_argument("--method", choices=methods, default="uvhl")
    p.add_argument("--k-nn", type=_optional_int, default="", help="fixed neighbor count; empty selects from --k-pool")
    p.add_argument("--k-pool", type=_int_list, default=_format(DEFAULT_K_POOL))
    p.add_argument("--inner-folds", type=int, default=5)
    p.add_argument("--lambda-r", type=float, default=1.0)
    p.add_argument("--lambda-r-grid", type=_float_list, default="")
    p.add_argument("--groups", type=_str_list, default="", help="feature groups spawning hyperedges")


def build_parser():
    parser = argparse.ArgumentParser(prog="uvhl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value option file")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<command>)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="write a synthetic two-class dataset and its noise mask")
    common(p)
    p.add_argument("--n", type=int, default=100, help="cases per class")
    p.add_argument("--label-noise", type=float, default=0.0)
    p.add_argument("--feature-noise", type=float, default=0.0)
    p.add_argument("--d-regional", type=int, default=10)
    p.add_argument("--d-radiomics", type=int, default=10)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--noise-inflation", type=float, default=4.0)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("cv", help="cross-validated evaluation")
    common(p)
    p.add_argument("--dataset", help="case CSV (required)")
    _add_model_options(p)
    _add_graph_options(p, (*METHODS, "all"))
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--train-per-class", type=_optional_int, default="")
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("score", help="per-case uncertainty scores and vertex weights")
    common(p)
    p.add_argument("--dataset", help="case CSV (required)")
    _add_model_options(p)
    p.add_argument("--groups", type=_str_list, default="")
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("predict", help="label the UNKNOWN cases of a dataset")
    common(p)
    p.add_argument("--dataset", help="case CSV (required)")
    _add_model_options(p)
    _add_graph_options(p)
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("report", help="summary tables and SVG charts from report files")
    common(p)
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.set_defaults(handler=cmd_report)
    return parser


def _config_path(argv):
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def parse_args(argv):
    parser = build_parser()
    path = _config_path(argv)
    if path and argv and not argv[0].startswith("-"):
        subparsers = parser._subparsers._group_actions[0].choices
        subparser = subparsers.get(argv[0])
        if subparser is not None:
            try:
                values = read_config_file(path)
            except OSError as exc:
                parser.error(f"cannot read config file: {exc}")
            known = {a.dest for a in subparser._actions}
            unknown = set(values) - known
            if unknown:
                subparser.error(f"unknown keys in {path}: {', '.join(sorted(unknown))}")
            subparser.set_defaults(**{k: v for k, v in values.items() if k not in SKIP_IN_CONFIG})
    args = parser.parse_args(argv)
    if hasattr(args, "dataset") and not args.dataset:
        parser._subparsers._group_actions[0].choices[args.command].error(
            "the following arguments are required: --dataset")
    return args


def output_dir(args):
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUTPUT_ENV, "uvhl-runs")) / args.command
    path.mkdir(parents=True, exist_ok=True)
    return path


def train_config(args):
    return TrainConfig(hidden=tuple(args.hidden), dropout=args.dropout, lr=args.lr,
                       epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)


def cv_config(args, **extra):
    return CVConfig(
        seed=args.seed, method=args.method if args.method != "all" else "uvhl",
        feature_groups=tuple(args.groups), k_nn=args.k_nn, k_pool=tuple(args.k_pool),
        inner_folds=args.inner_folds, lambda_u=args.lambda_u, lambda_r=args.lambda_r,
        lambda_r_grid=tuple(args.lambda_r_grid), passes=args.passes,
        train=train_config(args), **extra)


def cmd_synth(args, out):
    spec = SynthSpec.separated(args.d_regional, args.d_radiomics, args.separation,
                               args.spread, args.noise_inflation)
    dataset, mask = synth_generate(spec, args.n, args.label_noise, args.feature_noise, args.seed)
    save_dataset(dataset, out / "dataset.csv")
    mask.save(out / "noise_mask.csv", dataset.ids)
    print(f"wrote {dataset.n} cases, {int(mask.flipped.sum())} flipped, "
          f"{int(mask.feature_noise.sum())} feature-noisy -> {out}")


def cmd_cv(args, out):
    dataset = load_dataset(args.dataset)
    config = cv_config(args, folds=args.folds, repeats=args.repeats,
                       train_per_class=args.train_per_class)
    if args.method == "all":
        reports = ablation(dataset, config)
        for method, report in reports.items():
            report.save(out, f"report_{method}")
        base = reports["equal-weight"].metric("acc", "rows")
        for method, report in reports.items():
            acc = report.summary["repeats"]["acc"]
            line = f"{method:15s} ACC {acc['mean']:.4f}"
            if method != "equal-weight":
                line += f"  p vs equal-weight {welch_t_test(report.metric('acc', 'rows'), base):.3g}"
            print(line)
    else:
        report = cross_validate(dataset, config)
        report.save(out)
        acc = report.summary["repeats" if config.repeats > 1 else "folds"]["acc"]
        print(f"{config.method} ACC {acc['mean']:.4f} +- {acc['std']:.4f}")


def _labeled_model_inputs(dataset, args):
    config = CVConfig(feature_groups=tuple(args.groups), train=train_config(args),
                      passes=args.passes, lambda_u=args.lambda_u)
    labeled = dataset.labeled()
    if labeled.size == 0:
        raise ValueError("dataset has no labeled cases")
    _, net_cols = edge_groups_for(dataset, config)
    Xn = apply_normalization(fit_normalization(dataset, labeled), dataset.features)
    return config, labeled, Xn[:, net_cols]


def cmd_score(args, out):
    dataset = load_dataset(args.dataset)
    config, labeled, X = _labeled_model_inputs(dataset, args)
    model = train(X[labeled], dataset.labels[labeled], config.train)
    model.save(out / "model.npz")
    aleatoric, epistemic = score_cases(model, X, args.passes, args.seed)
    weights = method_weights(Scores(aleatoric, epistemic), "uvhl", args.lambda_u, dataset.n)
    with (out / "scores.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "aleatoric", "epistemic", "weight"])
        for row in zip(dataset.ids, aleatoric, epistemic, weights):
            writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    print(f"scored {dataset.n} cases -> {out / 'scores.csv'}")


def cmd_predict(args, out):
    dataset = load_dataset(args.dataset)
    config = cv_config(args)
    result = run_fold(dataset, dataset.labeled(), config, args.seed)
    pred = predict_labels(result.F, tie_class=config.tie_class)
    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "score0", "score1", "prediction"])
        for case_id, (s0, s1), p in zip(dataset.ids, result.F, pred):
            writer.writerow([case_id, repr(float(s0)), repr(float(s1)), LABEL_NAMES[int(p)]])
    n_unknown = dataset.unlabeled().size
    print(f"k_nn={result.k_nn}; labeled {n_unknown} unknown cases -> {out / 'predictions.csv'}")


def cmd_report(args, out):
    from uvhl.plots import comparison_chart

    reports = [(Path(p), EvalReport.load(p)) for p in args.reports]
    names = []
    for path, report in reports:
        name = report.config.get("method", path.stem)
        groups = report.config.get("feature_groups") or []
        if groups:
            name += f" [{'+'.join(groups)}]"
        names.append(name)
    header = ["run", *(f"{m}_mean" for m in METRICS), *(f"{m}_std" for m in METRICS)]
    table = []
    for name, (_, report) in zip(names, reports):
        summ = report.summary["repeats"] if len(report.repeats) > 1 else report.summary["folds"]
        table.append([name, *(summ[m]["mean"] for m in METRICS), *(summ[m]["std"] for m in METRICS)])
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in table:
            writer.writerow([row[0], *("" if v is None else f"{v:.5f}" for v in row[1:])])
    md = ["| run | " + " | ".join(m.upper() for m in METRICS) + " |",
          "|---" * (len(METRICS) + 1) + "|"]
    for row in table:
        cells = [("n/a" if row[1 + i] is None else f"{row[1 + i]:.4f} ± {row[1 + len(METRICS) + i] or 0:.4f}")
                 for i in range(len(METRICS))]
        md.append(f"| {row[0]} | " + " | ".join(cells) + " |")
    (out / "summary.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    comparison_chart(names, [r for _, r in reports], out / "comparison.svg")
    print("\n".join(md))


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    out = output_dir(args)
    if args.command != "report":
        write_config_file(args, out)
    try:
        args.handler(args, out)
    except (ValueError, RuntimeError, SingularityError, np.linalg.LinAlgError, OSError) as exc:
        print(f"uvhl {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


run = main

if __name__ == "__main__":
    sys.exit(main())
