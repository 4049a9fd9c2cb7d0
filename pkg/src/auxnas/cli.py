"""Command-line entry point: ``auxnas {train,prune,eval,flops,gradcheck,protocol}``.

Exit codes: 0 success, 2 configuration/file/schema error, 3 training
divergence, 4 internal invariant violation (the invariant is named on
stderr).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import archnet, checks, config, evalbench, flops, taskgen, trainer
from .evalbench import METHODS
from .exceptions import ConfigurationError, ContractViolation, SchemaError, TrainingDiverged

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INVARIANT = 0, 2, 3, 4

logger = logging.getLogger("auxnas")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_model(path) -> archnet.AuxNetwork:
    try:
        return archnet.load(path)
    except FileNotFoundError:
        raise ConfigurationError(f"model file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON at line {exc.lineno}") from None


def _load_dataset(data_path, schema_path, seed: int) -> taskgen.Dataset:
    try:
        schema_doc = json.loads(Path(schema_path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigurationError(f"schema file not found: {schema_path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{schema_path}: invalid JSON at line {exc.lineno}") from None
    try:
        return taskgen.load_csv(data_path, taskgen.CsvSchema.from_dict(schema_doc), seed)
    except FileNotFoundError:
        raise ConfigurationError(f"data file not found: {data_path}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = config.load(args.config, args.set)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data.family is not None:
        ds = taskgen.generate(cfg.task_family(), cfg.data.n_samples, cfg.seed,
                              cfg.data.split_fractions)
    else:
        ds = taskgen.load_csv(cfg.data.csv, cfg.csv_schema(), cfg.seed)
    build_mode, granularity, extra = METHODS[cfg.mode]
    auxes = [] if cfg.mode == "single" else cfg.auxiliaries
    net = archnet.build(cfg.primary, auxes, ds.inputs.shape[1], build_mode, cfg.window,
                        granularity, cfg.stage_size, cfg.seed)
    train_cfg = replace(cfg.train, **extra) if extra else cfg.train
    x, y = ds.split("train")
    try:
        # overflow is caught as a non-finite loss, so numpy's warning is noise
        with np.errstate(over="ignore", invalid="ignore"):
            report = trainer.train(net, x, y[:1 + len(auxes)], train_cfg)
    except TrainingDiverged as exc:
        if exc.snapshot is not None:
            net.params = exc.snapshot
            archnet.save(net, out / "snapshot.json")
        print(f"error: training diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    archnet.save(net, out / "model.json")
    report.write_csv(out / "steps.csv")
    doc = report.to_dict()
    if not train_cfg.log_wall_time:
        doc["wall_time_s"] = None
    _write_json(out / "report.json", doc)
    schema = taskgen.write_csv(ds, out / "dataset.csv")
    _write_json(out / "schema.json", schema.to_dict())
    taskgen.write_manifest(ds, out / "manifest.json")
    print(f"trained {cfg.mode}: {len(report.steps)} steps, final L_P "
          f"{report.steps[-1]['L_P'] if report.steps else float('nan'):.6g}; wrote {out}")
    return EXIT_OK


def cmd_prune(args) -> int:
    net = _load_model(args.model)
    pruned = archnet.prune(net)
    out = Path(args.out) if args.out else Path(args.model).with_name("pruned.json")
    archnet.save(pruned, out)
    print(f"pruned {net.params.count()} -> {pruned.params.count()} parameters; wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = _load_model(args.model)
    ds = _load_dataset(args.data, args.schema, args.seed)
    if args.split not in ds.splits:
        raise ConfigurationError(f"unknown split {args.split!r}")
    x, y = ds.split(args.split)
    if x.shape[1] != net.input_dim:
        raise SchemaError(f"data has {x.shape[1]} input columns, model expects {net.input_dim}")
    if net.mode == "symmetric":
        raise ContractViolation("evaluation purity: a symmetric network needs its auxiliary inputs")
    target = net if net.mode == "pruned" else archnet.hard_zero_alpha_p(net)
    result = evalbench.evaluate(target, x, y[0], ds.kinds[0], guard=target.mode == "pruned")
    doc = {"split": args.split, "n": int(len(x)), "metrics": result}
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_flops(args) -> int:
    if args.model:
        net = _load_model(args.model)
        measured = flops.measure_inference(net, args.batch)
        doc = {"model": str(args.model), "mode": net.mode, "batch": args.batch,
               "measured": measured.to_dict()}
        if net.mode in ("pruned", "single", "aux_g", "aux_head", "aux_nas"):
            doc["single_task"] = flops.measure_single_task(net, args.batch).to_dict()
    else:
        if args.N is None or args.M is None or args.K is None:
            raise ConfigurationError("flops needs --model or all of --N, --M, --K")
        doc = {"N": args.N, "M": args.M, "K": args.K,
               "table": flops.FlopsModel(args.N, args.M, args.K).table()}
    sys.stdout.write(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    report = checks.gradcheck_suite(args.seed, args.eps)
    for r in report.results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:28s} {r.max_rel_err:.3e} {status}")
    print(f"max rel err {report.max_rel_err:.3e} (tol {report.tolerance:g}): "
          f"{'PASS' if report.passed else 'FAIL'}")
    if args.out:
        _write_json(Path(args.out), report.to_dict())
    if not report.passed:
        print("invariant violated: gradient correctness", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_protocol(args) -> int:
    cfg = config.load(args.config, args.set)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = evalbench.run_protocol(cfg.to_protocol(), jobs=args.jobs)
    (out / "results.csv").write_text(table.to_csv(), encoding="utf-8")
    (out / "results.json").write_text(table.to_json(), encoding="utf-8")
    metric = "accuracy" if _primary_kind(cfg) == "classification" else "mse"
    summary = {"metric": metric, "aggregate": {}, "paired_vs_single": {}}
    for m in table.methods():
        summary["aggregate"][m] = table.aggregate(m, metric)
        if m != "single" and "single" in table.methods():
            alt = "greater" if metric == "accuracy" else "less"
            summary["paired_vs_single"][m] = table.paired_test(m, metric, alternative=alt)
    _write_json(out / "summary.json", summary)
    for m, agg in summary["aggregate"].items():
        print(f"{m:22s} {metric} {agg['mean']:.6g} +- {agg['std']:.3g} (n={agg['n']})")
    return EXIT_OK


def _primary_kind(cfg: config.ExperimentConfig) -> str:
    if cfg.data.family is not None:
        return cfg.task_family().kinds[0]
    return cfg.csv_schema().kinds[0]


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="auxnas", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one configured network")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: config output_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field by dotted path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="drop auxiliary structure from a trained model")
    p.add_argument("model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("eval", help="primary-task metrics of a model on a CSV split")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--schema", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0, help="split seed when the CSV has no split column")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("flops", help="measured or symbolic inference cost")
    p.add_argument("--model")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--N", type=float)
    p.add_argument("--M", type=float)
    p.add_argument("--K", type=int)
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("protocol", help="paired multi-seed method comparison")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_protocol)
    return parser


def _invariant_name(exc: ContractViolation) -> str:
    return str(exc).split(":", 1)[0]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ContractViolation as exc:
        print(f"invariant violated: {_invariant_name(exc)}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
