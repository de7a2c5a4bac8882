"""Command-line entry point: ``plankd <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import replace

from ..planner import (
    STUDENT_CONFIG,
    TEACHER_CONFIG,
    CheckpointError,
    build_planner,
    load_planner,
    planner_arrays,
    save_planner,
    train_imitation,
)
from ..planner.checkpoint import save_tensors
from ..planner.train import DatasetArrays
from ..report import NumericAbort
from ..scenario import DatasetFormatError, generate_dataset, read_dataset, write_dataset
from ..trainer import comparison_table, distill, run_ablations
from .config import ConfigError, RunConfig, load_config
from .manifest import RunManifest, read_key_values
from .metrics import evaluate, measure_inference

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _need_file(path: str, what: str) -> str:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")
    return path


def _manifest_path(args, default_stem: str) -> str:
    if args.manifest:
        return args.manifest
    out = getattr(args, "out", None)
    return f"{out}.manifest" if out else f"plankd-{default_stem}.manifest"


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _metrics_lines(name: str, m: dict) -> str:
    return "".join(f"{name}.{k} = {v!r}\n" for k, v in m.items())


# subcommands ----------------------------------------------------------------

def cmd_gen_data(args, cfg: RunConfig, man: RunManifest) -> None:
    seed = cfg.distill.data_seed if args.seed is None else args.seed
    ds = generate_dataset(seed, args.scenes, cfg.gen)
    write_dataset(ds, args.out)
    man.config["seed"] = seed
    man.config["scenes"] = args.scenes
    man.add_dataset(args.out)


def cmd_train_teacher(args, cfg: RunConfig, man: RunManifest) -> None:
    ds = read_dataset(_need_file(args.data, "dataset"))
    man.add_dataset(args.data)
    d = cfg.distill
    epochs = d.epochs if args.epochs is None else args.epochs
    model = build_planner(replace(TEACHER_CONFIG, T=ds.T), d.init_seed)
    model, report = train_imitation(model, ds, epochs, d.lr, d.batch_size, d.train_seed)
    save_planner(model, args.out)
    man.checkpoints["teacher"] = args.out
    man.curves["loss"] = report.series("L")


def cmd_distill(args, cfg: RunConfig, man: RunManifest) -> None:
    teacher = load_planner(_need_file(args.teacher, "teacher checkpoint"))
    ds = read_dataset(_need_file(args.data, "dataset"))
    man.add_dataset(args.data)
    student, report, state = distill(teacher, replace(STUDENT_CONFIG, T=ds.T), ds, cfg.distill)
    arrays = planner_arrays(student)
    arrays.update(state.arrays())
    save_tensors(arrays, args.out)
    report_path = args.report or f"{args.out}.report"
    _write_text(report_path, report.to_text())
    _write_text(f"{report_path}.csv", report.to_csv())
    man.checkpoints.update(teacher=args.teacher, student=args.out)
    for key in report.epoch_metrics[0] if report.epoch_metrics else ():
        if key.startswith("mean_"):
            man.curves[key[len("mean_"):]] = [m[key] for m in report.epoch_metrics]


def cmd_eval(args, cfg: RunConfig, man: RunManifest) -> None:
    model = load_planner(_need_file(args.model, "model checkpoint"))
    ds = read_dataset(_need_file(args.data, "dataset"))
    man.add_dataset(args.data)
    metrics = evaluate(model, ds, cfg.distill.sigma_kernel).as_dict()
    man.checkpoints["model"] = args.model
    man.metrics["eval"] = metrics
    text = _metrics_lines("eval", metrics)
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)


def cmd_ablate(args, cfg: RunConfig, man: RunManifest) -> None:
    teacher = load_planner(_need_file(args.teacher, "teacher checkpoint"))
    train = read_dataset(_need_file(args.data, "dataset"))
    test = read_dataset(_need_file(args.test, "held-out dataset"))
    man.add_dataset(args.data)
    man.add_dataset(args.test)
    runs = run_ablations(teacher, replace(STUDENT_CONFIG, T=train.T), DatasetArrays(train),
                         cfg.distill)
    table = {v: evaluate(student, test, cfg.distill.sigma_kernel).as_dict()
             for v, (student, _) in runs.items()}
    man.checkpoints["teacher"] = args.teacher
    man.metrics.update(table)
    for v, (_, report) in runs.items():
        man.curves[f"{v}.L"] = [m["mean_L"] for m in report.epoch_metrics]
    _write_text(args.out, comparison_table(table))


def cmd_plot(args, cfg: RunConfig, man: RunManifest) -> None:
    kv = read_key_values(_need_file(args.report, "report"))
    epochs: dict[int, dict[str, str]] = {}
    for key, value in kv.items():
        parts = key.split(".")
        if parts[0] == "epoch" and len(parts) == 3:
            epochs.setdefault(int(parts[1]), {})[parts[2]] = value
    if not epochs:
        raise DatasetFormatError(f"{args.report}: no per-epoch records to plot", 0)
    cols = sorted({k for row in epochs.values() for k in row})
    loss_cols = [c for c in cols if c.startswith("mean_")]
    metric_cols = [c for c in cols if c not in loss_cols]
    for suffix, chosen in (("losses", loss_cols), ("metrics", metric_cols)):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch"] + chosen)
        for e in sorted(epochs):
            w.writerow([e] + [epochs[e].get(c, "") for c in chosen])
        path = f"{args.out}_{suffix}.csv"
        _write_text(path, buf.getvalue())
        man.checkpoints[suffix] = path


def cmd_bench(args, cfg: RunConfig, man: RunManifest) -> None:
    seed = cfg.distill.init_seed
    teacher = load_planner(_need_file(args.teacher, "teacher checkpoint")) if args.teacher \
        else build_planner(TEACHER_CONFIG, seed)
    student = load_planner(_need_file(args.student, "student checkpoint")) if args.student \
        else build_planner(STUDENT_CONFIG, seed)
    rows = {}
    for name, model in (("teacher", teacher), ("student", student)):
        ms, count = measure_inference(model, args.frames, seed)
        rows[name] = {"ms_per_frame": ms, "param_count": count}
    rows["ratio"] = {k: rows["student"][k] / rows["teacher"][k] for k in rows["student"]}
    man.metrics.update(rows)
    text = "".join(_metrics_lines(k, v) for k, v in rows.items())
    if args.out:
        _write_text(args.out, text)
    sys.stdout.write(text)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plankd", description="Knowledge distillation for toy trajectory planners.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--manifest", help="where to write the run manifest")
        return sp

    sp = add("gen-data", "generate a dataset file")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--scenes", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("train-teacher", "imitation-train the teacher planner")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int)

    sp = add("distill", "distill a student from a frozen teacher")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--report")

    sp = add("eval", "held-out metrics for a checkpoint")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out")

    sp = add("ablate", "full method against its three ablations")
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--out", required=True)

    sp = add("plot", "per-epoch loss and metric CSVs from a report")
    sp.add_argument("--report", required=True)
    sp.add_argument("--out", required=True, help="output prefix")

    sp = add("bench", "inference time and parameter count, teacher vs student")
    sp.add_argument("--teacher")
    sp.add_argument("--student")
    sp.add_argument("--frames", type=int, default=100)
    sp.add_argument("--out")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        cfg = load_config(args.config)
        man = RunManifest(args.command, cfg.as_dict())
        COMMANDS[args.command](args, cfg, man)
        man.write(_manifest_path(args, args.command))
    except (DatasetFormatError, CheckpointError, ConfigError, FileNotFoundError) as exc:
        print(f"plankd: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericAbort as exc:
        print(f"plankd: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"plankd: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
