"""Command-line entry point: ``edgekt <command> --config run.ini --out DIR``.

Exit codes: 0 success, 2 configuration/spec error, 3 data or file-format
error, 4 numeric failure (non-finite loss).
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from .. import archspec, compressor, ktengine
from ..errors import ConfigError, EdgeKTError
from ..metrics import evaluate_sets
from . import report as report_mod
from .config import derive_seed, load_config
from .training import (eval_splits, fit_supervised, load_data, restrict_classes,
                       schedule_from)

CSV_FIELDS = ["epoch", "split", "category_set", "accuracy", "loss", "correct", "total", "steps",
              "lr", "run"]


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _acc_rows(epoch, acc, loss, steps, lr, run):
    rows = []
    for (split, name), a in sorted(acc.items()):
        rows.append({"epoch": epoch, "split": split, "category_set": name,
                     "accuracy": f"{a.percentage:.4f}", "loss": "" if loss is None else f"{loss:.6g}",
                     "correct": a.correct, "total": a.total, "steps": steps,
                     "lr": "" if lr is None else f"{lr:.6g}", "run": run})
    return rows


def _write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _final(acc):
    return {f"{split}/{name}": round(a.percentage, 4) for (split, name), a in sorted(acc.items())}


def _teacher_spec(cfg, class_count):
    m = cfg.section("model")
    if m["spec"]:
        spec = archspec.load_spec(cfg.path("model", "spec"))
        if spec.class_count != class_count:
            raise ConfigError(f"spec has {spec.class_count} classes, data has {class_count}")
        return spec
    size = cfg.get("data", "image_size")
    if m["arch"] == "resnet":
        return archspec.resnet_spec(m["widths"], m["blocks_per_group"], class_count,
                                    m["stem_width"], size, m["name"])
    if m["arch"] == "plain":
        stages = tuple((w,) * m["blocks_per_group"] for w in m["widths"])
        return archspec.plain_spec(stages, class_count, m["stem_width"], size, m["name"])
    raise ConfigError(f"unknown arch {m['arch']!r}")


def _supervised(cfg, args, spec, run):
    images, labels, _, plan = load_data(cfg, args.data)
    train_idx = restrict_classes(plan.train, labels, cfg.get("data", "train_classes"))
    model = archspec.build_network(spec, derive_seed(cfg.seed, "init"))
    log_lines = []
    result = fit_supervised(model, images[train_idx], labels[train_idx],
                            eval_splits(images, labels, plan), cfg, derive_seed(cfg.seed, "order"),
                            log=log_lines.append)
    rows = []
    for h in result.history:
        rows += _acc_rows(h.epoch, h.accuracy, h.loss, h.steps, h.lr, run)
    os.makedirs(args.out, exist_ok=True)
    archspec.save_checkpoint(result.model, os.path.join(args.out, "checkpoint.ektc"))
    archspec.save_spec(spec, os.path.join(args.out, "spec.txt"))
    _write_csv(os.path.join(args.out, "metrics.csv"), rows)
    steps_per_epoch = result.history[0].steps if result.history else 0
    summary = {
        "command": run, "model": spec.name, "params": archspec.count_params(spec),
        "best_epoch": result.best_epoch, "convergence_epoch": result.convergence_epoch,
        "convergence_steps": (result.convergence_epoch + 1) * steps_per_epoch,
        "final": _final(result.final), "train_images": int(len(train_idx)),
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return summary


def cmd_train_teacher(cfg, args):
    _, _, class_count, _ = load_data(cfg, args.data)
    return _supervised(cfg, args, _teacher_spec(cfg, class_count), "train-teacher")


def cmd_retrain_student(cfg, args):
    spec = archspec.load_spec(cfg.path("inputs", "student_spec"))
    return _supervised(cfg, args, spec, "retrain-student")


def cmd_compress(cfg, args):
    teacher = archspec.load_checkpoint(cfg.path("inputs", "teacher"))
    images, labels, _, plan = load_data(cfg, args.data)
    p = cfg.section("pruning")
    pcfg = compressor.PruningConfig(p["threshold"], p["samples"], p["calibration_seed"])
    pool = images[restrict_classes(plan.train, labels, cfg.get("data", "train_classes"))]
    student, report = compressor.compress(teacher, pool, pcfg)
    os.makedirs(args.out, exist_ok=True)
    archspec.save_spec(student, os.path.join(args.out, "student.spec"))
    with open(os.path.join(args.out, "sparsity.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_text())
    with open(os.path.join(args.out, "sparsity_fractions.txt"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write(report.to_text(fractions=True))
    shallow = compressor.reduce_depth(teacher.spec)
    summary = {
        "command": "compress", "teacher": teacher.spec.name, "model": student.name,
        "threshold": pcfg.threshold, "samples": pcfg.sample_count,
        "teacher_params": archspec.count_params(teacher.spec),
        "params": archspec.count_params(student),
        "depth_only_params": archspec.count_params(shallow),
        "ratio": archspec.compression_ratio(teacher.spec, student),
        "depth_only_ratio": archspec.compression_ratio(teacher.spec, shallow),
    }
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return summary


def _kt_config(cfg, mode, **override):
    k = cfg.section("kt")
    kw = dict(lambda1=k["lambda1"], lambda2=k["lambda2"], lambda3=k["lambda3"], mode=mode,
              train_head=k["train_head"], remap_every_batch=k["remap_every_batch"],
              j3_form=k["j3_form"], flatten=k["flatten"], student_bn=k["student_bn"])
    kw.update(override)
    return ktengine.KTConfig(**kw)


def _transfer_kwargs(cfg):
    t = cfg.section("train")
    return dict(optimizer_kind=t["optimizer"], momentum=t["momentum"],
                weight_decay=t["weight_decay"])


def _kt_rows(result, before, run):
    rows = _acc_rows(-1, before, None, 0, None, f"{run}-before")
    for h in result.history:
        rows += _acc_rows(h.epoch, h.accuracy, h.loss, h.steps, h.lr, run)
    return rows


def _evaluate(model, eval_sets):
    return {(s, k): v for s, (x, y, sets) in eval_sets.items()
            for k, v in evaluate_sets(model, x, y, sets).items()}


def _run_summary(result, before):
    steps_per_epoch = result.history[0].steps if result.history else 0
    return {"best_epoch": result.best_epoch, "convergence_epoch": result.convergence_epoch,
            "convergence_steps": (result.convergence_epoch + 1) * steps_per_epoch,
            "before": _final(before), "final": _final(result.final) if result.final else _final(before)}


def cmd_kt_incremental(cfg, args):
    images, labels, _, plan = load_data(cfg, args.data)
    if plan.protocol != "incremental":
        raise ConfigError("kt-incremental needs [data] protocol = incremental")
    teacher = archspec.load_checkpoint(cfg.path("inputs", "teacher"))
    student = archspec.load_checkpoint(cfg.path("inputs", "student"))
    new_idx = plan.restrict("train", "new")
    evals = eval_splits(images, labels, plan)
    schedule = schedule_from(cfg)
    t = cfg.section("train")
    seed = derive_seed(cfg.seed, "kt-order")
    before = _evaluate(student, evals)
    runs = [("with-kt", _kt_config(cfg, "incremental"))]
    if cfg.get("kt", "ablation"):
        runs.append(("without-kt", _kt_config(cfg, "incremental", lambda1=0.0, lambda2=0.0,
                                               lambda3=1.0, train_all=True)))
    os.makedirs(args.out, exist_ok=True)
    rows, summary = [], {"command": "kt-incremental", "model": student.spec.name,
                         "teacher": teacher.spec.name, "category_sets": {
                             k: list(v) for k, v in plan.category_sets.items()}}
    for run, kcfg in runs:
        log = []
        result = ktengine.train_incremental(teacher, student, images[new_idx], labels[new_idx],
                                            kcfg, schedule, t["epochs"], t["batch_size"], seed,
                                            evals, log=log.append, **_transfer_kwargs(cfg))
        rows += _kt_rows(result, before, run)
        name = "checkpoint.ektc" if run == "with-kt" else "ablation_checkpoint.ektc"
        archspec.save_checkpoint(result.student, os.path.join(args.out, name))
        logname = "kt_log.txt" if run == "with-kt" else "ablation_log.txt"
        with open(os.path.join(args.out, logname), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(log) + ("\n" if log else ""))
        summary[run] = _run_summary(result, before)
    _write_csv(os.path.join(args.out, "metrics.csv"), rows)
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return summary


def cmd_kt_unseen(cfg, args):
    images, labels, _, plan = load_data(cfg, args.data)
    if plan.protocol != "unseen":
        raise ConfigError("kt-unseen needs [data] protocol = unseen")
    teacher = archspec.load_checkpoint(cfg.path("inputs", "teacher"))
    student = archspec.load_checkpoint(cfg.path("inputs", "student"))
    transfer_idx = restrict_classes(plan.train, labels, cfg.get("data", "transfer_classes"))
    # labels are never handed to the transfer loop
    transfer_images = images[transfer_idx]
    evals = eval_splits(images, labels, plan)
    t = cfg.section("train")
    before = _evaluate(student, evals)
    log = []
    result = ktengine.train_unseen(teacher, student, transfer_images, _kt_config(cfg, "unseen"),
                                   schedule_from(cfg), t["epochs"], t["batch_size"],
                                   derive_seed(cfg.seed, "kt-order"), evals, log=log.append,
                                   **_transfer_kwargs(cfg))
    os.makedirs(args.out, exist_ok=True)
    archspec.save_checkpoint(result.student, os.path.join(args.out, "checkpoint.ektc"))
    with open(os.path.join(args.out, "kt_log.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(log) + ("\n" if log else ""))
    _write_csv(os.path.join(args.out, "metrics.csv"), _kt_rows(result, before, "dependent"))
    summary = {"command": "kt-unseen", "model": student.spec.name, "teacher": teacher.spec.name,
               "category_sets": {k: list(v) for k, v in plan.category_sets.items()},
               "transfer_images": int(len(transfer_idx)),
               "dependent": _run_summary(result, before)}
    _write_json(os.path.join(args.out, "summary.json"), summary)
    return summary


def _parse_sets(text, class_count):
    if not text.strip():
        return {}
    out = {}
    for part in text.split(";"):
        if not part.strip():
            continue
        name, _, classes = part.partition("=")
        values = tuple(int(v) for v in classes.split(",") if v.strip())
        if not values or min(values) < 0 or max(values) >= class_count:
            raise ConfigError(f"bad category set {part!r}")
        out[name.strip()] = values
    return out


def cmd_eval(cfg, args):
    model = archspec.load_checkpoint(cfg.path("inputs", "checkpoint"))
    images, labels, class_count, plan = load_data(cfg, args.data)
    split = cfg.get("eval", "split")
    if split not in ("train", "val", "test"):
        raise ConfigError(f"unknown split {split!r}")
    sets = _parse_sets(cfg.get("eval", "sets"), class_count)
    idx = getattr(plan, split)
    accs = evaluate_sets(model, images[idx], labels[idx], sets)
    rows = [{"category_set": a.category_set, "correct": a.correct, "total": a.total,
             "accuracy": f"{a.percentage:.4f}"} for a in accs.values()]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.csv"), "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["category_set", "correct", "total", "accuracy"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    for r in rows:
        print(f"{r['category_set']:>10}  {r['correct']:>6}/{r['total']:<6} {r['accuracy']:>9}%")
    return {"command": "eval", "accuracy": {r["category_set"]: float(r["accuracy"]) for r in rows}}


def cmd_report(cfg, args):
    text, _ = report_mod.write_report(args.out)
    print(text, end="")
    return {"command": "report"}


COMMANDS = {
    "train-teacher": cmd_train_teacher,
    "compress": cmd_compress,
    "retrain-student": cmd_retrain_student,
    "kt-incremental": cmd_kt_incremental,
    "kt-unseen": cmd_kt_unseen,
    "eval": cmd_eval,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, default=None, help="override [run] seed")
    common.add_argument("--out", help="output directory (the run directory for 'report')")
    common.add_argument("--data", help="dataset directory (CIFAR-10 binary files)")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="SECTION.KEY=VALUE", help="override one config value")
    parser = argparse.ArgumentParser(prog="edgekt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "report":
        if not args.out:
            raise ConfigError("report needs --out <run directory>")
        return cmd_report(None, args)
    if not args.config:
        raise ConfigError(f"{args.command} needs --config")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    cfg = load_config(args.config, overrides)
    if args.command != "eval" and not args.out:
        raise ConfigError(f"{args.command} needs --out")
    return COMMANDS[args.command](cfg, args)


def main(argv=None):
    try:
        summary = run(argv)
    except EdgeKTError as exc:
        print(f"edgekt: error: {exc}", file=sys.stderr)
        return exc.exit_code
    if summary and summary.get("command") not in ("eval", "report"):
        print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
