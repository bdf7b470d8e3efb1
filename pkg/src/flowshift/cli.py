"""Command-line surface.

    flowshift simulate                       write a synthetic multi-window dataset
    flowshift train DATA.csv                 fit model + labeler on labeled data
    flowshift label CKPT DATA.csv            append a pseudo_label column
    flowshift detect CKPT OLD.csv NEW.csv    permutation-test shift report
    flowshift explain CKPT OLD.csv NEW.csv   select samples explaining the shift
    flowshift adapt CKPT EXPLAIN_DIR         fine-tune on the selection
    flowshift eval CKPT TEST.csv             metrics against true labels
    flowshift lifecycle [DATA_DIR]           the whole loop over windows

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
Nothing is written to ``--out`` unless the command succeeds.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import config as config_io
from .checkpoint import Checkpoint
from .drift_sim import import_csv, read_csv
from .errors import ConfigError, DataError, FlowShiftError, NumericalError, StateError
from .pipeline import (
    RunWriter,
    adapt_stage,
    evaluate_stage,
    explain_stage,
    run_lifecycle,
    scenario_windows,
    train_stage,
)
from .pseudo_label import pseudo_labels
from .shift_detect import ShiftReport, detect_shift

logger = logging.getLogger("flowshift")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OTHER = 0, 2, 3, 4, 1


def _load_config(args) -> config_io.PipelineConfig:
    cfg = config_io.load(args.config) if args.config else config_io.PipelineConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.force:
        cfg = replace(cfg, lifecycle=replace(cfg.lifecycle, force=True))
    return cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.out_dir)


def _require(path) -> Path:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    return path


def cmd_simulate(args, cfg):
    writer = RunWriter(_out_dir(args, cfg), "simulate", cfg)
    windows = scenario_windows(cfg)
    for k, w in enumerate(windows):
        writer.add_csv(f"window_{k:03d}.csv", w.x, w.y)
    writer.commit()
    logger.info("wrote %d windows to %s", len(windows), writer.out_dir)


def cmd_train(args, cfg):
    path = _require(args.data or cfg.data.train)
    data = read_csv(path)
    writer = RunWriter(_out_dir(args, cfg), "train", cfg)
    writer.add_input(path)
    with writer.stage("train"):
        model, labeler = train_stage(data.x, data.y, cfg)
    name, digest = writer.add_checkpoint(Checkpoint(model, labeler, {"stage": "train", "seed": cfg.seed}))
    writer.links["checkpoint"] = name
    writer.commit()
    print(writer.out_dir / name)


def cmd_label(args, cfg):
    ckpt_path, data_path = _require(args.checkpoint), _require(args.data)
    ck = ckpt_io.load(ckpt_path)
    _need_labeler(ck)
    data = read_csv(data_path, require_label=False)
    with open(data_path, newline="") as fh:
        rows = [r for r in csv.reader(fh)]
    header, body = rows[0], [r for r in rows[1:] if r]
    if "pseudo_label" in header:
        raise DataError(f"{data_path}: already has a pseudo_label column")
    if len(data) == 0:
        logger.warning("%s holds no samples; writing an empty labeled file", data_path)
        labels = np.zeros(0, dtype=int)
    else:
        labels = pseudo_labels(ck.model, data.x, ck.labeler)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header + ["pseudo_label"])
    for row, lab in zip(body, labels):
        w.writerow(row + [str(int(lab))])
    writer = RunWriter(_out_dir(args, cfg), "label", cfg)
    writer.add_input(ckpt_path)
    writer.add_input(data_path)
    writer.add_text(f"{data_path.stem}.labeled.csv", buf.getvalue())
    writer.commit()


def _need_labeler(ck: Checkpoint):
    if ck.labeler is None:
        raise StateError("checkpoint has no fitted labeler")


def _detect(args, cfg, writer):
    ck = ckpt_io.load(_require(args.checkpoint))
    _need_labeler(ck)
    old_path, new_path = _require(args.old), _require(args.new)
    old, new = read_csv(old_path, require_label=False), read_csv(new_path, require_label=False)
    for p in (args.checkpoint, old_path, new_path):
        writer.add_input(p)
    with writer.stage("detect"):
        report = detect_shift(ck.model, ck.labeler, old.x, new.x, cfg.detect)
    return ck, old, new, report


def cmd_detect(args, cfg):
    writer = RunWriter(_out_dir(args, cfg), "detect", cfg)
    _, _, _, report = _detect(args, cfg, writer)
    writer.add_report("shift_report.json", report.to_dict())
    writer.commit()
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_explain(args, cfg):
    writer = RunWriter(_out_dir(args, cfg), "explain", cfg)
    if args.report:
        report_path = _require(args.report)
        report = ShiftReport.from_dict(json.loads(report_path.read_text()))
        writer.add_input(report_path)
        ck = ckpt_io.load(_require(args.checkpoint))
        _need_labeler(ck)
        old = read_csv(_require(args.old), require_label=False)
        new = read_csv(_require(args.new), require_label=False)
        for p in (args.checkpoint, args.old, args.new):
            writer.add_input(p)
        writer.links["shift_report"] = str(report_path)
    else:
        ck, old, new, report = _detect(args, cfg, writer)
        writer.links["shift_report"] = writer.add_report("shift_report.json", report.to_dict())
    if not (report.shifted or cfg.lifecycle.force):
        logger.warning("no shift detected (p=%.4f); explanation skipped (use --force to override)", report.p_value)
        writer.commit()
        return
    with writer.stage("explain"):
        result = explain_stage(ck.model, ck.labeler, old.x, new.x, cfg)
    doc = result.to_dict()
    doc["checkpoint"] = str(Path(args.checkpoint).resolve())
    doc["selected_old_csv"] = writer.add_csv("selected_old.csv", old.x[result.selected_old])
    doc["selected_new_csv"] = writer.add_csv("selected_new.csv", new.x[result.selected_new])
    writer.links["explanation"] = writer.add_report("explanation.json", doc)
    writer.commit()


def cmd_adapt(args, cfg):
    ckpt_path = _require(args.checkpoint)
    exp_dir = _require(args.explanation)
    exp_file = exp_dir / "explanation.json" if exp_dir.is_dir() else exp_dir
    doc = json.loads(_require(exp_file).read_text())
    base = exp_file.parent
    if not doc["selected_old"] and not doc["selected_new"]:
        raise DataError("explanation selected no samples; refusing to adapt")
    old = read_csv(_require(base / doc["selected_old_csv"]), require_label=False)
    new = read_csv(_require(base / doc["selected_new_csv"]), require_label=False)
    ck = ckpt_io.load(ckpt_path)
    _need_labeler(ck)
    writer = RunWriter(_out_dir(args, cfg), "adapt", cfg)
    for p in (ckpt_path, exp_file, base / doc["selected_old_csv"], base / doc["selected_new_csv"]):
        writer.add_input(p)
    teacher_hash = ckpt_io.file_hash(ckpt_path)
    with writer.stage("adapt"):
        outcome = adapt_stage(ck.model, ck.labeler, old.x, new.x, cfg)
    name, digest = writer.add_checkpoint(
        Checkpoint(outcome.model, outcome.labeler, {"stage": "adapt", "teacher_sha256": teacher_hash}),
        stem="model",
    )
    report = outcome.report.to_dict()
    report.update(teacher_sha256=teacher_hash, student_sha256=digest, checkpoint=name, refine_rounds=outcome.refine_rounds)
    writer.add_report("adapt_report.json", report)
    writer.links.update(teacher=str(ckpt_path), student=name, explanation=str(exp_file))
    writer.commit()
    print(writer.out_dir / name)


def cmd_eval(args, cfg):
    ckpt_path, data_path = _require(args.checkpoint), _require(args.data)
    ck = ckpt_io.load(ckpt_path)
    _need_labeler(ck)
    data = read_csv(data_path)
    writer = RunWriter(_out_dir(args, cfg), "eval", cfg)
    writer.add_input(ckpt_path)
    writer.add_input(data_path)
    report = evaluate_stage(ck.model, ck.labeler, data.x, data.y)
    writer.add_report("metrics.json", report.to_dict())
    writer.commit()
    print(json.dumps(report.to_dict(), sort_keys=True))


def cmd_lifecycle(args, cfg):
    writer = RunWriter(_out_dir(args, cfg), "lifecycle", cfg)
    source = args.data or cfg.data.windows
    if source:
        path = _require(source)
        windows = import_csv(path)
        writer.add_input(path)
    else:
        windows = scenario_windows(cfg)
    with writer.stage("lifecycle"):
        result = run_lifecycle(windows, cfg, writer)
    writer.commit()
    for row in result.rows:
        print(
            f"window {row.window}: shifted={row.shifted} p={row.p_value:.4f} adapted={row.adapted} "
            f"f1 {row.before['f1']:.4f} -> {row.after['f1']:.4f}"
        )


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "label": cmd_label,
    "detect": cmd_detect,
    "explain": cmd_explain,
    "adapt": cmd_adapt,
    "eval": cmd_eval,
    "lifecycle": cmd_lifecycle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default: config out_dir)")
    common.add_argument("--force", action="store_true", help="run explain/adapt even without a detected shift")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="flowshift", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common])
    p = sub.add_parser("train", parents=[common])
    p.add_argument("data", nargs="?")
    p = sub.add_parser("label", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("data")
    for name in ("detect", "explain"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("checkpoint")
        p.add_argument("old")
        p.add_argument("new")
        if name == "explain":
            p.add_argument("--report", help="existing shift_report.json to gate on")
    p = sub.add_parser("adapt", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("explanation", help="explain output directory or its explanation.json")
    p = sub.add_parser("eval", parents=[common])
    p.add_argument("checkpoint")
    p.add_argument("data")
    p = sub.add_parser("lifecycle", parents=[common])
    p.add_argument("data", nargs="?", help="directory of window_*.csv (default: simulate from config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FlowShiftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
