"""Lifecycle orchestration: train, label, detect, explain, adapt, evaluate.

Every stage returns plain dataclasses; persistence goes through
:class:`RunWriter`, which buffers artifacts in memory and only touches the
output directory once the whole command has succeeded.
"""

from __future__ import annotations

import io
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .adapt import AdaptReport, adapt
from .checkpoint import Checkpoint
from .config import PipelineConfig, dumps
from .contrastive import train
from .drift_sim import Window, generate, make_scenario, write_csv
from .errors import DataError
from .metrics import MetricsReport, evaluate
from .nn import Autoencoder
from .pseudo_label import LabelerState, fit_labeler, pseudo_labels, refine_pseudo_labels
from .shift_detect import ShiftReport, detect_shift, window_posteriors
from .shift_explain import ExplanationResult, explain

logger = logging.getLogger(__name__)


def report_text(obj) -> str:
    """Canonical report encoding: sorted keys, one field per line."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def sha256_file(path) -> str:
    return ckpt_io.file_hash(path)


class RunWriter:
    """Collects artifacts for one command and writes them on :meth:`commit`."""

    def __init__(self, out_dir, command: str, config: PipelineConfig | None = None):
        self.out_dir = Path(out_dir)
        self.command = command
        self.config = config
        self.files: dict[str, bytes] = {}
        self.inputs: dict[str, str] = {}
        self.stages: list[dict] = []
        self.links: dict[str, str] = {}

    def add_input(self, path):
        path = Path(path)
        if path.is_dir():
            for f in sorted(path.glob("*.csv")):
                self.inputs[str(f)] = sha256_file(f)
        else:
            self.inputs[str(path)] = sha256_file(path)

    def add_bytes(self, name: str, blob: bytes) -> str:
        self.files[name] = blob
        return name

    def add_text(self, name: str, text: str) -> str:
        return self.add_bytes(name, text.encode())

    def add_report(self, name: str, obj) -> str:
        return self.add_text(name, report_text(obj))

    def add_csv(self, name: str, x, y=None, extra=None) -> str:
        buf = io.StringIO()
        _write_csv_stream(buf, x, y, extra)
        return self.add_text(name, buf.getvalue())

    def add_checkpoint(self, ckpt: Checkpoint, stem: str = "model") -> tuple[str, str]:
        blob = ckpt_io.to_bytes(ckpt)
        digest = ckpt_io.content_hash(blob)
        name = f"{stem}-{digest[:12]}.ckpt"
        self.files[name] = blob
        return name, digest

    def stage(self, name: str):
        writer = self

        class _Stage:
            def __enter__(self):
                self.record = {"name": name, "started": time.time()}
                return self

            def __exit__(self, *exc):
                self.record["finished"] = time.time()
                writer.stages.append(self.record)
                return False

        return _Stage()

    def commit(self) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = {}
        for name, blob in self.files.items():
            path = self.out_dir / name
            path.parent.mkdir(parents=True, exist_ok=True)
            if path.suffix == ".ckpt" and path.exists():
                # content-addressed: an existing file already holds these bytes
                pass
            else:
                path.write_bytes(blob)
            artifacts[name] = ckpt_io.content_hash(blob)
        manifest = {
            "command": self.command,
            "config": self.config.to_flat() if self.config is not None else None,
            "inputs": self.inputs,
            "artifacts": artifacts,
            "links": self.links,
            "stages": self.stages,
            "versions": {
                "flowshift": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
        }
        path = self.out_dir / f"manifest-{self.command}.json"
        path.write_text(report_text(manifest))
        return path


def _write_csv_stream(fh, x, y=None, extra=None):
    import csv

    x = np.atleast_2d(np.asarray(x, dtype=np.float64)) if len(x) else np.zeros((0, 0))
    writer = csv.writer(fh, lineterminator="\n")
    d = x.shape[1]
    header = [f"f{i}" for i in range(d)]
    if y is not None:
        header.append("label")
    extra = extra or {}
    header.extend(extra)
    writer.writerow(header)
    for i, row in enumerate(x):
        out = [repr(float(v)) for v in row]
        if y is not None:
            out.append(str(int(y[i])))
        out.extend(str(int(col[i])) for col in extra.values())
        writer.writerow(out)


# -- stages -------------------------------------------------------------------


def train_stage(x, y, config: PipelineConfig) -> tuple[Autoencoder, LabelerState]:
    x = np.asarray(x, dtype=np.float64)
    if len(x) == 0:
        raise DataError("training data is empty")
    model = Autoencoder.create(x.shape[1], config.model.hidden_dim, config.model.latent_dim, seed=config.seed)
    model, trace = train(model, x, y, config.contrastive)
    if trace:
        logger.info("trained %d epochs, final loss %.4f", len(trace), trace[-1])
    return model, fit_labeler(model, x, y)


def explain_stage(model, labeler, x_old, x_new, config: PipelineConfig) -> ExplanationResult:
    return explain(
        window_posteriors(model, x_old, labeler),
        window_posteriors(model, x_new, labeler),
        config.explain,
    )


@dataclass
class AdaptOutcome:
    model: Autoencoder
    labeler: LabelerState
    report: AdaptReport
    labels: np.ndarray
    refine_rounds: int


def adapt_stage(model, labeler, x_old_sel, x_new_sel, config: PipelineConfig) -> AdaptOutcome:
    """Pseudo-label the selected samples, fine-tune a student, refit the labeler."""
    x_old_sel = np.asarray(x_old_sel, dtype=np.float64).reshape(-1, model.input_dim)
    x_new_sel = np.asarray(x_new_sel, dtype=np.float64).reshape(-1, model.input_dim)
    x = np.vstack([x_old_sel, x_new_sel])
    if len(x) == 0:
        raise DataError("explanation selected no samples; refusing to adapt")
    labels, rounds = refine_pseudo_labels(model, x, labeler, config.lifecycle.refine_rounds)
    origin = np.array(["old"] * len(x_old_sel) + ["new"] * len(x_new_sel))
    student, new_labeler, report = adapt(model, x, labels, config.adapt, origin=origin, labeler=labeler)
    return AdaptOutcome(student, new_labeler, report, labels, rounds)


def evaluate_stage(model, labeler, x, y) -> MetricsReport:
    return evaluate(pseudo_labels(model, x, labeler), y)


# -- lifecycle ----------------------------------------------------------------


@dataclass
class WindowRow:
    window: int
    shifted: bool
    p_value: float
    adapted: bool
    n_selected: int
    before: dict
    after: dict
    original_before: dict
    original_after: dict


@dataclass
class LifecycleResult:
    rows: list[WindowRow] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    model: Autoencoder | None = None
    labeler: LabelerState | None = None

    def table(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def scenario_windows(config: PipelineConfig) -> list[Window]:
    sc = config.scenario
    return generate(
        make_scenario(
            kind=sc.kind,
            d=sc.d,
            n_per_window=sc.n_per_window,
            n_windows=sc.n_windows,
            abnormal_fraction=sc.abnormal_fraction,
            class_separation=sc.class_separation,
            shift=sc.shift,
            drift_angle=sc.drift_angle,
            seed=config.seed,
        )
    )


def run_lifecycle(windows: list[Window], config: PipelineConfig, writer: RunWriter | None = None) -> LifecycleResult:
    """Train on window 0, then detect / explain / adapt / evaluate on each later window.

    Each window is split into a fit part (used for detection, explanation and
    adaptation, labels unseen) and a held-out test part (used only for the
    metrics table). After an adaptation the explanation-selected samples
    become the reference window for the next detection.
    """
    if len(windows) < 2:
        raise DataError("lifecycle needs at least two windows")
    cfg = config
    splits = [w.split(cfg.lifecycle.test_fraction, cfg.seed) for w in windows]
    fit0, test0 = splits[0]
    model, labeler = train_stage(fit0.x, fit0.y, cfg)
    result = LifecycleResult()
    if writer is not None:
        name, _ = writer.add_checkpoint(Checkpoint(model, labeler, {"stage": "train", "window": 0}))
        result.checkpoints.append(name)
    reference = fit0.x
    for k in range(1, len(windows)):
        fit_k, test_k = splits[k]
        before = evaluate_stage(model, labeler, test_k.x, test_k.y)
        orig_before = evaluate_stage(model, labeler, test0.x, test0.y)
        shift = detect_shift(model, labeler, reference, fit_k.x, cfg.detect)
        if writer is not None:
            writer.add_report(f"window_{k:03d}/shift_report.json", shift.to_dict())
        adapted, n_selected = False, 0
        if shift.shifted or cfg.lifecycle.force:
            exp = explain_stage(model, labeler, reference, fit_k.x, cfg)
            x_old = reference[exp.selected_old]
            x_new = fit_k.x[exp.selected_new]
            outcome = adapt_stage(model, labeler, x_old, x_new, cfg)
            n_selected = exp.n_selected
            if writer is not None:
                writer.add_report(f"window_{k:03d}/explanation.json", exp.to_dict())
                rep = outcome.report.to_dict()
                rep["refine_rounds"] = outcome.refine_rounds
                writer.add_report(f"window_{k:03d}/adapt_report.json", rep)
                name, _ = writer.add_checkpoint(
                    Checkpoint(outcome.model, outcome.labeler, {"stage": "adapt", "window": k}),
                )
                result.checkpoints.append(name)
            model, labeler = outcome.model, outcome.labeler
            reference = np.vstack([x_old, x_new])
            adapted = True
        else:
            logger.info("window %d: no shift detected (p=%.4f); adaptation skipped", k, shift.p_value)
        after = evaluate_stage(model, labeler, test_k.x, test_k.y)
        orig_after = evaluate_stage(model, labeler, test0.x, test0.y)
        result.rows.append(
            WindowRow(
                window=k,
                shifted=shift.shifted,
                p_value=shift.p_value,
                adapted=adapted,
                n_selected=n_selected,
                before=before.to_dict(),
                after=after.to_dict(),
                original_before=orig_before.to_dict(),
                original_after=orig_after.to_dict(),
            )
        )
    result.model, result.labeler = model, labeler
    if writer is not None:
        writer.add_report("metrics_table.json", result.table())
        writer.add_text("metrics_table.csv", format_table(result.rows))
        writer.add_text("config.toml", dumps(cfg))
    return result


def format_table(rows: list[WindowRow]) -> str:
    metrics = list(MetricsReport.__dataclass_fields__)
    header = ["window", "shifted", "p_value", "adapted", "n_selected"]
    header += [f"{m}_before" for m in metrics] + [f"{m}_after" for m in metrics]
    lines = [",".join(header)]
    for r in rows:
        vals = [str(r.window), str(r.shifted).lower(), f"{r.p_value:.6g}", str(r.adapted).lower(), str(r.n_selected)]
        vals += [f"{r.before[m]:.6f}" for m in metrics] + [f"{r.after[m]:.6f}" for m in metrics]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


__all__ = [
    "AdaptOutcome",
    "LifecycleResult",
    "RunWriter",
    "ShiftReport",
    "WindowRow",
    "adapt_stage",
    "evaluate_stage",
    "explain_stage",
    "format_table",
    "report_text",
    "run_lifecycle",
    "scenario_windows",
    "train_stage",
    "write_csv",
]
