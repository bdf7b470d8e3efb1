"""Seeded generator of drifting two-class flow windows, plus CSV round-tripping."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

DRIFT_KINDS = ("none", "mean_shift", "scale_shift", "prior_shift")


@dataclass
class Segment:
    n_normal: int
    n_abnormal: int
    normal_mean: np.ndarray
    abnormal_mean: np.ndarray
    normal_scale: float = 1.0
    abnormal_scale: float = 1.0


@dataclass
class DriftScenario:
    d: int
    segments: list[Segment]
    drift_kind: str = "none"
    seed: int = 0

    def validate(self):
        if self.d < 1:
            raise ConfigError("feature dimension must be positive")
        if self.drift_kind not in DRIFT_KINDS:
            raise ConfigError(f"unknown drift kind {self.drift_kind!r}")
        if not self.segments:
            raise ConfigError("scenario needs at least one segment")
        for i, seg in enumerate(self.segments):
            if seg.n_normal <= 0 or seg.n_abnormal <= 0:
                raise ConfigError(f"segment {i}: class counts must be positive")
            if seg.normal_scale <= 0 or seg.abnormal_scale <= 0:
                raise ConfigError(f"segment {i}: covariance scales must be positive")
            for mean in (seg.normal_mean, seg.abnormal_mean):
                if np.shape(mean) != (self.d,):
                    raise ConfigError(f"segment {i}: mean vectors must have length {self.d}")


@dataclass
class Window:
    x: np.ndarray
    y: np.ndarray

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Window":
        idx = np.asarray(idx, dtype=np.int64)
        return Window(self.x[idx], self.y[idx])

    def split(self, test_fraction: float, seed: int) -> tuple["Window", "Window"]:
        """Seeded stratified split into (fit, test)."""
        rng = np.random.default_rng(seed)
        fit_idx, test_idx = [], []
        for cls in (0, 1):
            idx = rng.permutation(np.flatnonzero(self.y == cls))
            n_test = int(round(len(idx) * test_fraction))
            test_idx.append(idx[:n_test])
            fit_idx.append(idx[n_test:])
        return self.subset(np.sort(np.concatenate(fit_idx))), self.subset(np.sort(np.concatenate(test_idx)))


def generate(scenario: DriftScenario) -> list[Window]:
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    windows = []
    for seg in scenario.segments:
        normal = seg.normal_mean + seg.normal_scale * rng.standard_normal((seg.n_normal, scenario.d))
        abnormal = seg.abnormal_mean + seg.abnormal_scale * rng.standard_normal((seg.n_abnormal, scenario.d))
        x = np.vstack([normal, abnormal])
        y = np.concatenate([np.zeros(seg.n_normal, dtype=np.int64), np.ones(seg.n_abnormal, dtype=np.int64)])
        order = rng.permutation(len(y))
        windows.append(Window(x[order], y[order]))
    return windows


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def make_scenario(
    kind: str = "mean_shift",
    d: int = 20,
    n_per_window: int = 2000,
    n_windows: int = 2,
    abnormal_fraction: float = 0.3,
    class_separation: float = 7.0,
    shift: float = 3.0,
    drift_angle: float = 20.0,
    seed: int = 0,
) -> DriftScenario:
    """Two-class scenario; window 0 is the reference, later windows drift by ``kind``.

    ``class_separation`` and ``shift`` are distances in units of the
    per-feature standard deviation of the normal class. ``drift_angle`` is
    the angle in degrees between the normal-class drift and the direction
    from the normal towards the abnormal mean (90 = orthogonal).
    """
    if kind not in DRIFT_KINDS:
        raise ConfigError(f"unknown drift kind {kind!r}")
    if not 0 < abnormal_fraction < 1:
        raise ConfigError("abnormal_fraction must lie in (0, 1)")
    rng = np.random.default_rng([seed, 7])
    base = 2.0 * _unit(rng, d)
    normal_mean = base
    class_dir = _unit(rng, d)
    abnormal_mean = base + class_separation * class_dir
    orth = _unit(rng, d)
    orth -= (orth @ class_dir) * class_dir
    orth /= np.linalg.norm(orth)
    angle = np.deg2rad(drift_angle)
    drift_dir = np.cos(angle) * class_dir + np.sin(angle) * orth
    segments = []
    for w in range(n_windows):
        frac = abnormal_fraction
        n_mean, a_mean, n_scale = normal_mean, abnormal_mean, 1.0
        if w > 0:
            if kind == "mean_shift":
                n_mean = normal_mean + shift * drift_dir
            elif kind == "scale_shift":
                n_scale = 1.0 + shift / 2.0
            elif kind == "prior_shift":
                frac = min(0.9, abnormal_fraction * (1.0 + shift / 3.0))
        n_ab = int(round(n_per_window * frac))
        segments.append(Segment(n_per_window - n_ab, n_ab, n_mean.copy(), a_mean.copy(), n_scale, 1.0))
    return DriftScenario(d=d, segments=segments, drift_kind=kind, seed=seed)


def bimodal_posteriors(n: int = 1000, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Old window unimodal in posterior space, new window split across two modes."""
    rng = np.random.default_rng(seed)
    old = np.clip(rng.normal(0.7, 0.08, n), 0.0, 1.0)
    half = n // 2
    new = np.clip(np.concatenate([rng.normal(0.3, 0.05, half), rng.normal(0.8, 0.05, n - half)]), 0.0, 1.0)
    return old, rng.permutation(new)


# -- CSV -----------------------------------------------------------------------


def _header(d: int) -> list[str]:
    return [f"f{i}" for i in range(d)] + ["label"]


def write_csv(path, x, y=None, extra: dict[str, np.ndarray] | None = None):
    """Write features (repr floats, exact round trip) with optional label and extra columns."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [f"f{i}" for i in range(x.shape[1])]
    if y is not None:
        cols.append("label")
    extra = extra or {}
    cols.extend(extra)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for i, row in enumerate(x):
            out = [repr(float(v)) for v in row]
            if y is not None:
                out.append(str(int(y[i])))
            out.extend(str(int(col[i])) for col in extra.values())
            writer.writerow(out)


def export_csv(windows: list[Window], path):
    """One CSV per window: ``path`` is a directory, files are window_000.csv, ..."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for k, w in enumerate(windows):
        f = path / f"window_{k:03d}.csv"
        write_csv(f, w.x, w.y)
        files.append(f)
    return files


def read_csv(path, require_label: bool = True) -> Window:
    """Parse ``f0..f{d-1}[,label]``; raises DataError naming the offending line."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file (no header)") from None
        feat_cols = [i for i, h in enumerate(header) if h.startswith("f") and h[1:].isdigit()]
        if not feat_cols or [header[i] for i in feat_cols] != [f"f{k}" for k in range(len(feat_cols))]:
            raise DataError(f"{path}: header must start with f0,...,f{{d-1}}")
        has_label = "label" in header
        if require_label and not has_label:
            raise DataError(f"{path}: missing label column")
        label_col = header.index("label") if has_label else None
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                xs.append([float(row[i]) for i in feat_cols])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(xs[-1])):
                raise DataError(f"{path}:{lineno}: non-finite feature value")
            if label_col is not None:
                if row[label_col] not in ("0", "1"):
                    raise DataError(f"{path}:{lineno}: label must be 0 or 1")
                ys.append(int(row[label_col]))
    d = len(feat_cols)
    x = np.array(xs, dtype=np.float64).reshape(len(xs), d)
    y = np.array(ys, dtype=np.int64) if label_col is not None else np.full(len(xs), -1, dtype=np.int64)
    return Window(x, y)


def import_csv(path) -> list[Window]:
    path = Path(path)
    if path.is_dir():
        return [read_csv(f) for f in sorted(path.glob("window_*.csv"))]
    return [read_csv(path)]
