"""Trajectory I/O, timestamp association, similarity alignment and ATE, tracking
efficiency metrics and comparison reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy import entropy_reduction
from .errors import (
    DegenerateConfiguration,
    NoMatches,
    NonMonotonicTimestamps,
    ParseError,
)
from .geometry import SE3Pose

DEFAULT_MAX_DT = 0.02

REPORT_COLUMNS = ("seq", "method", "ate_mean_m", "ate_rmse_m", "keyframes", "beta",
                  "gamma_base2", "gamma_base10", "mean_track_time_s", "efficiency_gain")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Timestamped camera-to-world poses (seconds, strictly increasing)."""

    timestamps: np.ndarray
    poses: tuple

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float).reshape(-1).copy()
        poses = tuple(self.poses)
        if len(ts) < 1:
            raise ValueError("trajectory needs at least one pose")
        if len(ts) != len(poses):
            raise ValueError("timestamps and poses differ in length")
        if np.any(np.diff(ts) <= 0):
            i = int(np.argmax(np.diff(ts) <= 0)) + 1
            raise NonMonotonicTimestamps(f"timestamp {ts[i]!r} at index {i} does not increase")
        ts.flags.writeable = False
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "poses", poses)

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self):
        return np.array([p.translation for p in self.poses])


@dataclass(frozen=True, eq=False)
class Sim3:
    """``x -> scale * R @ x + t``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, X):
        return self.scale * np.asarray(X, dtype=float) @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class AteResult:
    mean: float
    rmse: float
    errors: np.ndarray
    alignment: Sim3
    matched_pairs: int


# --- association and alignment -------------------------------------------------

def associate(est: Trajectory, ref: Trajectory, max_dt: float = DEFAULT_MAX_DT):
    """Greedy nearest-timestamp matching.

    Candidate pairs within ``max_dt`` are taken in order of increasing |dt| (ties
    by index) and each pose is used at most once.  Returns ``(i_est, j_ref)``
    pairs sorted by estimate time.
    """
    if not max_dt > 0:
        raise ValueError("max_dt must be positive")
    te, tr = est.timestamps, ref.timestamps
    lo = np.searchsorted(tr, te - max_dt, side="left")
    hi = np.searchsorted(tr, te + max_dt, side="right")
    cand = []
    for i in range(len(te)):
        for j in range(lo[i], hi[i]):
            dt = abs(te[i] - tr[j])
            if dt <= max_dt:
                cand.append((dt, i, j))
    cand.sort()
    used_e, used_r, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_e or j in used_r:
            continue
        used_e.add(i)
        used_r.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoMatches(f"no timestamps within {max_dt} s of each other")
    pairs.sort()
    return pairs


def umeyama_align(est_points, ref_points, with_scale: bool = True) -> Sim3:
    """Least-squares similarity (or rigid) transform taking ``est_points`` onto ``ref_points``."""
    X = np.asarray(est_points, dtype=float).reshape(-1, 3)
    Y = np.asarray(ref_points, dtype=float).reshape(-1, 3)
    if len(X) != len(Y):
        raise ValueError("point sets differ in length")
    if len(X) < 3:
        raise DegenerateConfiguration(f"need at least 3 point pairs, got {len(X)}")
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    sv = np.linalg.svd(Xc, compute_uv=False)
    scale_ref = max(sv[0], np.max(np.abs(X)), 1.0)
    if sv[1] <= 1e-10 * scale_ref:
        raise DegenerateConfiguration("points are collinear or coincident")
    n = len(X)
    C = Yc.T @ Xc / n
    U, D, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    if with_scale:
        var_x = np.sum(Xc * Xc) / n
        s = float(np.trace(np.diag(D) @ S) / var_x)
    else:
        s = 1.0
    t = my - s * R @ mx
    return Sim3(s, R, t)


def compute_ate(est: Trajectory, ref: Trajectory, with_scale: bool = True, align: bool = True,
                max_dt: float = DEFAULT_MAX_DT) -> AteResult:
    """Translational absolute trajectory error after association and alignment."""
    pairs = associate(est, ref, max_dt)
    ie = [i for i, _ in pairs]
    jr = [j for _, j in pairs]
    P = est.positions[ie]
    Q = ref.positions[jr]
    if align:
        sim = umeyama_align(P, Q, with_scale)
    else:
        sim = Sim3(1.0, np.eye(3), np.zeros(3))
    err = np.linalg.norm(Q - sim.apply(P), axis=1)
    return AteResult(float(np.mean(err)), float(np.sqrt(np.mean(err * err))), err, sim, len(pairs))


# --- efficiency ---------------------------------------------------------------------

def mean_tracking_time(total: float, n_frames: int) -> float:
    if n_frames < 1:
        raise ValueError("n_frames must be at least 1")
    return total / n_frames


def efficiency_gain(t_baseline: float, t_method: float) -> float:
    """Relative time saved by the method over the baseline."""
    if not t_baseline > 0:
        raise ValueError("baseline time must be positive")
    return (t_baseline - t_method) / t_baseline


# --- file formats -------------------------------------------------------------------

def _floats(fields, path, lineno):
    try:
        return [float(f) for f in fields]
    except ValueError as exc:
        raise ParseError(str(exc), path, lineno) from None


def _make_trajectory(rows, path):
    ts = [r[0] for r in rows]
    for k in range(1, len(ts)):
        if not ts[k] > ts[k - 1]:
            raise NonMonotonicTimestamps(
                f"{path}:{rows[k][2]}: timestamp {ts[k]!r} not after {ts[k - 1]!r}")
    if not rows:
        raise ParseError("file contains no poses", path, 0)
    return Trajectory(ts, [r[1] for r in rows])


def load_euroc_groundtruth(path) -> Trajectory:
    """EuRoC ``state_groundtruth_estimate0/data.csv`` (ns, p_xyz, q_wxyz, ...)."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = [f.strip() for f in s.split(",")]
            if len(fields) < 8:
                raise ParseError(f"expected at least 8 comma-separated fields, got {len(fields)}",
                                 path, lineno)
            if not fields[0].isdigit():
                raise ParseError(f"timestamp {fields[0]!r} is not an integer nanosecond count",
                                 path, lineno)
            ts = int(fields[0]) * 1e-9
            px, py, pz, qw, qx, qy, qz = _floats(fields[1:8], path, lineno)
            try:
                pose = SE3Pose(np.array([qw, qx, qy, qz]), [px, py, pz])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            rows.append((ts, pose, lineno))
    return _make_trajectory(rows, path)


def load_tum(path) -> Trajectory:
    """TUM RGB-D format: ``timestamp tx ty tz qx qy qz qw`` per line."""
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            fields = s.replace(",", " ").split()
            if len(fields) != 8:
                raise ParseError(f"expected 8 fields, got {len(fields)}", path, lineno)
            t, tx, ty, tz, qx, qy, qz, qw = _floats(fields, path, lineno)
            try:
                pose = SE3Pose(np.array([qw, qx, qy, qz]), [tx, ty, tz])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
            rows.append((t, pose, lineno))
    return _make_trajectory(rows, path)


def format_tum(traj: Trajectory) -> str:
    out = io.StringIO()
    for t, p in zip(traj.timestamps, traj.poses):
        w, x, y, z = p.rotation
        vals = (t, *p.translation, x, y, z, w)
        out.write(" ".join(repr(float(v)) for v in vals) + "\n")
    return out.getvalue()


def write_tum(traj: Trajectory, path) -> None:
    Path(path).write_text(format_tum(traj))


# --- reports ------------------------------------------------------------------------

@dataclass
class RunSummary:
    """One method on one sequence, as consumed by :func:`emit_report`."""

    seq: str
    method: str
    ate_mean_m: float
    ate_rmse_m: float
    keyframes: int
    beta: float | None
    mean_track_time_s: float | None
    detail: dict = field(default_factory=dict)


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def report_rows(results: Sequence[RunSummary], omit_timing: bool = False):
    """Rows of the comparison table; the first result of each sequence is the baseline."""
    if not results:
        raise ValueError("report needs at least one run result")
    baseline = {}
    for r in results:
        baseline.setdefault(r.seq, r)
    rows = []
    for r in sorted(results, key=lambda r: r.seq):
        b = baseline[r.seq]
        g2 = g10 = gain = None
        if r.beta and b.beta and r.beta > 0 and b.beta > 0:
            g2 = entropy_reduction(b.beta, r.beta, 2)
            g10 = entropy_reduction(b.beta, r.beta, 10)
        t = None if omit_timing else r.mean_track_time_s
        if not omit_timing and b.mean_track_time_s and r.mean_track_time_s is not None:
            gain = efficiency_gain(b.mean_track_time_s, r.mean_track_time_s)
        rows.append({
            "seq": r.seq, "method": r.method, "ate_mean_m": r.ate_mean_m,
            "ate_rmse_m": r.ate_rmse_m, "keyframes": r.keyframes, "beta": r.beta,
            "gamma_base2": g2, "gamma_base10": g10, "mean_track_time_s": t,
            "efficiency_gain": gain,
        })
    return rows


def emit_report(results: Sequence[RunSummary], csv_path, json_path=None,
                omit_timing: bool = False):
    """Write the comparison CSV (and a JSON mirror with per-run detail).

    Nothing is written when ``results`` is empty.  With ``omit_timing`` the
    wall-clock columns are left blank so the CSV is byte-reproducible.
    """
    rows = report_rows(results, omit_timing)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for row in rows:
        w.writerow([row["seq"], row["method"]] + [_fmt(row[c]) for c in REPORT_COLUMNS[2:]])
    text = buf.getvalue()
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    Path(csv_path).write_text(text)
    if json_path is not None:
        doc = {"rows": rows,
               "runs": [asdict(r) for r in sorted(results, key=lambda r: r.seq)]}
        Path(json_path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default))
    return text


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")
