import csv
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.spatial.transform import Rotation

from salslam.errors import DegenerateConfiguration, NoMatches, NonMonotonicTimestamps, ParseError
from salslam.evaluation import (
    REPORT_COLUMNS,
    RunSummary,
    Trajectory,
    associate,
    compute_ate,
    efficiency_gain,
    emit_report,
    load_euroc_groundtruth,
    load_tum,
    mean_tracking_time,
    umeyama_align,
    write_tum,
)
from salslam.geometry import SE3Pose

# Mean per-frame tracking times (s): sequence, baseline, saliency-weighted method
PUBLISHED_TRACK_TIMES = [
    ("MH01", 0.028305, 0.0245115),
    ("MH02", 0.0263993, 0.0262359),
    ("MH03", 0.025563, 0.0227666),
    ("MH04", 0.021658, 0.020918),
    ("MH05", 0.0239042, 0.0210823),
    ("V101", 0.027441, 0.0265265),
    ("V102", 0.0236729, 0.0243952),
    ("V103", 0.0235398, 0.0205895),
    ("V201", 0.0245865, 0.0245938),
    ("V202", 0.0254648, 0.0226415),
    ("V203", 0.0219403, 0.0203492),
]


def random_traj(rng, n, t0=0.0, dt=0.05):
    poses = [SE3Pose.from_matrix(Rotation.random(random_state=rng).as_matrix(), rng.normal(size=3))
             for _ in range(n)]
    return Trajectory(t0 + dt * np.arange(n), poses)


def traj_from_points(points, ts=None):
    ts = np.arange(len(points), dtype=float) if ts is None else ts
    return Trajectory(ts, [SE3Pose.from_translation(p) for p in points])


def test_associate_identical():
    rng = np.random.default_rng(0)
    a = random_traj(rng, 20)
    pairs = associate(a, a)
    assert pairs == [(i, i) for i in range(20)]


def test_associate_offset_no_matches():
    rng = np.random.default_rng(1)
    # spacing well above max_dt so the shift cannot land on a neighbour
    a = random_traj(rng, 20, dt=1.0)
    b = Trajectory(a.timestamps + 0.04, a.poses)
    with pytest.raises(NoMatches):
        associate(a, b, max_dt=0.02)
    with pytest.raises(ValueError):
        associate(a, a, max_dt=0.0)


def test_associate_jitter_matches_optimal_assignment():
    rng = np.random.default_rng(2)
    max_dt = 0.02
    for _ in range(20):
        ref = random_traj(rng, 50)
        te = ref.timestamps + rng.uniform(-max_dt / 4, max_dt / 4, 50)
        est = Trajectory(te, ref.poses)
        pairs = associate(est, ref, max_dt)
        cost = np.abs(te[:, None] - ref.timestamps[None, :])
        cost[cost > max_dt] = 1e6
        ri, ci = linear_sum_assignment(cost)
        oracle = sorted((int(i), int(j)) for i, j in zip(ri, ci) if cost[i, j] <= max_dt)
        assert pairs == oracle


def test_associate_each_pose_once():
    # dense reference, sparse estimate: every estimate finds a distinct partner
    ref = traj_from_points(np.zeros((30, 3)), np.arange(30) * 0.005)
    est = traj_from_points(np.zeros((5, 3)), np.array([0.0, 0.001, 0.002, 0.05, 0.1]))
    pairs = associate(est, ref, 0.02)
    assert len({j for _, j in pairs}) == len(pairs) == 5


def test_umeyama_identity():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(10, 3))
    sim = umeyama_align(X, X)
    assert sim.scale == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(sim.rotation, np.eye(3), atol=1e-12)
    assert np.allclose(sim.translation, 0, atol=1e-12)


def test_umeyama_apply_then_recover():
    rng = np.random.default_rng(4)
    for _ in range(20):
        X = rng.normal(size=(30, 3)) * 3
        R = Rotation.random(random_state=rng).as_matrix()
        t = rng.normal(size=3) * 5
        Y = 2.5 * X @ R.T + t
        sim = umeyama_align(X, Y)
        assert abs(sim.scale - 2.5) < 1e-9
        assert np.max(np.abs(sim.rotation - R)) < 1e-9
        assert np.max(np.abs(sim.translation - t)) < 1e-9
        assert np.linalg.det(sim.rotation) == pytest.approx(1.0, abs=1e-12)


def test_umeyama_rejects_reflection():
    # a mirrored set must still yield a proper rotation
    rng = np.random.default_rng(5)
    X = rng.normal(size=(20, 3))
    Y = X * np.array([1, 1, -1])
    sim = umeyama_align(X, Y)
    assert np.linalg.det(sim.rotation) == pytest.approx(1.0, abs=1e-12)


def test_umeyama_degenerate():
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(np.eye(3)[:2], np.eye(3)[:2])
    line = np.outer(np.arange(5.0), [1, 2, 3])
    with pytest.raises(DegenerateConfiguration):
        umeyama_align(line, line)


def test_ate_zero_for_identical():
    rng = np.random.default_rng(6)
    a = random_traj(rng, 30)
    res = compute_ate(a, a)
    assert res.mean < 1e-12 and res.rmse < 1e-12 and res.matched_pairs == 30


def test_ate_rigid_offset():
    square = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    ref = traj_from_points(square)
    est = traj_from_points(square + [3, 4, 0])
    res = compute_ate(est, ref, align=False)
    assert res.mean == pytest.approx(5.0, abs=1e-12)
    assert res.rmse == pytest.approx(5.0, abs=1e-12)
    assert compute_ate(est, ref).rmse < 1e-12


def test_ate_invariant_under_similarity():
    rng = np.random.default_rng(7)
    for _ in range(10):
        ref = random_traj(rng, 40)
        R = Rotation.random(random_state=rng).as_matrix()
        s, t = rng.uniform(0.2, 5), rng.normal(size=3)
        moved = [SE3Pose.from_matrix(R @ p.R, s * R @ p.translation + t) for p in ref.poses]
        est = Trajectory(ref.timestamps, moved)
        assert compute_ate(est, ref).rmse < 1e-9


def test_ate_matches_one_pass_loop():
    rng = np.random.default_rng(8)
    ref = random_traj(rng, 60)
    noisy = [SE3Pose(p.rotation, p.translation + rng.normal(scale=0.1, size=3)) for p in ref.poses]
    est = Trajectory(ref.timestamps, noisy)
    res = compute_ate(est, ref)
    total = total_sq = 0.0
    for p, q in zip(est.poses, ref.poses):
        a = res.alignment.scale * res.alignment.rotation @ p.translation + res.alignment.translation
        e = math.sqrt(sum((q.translation[k] - a[k]) ** 2 for k in range(3)))
        total += e
        total_sq += e * e
    assert res.mean == pytest.approx(total / 60, abs=1e-12)
    assert res.rmse == pytest.approx(math.sqrt(total_sq / 60), abs=1e-12)
    assert res.rmse ** 2 == pytest.approx(np.mean(res.errors ** 2), abs=1e-12)
    assert res.rmse >= res.mean


def test_mean_tracking_time():
    assert mean_tracking_time(10.0, 100) == pytest.approx(0.1)
    assert mean_tracking_time(0.0, 5) == 0.0
    with pytest.raises(ValueError):
        mean_tracking_time(1.0, 0)


def test_efficiency_gain():
    assert efficiency_gain(0.03, 0.03) == 0.0
    seq, base, meth = PUBLISHED_TRACK_TIMES[0]
    # 0.0037935 / 0.028305
    assert efficiency_gain(base, meth) == pytest.approx(0.1340222, abs=1e-7)
    with pytest.raises(ValueError):
        efficiency_gain(0.0, 1.0)


def test_tum_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    a = random_traj(rng, 100, t0=1403636579.763555527)
    path = tmp_path / "traj.tum"
    write_tum(a, path)
    b = load_tum(path)
    assert np.max(np.abs(a.timestamps - b.timestamps)) < 1e-9
    for p, q in zip(a.poses, b.poses):
        assert np.max(np.abs(p.rotation - q.rotation)) < 1e-9
        assert np.max(np.abs(p.translation - q.translation)) < 1e-9


def test_tum_errors(tmp_path):
    path = tmp_path / "bad.tum"
    path.write_text("0 0 0 0 0 0 0 1\n1 0 0 0 0 0 0\n")
    with pytest.raises(ParseError) as exc:
        load_tum(path)
    assert ":2:" in str(exc.value)
    path.write_text("1 0 0 0 0 0 0 1\n0 0 0 0 0 0 0 1\n")
    with pytest.raises(NonMonotonicTimestamps):
        load_tum(path)
    path.write_text("0 0 0 0 0 0 0 x\n")
    with pytest.raises(ParseError):
        load_tum(path)


def test_shuffled_timestamps_rejected():
    rng = np.random.default_rng(10)
    ts = rng.permutation(np.arange(10.0))
    with pytest.raises(NonMonotonicTimestamps):
        Trajectory(ts, [SE3Pose()] * 10)


def test_euroc_single_row(tmp_path):
    path = tmp_path / "data.csv"
    path.write_text("#timestamp, p_RS_R_x [m], p_RS_R_y [m], p_RS_R_z [m], q_RS_w [], q_RS_x [], "
                    "q_RS_y [], q_RS_z []\n"
                    "1403636579763555584,4.688319,-1.786938,0.783338,1.0,0.0,0.0,0.0,0,0,0\n")
    traj = load_euroc_groundtruth(path)
    assert len(traj) == 1
    assert traj.timestamps[0] == pytest.approx(1403636579.763555584, abs=1e-6)
    assert np.allclose(traj.poses[0].R, np.eye(3))
    assert np.allclose(traj.poses[0].translation, [4.688319, -1.786938, 0.783338])
    path.write_text("1403636579763555584,4.6,-1.7\n")
    with pytest.raises(ParseError):
        load_euroc_groundtruth(path)


def summaries(order=("orb", "att")):
    out = {
        "orb": [RunSummary("MH01", "orb", 0.1, 0.12, 40, 26.0373, 0.028305),
                RunSummary("MH02", "orb", 0.2, 0.22, 50, 22.8747, 0.0271879)],
        "att": [RunSummary("MH01", "att", 0.08, 0.09, 30, 19.4524, 0.0245115),
                RunSummary("MH02", "att", 0.18, 0.2, 45, 19.0783, 0.0248325)],
    }
    return [r for m in order for r in out[m]]


def test_report_empty_writes_nothing(tmp_path):
    path = tmp_path / "report.csv"
    with pytest.raises(ValueError):
        emit_report([], path)
    assert not path.exists()


def test_report_columns_and_gamma(tmp_path):
    text = emit_report(summaries(), tmp_path / "r.csv", tmp_path / "r.json")
    rows = list(csv.DictReader(text.splitlines()))
    assert tuple(rows[0].keys()) == REPORT_COLUMNS
    att = [r for r in rows if r["method"] == "att" and r["seq"] == "MH01"][0]
    assert float(att["gamma_base10"]) == pytest.approx(0.1266, abs=5e-5)
    assert att["efficiency_gain"] == "0.134022"
    orb = [r for r in rows if r["method"] == "orb" and r["seq"] == "MH01"][0]
    assert float(orb["gamma_base2"]) == 0.0
    assert (tmp_path / "r.json").exists()


def test_report_gamma_antisymmetric(tmp_path):
    fwd = list(csv.DictReader(emit_report(summaries(), tmp_path / "a.csv").splitlines()))
    rev = list(csv.DictReader(emit_report(summaries(("att", "orb")), tmp_path / "b.csv").splitlines()))
    for col in ("gamma_base2", "gamma_base10"):
        g_fwd = {r["seq"]: float(r[col]) for r in fwd if r["method"] == "att"}
        g_rev = {r["seq"]: float(r[col]) for r in rev if r["method"] == "orb"}
        for seq in g_fwd:
            assert g_fwd[seq] == pytest.approx(-g_rev[seq], rel=1e-5)


def test_report_byte_identical(tmp_path):
    emit_report(summaries(), tmp_path / "a.csv")
    emit_report(summaries(), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_report_omit_timing(tmp_path):
    rows = list(csv.DictReader(emit_report(summaries(), tmp_path / "a.csv", omit_timing=True)
                               .splitlines()))
    assert all(r["mean_track_time_s"] == "" and r["efficiency_gain"] == "" for r in rows)


def test_report_six_significant_digits(tmp_path):
    r = [RunSummary("S", "m", 1 / 3, 2 / 3, 7, None, None)]
    row = next(csv.DictReader(emit_report(r, tmp_path / "a.csv").splitlines()))
    assert row["ate_mean_m"] == "0.333333" and row["keyframes"] == "7" and row["beta"] == ""
