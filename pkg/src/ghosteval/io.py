"""Readers and writers for trajectories, clouds, reports, plans, specs and PLY exports.

Trajectory text files hold one pose per line, ``index tx ty tz qx qy qz qw``
(quaternion scalar last), floats written with 17 significant digits.
Cloud files are little-endian binary: the magic ``LPCD0001``, a u32 point
count, then 17-byte records ``x y z`` (f32) ``scan_id fire_id`` (u16) ``label`` (u8).
"""
from __future__ import annotations

import hashlib
import json
import struct
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import BadMagic, FormatError, NonContiguousIndex, ParseError, SpecError, TruncatedFile
from .model import EvalConfig, EvaluationReport, Label, PointCloud, Pose, PoseStats, Rigid, SensorModel
from .synthetic import Axis, Box, DisturbancePlan, Pole, Scene, Segment, TrajectorySpec

CLOUD_MAGIC = b"LPCD0001"
CLOUD_DTYPE = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                        ("scan_id", "<u2"), ("fire_id", "<u2"), ("label", "u1")])
assert CLOUD_DTYPE.itemsize == 17
REPORT_SCHEMA = "ghosteval.report/1"
MANIFEST_SCHEMA = "ghosteval.benchmark/1"


def _fmt(v) -> str:
    return "%.17g" % float(v)


def _short(v) -> str:
    # shortest text that parses back to the same double
    return repr(float(v))


def _content_lines(path):
    """Yield ``(line_number, fields)`` for non-blank, non-comment lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield n, line.split()


# --- trajectories ------------------------------------------------------------

def format_pose(p: Pose) -> str:
    w, x, y, z = p.rotation
    return " ".join([str(p.index)] + [_fmt(v) for v in (*p.translation, x, y, z, w)])


def write_trajectory(path, poses) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# index tx ty tz qx qy qz qw\n")
        for p in poses:
            fh.write(format_pose(p) + "\n")


def read_trajectory(path) -> list[Pose]:
    poses = []
    for n, f in _content_lines(path):
        if len(f) != 8:
            raise ParseError(f"expected 8 fields, got {len(f)}", line=n, path=path)
        try:
            idx = int(f[0])
            v = [float(s) for s in f[1:]]
        except ValueError as e:
            raise ParseError(str(e), line=n, path=path) from None
        if idx != len(poses):
            raise NonContiguousIndex(f"expected index {len(poses)}, got {idx}", line=n, path=path)
        tx, ty, tz, qx, qy, qz, qw = v
        try:
            poses.append(Pose(index=idx, rotation=[qw, qx, qy, qz], translation=[tx, ty, tz]))
        except ValueError as e:
            raise ParseError(str(e), line=n, path=path) from None
    return poses


# --- clouds ------------------------------------------------------------------

def cloud_to_bytes(cloud: PointCloud) -> bytes:
    n = len(cloud)
    if n and (cloud.scan_id.max() > 0xFFFF or cloud.fire_id.max() > 0xFFFF):
        raise FormatError("scan_id/fire_id do not fit in 16 bits")
    rec = np.empty(n, CLOUD_DTYPE)
    pos = cloud.positions.astype("<f4")
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    rec["scan_id"] = cloud.scan_id
    rec["fire_id"] = cloud.fire_id
    rec["label"] = cloud.labels
    return CLOUD_MAGIC + struct.pack("<I", n) + rec.tobytes()


def cloud_from_bytes(data: bytes, frame_index=None) -> PointCloud:
    if len(data) < 12:
        raise TruncatedFile(f"{len(data)} bytes is shorter than the 12-byte header")
    if data[:8] != CLOUD_MAGIC:
        raise BadMagic(f"bad magic {data[:8]!r}")
    (n,) = struct.unpack("<I", data[8:12])
    want = 12 + CLOUD_DTYPE.itemsize * n
    if len(data) != want:
        raise TruncatedFile(f"header announces {n} points ({want} bytes), file has {len(data)} bytes")
    rec = np.frombuffer(data, CLOUD_DTYPE, count=n, offset=12)
    pos = np.stack([rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
    if n and rec["label"].max() > max(Label):
        raise FormatError(f"unknown label code {int(rec['label'].max())}")
    return PointCloud(pos, rec["scan_id"], rec["fire_id"], rec["label"], frame_index=frame_index)


def write_cloud(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(cloud_to_bytes(cloud))


def read_cloud(path, frame_index=None) -> PointCloud:
    return cloud_from_bytes(Path(path).read_bytes(), frame_index)


def cloud_filename(k: int) -> str:
    return f"{k:06d}.lpcd"


def read_cloud_dir(clouds_dir, n=None) -> list[PointCloud]:
    """Clouds ``000000.lpcd, 000001.lpcd, ...`` from a directory.

    With ``n`` given exactly that many files are required.
    """
    d = Path(clouds_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"cloud directory not found: {d}")
    files = sorted(p.name for p in d.glob("*.lpcd"))
    count = len(files) if n is None else n
    expected = [cloud_filename(k) for k in range(count)]
    if files != expected:
        missing = sorted(set(expected) - set(files))
        extra = sorted(set(files) - set(expected))
        raise FormatError(f"cloud files do not match 0..{count - 1}: missing {missing[:5]}, unexpected {extra[:5]}")
    return [read_cloud(d / f, frame_index=k) for k, f in enumerate(files)]


# --- reports -----------------------------------------------------------------

def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "schema": REPORT_SCHEMA,
        "config": report.config.to_dict(),
        "sensor": None if report.sensor is None else report.sensor.to_dict(),
        "n_poses": len(report.per_pose),
        "n_evaluated": report.n_evaluated,
        "bad_pose_indices": list(report.bad_pose_indices),
        "unevaluated_indices": list(report.unevaluated_indices),
        "p_bad": report.p_bad,
        "p_acc": report.p_acc,
        "per_pose": [
            {"index": s.index, "evaluated": s.evaluated, "n_pole": s.n_pole, "n_ordi": s.n_ordi,
             "m_pole": s.m_pole, "m_ordi": s.m_ordi, "pole_ratio": s.pole_ratio,
             "ordi_ratio": s.ordi_ratio, "is_bad": s.is_bad}
            for s in report.per_pose
        ],
    }


def report_from_dict(d: dict) -> EvaluationReport:
    if d.get("schema") != REPORT_SCHEMA:
        raise FormatError(f"unsupported report schema {d.get('schema')!r}")
    stats = tuple(PoseStats(**s) for s in d["per_pose"])
    return EvaluationReport(
        per_pose=stats,
        bad_pose_indices=tuple(d["bad_pose_indices"]),
        unevaluated_indices=tuple(d["unevaluated_indices"]),
        p_bad=float(d["p_bad"]),
        p_acc=float(d["p_acc"]),
        config=EvalConfig.from_dict(d["config"]),
        sensor=None if d["sensor"] is None else SensorModel.from_dict(d["sensor"]),
    )


def report_to_text(report: EvaluationReport) -> str:
    return json.dumps(report_to_dict(report), indent=2) + "\n"


def write_report(path, report: EvaluationReport) -> None:
    Path(path).write_text(report_to_text(report), encoding="utf-8")


def read_report(path) -> EvaluationReport:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, line=e.lineno, path=path) from None
    return report_from_dict(d)


TSV_COLUMNS = ("index", "evaluated", "n_pole", "n_ordi", "m_pole", "m_ordi", "pole_ratio", "ordi_ratio", "is_bad")


def write_pose_table(path, report: EvaluationReport) -> None:
    """Per-pose statistics as tab-separated values, one row per pose."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(TSV_COLUMNS) + "\n")
        for s in report.per_pose:
            row = [s.index, int(s.evaluated), s.n_pole, s.n_ordi, s.m_pole, s.m_ordi,
                   _short(s.pole_ratio), _short(s.ordi_ratio), int(s.is_bad)]
            fh.write("\t".join(str(v) for v in row) + "\n")


def read_pose_table(path) -> list[PoseStats]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if tuple(header) != TSV_COLUMNS:
            raise ParseError("unexpected header", line=1, path=path)
        for n, line in enumerate(fh, start=2):
            f = line.rstrip("\n").split("\t")
            if len(f) != len(TSV_COLUMNS):
                raise ParseError(f"expected {len(TSV_COLUMNS)} columns", line=n, path=path)
            rows.append(PoseStats(int(f[0]), int(f[2]), int(f[3]), int(f[4]), int(f[5]),
                                  float(f[6]), float(f[7]), bool(int(f[8])), bool(int(f[1]))))
    return rows


# --- PLY export --------------------------------------------------------------

FRAME_RGB = (255, 0, 0)
GHOST_RGB = (255, 255, 0)


def ply_text(frame_points, ghost_points) -> str:
    frame_points = np.asarray(frame_points, float).reshape(-1, 3)
    ghost_points = np.asarray(ghost_points, float).reshape(-1, 3)
    lines = [
        "ply", "format ascii 1.0",
        f"element vertex {len(frame_points) + len(ghost_points)}",
        "property double x", "property double y", "property double z",
        "property uchar red", "property uchar green", "property uchar blue",
        "end_header",
    ]
    for pts, rgb in ((frame_points, FRAME_RGB), (ghost_points, GHOST_RGB)):
        c = " ".join(str(v) for v in rgb)
        lines.extend(f"{_short(x)} {_short(y)} {_short(z)} {c}" for x, y, z in pts)
    return "\n".join(lines) + "\n"


def export_ghosts_ply(path, hits, frame) -> None:
    """Frame points in red and the ghost points they detected in yellow.

    ``hits`` is a sequence of :class:`ghosteval.ghosts.GhostHit` or an (M, 3)
    array of ghost positions; ``frame`` a world-frame cloud or (N, 3) array.
    """
    fp = frame.positions if isinstance(frame, PointCloud) else frame
    if len(hits) and hasattr(hits[0], "ghost_point"):
        gp = np.array([h.ghost_point for h in hits], float)
    else:
        gp = np.asarray(hits, float).reshape(-1, 3)
    Path(path).write_text(ply_text(fp, gp), encoding="ascii")


def read_ply(path):
    """Positions and colours of an ASCII PLY written by :func:`export_ghosts_ply`."""
    with open(path, encoding="ascii") as fh:
        if fh.readline().strip() != "ply":
            raise BadMagic("not a PLY file")
        n = None
        for k, line in enumerate(fh, start=2):
            line = line.strip()
            if line.startswith("format") and line != "format ascii 1.0":
                raise FormatError(f"unsupported PLY format: {line}")
            if line.startswith("element vertex"):
                n = int(line.split()[2])
            if line == "end_header":
                break
        else:
            raise TruncatedFile("PLY header not terminated")
        if n is None:
            raise FormatError("PLY has no vertex element")
        body = [ln.split() for ln in fh if ln.strip()]
    if len(body) != n:
        raise TruncatedFile(f"PLY announces {n} vertices, found {len(body)}")
    if n == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), np.uint8)
    arr = np.array(body, dtype=object)
    return arr[:, :3].astype(float), arr[:, 3:6].astype(np.uint8)


# --- scene / trajectory specs ------------------------------------------------

def parse_scene(path) -> Scene:
    """Scene spec: lines ``box xmin ymin zmin xmax ymax zmax`` and ``pole cx cy radius height``."""
    boxes, poles = [], []
    for n, f in _content_lines(path):
        try:
            vals = [float(v) for v in f[1:]]
            if f[0] == "box" and len(vals) == 6:
                boxes.append(Box(tuple(vals[:3]), tuple(vals[3:])))
            elif f[0] == "pole" and len(vals) == 4:
                poles.append(Pole(*vals))
            else:
                raise SpecError(f"unrecognised scene line: {' '.join(f)}")
        except (ValueError, SpecError) as e:
            raise ParseError(str(e), line=n, path=path) from None
    return Scene(tuple(boxes), tuple(poles))


def write_scene(path, scene: Scene) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for b in scene.boxes:
            fh.write("box " + " ".join(_short(v) for v in b.lo + b.hi) + "\n")
        for p in scene.poles:
            fh.write("pole " + " ".join(_short(v) for v in (p.cx, p.cy, p.radius, p.height)) + "\n")


_SENSOR_KEYS = {"n_lasers", "angular_resolution_deg", "lidar_height", "max_range", "vfov_min_deg", "vfov_max_deg"}


def parse_trajectory_spec(path) -> TrajectorySpec:
    """Trajectory spec: ``waypoint x y`` lines plus ``key value`` settings.

    Keys: ``spacing``, ``closed`` (0/1), ``range_noise_sigma``, and sensor
    settings ``n_lasers``, ``angular_resolution_deg``, ``lidar_height``,
    ``max_range``, ``vfov_min_deg``, ``vfov_max_deg``.
    """
    waypoints, kv = [], {}
    for n, f in _content_lines(path):
        try:
            if f[0] == "waypoint":
                if len(f) not in (3, 4):
                    raise ValueError("waypoint takes x y [z]")
                waypoints.append(tuple(float(v) for v in f[1:]) + ((0.0,) if len(f) == 3 else ()))
            elif f[0] in {"spacing", "closed", "range_noise_sigma"} | _SENSOR_KEYS:
                if len(f) != 2:
                    raise ValueError(f"{f[0]} takes one value")
                if f[0] in kv:
                    raise ValueError(f"duplicate key {f[0]}")
                kv[f[0]] = float(f[1])
            else:
                raise ValueError(f"unknown key {f[0]!r}")
        except ValueError as e:
            raise ParseError(str(e), line=n, path=path) from None
    try:
        sensor = SensorModel(
            n_lasers=int(kv.get("n_lasers", 16)),
            angular_resolution_deg=kv.get("angular_resolution_deg", 0.2),
            lidar_extrinsic=Rigid(translation=[0.0, 0.0, kv.get("lidar_height", 1.8)]),
            vertical_fov_deg=(kv.get("vfov_min_deg", -25.0), kv.get("vfov_max_deg", 15.0)),
            max_range_m=kv.get("max_range", 80.0),
        )
        return TrajectorySpec(tuple(waypoints), kv.get("spacing", 1.0), bool(kv.get("closed", 0.0)),
                              sensor, kv.get("range_noise_sigma", 0.0))
    except ValueError as e:
        raise SpecError(f"{path}: {e}") from None


def bundled_spec(name: str) -> Path:
    """Path of a spec file shipped with the package (e.g. ``loop_scene.txt``)."""
    return Path(str(resources.files("ghosteval") / "data" / name))


def loop_benchmark_specs():
    """Scene and trajectory spec of the bundled 500 m loop benchmark."""
    return parse_scene(bundled_spec("loop_scene.txt")), parse_trajectory_spec(bundled_spec("loop_trajectory.txt"))


# --- disturbance plans -------------------------------------------------------

def write_plan(path, plan: DisturbancePlan) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# start_arclen_m length_m axis magnitude_m sign\n")
        for g in plan.segments:
            fh.write(f"{_short(g.start_arclen_m)} {_short(g.length_m)} {g.axis.value} {_short(g.magnitude_m)} {g.sign:+d}\n")


def read_plan(path) -> DisturbancePlan:
    segs = []
    for n, f in _content_lines(path):
        if len(f) != 5:
            raise ParseError(f"expected 5 fields, got {len(f)}", line=n, path=path)
        try:
            segs.append(Segment(float(f[0]), float(f[1]), Axis(f[2]), float(f[3]), int(f[4])))
        except ValueError as e:
            raise ParseError(str(e), line=n, path=path) from None
    try:
        return DisturbancePlan(tuple(segs))
    except ValueError as e:
        raise ParseError(str(e), path=path) from None


# --- config ------------------------------------------------------------------

def read_config(path) -> EvalConfig:
    """Evaluation config from JSON (object of EvalConfig fields) or ``key value`` lines."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(e.msg, line=e.lineno, path=path) from None
    else:
        d = {}
        for n, f in _content_lines(path):
            if len(f) != 2:
                raise ParseError("expected 'key value'", line=n, path=path)
            d[f[0]] = float(f[1])
    try:
        return EvalConfig.from_dict(d)
    except (TypeError, ValueError) as e:
        raise ParseError(str(e), path=path) from None


def write_config(path, cfg: EvalConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")


# --- benchmark directories ---------------------------------------------------

def write_benchmark(out_dir, poses, clouds, sensor: SensorModel, seed: int, extra=None) -> dict:
    """Write ``trajectory.txt``, ``clouds/NNNNNN.lpcd`` and ``manifest.json``."""
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.txt", poses)
    files = {"trajectory": "trajectory.txt", "clouds": []}
    hashes = {"trajectory.txt": hashlib.sha256((out / "trajectory.txt").read_bytes()).hexdigest()}
    for k, c in enumerate(clouds):
        name = f"clouds/{cloud_filename(k)}"
        data = cloud_to_bytes(c)
        (out / name).write_bytes(data)
        files["clouds"].append(name)
        hashes[name] = hashlib.sha256(data).hexdigest()
    manifest = {"schema": MANIFEST_SCHEMA, "n_poses": len(poses), "seed": int(seed),
                "sensor": sensor.to_dict(), "files": files, "sha256": hashes}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def read_benchmark(root):
    """Trajectory, clouds and sensor (from the manifest when present)."""
    root = Path(root)
    poses = read_trajectory(root / "trajectory.txt")
    clouds = read_cloud_dir(root / "clouds", len(poses))
    sensor = None
    if (root / "manifest.json").exists():
        sensor = SensorModel.from_dict(json.loads((root / "manifest.json").read_text())["sensor"])
    return poses, clouds, sensor


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p

