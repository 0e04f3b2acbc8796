"""End-to-end planning: load, featurize, segment, local paths, tour, coverage."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import cloudio, coverage, localpath, planner, segmentation
from .errors import ConfigError, ParseError, ScanPlanError

log = logging.getLogger(__name__)

ENV_PREFIX = "SCANPLAN_"
PLAN_FORMAT_TAG = "scanplan-plan/1"
PLAN_COLUMNS = ["seq", "path_id", "endpoint", "x", "y", "z", "dx", "dy", "dz",
                "lx", "ly", "lz", "leg", "duration_s"]

EXIT_OK = 0
EXIT_WARNING = 1
EXIT_ERROR = 2


class StageError(ScanPlanError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@dataclass
class PlanConfig:
    input: Optional[str] = None
    input_format: Optional[str] = None
    out_dir: str = "plan_out"
    seed: int = 0
    speed: float = 50.0              # mm/s
    feature_k: int = 20
    sample_count: int = 10000        # points drawn from STL meshes
    coverage_floor: float = 0.9
    plan_format: str = "json"
    scanner: localpath.ScannerModel = field(default_factory=localpath.ScannerModel)
    segmentation: segmentation.SegmentationConfig = field(
        default_factory=segmentation.SegmentationConfig)
    pso: planner.PsoConfig = field(default_factory=planner.PsoConfig)

    def validate(self) -> "PlanConfig":
        if not self.speed > 0:
            raise ConfigError("speed must be positive")
        if self.feature_k < 6:
            raise ConfigError("feature_k must be >= 6")
        if self.sample_count < 1:
            raise ConfigError("sample_count must be >= 1")
        if self.plan_format not in ("json", "csv"):
            raise ConfigError("plan_format must be json or csv")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.segmentation.seed = self.seed
        self.pso.seed = self.seed
        self.segmentation.validate()
        self.pso.validate()
        return self

    def flat(self) -> Dict[str, object]:
        """Every tunable as one flat mapping (the config-file key space)."""
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    if sub.name != "seed":
                        out[sub.name] = getattr(value, sub.name)
            elif f.name not in ("input", "out_dir"):
                out[f.name] = value
        return out


def _key_owners(cfg: PlanConfig):
    owners = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            for sub in dataclasses.fields(value):
                if sub.name != "seed":
                    owners[sub.name.lower()] = (value, sub.name)
        else:
            owners[f.name.lower()] = (cfg, f.name)
    return owners


def _coerce(current, raw: str, key: str):
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    try:
        if isinstance(current, bool):
            if text.lower() in ("true", "yes", "1", "on"):
                return True
            if text.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float) or current is None:
            if current is None and key in ("input", "input_format"):
                return text
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from None
    return text


def apply_overrides(cfg: PlanConfig, pairs: Dict[str, str]) -> PlanConfig:
    owners = _key_owners(cfg)
    for key, raw in pairs.items():
        key = key.strip().lower().replace("-", "_")
        if key not in owners:
            raise ConfigError(f"unknown config key {key!r}")
        owner, attr = owners[key]
        setattr(owner, attr, _coerce(getattr(owner, attr), raw, key))
    return cfg


def parse_config_text(text: str) -> Dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise ParseError("expected 'key = value'", lineno, "config")
        key, value = line.split(sep, 1)
        pairs[key.strip()] = value.strip().strip('"').strip("'")
    return pairs


def load_config(path=None, overrides: Optional[Dict[str, str]] = None,
                environ=None) -> PlanConfig:
    """Defaults, then the config file, then ``SCANPLAN_*`` variables, then overrides."""
    cfg = PlanConfig()
    if path is not None:
        apply_overrides(cfg, parse_config_text(Path(path).read_text()))
    env = os.environ if environ is None else environ
    env_pairs = {k[len(ENV_PREFIX):].lower(): v for k, v in env.items()
                 if k.startswith(ENV_PREFIX)}
    apply_overrides(cfg, env_pairs)
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


# --------------------------------------------------------------------------
# plan files
# --------------------------------------------------------------------------

def _fmt(v: float) -> str:
    s = f"{float(v):.6f}"
    return "0.000000" if s == "-0.000000" else s


def plan_records(tour: planner.Tour, paths: List[localpath.LocalPath]) -> List[dict]:
    by_id = {p.id: p for p in paths}
    scans = tour.scan_times
    transits = tour.transit_times
    records = []
    for k, (pid, rev) in enumerate(zip(tour.order, tour.reverse)):
        p = by_id[pid]
        entry, exit_ = (p.end, p.start) if rev else (p.start, p.end)
        names = ("p*", "p") if rev else ("p", "p*")
        legs = [("start" if k == 0 else "transit", 0.0 if k == 0 else transits[k - 1]),
                ("scan", scans[k])]
        for vp, name, (leg, dur) in zip((entry, exit_), names, legs):
            records.append({
                "seq": len(records) + 1, "path_id": int(pid), "endpoint": name,
                "x": vp.position[0], "y": vp.position[1], "z": vp.position[2],
                "dx": vp.view_dir[0], "dy": vp.view_dir[1], "dz": vp.view_dir[2],
                "lx": vp.motion_dir[0], "ly": vp.motion_dir[1], "lz": vp.motion_dir[2],
                "leg": leg, "duration_s": dur,
            })
    return records


def _record_values(rec: dict) -> List[str]:
    out = []
    for col in PLAN_COLUMNS:
        v = rec[col]
        out.append(str(v) if col in ("seq", "path_id", "endpoint", "leg") else _fmt(v))
    return out


def plan_header(tour: planner.Tour, cfg: Optional[PlanConfig] = None) -> dict:
    cfg = cfg or PlanConfig()
    return {
        "format": PLAN_FORMAT_TAG,
        "units": {"length": "mm", "time": "s", "speed": "mm/s"},
        "seed": int(cfg.seed),
        "config": cfg.flat(),
        "summary": {
            "local_paths": len(tour.order),
            "tour_length_mm": round(tour.length, 6),
            "tour_time_s": round(tour.total_time, 6),
        },
    }


def emit_plan(tour: planner.Tour, paths, dest, fmt: str = "json",
              cfg: Optional[PlanConfig] = None) -> Path:
    """Write the ordered viewpoint records; numbers carry 6 decimals."""
    dest = Path(dest)
    header = plan_header(tour, cfg)
    records = plan_records(tour, paths)
    if fmt == "json":
        lines = ["{"]
        for key, value in header.items():
            lines.append(f"  {json.dumps(key)}: {json.dumps(value, sort_keys=True)},")
        lines.append('  "records": [')
        body = []
        for rec in records:
            vals = _record_values(rec)
            parts = []
            for col, v in zip(PLAN_COLUMNS, vals):
                parts.append(f'"{col}": ' + (json.dumps(v) if col in ("endpoint", "leg") else v))
            body.append("    {" + ", ".join(parts) + "}")
        lines.append(",\n".join(body))
        lines.append("  ]")
        lines.append("}")
        text = "\n".join(lines) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PLAN_COLUMNS)
        for rec in records:
            writer.writerow(_record_values(rec))
        text = buf.getvalue()
    else:
        raise ValueError(f"unknown plan format {fmt!r}")
    try:
        dest.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise StageError("emit", exc) from exc
    return dest


@dataclass
class PlanFile:
    header: dict
    records: List[dict]

    @property
    def order(self) -> Tuple[int, ...]:
        return tuple(r["path_id"] for r in self.records[::2])

    @property
    def reverse(self) -> Tuple[bool, ...]:
        return tuple(r["endpoint"] == "p*" for r in self.records[::2])

    @property
    def total_time(self) -> float:
        return float(sum(r["duration_s"] for r in self.records))

    def local_paths(self) -> List[localpath.LocalPath]:
        """Rebuild local paths (v^p, v^p*) from the records."""
        ends: Dict[int, Dict[str, localpath.Viewpoint]] = {}
        for r in self.records:
            pos = np.array([r["x"], r["y"], r["z"]], dtype=float)
            d = np.array([r["dx"], r["dy"], r["dz"]], dtype=float)
            l_ = np.array([r["lx"], r["ly"], r["lz"]], dtype=float)
            scanner = self.scanner()
            tau = pos + d * scanner.standoff
            ends.setdefault(r["path_id"], {})[r["endpoint"]] = localpath.Viewpoint(
                pos, d / np.linalg.norm(d), l_ / np.linalg.norm(l_), tau)
        out = []
        for pid in sorted(ends):
            pair = ends[pid]
            if set(pair) != {"p", "p*"}:
                raise ParseError(f"path {pid} lacks one of its two viewpoints", None, "plan")
            out.append(localpath.LocalPath(pid, pair["p"], pair["p*"]))
        return out

    def scanner(self) -> localpath.ScannerModel:
        conf = self.header.get("config", {})
        base = localpath.ScannerModel()
        kw = {f.name: conf.get(f.name, getattr(base, f.name))
              for f in dataclasses.fields(localpath.ScannerModel)}
        return localpath.ScannerModel(**kw)

    def tour(self) -> planner.Tour:
        speed = float(self.header.get("config", {}).get("speed", PlanConfig.speed))
        return planner.tour_cost(self.order, self.reverse, self.local_paths(), speed)


def _typed_record(raw: dict) -> dict:
    rec = {}
    for col in PLAN_COLUMNS:
        v = raw[col]
        if col in ("seq", "path_id"):
            rec[col] = int(v)
        elif col in ("endpoint", "leg"):
            rec[col] = str(v)
        else:
            rec[col] = float(v)
    return rec


def read_plan(path) -> PlanFile:
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if data.get("format") != PLAN_FORMAT_TAG:
            raise ParseError("not a scanplan plan file", 1, path)
        records = [_typed_record(r) for r in data.pop("records")]
        return PlanFile(data, records)
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# "):
        raise ParseError("missing plan header line", 1, path)
    header = json.loads(lines[0][2:])
    reader = csv.DictReader(lines[1:])
    return PlanFile(header, [_typed_record(r) for r in reader])


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------

@dataclass
class PlanReport:
    region_count: int
    local_path_count: int
    viewpoint_count: int
    segmentation_time_s: float
    tour_length_mm: float
    tour_time_s: float
    coverage_rate: float
    segmentation_converged: bool
    unassigned_points: int
    seed: int
    point_count: int
    status: str = "ok"
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class PipelineResult:
    report: PlanReport
    features: cloudio.FeatureCloud
    segmentation: segmentation.Segmentation
    paths: List[localpath.LocalPath]
    tour: planner.Tour
    coverage: coverage.CoverageReport
    artifacts: Dict[str, Path] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return EXIT_OK if self.report.status == "ok" else EXIT_WARNING


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (ScanPlanError, ValueError, OSError) as exc:
        raise StageError(name, exc) from exc


def load_input(cfg: PlanConfig) -> cloudio.PointCloud:
    path = Path(cfg.input)
    fmt = (cfg.input_format or path.suffix.lstrip(".")).lower()
    if fmt == "stl":
        mesh = cloudio.load_stl(path)
        cloud = cloudio.sample_mesh(mesh, cfg.sample_count, cfg.seed)
        cloud.source = str(path)
        return cloud
    return cloudio.load_cloud(path, fmt)


def plan(cfg: PlanConfig, cloud: Optional[cloudio.PointCloud] = None) -> PipelineResult:
    """Run every stage in memory; nothing is written."""
    cfg.validate()
    if cloud is None:
        if cfg.input is None:
            raise StageError("load", ConfigError("no input given"))
        cloud = _stage("load", load_input, cfg)
    features = _stage("features", cloudio.compute_features, cloud, k=cfg.feature_k)
    t0 = time.perf_counter()
    seg = _stage("segment", segmentation.segment, features, cfg.segmentation)
    seg_time = time.perf_counter() - t0
    paths = _stage("localpath", localpath.plan_local_paths, seg.regions, features, cfg.scanner)
    tour = _stage("planner", planner.pso_optimize, paths, cfg.speed, cfg.pso)
    labels = seg.labels(len(features))
    cov = _stage("coverage", coverage.coverage_rate, features, paths, cfg.scanner, labels)

    planned_regions = len({p.region_label for p in paths})
    warnings = list(cov.warnings)
    if not seg.converged:
        warnings.append("segmentation did not certify every cluster within the similarity threshold")
    if cov.rate < cfg.coverage_floor:
        warnings.append(f"coverage {cov.rate:.4f} below floor {cfg.coverage_floor:g}")
    if planned_regions < len(seg.regions):
        warnings.append(f"{len(seg.regions) - planned_regions} degenerate regions were not planned")
    status = "ok" if seg.converged and cov.rate >= cfg.coverage_floor else "warning"
    report = PlanReport(
        region_count=planned_regions,
        local_path_count=len(paths),
        viewpoint_count=2 * len(paths),
        segmentation_time_s=seg_time,
        tour_length_mm=tour.length,
        tour_time_s=tour.total_time,
        coverage_rate=cov.rate,
        segmentation_converged=bool(seg.converged),
        unassigned_points=int(len(seg.unassigned)),
        seed=int(cfg.seed),
        point_count=len(features),
        status=status,
        warnings=warnings,
    )
    return PipelineResult(report, features, seg, paths, tour, cov)


def run_pipeline(cfg: PlanConfig, report_only: bool = False) -> PipelineResult:
    """Plan and write artifacts into ``cfg.out_dir``.

    Outputs are written only after every stage has succeeded, so a failed
    run leaves no partial files behind.
    """
    cfg.validate()
    if cfg.input is None or not Path(cfg.input).is_file():
        raise StageError("load", FileNotFoundError(f"input file not found: {cfg.input}"))
    result = plan(cfg)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("emit", exc) from exc
    arts = {}
    if not report_only:
        labels = result.segmentation.labels(len(result.features))
        arts["clusters"] = out / "clusters.ply"
        segmentation.write_labeled_ply(arts["clusters"], result.features.points, labels)
        arts["plan"] = emit_plan(result.tour, result.paths,
                                 out / f"plan.{cfg.plan_format}", cfg.plan_format, cfg)
        arts["uncovered"] = out / "uncovered.ply"
        coverage.write_uncovered_ply(arts["uncovered"], result.features, result.coverage)
    arts["report"] = out / "report.json"
    arts["report"].write_text(json.dumps(result.report.to_dict(), indent=2, sort_keys=True) + "\n")
    result.artifacts = arts
    return result


def verify_plan(plan_path, cloud_path, fmt: Optional[str] = None,
                sample_count: int = 10000, seed: int = 0) -> coverage.CoverageReport:
    """Re-run coverage for an existing plan against a cloud (or STL mesh)."""
    plan_file = read_plan(plan_path)
    cfg = PlanConfig(input=str(cloud_path), input_format=fmt, sample_count=sample_count, seed=seed)
    cloud = load_input(cfg)
    return coverage.coverage_rate(cloud, plan_file.local_paths(), plan_file.scanner())
