"""Plan verification by sweeping the scanner's viewing volume along each path."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cloudio import write_ply
from .errors import UndefinedRateError
from .localpath import LocalPath, ScannerModel

log = logging.getLogger(__name__)

_SLACK = 1e-9


@dataclass
class SweptCuboid:
    """Volume seen while the sensor slides from ``origin`` along ``scan_dir``.

    A point p is seen when p = origin + s*scan_dir + t*view_dir + u*lateral_dir
    with s in [0, length], t in the depth band and |u| <= width / 2. The
    lateral axis is scan_dir x view_dir. When the scan and view directions are
    not perpendicular the volume is the correspondingly sheared box.
    """

    origin: np.ndarray
    scan_dir: np.ndarray
    view_dir: np.ndarray
    length: float
    width: float
    depth_min: float
    depth_max: float
    lateral_dir: np.ndarray = field(init=False)

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.scan_dir = np.asarray(self.scan_dir, dtype=np.float64)
        self.view_dir = np.asarray(self.view_dir, dtype=np.float64)
        c = np.cross(self.scan_dir, self.view_dir)
        n = np.linalg.norm(c)
        if n < 1e-12:
            raise ValueError("scan and view directions are parallel")
        self.lateral_dir = c / n
        self._basis_inv = np.linalg.inv(
            np.column_stack([self.scan_dir, self.view_dir, self.lateral_dir])
        )

    @classmethod
    def from_path(cls, path: LocalPath, scanner: ScannerModel) -> "SweptCuboid":
        return cls(
            path.start.position,
            path.start.motion_dir,
            path.start.view_dir,
            path.scan_length,
            scanner.fov_width,
            scanner.standoff - scanner.depth_tolerance,
            scanner.standoff + scanner.depth_tolerance,
        )

    def local_coordinates(self, points) -> np.ndarray:
        """(scan, depth, lateral) coordinates of points, shape (n, 3)."""
        rel = np.atleast_2d(np.asarray(points, dtype=np.float64)) - self.origin
        return rel @ self._basis_inv.T

    def contains(self, points) -> np.ndarray:
        s, t, u = self.local_coordinates(points).T
        return (
            (s >= -_SLACK) & (s <= self.length + _SLACK)
            & (t >= self.depth_min - _SLACK) & (t <= self.depth_max + _SLACK)
            & (np.abs(u) <= self.width / 2.0 + _SLACK)
        )


def point_covered(p, cuboid: SweptCuboid) -> bool:
    return bool(cuboid.contains(p)[0])


@dataclass
class CoverageReport:
    rate: float
    uncovered: np.ndarray
    missed_by_label: Dict[int, int] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)


def coverage_rate(cloud, paths: Sequence[LocalPath], scanner: Optional[ScannerModel] = None,
                  labels=None) -> CoverageReport:
    """Fraction of cloud points inside at least one path's swept volume."""
    scanner = scanner or ScannerModel()
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise UndefinedRateError("coverage of an empty cloud is undefined")
    covered = np.zeros(len(pts), dtype=bool)
    for path in paths:
        covered |= SweptCuboid.from_path(path, scanner).contains(pts)
    uncovered = np.flatnonzero(~covered)
    report = CoverageReport(float(covered.mean()), uncovered)
    if labels is not None:
        labels = np.asarray(labels)
        for lab in np.unique(labels[uncovered]):
            report.missed_by_label[int(lab)] = int(np.count_nonzero(labels[uncovered] == lab))
    wide = [p.id for p in paths if p.wide]
    if wide:
        report.warnings.append(
            f"paths {wide} scan slabs wider than the {scanner.fov_width:g} mm field of view"
        )
    if report.rate < 1.0 and paths:
        log.info("coverage %.4f, %d points unseen", report.rate, len(uncovered))
    return report


def write_uncovered_ply(path, cloud, report: CoverageReport) -> None:
    pts = np.asarray(getattr(cloud, "points", cloud), dtype=np.float64)
    write_ply(path, pts[report.uncovered])
