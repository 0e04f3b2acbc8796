"""Local scan paths: three slabs per region, one straight scan per slab."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .cloudio import FeatureCloud
from .errors import DegenerateRegionError
from .segmentation import Region

log = logging.getLogger(__name__)

_EPS = 1e-9
_TIE_RTOL = 1e-9


@dataclass
class ScannerModel:
    """Line-scan sensor. Lengths in mm, ``line_rate`` in lines/s."""

    standoff: float = 300.0          # depth of view |V_D|
    fov_width: float = 70.0          # scan-line width |V_F|
    depth_tolerance: float = 5.0     # half-width of the sharp band around the standoff
    line_rate: float = 3000.0

    def __post_init__(self):
        for name in ("standoff", "fov_width", "depth_tolerance", "line_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SubRegion:
    parent_label: int
    index: int                 # 1, 2 or 3 along the scan axis
    indices: np.ndarray
    centroid: np.ndarray
    normal: np.ndarray         # mean outward normal, unit
    axis: np.ndarray           # scan axis shared with the parent, unit
    quantile_split: bool = False


@dataclass
class Viewpoint:
    position: np.ndarray
    view_dir: np.ndarray
    motion_dir: np.ndarray
    inspection_point: np.ndarray


@dataclass
class LocalPath:
    id: int
    start: Viewpoint           # v^p
    end: Viewpoint             # v^p*
    region_label: int = -1
    sub_index: int = 0
    lateral_extent: float = 0.0
    wide: bool = False
    flags: List[str] = field(default_factory=list)

    @property
    def scan_length(self) -> float:
        return float(np.linalg.norm(self.end.position - self.start.position))

    @property
    def endpoints(self) -> np.ndarray:
        return np.stack([self.start.position, self.end.position])


def principal_axis(points: np.ndarray) -> np.ndarray:
    """Direction of largest spread, sign-normalized.

    Near-equal top eigenvalues are resolved toward the eigenvector with the
    lexicographically largest absolute components. The result is flipped
    so its largest-magnitude component is positive.
    """
    centered = points - points.mean(axis=0)
    evals, evecs = np.linalg.eigh(centered.T @ centered)
    if evals[2] <= 0.0:
        raise DegenerateRegionError("all region points coincide")
    axis = evecs[:, 2]
    if evals[2] - evals[1] <= _TIE_RTOL * evals[2]:
        cands = [evecs[:, 2], evecs[:, 1]]
        axis = max(cands, key=lambda v: tuple(np.abs(v)))
    axis = axis / np.linalg.norm(axis)
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    return axis


def _mean_normal(normals: np.ndarray) -> np.ndarray:
    m = normals.mean(axis=0)
    n = np.linalg.norm(m)
    if n < _EPS:
        raise DegenerateRegionError("member normals cancel out")
    return m / n


def subdivide_region(region: Region, cloud: FeatureCloud) -> List[SubRegion]:
    """Cut a region into three equal-length slabs along its principal axis."""
    idx = np.asarray(region.indices)
    if len(idx) < 3:
        raise DegenerateRegionError(f"region {region.label} has {len(idx)} points")
    pts = cloud.points[idx]
    axis = principal_axis(pts)
    s = (pts - pts.mean(axis=0)) @ axis
    lo, hi = s.min(), s.max()
    if hi - lo < _EPS:
        raise DegenerateRegionError("region has no extent along its principal axis")
    edges = lo + (hi - lo) * np.array([1.0 / 3.0, 2.0 / 3.0])
    bins = np.searchsorted(edges, s, side="right")
    quantile = False
    if not np.any(bins == 1):
        # empty middle slab: fall back to equal point counts
        log.warning("region %d: empty middle slab, splitting by point count", region.label)
        order = np.argsort(s, kind="stable")
        bins = np.empty(len(s), dtype=np.int64)
        for f, part in enumerate(np.array_split(order, 3)):
            bins[part] = f
        quantile = True

    subs = []
    for f in range(3):
        members = idx[bins == f]
        if len(members) == 0:
            raise DegenerateRegionError(f"region {region.label}: slab {f + 1} is empty")
        normal = _mean_normal(cloud.normals[members])
        if abs(normal @ axis) >= 1.0 - 1e-9:
            raise DegenerateRegionError("slab normal is parallel to the scan axis")
        subs.append(SubRegion(region.label, f + 1, members,
                              cloud.points[members].mean(axis=0), normal, axis, quantile))
    return subs


def generate_local_path(sub: SubRegion, cloud: FeatureCloud, scanner: ScannerModel,
                        path_id: int = 1) -> LocalPath:
    """Two viewpoints at the slab's ends on the line through its centroid.

    The inspection points are where the centroid line leaves the slab,
    measured over members within half a field of view of that line. Each
    viewpoint sits one standoff above its inspection point along the
    outward slab normal and looks back along the negated normal.
    """
    pts = cloud.points[sub.indices]
    k = sub.axis
    w = sub.normal
    lateral_dir = np.cross(k, w)
    lateral_dir /= np.linalg.norm(lateral_dir)
    rel = pts - sub.centroid
    s = rel @ k
    lat = rel @ lateral_dir
    band = np.abs(lat) <= scanner.fov_width / 2.0
    if not np.any(band):
        band = np.ones(len(s), dtype=bool)
    s1, s2 = s[band].min(), s[band].max()
    if s2 - s1 < _EPS:
        raise DegenerateRegionError(f"slab {sub.parent_label}.{sub.index} is too thin to scan")
    tau1 = sub.centroid + s1 * k
    tau2 = sub.centroid + s2 * k
    view = -w
    start = Viewpoint(tau1 + w * scanner.standoff, view.copy(), k.copy(), tau1)
    end = Viewpoint(tau2 + w * scanner.standoff, view.copy(), k.copy(), tau2)
    extent = float(np.abs(lat).max())
    path = LocalPath(path_id, start, end, sub.parent_label, sub.index, 2.0 * extent)
    if extent > scanner.fov_width / 2.0:
        path.wide = True
        path.flags.append("wider-than-fov")
        log.warning("slab %d.%d is %.1f mm wide, beyond the %.1f mm field of view",
                    sub.parent_label, sub.index, 2.0 * extent, scanner.fov_width)
    if sub.quantile_split:
        path.flags.append("quantile-split")
    return path


def plan_local_paths(regions, cloud: FeatureCloud,
                     scanner: Optional[ScannerModel] = None) -> List[LocalPath]:
    """Three local paths per region, ids 1..U in region order.

    Regions that cannot be subdivided are skipped with a warning.
    """
    scanner = scanner or ScannerModel()
    paths: List[LocalPath] = []
    for region in regions:
        try:
            subs = subdivide_region(region, cloud)
            made = [generate_local_path(sub, cloud, scanner) for sub in subs]
        except DegenerateRegionError as exc:
            log.warning("skipping region %d: %s", region.label, exc)
            continue
        for p in made:
            p.id = len(paths) + 1
            paths.append(p)
    return paths


def paths_from_segments(segments) -> List[LocalPath]:
    """Bare local paths from an (U, 2, 3) array of endpoint pairs.

    Poses are filled with the segment direction and an arbitrary
    perpendicular view direction; useful for exercising the planner alone.
    """
    segs = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    out = []
    for t, (a, b) in enumerate(segs, start=1):
        d = b - a
        n = np.linalg.norm(d)
        l_hat = d / n if n > 0 else np.array([1.0, 0.0, 0.0])
        helper = np.zeros(3)
        helper[np.argmin(np.abs(l_hat))] = 1.0
        view = np.cross(l_hat, helper)
        view /= np.linalg.norm(view)
        out.append(LocalPath(t, Viewpoint(a.copy(), view, l_hat, a.copy()),
                             Viewpoint(b.copy(), view.copy(), l_hat.copy(), b.copy())))
    return out
