"""Point-cloud ingestion, mesh sampling and per-point surface features.

Everything is in millimeters. Normals come from k-NN PCA; Gaussian and
mean curvature come from a quadric height field fitted in each point's
normal frame.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    DegenerateMeshError,
    EmptyCloudError,
    InsufficientPointsError,
    ParseError,
)

DEFAULT_K = 20
_CHUNK = 20000
# smallest-to-middle eigenvalue ratio below which a neighborhood counts as a line
_COLLINEAR_RATIO = 1e-8
_RANK_TOL = 1e-10

_PLY_TYPES = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


@dataclass
class PointCloud:
    points: np.ndarray
    source: Optional[str] = None
    sample_count: Optional[int] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    def __len__(self):
        return len(self.points)


@dataclass
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise ValueError("triangle index out of range")

    def areas(self) -> np.ndarray:
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


@dataclass
class FeatureCloud:
    """Points with outward unit normals and curvature estimates.

    ``degenerate`` marks points whose neighborhood had no well-defined plane
    (collinear or coincident); segmentation skips them. ``low_confidence``
    marks points whose quadric fit was rank deficient (curvature set to 0).
    """

    points: np.ndarray
    normals: np.ndarray
    gaussian_curvature: np.ndarray = None
    mean_curvature: np.ndarray = None
    degenerate: np.ndarray = None
    low_confidence: np.ndarray = None
    source: Optional[str] = None

    def __post_init__(self):
        n = len(self.points)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(n, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(n, 3)
        if self.gaussian_curvature is None:
            self.gaussian_curvature = np.zeros(n)
        if self.mean_curvature is None:
            self.mean_curvature = np.zeros(n)
        if self.degenerate is None:
            self.degenerate = np.zeros(n, dtype=bool)
        if self.low_confidence is None:
            self.low_confidence = np.zeros(n, dtype=bool)
        self.gaussian_curvature = np.asarray(self.gaussian_curvature, dtype=np.float64)
        self.mean_curvature = np.asarray(self.mean_curvature, dtype=np.float64)
        self.degenerate = np.asarray(self.degenerate, dtype=bool)
        self.low_confidence = np.asarray(self.low_confidence, dtype=bool)

    def __len__(self):
        return len(self.points)

    @property
    def curvature(self) -> np.ndarray:
        """(n, 2) curvature feature ``[K, H]`` per point."""
        return np.column_stack([self.gaussian_curvature, self.mean_curvature])


# --------------------------------------------------------------------------
# file formats
# --------------------------------------------------------------------------

def _normalize_format(path: Path, fmt: Optional[str]) -> str:
    if fmt is None:
        fmt = path.suffix.lstrip(".").lower()
    fmt = fmt.lower()
    if fmt in ("ply", "ply-ascii"):
        return "ply"
    if fmt in ("xyz", "csv", "xyz-csv", "txt"):
        return "xyz"
    if fmt == "stl":
        return "stl"
    raise ValueError(f"unsupported point-cloud format {fmt!r}")


def load_cloud(path, fmt: Optional[str] = None) -> PointCloud:
    """Read an ASCII PLY or an ``x,y,z`` text file, keeping file order."""
    path = Path(path)
    kind = _normalize_format(path, fmt)
    if kind == "stl":
        raise ValueError("STL is a mesh format; use load_stl + sample_mesh")
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if kind == "ply":
        pts = _parse_ply(lines, path)["xyz"]
    else:
        pts = _parse_xyz(lines, path)
    if len(pts) == 0:
        raise EmptyCloudError(f"{path}: no points")
    return PointCloud(pts, source=str(path))


def _parse_xyz(lines: Sequence[str], path) -> np.ndarray:
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise ParseError(f"expected 3 coordinates, got {len(parts)}", lineno, path)
        try:
            xyz = [float(p) for p in parts[:3]]
        except ValueError as exc:
            raise ParseError(f"non-numeric coordinate ({exc})", lineno, path) from None
        if not all(np.isfinite(xyz)):
            raise ParseError("non-finite coordinate", lineno, path)
        rows.append(xyz)
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def _parse_ply(lines: Sequence[str], path) -> dict:
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", 1, path)
    elements = []  # (name, count, [props])
    body_start = None
    for lineno in range(2, len(lines) + 1):
        tokens = lines[lineno - 1].split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        key = tokens[0]
        if key == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", lineno, path)
        elif key == "element":
            if len(tokens) != 3 or not tokens[2].isdigit():
                raise ParseError("malformed element line", lineno, path)
            elements.append((tokens[1], int(tokens[2]), []))
        elif key == "property":
            if not elements:
                raise ParseError("property before element", lineno, path)
            if tokens[1] == "list":
                elements[-1][2].append(("list", tokens[-1]))
            elif len(tokens) == 3 and tokens[1] in _PLY_TYPES:
                elements[-1][2].append(("scalar", tokens[2]))
            else:
                raise ParseError("malformed property line", lineno, path)
        elif key == "end_header":
            body_start = lineno
            break
        else:
            raise ParseError(f"unexpected header keyword {key!r}", lineno, path)
    if body_start is None:
        raise ParseError("missing end_header", len(lines), path)

    out = {}
    cursor = body_start  # 0-based index of the next body line
    for name, count, props in elements:
        rows = []
        has_list = any(kind == "list" for kind, _ in props)
        for _ in range(count):
            while cursor < len(lines) and not lines[cursor].strip():
                cursor += 1
            if cursor >= len(lines):
                raise ParseError(f"unexpected end of file in element {name!r}", cursor, path)
            tokens = lines[cursor].split()
            cursor += 1
            if name != "vertex" or has_list:
                continue
            if len(tokens) != len(props):
                raise ParseError(
                    f"expected {len(props)} values, got {len(tokens)}", cursor, path
                )
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError("non-numeric vertex value", cursor, path) from None
        if name == "vertex":
            names = [p for _, p in props]
            for axis in "xyz":
                if axis not in names:
                    raise ParseError(f"vertex element lacks property {axis!r}", body_start, path)
            table = np.array(rows, dtype=np.float64).reshape(-1, len(names))
            cols = {p: table[:, i] for i, p in enumerate(names)}
            if not np.all(np.isfinite(table)):
                raise ParseError("non-finite vertex value", body_start, path)
            out["xyz"] = np.column_stack([cols["x"], cols["y"], cols["z"]])
            if all(a in cols for a in ("nx", "ny", "nz")):
                out["normals"] = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
            out["columns"] = cols
    if "xyz" not in out:
        out["xyz"] = np.zeros((0, 3))
    return out


def write_ply(path, points, normals=None, labels=None, colors=None, comments=()):
    """Write an ASCII PLY. Floats use ``repr`` so values read back exactly."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0"]
    lines += [f"comment {c}" for c in comments]
    lines.append(f"element vertex {len(points)}")
    lines += ["property double x", "property double y", "property double z"]
    cols = [points]
    if normals is not None:
        lines += ["property double nx", "property double ny", "property double nz"]
        cols.append(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    if labels is not None:
        lines.append("property int label")
    if colors is not None:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    float_block = np.hstack(cols)
    for i in range(len(points)):
        row = [repr(float(v)) for v in float_block[i]]
        if labels is not None:
            row.append(str(int(labels[i])))
        if colors is not None:
            row += [str(int(c)) for c in colors[i]]
        lines.append(" ".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def save_cloud(cloud: PointCloud, path, fmt: Optional[str] = None) -> None:
    path = Path(path)
    kind = _normalize_format(path, fmt)
    if kind == "ply":
        write_ply(path, cloud.points)
    elif kind == "xyz":
        text = "".join(
            f"{float(x)!r},{float(y)!r},{float(z)!r}\n" for x, y, z in cloud.points
        )
        path.write_text(text, encoding="ascii")
    else:
        raise ValueError("cannot save a point cloud as STL")


_STL_RECORD = np.dtype(
    [("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]
)


def load_stl(path) -> TriangleMesh:
    """Binary STL: 80-byte header, uint32 count, 50-byte triangle records."""
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise ParseError("file too short for binary STL header", None, path)
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) != expected:
        raise ParseError(
            f"binary STL declares {count} triangles ({expected} bytes) but file has {len(data)} bytes",
            None,
            path,
        )
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    verts = rec["v"].astype(np.float64).reshape(-1, 3)
    tris = np.arange(len(verts)).reshape(-1, 3)
    return TriangleMesh(verts, tris)


def save_stl(mesh: TriangleMesh, path, header: bytes = b"scanplan") -> None:
    v = mesh.vertices[mesh.triangles]
    nrm = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    lens = np.linalg.norm(nrm, axis=1, keepdims=True)
    nrm = np.divide(nrm, lens, out=np.zeros_like(nrm), where=lens > 0)
    rec = np.zeros(len(v), dtype=_STL_RECORD)
    rec["normal"] = nrm
    rec["v"] = v
    with open(path, "wb") as fh:
        fh.write(header[:80].ljust(80, b"\0"))
        fh.write(struct.pack("<I", len(v)))
        fh.write(rec.tobytes())


# --------------------------------------------------------------------------
# sampling
# --------------------------------------------------------------------------

def sample_mesh(mesh: TriangleMesh, count: int, seed: int = 0) -> PointCloud:
    """Area-weighted, barycentric-uniform random samples on the mesh surface."""
    if count < 1:
        raise ValueError("count must be >= 1")
    areas = mesh.areas()
    total = float(areas.sum()) if len(areas) else 0.0
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateMeshError("mesh has zero total area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    v = mesh.vertices[mesh.triangles[tri]]
    pts = (
        (1.0 - r1)[:, None] * v[:, 0]
        + (r1 * (1.0 - r2))[:, None] * v[:, 1]
        + (r1 * r2)[:, None] * v[:, 2]
    )
    return PointCloud(pts, sample_count=count)


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------

def default_viewpoint_hint(points: np.ndarray) -> np.ndarray:
    """Centroid lifted by ten bounding-box diagonals along +z."""
    points = np.asarray(points, dtype=np.float64)
    diag = float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
    if diag == 0.0:
        diag = 1.0
    return points.mean(axis=0) + np.array([0.0, 0.0, 10.0 * diag])


def _as_points(cloud) -> np.ndarray:
    return np.asarray(getattr(cloud, "points", cloud), dtype=np.float64).reshape(-1, 3)


def estimate_normals(cloud, k: int = DEFAULT_K, viewpoint_hint=None,
                     away_from_hint: bool = False) -> FeatureCloud:
    """PCA normals over the ``k`` nearest neighbors of each point.

    The neighborhood is the point itself plus its ``k`` nearest neighbors.
    Each normal is flipped to face ``viewpoint_hint`` (or to face away from
    it when ``away_from_hint`` is set, e.g. a hint at the center of a closed
    shell). Neighborhoods without a unique plane are flagged ``degenerate``.
    """
    pts = _as_points(cloud)
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(pts) < k + 1:
        raise InsufficientPointsError(f"need at least {k + 1} points, got {len(pts)}")
    hint = default_viewpoint_hint(pts) if viewpoint_hint is None else np.asarray(
        viewpoint_hint, dtype=np.float64
    )

    tree = cKDTree(pts)
    normals = np.empty_like(pts)
    degenerate = np.zeros(len(pts), dtype=bool)
    for lo in range(0, len(pts), _CHUNK):
        hi = min(lo + _CHUNK, len(pts))
        _, idx = tree.query(pts[lo:hi], k=k + 1)
        nb = pts[idx]
        nb = nb - nb.mean(axis=1, keepdims=True)
        cov = np.einsum("nki,nkj->nij", nb, nb) / (k + 1)
        evals, evecs = np.linalg.eigh(cov)
        normals[lo:hi] = evecs[:, :, 0]
        scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
        degenerate[lo:hi] = (evals[:, 1] / scale < _COLLINEAR_RATIO) | (evals[:, 2] <= 0.0)

    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    facing = np.einsum("ij,ij->i", normals, hint - pts)
    flip = facing > 0 if away_from_hint else facing < 0
    normals[flip] *= -1.0
    return FeatureCloud(
        pts.copy(), normals, degenerate=degenerate,
        source=getattr(cloud, "source", None),
    )


def _tangent_frames(normals: np.ndarray):
    # helper axis: whichever world axis is least aligned with the normal
    helper = np.zeros_like(normals)
    helper[np.arange(len(normals)), np.argmin(np.abs(normals), axis=1)] = 1.0
    u = np.cross(normals, helper)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    v = np.cross(normals, u)
    return u, v


def estimate_curvatures(features: FeatureCloud, k: int = DEFAULT_K) -> FeatureCloud:
    """Fill Gaussian (1/mm^2) and mean (1/mm) curvature by local quadric fits.

    In the frame (u, v, n) of each point the neighbors are fitted with
    h = a x^2 + b xy + c y^2 + d x + e y + f. Mean curvature is positive
    where the surface bends away from its outward normal (a convex bump).
    """
    if k < 6:
        raise ValueError("k must be >= 6 for a quadric fit")
    pts = features.points
    if len(pts) < k + 1:
        raise InsufficientPointsError(f"need at least {k + 1} points, got {len(pts)}")
    normals = features.normals
    u_ax, v_ax = _tangent_frames(normals)
    tree = cKDTree(pts)
    gauss = np.zeros(len(pts))
    mean = np.zeros(len(pts))
    low = np.zeros(len(pts), dtype=bool)

    for lo in range(0, len(pts), _CHUNK):
        hi = min(lo + _CHUNK, len(pts))
        _, idx = tree.query(pts[lo:hi], k=k + 1)
        rel = pts[idx] - pts[lo:hi, None, :]
        x = np.einsum("nkj,nj->nk", rel, u_ax[lo:hi])
        y = np.einsum("nkj,nj->nk", rel, v_ax[lo:hi])
        h = np.einsum("nkj,nj->nk", rel, normals[lo:hi])
        scale = np.sqrt(np.mean(x * x + y * y, axis=1))
        scale[scale == 0.0] = 1.0
        xs = x / scale[:, None]
        ys = y / scale[:, None]
        design = np.stack([xs * xs, xs * ys, ys * ys, xs, ys, np.ones_like(xs)], axis=2)
        U, S, Vt = np.linalg.svd(design, full_matrices=False)
        rank_ok = S[:, -1] > _RANK_TOL * S[:, 0]
        S_inv = np.where(S > _RANK_TOL * S[:, :1], 1.0 / np.where(S == 0, 1.0, S), 0.0)
        coef = np.einsum("nji,nj,nkj,nk->ni", Vt, S_inv, U, h)
        s2 = scale * scale
        fxx = 2.0 * coef[:, 0] / s2
        fxy = coef[:, 1] / s2
        fyy = 2.0 * coef[:, 2] / s2
        fx = coef[:, 3] / scale
        fy = coef[:, 4] / scale
        w = 1.0 + fx * fx + fy * fy
        K = (fxx * fyy - fxy * fxy) / (w * w)
        H = -((1.0 + fx * fx) * fyy - 2.0 * fx * fy * fxy + (1.0 + fy * fy) * fxx) / (
            2.0 * w ** 1.5
        )
        bad = ~rank_ok | ~np.isfinite(K) | ~np.isfinite(H)
        K[bad] = 0.0
        H[bad] = 0.0
        gauss[lo:hi] = K
        mean[lo:hi] = H
        low[lo:hi] = bad

    return FeatureCloud(
        pts, normals, gauss, mean,
        degenerate=features.degenerate.copy(),
        low_confidence=low,
        source=features.source,
    )


def compute_features(cloud, k: int = DEFAULT_K, viewpoint_hint=None,
                     away_from_hint: bool = False) -> FeatureCloud:
    """Normals followed by curvatures, both over ``k`` neighbors."""
    fc = estimate_normals(cloud, k=k, viewpoint_hint=viewpoint_hint,
                          away_from_hint=away_from_hint)
    return estimate_curvatures(fc, k=k)
