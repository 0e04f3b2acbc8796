"""Hybrid region segmentation.

Planes are peeled off with RANSAC first. What remains is clustered on
(normal, curvature) features with a K-means variant that grows the cluster
count until every cluster is angularly tight, and each cluster is then
split into spatially connected pieces.
"""
from __future__ import annotations

import colorsys
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .cloudio import FeatureCloud, write_ply
from .errors import ConfigError, InsufficientPointsError, InvalidFeatureError

log = logging.getLogger(__name__)

_FLAT_EPS = 1e-9
_TIE_EPS = 1e-12


@dataclass
class Plane:
    """Plane a*x + b*y + c*z + d = 0 with unit (a, b, c)."""

    coefficients: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64).reshape(4)
        norm = np.linalg.norm(coef[:3])
        if norm == 0.0:
            raise ValueError("plane normal must be nonzero")
        self.coefficients = coef / norm

    @property
    def normal(self) -> np.ndarray:
        return self.coefficients[:3]

    @property
    def offset(self) -> float:
        return float(self.coefficients[3])

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset


@dataclass
class ClusterCentroid:
    q_n: np.ndarray
    q_c: np.ndarray

    def __post_init__(self):
        self.q_n = _unit(np.asarray(self.q_n, dtype=np.float64))
        self.q_c = _unit(np.asarray(self.q_c, dtype=np.float64))


@dataclass
class Region:
    indices: np.ndarray
    label: int
    centroid: np.ndarray
    is_planar: bool = False
    plane: Optional[Plane] = None
    feature_centroid: Optional[ClusterCentroid] = None

    def __len__(self):
        return len(self.indices)


@dataclass
class SegmentationConfig:
    ransac_distance_threshold: float = 0.5
    ransac_iterations: int = 1000
    ransac_min_inlier_fraction: float = 0.15
    similarity_threshold: float = 0.64
    w_normal: float = 0.6
    w_curvature: float = 0.4
    max_N: int = 32
    max_inner_iterations: int = 100
    # None -> 4x the median nearest-neighbor spacing of the cloud
    euclidean_split_radius: Optional[float] = None
    min_region_size: int = 50
    flat_curvature_tol: float = _FLAT_EPS
    seed: int = 0

    def validate(self) -> "SegmentationConfig":
        if not self.similarity_threshold > 0:
            raise ConfigError("similarity_threshold must be > 0")
        if self.w_normal < 0 or self.w_curvature < 0:
            raise ConfigError("similarity weights must be non-negative")
        if abs(self.w_normal + self.w_curvature - 1.0) > 1e-9:
            raise ConfigError("similarity weights must sum to 1")
        if self.ransac_distance_threshold <= 0 or self.ransac_iterations < 1:
            raise ConfigError("RANSAC threshold and iteration count must be positive")
        if not 0.0 <= self.ransac_min_inlier_fraction <= 1.0:
            raise ConfigError("ransac_min_inlier_fraction must lie in [0, 1]")
        if self.max_N < 2 or self.max_inner_iterations < 1:
            raise ConfigError("max_N must be >= 2 and max_inner_iterations >= 1")
        if self.min_region_size < 1:
            raise ConfigError("min_region_size must be >= 1")
        return self


@dataclass
class KMeansResult:
    clusters: List[np.ndarray]
    centroids: List[ClusterCentroid]
    converged: bool
    n_clusters: int
    max_distance: List[float] = field(default_factory=list)


@dataclass
class Segmentation:
    regions: List[Region]
    converged: bool
    unassigned: np.ndarray
    kmeans: Optional[KMeansResult] = None

    def __iter__(self):
        return iter(self.regions)

    def __len__(self):
        return len(self.regions)

    def __getitem__(self, i):
        return self.regions[i]

    def labels(self, n_points: int) -> np.ndarray:
        """Per-point region label, -1 where a point belongs to no region."""
        out = np.full(n_points, -1, dtype=np.int64)
        for r in self.regions:
            out[r.indices] = r.label
        return out


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise InvalidFeatureError("cannot normalize a zero vector")
    return v / n


# --------------------------------------------------------------------------
# RANSAC
# --------------------------------------------------------------------------

def _fit_plane_lsq(points: np.ndarray) -> Plane:
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    n = vt[-1]
    return Plane(np.r_[n, -n @ c])


def ransac_plane(cloud: FeatureCloud, cfg: SegmentationConfig, indices=None,
                 support=None, rng=None, min_points: int = 3):
    """Find the dominant plane among ``indices`` (default: all points).

    Returns ``(plane, region, remainder)``. The plane's support is the share
    of ``support`` points (default: ``indices``) within the distance
    threshold. Members are taken from ``indices`` only. When the support is
    below ``ransac_min_inlier_fraction`` or there are fewer than
    ``min_points`` members, ``plane`` and ``region`` are None and the
    remainder is the whole input.
    """
    pts_all = cloud.points
    idx = np.arange(len(pts_all)) if indices is None else np.asarray(indices, dtype=np.int64)
    if len(idx) < 3:
        raise InsufficientPointsError(f"RANSAC needs at least 3 points, got {len(idx)}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    pts = pts_all[idx]
    thr = cfg.ransac_distance_threshold

    samples = rng.integers(0, len(idx), size=(cfg.ransac_iterations, 3))
    a, b, c = pts[samples[:, 0]], pts[samples[:, 1]], pts[samples[:, 2]]
    normals = np.cross(b - a, c - a)
    lens = np.linalg.norm(normals, axis=1)
    scale = np.maximum(np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - a, axis=1), 1e-300)
    ok = lens > 1e-9 * scale
    best_count, best = -1, None
    if np.any(ok):
        normals = normals[ok] / lens[ok, None]
        offsets = -np.einsum("ij,ij->i", normals, a[ok])
        chunk = max(1, 2_000_000 // max(len(pts), 1))
        for lo in range(0, len(normals), chunk):
            dist = np.abs(pts @ normals[lo:lo + chunk].T + offsets[lo:lo + chunk])
            counts = np.count_nonzero(dist <= thr, axis=0)
            j = int(np.argmax(counts))
            if counts[j] > best_count:
                best_count = int(counts[j])
                best = (normals[lo + j], offsets[lo + j])

    if best is None or best_count < 3:
        return None, None, idx
    plane = Plane(np.r_[best[0], best[1]])
    inl = np.abs(plane.signed_distance(pts)) <= thr
    # refit on all inliers, then re-select so every member honors the threshold
    for _ in range(3):
        if inl.sum() < 3:
            break
        refit = _fit_plane_lsq(pts[inl])
        new_inl = np.abs(refit.signed_distance(pts)) <= thr
        if new_inl.sum() < 3:
            break
        plane, changed = refit, not np.array_equal(new_inl, inl)
        inl = new_inl
        if not changed:
            break

    if support is None:
        n_support, n_ref = int(inl.sum()), len(idx)
    else:
        sup = pts_all[np.asarray(support, dtype=np.int64)]
        n_support = int(np.count_nonzero(np.abs(plane.signed_distance(sup)) <= thr))
        n_ref = len(sup)
    if n_support < cfg.ransac_min_inlier_fraction * n_ref or inl.sum() < max(3, min_points):
        return None, None, idx
    member = idx[inl]
    # orient the plane normal with the mean point normal (outward)
    if plane.normal @ cloud.normals[member].sum(axis=0) < 0:
        plane = Plane(-plane.coefficients)
    region = Region(member, label=0, centroid=pts_all[member].mean(axis=0),
                    is_planar=True, plane=plane)
    return plane, region, idx[~inl]


# --------------------------------------------------------------------------
# similarity
# --------------------------------------------------------------------------

def _angle3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle between rows of ``a`` (m,3) and ``b`` (N,3) as an (m, N) array."""
    dot = a @ b.T
    cross = np.linalg.norm(np.cross(a[:, None, :], b[None, :, :]), axis=2)
    return np.arctan2(cross, dot)


def _angle2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    dot = a @ b.T
    cross = np.abs(np.outer(a[:, 0], b[:, 1]) - np.outer(a[:, 1], b[:, 0]))
    return np.arctan2(cross, dot)


def angular_similarity(normal, curvature, centroid: ClusterCentroid,
                       weights: Tuple[float, float] = (0.6, 0.4),
                       flat_tol: float = _FLAT_EPS) -> float:
    """Weighted angular distance (radians) between a point feature and a centroid.

    Smaller means more similar. A point whose curvature vector is shorter than
    ``flat_tol`` contributes no curvature term.
    """
    n = np.asarray(normal, dtype=np.float64)
    if not np.linalg.norm(n) > 0:
        raise InvalidFeatureError("zero normal")
    c = np.asarray(curvature, dtype=np.float64)
    alpha = _similarity_matrix(
        n[None, :] / np.linalg.norm(n), _normalize_curvature(c[None, :], flat_tol),
        centroid.q_n[None, :], centroid.q_c[None, :], weights,
    )
    return float(alpha[0, 0])


def _normalize_curvature(c: np.ndarray, flat_tol: float) -> np.ndarray:
    """Unit curvature directions; rows below ``flat_tol`` become zero (flat)."""
    norm = np.linalg.norm(c, axis=1)
    out = np.zeros_like(c)
    keep = norm >= flat_tol
    out[keep] = c[keep] / norm[keep, None]
    return out


def _similarity_matrix(n_hat, c_hat, q_n, q_c, weights) -> np.ndarray:
    w1, w2 = weights
    alpha = w1 * _angle3(n_hat, q_n)
    if w2:
        flat = ~np.any(c_hat != 0.0, axis=1)
        curv = _angle2(c_hat, q_c)
        curv[flat] = 0.0
        alpha = alpha + w2 * curv
    return alpha


def _assign(alpha: np.ndarray) -> np.ndarray:
    # argmin with near-equal values resolved toward the lowest label
    low = alpha.min(axis=1, keepdims=True)
    return np.argmax(alpha <= low + _TIE_EPS, axis=1)


# --------------------------------------------------------------------------
# enhanced K-means
# --------------------------------------------------------------------------

def _seed_centroids(n_hat, c_hat, n_clusters, weights, rng, fallback_c) -> List[ClusterCentroid]:
    """k-means++ style seeding over the angular distance."""
    m = len(n_hat)
    chosen = [int(rng.integers(m))]

    def centroid_of(i):
        qc = c_hat[i] if np.any(c_hat[i] != 0.0) else fallback_c
        return ClusterCentroid(n_hat[i], qc)

    cents = [centroid_of(chosen[0])]
    nearest = _similarity_matrix(n_hat, c_hat, cents[0].q_n[None], cents[0].q_c[None], weights)[:, 0]
    while len(cents) < n_clusters:
        w = nearest ** 2
        total = w.sum()
        if total > 0 and np.isfinite(total):
            i = int(rng.choice(m, p=w / total))
        else:
            i = int(rng.integers(m))
        chosen.append(i)
        cents.append(centroid_of(i))
        d = _similarity_matrix(n_hat, c_hat, cents[-1].q_n[None], cents[-1].q_c[None], weights)[:, 0]
        nearest = np.minimum(nearest, d)
    return cents


def _update_centroid(normals, curvs, old: ClusterCentroid) -> ClusterCentroid:
    qn = normals.mean(axis=0)
    qc = curvs.mean(axis=0)
    if not np.linalg.norm(qn) > 1e-12:
        qn = old.q_n
    if not np.linalg.norm(qc) > 1e-300:
        qc = old.q_c
    return ClusterCentroid(qn, qc)


def enhanced_kmeans(features: FeatureCloud, indices, cfg: SegmentationConfig,
                    rng=None) -> KMeansResult:
    """Cluster ``indices`` of ``features`` with an automatically grown N.

    For N = 2, 3, ... centroids are seeded and refined. After each
    assignment a cluster counts as satisfied when its largest member
    distance is within the similarity threshold; the search stops once all
    N clusters are satisfied. The inner loop for a given N gives up as soon
    as the number of satisfied clusters drops, when assignments stop
    changing, or after ``max_inner_iterations``.
    """
    cfg.validate()
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) == 0:
        return KMeansResult([], [], True, 0)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    weights = (cfg.w_normal, cfg.w_curvature)
    T = cfg.similarity_threshold

    raw_n = features.normals[idx]
    lens = np.linalg.norm(raw_n, axis=1)
    if np.any(lens == 0):
        raise InvalidFeatureError("zero normal in clustering input")
    n_hat = raw_n / lens[:, None]
    curv = features.curvature[idx]
    c_hat = _normalize_curvature(curv, cfg.flat_curvature_tol)
    mean_c = curv.mean(axis=0)
    fallback_c = mean_c / np.linalg.norm(mean_c) if np.linalg.norm(mean_c) > 0 else np.array([0.0, 1.0])

    best = None  # (score, labels, centroids, D)
    N = 2
    while N <= cfg.max_N:
        n_eff = min(N, len(idx))
        cents = _seed_centroids(n_hat, c_hat, n_eff, weights, rng, fallback_c)
        beta_prev = -1
        prev_labels = None
        for _ in range(cfg.max_inner_iterations):
            q_n = np.array([q.q_n for q in cents])
            q_c = np.array([q.q_c for q in cents])
            alpha = _similarity_matrix(n_hat, c_hat, q_n, q_c, weights)
            labels = _assign(alpha)
            own = alpha[np.arange(len(idx)), labels]
            D = np.zeros(n_eff)
            np.maximum.at(D, labels, own)
            beta = int(np.count_nonzero(D <= T))
            score = (beta / N, -N)
            if best is None or score > best[0]:
                best = (score, labels.copy(), list(cents), D.copy())
            if beta == N:
                return _collect(idx, labels, cents, D, True, N)
            if beta < beta_prev:
                break
            if prev_labels is not None and np.array_equal(labels, prev_labels):
                break
            beta_prev = beta
            prev_labels = labels
            cents = [
                _update_centroid(raw_n[labels == j] / lens[labels == j, None], curv[labels == j], cents[j])
                if np.any(labels == j) else cents[j]
                for j in range(n_eff)
            ]
        N += 1

    log.warning("enhanced K-means did not converge within max_N=%d", cfg.max_N)
    _, labels, cents, D = best
    return _collect(idx, labels, cents, D, False, len(cents))


def _collect(idx, labels, cents, D, converged, N) -> KMeansResult:
    clusters, kept, dmax = [], [], []
    for j in range(len(cents)):
        members = idx[labels == j]
        if len(members):
            clusters.append(members)
            kept.append(cents[j])
            dmax.append(float(D[j]))
    return KMeansResult(clusters, kept, converged, N, dmax)


# --------------------------------------------------------------------------
# post-processing
# --------------------------------------------------------------------------

def median_spacing(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    d, _ = cKDTree(points).query(points, k=2)
    return float(np.median(d[:, 1]))


def euclidean_components(points: np.ndarray, radius: float) -> List[np.ndarray]:
    """Connected components of the radius graph, ordered by first member."""
    if len(points) == 0:
        return []
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    m = len(points)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(m, m))
    _, comp = connected_components(graph, directed=False)
    # relabel so component order follows the smallest member position
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(first)
    return [np.flatnonzero(comp == c) for c in order]


def euclidean_split(region: Region, cloud: FeatureCloud, radius: float,
                    min_size: int) -> List[Region]:
    """Split a region into spatially connected pieces.

    Pieces smaller than ``min_size`` join the large piece with the nearest
    centroid. If no piece is large the region is returned whole.
    """
    pts = cloud.points[region.indices]
    comps = euclidean_components(pts, radius)
    if len(comps) <= 1:
        return [region]
    large = [c for c in comps if len(c) >= min_size]
    if not large:
        return [region]
    small = [c for c in comps if len(c) < min_size]
    groups = [list(c) for c in large]
    centers = np.array([pts[c].mean(axis=0) for c in large])
    for c in small:
        j = int(np.argmin(np.linalg.norm(centers - pts[c].mean(axis=0), axis=1)))
        groups[j].extend(c)
    out = []
    for g in groups:
        members = np.sort(region.indices[np.asarray(g)])
        out.append(Region(members, region.label, cloud.points[members].mean(axis=0),
                          region.is_planar, region.plane, region.feature_centroid))
    return out


def _alpha_to(features: FeatureCloud, indices, centroid: ClusterCentroid,
              cfg: SegmentationConfig) -> np.ndarray:
    n = features.normals[indices]
    n = n / np.linalg.norm(n, axis=1, keepdims=True)
    c = _normalize_curvature(features.curvature[indices], cfg.flat_curvature_tol)
    return _similarity_matrix(n, c, centroid.q_n[None], centroid.q_c[None],
                              (cfg.w_normal, cfg.w_curvature))[:, 0]


def max_cluster_distance(features: FeatureCloud, region: Region,
                         cfg: SegmentationConfig) -> float:
    """Largest member distance to the region's feature centroid."""
    if region.feature_centroid is None:
        raise ValueError("region has no feature centroid")
    return float(_alpha_to(features, region.indices, region.feature_centroid, cfg).max())


def cluster_remainder(features: FeatureCloud, indices, cfg: SegmentationConfig,
                      radius: float, rng=None):
    """K-means, spatial split, then fold undersized regions into nearby ones.

    An undersized piece joins the nearest large region whose feature
    centroid is within the similarity threshold of all its points, or the
    nearest large region outright when none qualifies. Returns
    ``(regions, kmeans_result, leftover)``; ``leftover`` holds points that
    had no large region to join.
    """
    km = enhanced_kmeans(features, indices, cfg, rng=rng)
    pieces: List[Region] = []
    for members, cent in zip(km.clusters, km.centroids):
        reg = Region(members, -1, features.points[members].mean(axis=0),
                     feature_centroid=cent)
        pieces.extend(euclidean_split(reg, features, radius, cfg.min_region_size))
    big = [r for r in pieces if len(r) >= cfg.min_region_size]
    small = [r for r in pieces if len(r) < cfg.min_region_size]
    if not big:
        leftover = np.sort(np.concatenate([r.indices for r in small])) if small else np.zeros(0, np.int64)
        return [], km, leftover
    centers = np.array([r.centroid for r in big])
    extra = [[] for _ in big]
    T = cfg.similarity_threshold
    for r in small:
        order = np.argsort(np.linalg.norm(centers - r.centroid, axis=1), kind="stable")
        target = int(order[0])
        for j in order:
            if _alpha_to(features, r.indices, big[j].feature_centroid, cfg).max() <= T:
                target = int(j)
                break
        extra[target].append(r.indices)
    out = []
    for r, add in zip(big, extra):
        if add:
            members = np.sort(np.concatenate([r.indices] + add))
            r = Region(members, -1, features.points[members].mean(axis=0),
                       feature_centroid=r.feature_centroid)
        out.append(r)
    return out, km, np.zeros(0, np.int64)


def _resolve_plane_overlaps(features: FeatureCloud, regions: List[Region],
                            threshold: float) -> List[Region]:
    """Give each planar point to the nearest plane among those it is an inlier of.

    Sequential extraction hands a point near an edge to whichever plane was
    found first; this moves it to the plane it actually lies closest to.
    """
    members = np.concatenate([r.indices for r in regions])
    dist = np.abs(np.column_stack(
        [r.plane.signed_distance(features.points[members]) for r in regions]
    ))
    dist[dist > threshold] = np.inf
    owner = np.argmin(dist, axis=1)
    out = []
    for j, r in enumerate(regions):
        keep = np.sort(members[owner == j])
        if len(keep) == 0:
            continue
        out.append(Region(keep, r.label, features.points[keep].mean(axis=0),
                          True, r.plane))
    return out


def segment(features: FeatureCloud, cfg: Optional[SegmentationConfig] = None) -> Segmentation:
    """Planes by repeated RANSAC, then feature clustering of the rest.

    ``converged`` is True only when the clustering stage converged and every
    clustered region still satisfies the similarity bound after spatial
    post-processing. Degenerate points and stray remainder points that
    cannot join a region of ``min_region_size`` are listed in ``unassigned``.
    """
    cfg = (cfg or SegmentationConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    valid = np.flatnonzero(~features.degenerate)
    regions: List[Region] = []
    remainder = valid
    while len(remainder) >= 3:
        plane, reg, rest = ransac_plane(features, cfg, remainder, support=valid,
                                        rng=rng, min_points=cfg.min_region_size)
        if plane is None:
            break
        regions.append(reg)
        remainder = rest
    if len(regions) > 1:
        regions = _resolve_plane_overlaps(features, regions, cfg.ransac_distance_threshold)

    km = None
    leftover = np.zeros(0, np.int64)
    converged = True
    if len(remainder):
        radius = cfg.euclidean_split_radius
        if radius is None:
            radius = 4.0 * median_spacing(features.points[valid])
        clustered, km, leftover = cluster_remainder(features, remainder, cfg, radius, rng)
        converged = km.converged
        for r in clustered:
            if max_cluster_distance(features, r, cfg) > cfg.similarity_threshold:
                converged = False
        regions.extend(clustered)

    for label, r in enumerate(regions):
        r.label = label
    unassigned = np.sort(np.concatenate([np.flatnonzero(features.degenerate), leftover]))
    return Segmentation(regions, converged, unassigned.astype(np.int64), km)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

def label_colors(labels: Sequence[int]) -> np.ndarray:
    """Deterministic RGB per label; unlabeled points (-1) are gray."""
    labels = np.asarray(labels)
    out = np.full((len(labels), 3), 128, dtype=np.int64)
    for lab in np.unique(labels):
        if lab < 0:
            continue
        hue = (lab * 0.618033988749895) % 1.0
        rgb = colorsys.hsv_to_rgb(hue, 0.8, 0.95)
        out[labels == lab] = np.round(np.array(rgb) * 255).astype(np.int64)
    return out


def write_labeled_ply(path, points: np.ndarray, labels: np.ndarray) -> None:
    write_ply(path, points, labels=labels, colors=label_colors(labels))
