"""Coverage path planning for robotic line-scan surface inspection."""
from .cloudio import (FeatureCloud, PointCloud, TriangleMesh, compute_features, estimate_curvatures,
                      estimate_normals, load_cloud, load_stl, sample_mesh, save_cloud, save_stl)
from .coverage import SweptCuboid, coverage_rate, point_covered
from .localpath import LocalPath, ScannerModel, Viewpoint, generate_local_path, plan_local_paths, subdivide_region
from .pipeline import PlanConfig, PlanReport, emit_plan, read_plan, run_pipeline
from .planner import PsoConfig, Tour, brute_force_tour, optimal_directions, pso_optimize, tour_cost
from .segmentation import (ClusterCentroid, Plane, Region, SegmentationConfig, angular_similarity,
                           enhanced_kmeans, euclidean_split, ransac_plane, segment)

__version__ = "0.1.0"
