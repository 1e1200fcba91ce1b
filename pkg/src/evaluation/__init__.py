"""Image Similarity scoring, baselines and the end-to-end experiment driver."""
from .baselines import fixed_frame_baseline
from .evaluate import ISReport, branches_covered, evaluate, evaluate_grids, psi_table, sign_test
from .experiment import RunPaths, run_experiment, run_stage
from .image_similarity import DistanceCache, is_distance, manhattan_distance_transform

__all__ = [
    "DistanceCache",
    "ISReport",
    "RunPaths",
    "branches_covered",
    "evaluate",
    "evaluate_grids",
    "fixed_frame_baseline",
    "is_distance",
    "manhattan_distance_transform",
    "psi_table",
    "run_experiment",
    "run_stage",
    "sign_test",
]
