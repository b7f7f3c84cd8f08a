from .ba import BAReport
from .incremental import (
    SfmConfig,
    build_tracks,
    bundle_adjust,
    initialize_pair,
    reconstruct,
    register_next_image,
    renormalize_scale,
    triangulate_tracks,
    verify_pairs,
)
from .types import Reconstruction, ReconstructionStats, Track, compute_stats

__all__ = [
    "BAReport",
    "Reconstruction",
    "ReconstructionStats",
    "SfmConfig",
    "Track",
    "build_tracks",
    "bundle_adjust",
    "compute_stats",
    "initialize_pair",
    "reconstruct",
    "register_next_image",
    "renormalize_scale",
    "triangulate_tracks",
    "verify_pairs",
]
