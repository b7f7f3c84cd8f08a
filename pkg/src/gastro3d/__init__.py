"""Whole-cavity 3D reconstruction from monocular fisheye image sequences.

Pipeline stages: preprocessing (channel split, dedup), SIFT features and
exhaustive matching, incremental structure-from-motion with bundle
adjustment, point-cloud filtering, screened Poisson meshing, multi-view
texturing, and a synthetic ground-truth benchmark with quantitative
evaluation. The ``gastro3d`` CLI orchestrates all stages.
"""

__version__ = "0.1.0"
