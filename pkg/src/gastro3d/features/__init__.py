from .cache import FeatureCache, load_features, save_features
from .matching import MatchSet, match_exhaustive, match_pair
from .sift import Keypoint, detect_and_describe, keypoint_coords

__all__ = [
    "FeatureCache",
    "Keypoint",
    "MatchSet",
    "detect_and_describe",
    "keypoint_coords",
    "load_features",
    "match_exhaustive",
    "match_pair",
    "save_features",
]
