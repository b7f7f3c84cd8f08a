"""Exhaustive descriptor matching over all image pairs."""

import logging
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..errors import InvalidInputError
from ..parallel import ordered_map

logger = logging.getLogger(__name__)

RATIO_THRESHOLD = 0.8


@dataclass
class MatchSet:
    """Mutual-best, ratio-tested matches of one unordered image pair.

    Attributes:
        image_pair: (id_a, id_b) with id_a < id_b.
        indices: (M, 2) int array; column 0 indexes image_a keypoints,
            column 1 image_b keypoints.
        distances: (M,) descriptor L2 distances.
    """

    image_pair: tuple
    indices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    distances: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.indices)

    def swapped(self) -> "MatchSet":
        return MatchSet(
            image_pair=(self.image_pair[1], self.image_pair[0]),
            indices=self.indices[:, ::-1].copy(),
            distances=self.distances.copy(),
        )


def match_pair(
    desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = RATIO_THRESHOLD
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor matches passing the ratio test and cross-check.

    Descriptors are unit-norm, so squared L2 distance is 2 - 2 * dot.

    Returns:
        (indices (M, 2), distances (M,)).
    """
    if len(desc_a) == 0 or len(desc_b) == 0:
        return np.zeros((0, 2), np.int64), np.zeros(0)
    sim = desc_a.astype(np.float32) @ desc_b.astype(np.float32).T
    d2 = np.maximum(2.0 - 2.0 * sim.astype(np.float64), 0.0)

    best_b = np.argmin(d2, axis=1)
    rows = np.arange(len(desc_a))
    d1 = d2[rows, best_b]
    if d2.shape[1] >= 2:
        tmp = d2.copy()
        tmp[rows, best_b] = np.inf
        d2nd = np.min(tmp, axis=1)
    else:
        d2nd = np.full(len(desc_a), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        pass_ratio = np.sqrt(d1) < ratio * np.sqrt(d2nd)

    best_a_of_b = np.argmin(d2, axis=0)
    mutual = best_a_of_b[best_b] == rows

    keep = pass_ratio & mutual
    idx = np.stack([rows[keep], best_b[keep]], axis=1).astype(np.int64)
    return idx, np.sqrt(d1[keep])


def match_exhaustive(
    descriptor_sets: list, ratio: float = RATIO_THRESHOLD
) -> list:
    """MatchSets for every unordered pair of images (C(N,2) sets).

    Args:
        descriptor_sets: Per-image (N_i, 128) descriptor arrays, indexed by
            image id.

    Returns:
        List of MatchSet ordered by (id_a, id_b); pairs with no surviving
        matches are present with empty arrays.
    """
    n = len(descriptor_sets)
    if n < 2:
        raise InvalidInputError("exhaustive matching needs at least 2 images")
    pairs = list(combinations(range(n), 2))

    def run(pair):
        a, b = pair
        idx, dist = match_pair(descriptor_sets[a], descriptor_sets[b], ratio)
        return MatchSet(image_pair=(a, b), indices=idx, distances=dist)

    results = ordered_map(run, pairs)
    total = sum(len(m) for m in results)
    logger.info("matched %d pairs, %d total correspondences", len(pairs), total)
    return results
