"""Region descriptors and one-to-one object association between two states."""

from collections import namedtuple
from typing import Any, Dict, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import EmptyMask

HISTOGRAM_BINS = 6
DESCRIPTOR_SIZE = 3 * HISTOGRAM_BINS + 6
DEFAULT_TAU_MATCH = 0.5
_MOMENTS = ((2, 0), (0, 2), (1, 1), (2, 1))

RegionDescriptor = namedtuple("RegionDescriptor", ["region_id", "vector"])


class MatchResult(namedtuple("MatchResult", ["moved", "removed", "added"])):
    """Partition of previous and current regions.

    :param moved: ``(prev_id, curr_id)`` pairs
    :param removed: previous region ids without a partner
    :param added: current region ids without a partner
    """

    __slots__ = ()

    def to_dict(self):
        # type: () -> Dict[str, Any]
        return {
            "moved": [[int(a), int(b)] for a, b in self.moved],
            "removed": [int(a) for a in self.removed],
            "added": [int(b) for b in self.added],
        }


def region_descriptor(image, mask, region_id=0):
    # type: (np.ndarray, np.ndarray, Any) -> RegionDescriptor
    """Color histogram, area, box aspect and shape moments of a masked region.

    :raises EmptyMask: the mask selects no pixel
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if not count:
        raise EmptyMask(f"Region {region_id} has an empty mask.")
    pixels = np.clip(np.asarray(image, dtype=np.float64)[mask], 0.0, 1.0)
    histograms = []
    for channel in range(3):
        hist, _ = np.histogram(pixels[:, channel], bins=HISTOGRAM_BINS, range=(0.0, 1.0))
        histograms.append(hist / float(count))

    rows, columns = np.nonzero(mask)
    width = columns.max() - columns.min() + 1
    height = rows.max() - rows.min() + 1
    x = columns - columns.mean()
    y = rows - rows.mean()
    moments = [
        np.sum(x ** p * y ** q) / count ** (1.0 + (p + q) / 2.0) for p, q in _MOMENTS
    ]
    shape = [count / float(mask.size), width / float(width + height)] + moments
    vector = np.concatenate(histograms + [np.asarray(shape)])
    return RegionDescriptor(region_id, vector / np.linalg.norm(vector))


def mean_descriptor(descriptors, region_id=None):
    # type: (Sequence[RegionDescriptor], Any) -> RegionDescriptor
    """Unit-norm average of several views of the same region."""
    vector = np.mean([d.vector for d in descriptors], axis=0)
    norm = np.linalg.norm(vector)
    if norm > 0:
        vector = vector / norm
    return RegionDescriptor(descriptors[0].region_id if region_id is None else region_id, vector)


def _optimum(cost):
    # type: (np.ndarray) -> float
    """Minimum total cost of a full assignment of the smaller side."""
    if not cost.size:
        return 0.0
    rows, columns = linear_sum_assignment(cost)
    return float(cost[rows, columns].sum())


def _lexicographic(cost):
    # type: (np.ndarray) -> List[int]
    """Optimal assignment choosing, row by row, the smallest feasible column."""
    n, m = cost.shape
    target = _optimum(cost)
    rows = list(range(n))
    columns = list(range(m))
    result = []  # type: List[int]
    spent = 0.0
    for row in range(n):
        rows.remove(row)
        for column in list(columns):
            rest = [c for c in columns if c != column]
            total = spent + cost[row, column] + _optimum(cost[np.ix_(rows, rest)])
            if total <= target + 1e-9 * max(1.0, abs(target)):
                result.append(column)
                columns.remove(column)
                spent += cost[row, column]
                break
    return result


def hungarian(cost):
    # type: (Any) -> List[Tuple[int, int]]
    """Minimum-cost one-to-one assignment of size ``min(n, m)``.

    Among optimal assignments the one whose columns, read row by row, are
    smallest is returned; for tall matrices the rule applies to the transpose.
    Rows or columns in excess stay unassigned.

    :return: ``(row, column)`` pairs sorted by row
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"Cost must be a matrix, got shape {cost.shape}.")
    if not np.all(np.isfinite(cost)):
        raise ValueError("Costs must be finite.")
    n, m = cost.shape
    if not n or not m:
        return []
    if n <= m:
        return [(row, column) for row, column in enumerate(_lexicographic(cost))]
    pairs = [(row, column) for column, row in enumerate(_lexicographic(cost.T))]
    return sorted(pairs)


def associate(prev, curr, tau_match=DEFAULT_TAU_MATCH):
    # type: (Sequence[RegionDescriptor], Sequence[RegionDescriptor], float) -> MatchResult
    """Match regions by cosine similarity; pairs below ``tau_match`` split apart."""
    if not 0.0 < tau_match < 1.0:
        raise ValueError(f"tau_match must lie in (0, 1), got {tau_match}.")
    if not prev or not curr:
        return MatchResult([], [d.region_id for d in prev], [d.region_id for d in curr])
    similarity = np.array([d.vector for d in prev]) @ np.array([d.vector for d in curr]).T
    moved = []
    matched_prev, matched_curr = set(), set()
    for row, column in hungarian(1.0 - similarity):
        if similarity[row, column] >= tau_match:
            moved.append((prev[row].region_id, curr[column].region_id))
            matched_prev.add(row)
            matched_curr.add(column)
    removed = [d.region_id for i, d in enumerate(prev) if i not in matched_prev]
    added = [d.region_id for j, d in enumerate(curr) if j not in matched_curr]
    return MatchResult(moved, removed, added)
