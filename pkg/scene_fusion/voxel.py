"""Voxel occupancy index, DDA ray traversal, visibility and fill sets.

All grids taking part in one set operation must share ``origin`` and
``voxel_size``; the fusion pipeline pins both to the state-0 scene.
"""

from collections import namedtuple
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple  # pylint: disable=unused-import

import numpy as np
from scipy import ndimage

from .exceptions import GridFrameMismatch
from .geom import Camera, pixel_rays
from .scene import GaussianScene, ObjectSubset
from .utils import as_points

DEFAULT_VOXEL_SIZE = 0.05
START_NUDGE = 1e-9

Voxel = Tuple[int, int, int]

VisibilityMask = namedtuple("VisibilityMask", ["visible"])


class VoxelGrid(object):
    """Occupied voxels of a point set and the primitives each one hosts.

    :param origin: world position of the corner of voxel ``(0, 0, 0)``
    :param float voxel_size: edge length in meters
    :param dict voxel_to_primitives: voxel triple -> ascending primitive indices
    """

    def __init__(self, origin, voxel_size, voxel_to_primitives):
        # type: (Any, float, Dict[Voxel, Tuple[int, ...]]) -> None
        if voxel_size <= 0:
            raise ValueError(f"voxel_size must be positive, got {voxel_size}.")
        self.origin = np.asarray(origin, dtype=np.float64).reshape(3).copy()
        self.origin.setflags(write=False)
        self.voxel_size = float(voxel_size)
        self.voxel_to_primitives = dict(voxel_to_primitives)
        self.occupied = frozenset(self.voxel_to_primitives)  # type: FrozenSet[Voxel]

    def __len__(self):
        # type: () -> int
        return len(self.occupied)

    def __repr__(self):
        # type: () -> str
        return f"VoxelGrid(voxels={len(self)}, voxel_size={self.voxel_size})"

    def same_frame(self, other):
        # type: (VoxelGrid) -> bool
        return self.voxel_size == other.voxel_size and np.array_equal(self.origin, other.origin)

    def indices(self):
        # type: () -> np.ndarray
        """Occupied voxels as a lexicographically sorted ``(K, 3)`` array."""
        if not self.occupied:
            return np.zeros((0, 3), dtype=np.int64)
        return np.array(sorted(self.occupied), dtype=np.int64)

    def voxel_of(self, points):
        # type: (Any) -> np.ndarray
        return np.floor((as_points(points) - self.origin) / self.voxel_size).astype(np.int64)

    def dense(self):
        # type: () -> Tuple[np.ndarray, np.ndarray]
        """``(low corner index, boolean occupancy box)`` tightly enclosing the grid."""
        keys = self.indices()
        if not len(keys):
            return np.zeros(3, dtype=np.int64), np.zeros((0, 0, 0), dtype=bool)
        low = keys.min(axis=0)
        box = np.zeros(tuple(keys.max(axis=0) - low + 1), dtype=bool)
        local = keys - low
        box[local[:, 0], local[:, 1], local[:, 2]] = True
        return low, box


def voxelize(points, voxel_size=DEFAULT_VOXEL_SIZE, origin=(0.0, 0.0, 0.0), indices=None):
    # type: (Any, float, Any, Optional[Any]) -> VoxelGrid
    """Bin points into voxels ``floor((p - origin) / voxel_size)``.

    :param indices: primitive index of each point, ``range(len(points))`` by default
    """
    points = as_points(points)
    if voxel_size <= 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}.")
    if indices is None:
        indices = np.arange(len(points))
    indices = np.asarray(indices, dtype=np.int64)
    keys = np.floor((points - np.asarray(origin, dtype=np.float64)) / voxel_size).astype(np.int64)
    mapping = {}  # type: Dict[Voxel, List[int]]
    for key, index in zip(map(tuple, keys.tolist()), indices.tolist()):
        mapping.setdefault(key, []).append(index)
    return VoxelGrid(origin, voxel_size, {key: tuple(sorted(value)) for key, value in mapping.items()})


def voxelize_scene(scene, voxel_size=DEFAULT_VOXEL_SIZE, origin=(0.0, 0.0, 0.0), subset=None):
    # type: (GaussianScene, float, Any, Optional[ObjectSubset]) -> VoxelGrid
    """Voxelize a whole scene or one subset of it, keeping scene indices."""
    if subset is None:
        return voxelize(scene.positions, voxel_size, origin)
    return voxelize(scene.positions[subset.indices], voxel_size, origin, subset.indices)


def dda_traverse(start, direction, length, voxel_size, origin=(0.0, 0.0, 0.0)):
    # type: (Any, Any, float, float, Any) -> List[Voxel]
    """Voxels crossed by the segment ``start + t * direction``, ``0 <= t <= length``, in order."""
    position = (np.asarray(start, dtype=np.float64) - np.asarray(origin, dtype=np.float64)) / voxel_size
    direction = np.asarray(direction, dtype=np.float64) / voxel_size
    cell = [int(value) for value in np.floor(position)]
    step = [0, 0, 0]
    t_max = [np.inf] * 3
    t_delta = [np.inf] * 3
    for axis in range(3):
        if direction[axis] > 0:
            step[axis] = 1
            t_max[axis] = (cell[axis] + 1 - position[axis]) / direction[axis]
            t_delta[axis] = 1.0 / direction[axis]
        elif direction[axis] < 0:
            step[axis] = -1
            t_max[axis] = (cell[axis] - position[axis]) / direction[axis]
            t_delta[axis] = -1.0 / direction[axis]

    visited = [tuple(cell)]  # type: List[Voxel]
    while True:
        axis = int(np.argmin(t_max))
        if t_max[axis] > length:
            return visited
        cell[axis] += step[axis]
        t_max[axis] += t_delta[axis]
        visited.append((cell[0], cell[1], cell[2]))


def _first_hits(box, origins, directions):
    # type: (np.ndarray, np.ndarray, np.ndarray) -> np.ndarray
    """First occupied cell of each ray in box coordinates, ``-1`` rows for misses."""
    shape = np.array(box.shape, dtype=np.float64)
    count = len(origins)
    hits = np.full((count, 3), -1, dtype=np.int64)
    flat = directions == 0
    inside = (origins >= 0) & (origins <= shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        inverse = 1.0 / directions
        near = -origins * inverse
        far = (shape - origins) * inverse
        low = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(near, far))
        high = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(near, far))
    enter = np.maximum(low.max(axis=1), 0.0)
    leave = high.min(axis=1)
    active = leave >= enter
    start = origins + (enter + START_NUDGE)[:, None] * directions
    cell = np.clip(np.floor(start).astype(np.int64), 0, np.array(box.shape) - 1)
    step = np.sign(directions).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        boundary = cell + (step > 0)
        t_max = np.where(step != 0, (boundary - start) * inverse, np.inf)
        t_delta = np.where(step != 0, np.abs(inverse), np.inf)
    limit = np.array(box.shape, dtype=np.int64)
    while np.any(active):
        live = np.nonzero(active)[0]
        cells = cell[live]
        occupied = box[cells[:, 0], cells[:, 1], cells[:, 2]]
        hits[live[occupied]] = cells[occupied]
        active[live[occupied]] = False
        live = live[~occupied]
        axis = np.argmin(t_max[live], axis=1)
        cell[live, axis] += step[live, axis]
        t_max[live, axis] += t_delta[live, axis]
        escaped = np.any((cell[live] < 0) | (cell[live] >= limit), axis=1)
        active[live[escaped]] = False
    return hits[hits[:, 0] >= 0]


def visibility(grid, cams, ray_stride=1):
    # type: (VoxelGrid, Sequence[Camera], int) -> VisibilityMask
    """Occupied voxels that are the first hit of at least one pixel ray.

    Rays go through every ``ray_stride``-th pixel center of every camera.
    """
    if ray_stride < 1:
        raise ValueError(f"ray_stride must be at least 1, got {ray_stride}.")
    low, box = grid.dense()
    if not box.size:
        return VisibilityMask(frozenset())
    visible = set()  # type: set
    for cam in cams:
        origins, directions = pixel_rays(cam, ray_stride)
        local = (origins - grid.origin) / grid.voxel_size - low
        hits = _first_hits(box, local, directions)
        visible.update(map(tuple, (hits + low).tolist()))
    return VisibilityMask(frozenset(visible))


def _check_frames(*grids):
    # type: (*VoxelGrid) -> None
    reference = grids[0]
    for grid in grids[1:]:
        if not reference.same_frame(grid):
            raise GridFrameMismatch(
                f"Grid frames differ: origin {reference.origin.tolist()} size "
                f"{reference.voxel_size} vs origin {grid.origin.tolist()} size {grid.voxel_size}."
            )


def fill_set(v_current, v_obj_prev, v_recurrent):
    # type: (VoxelGrid, VoxelGrid, VoxelGrid) -> FrozenSet[Voxel]
    """Voxels observed in the current state but empty in the recurrent scene.

    ``v_obj_prev`` only takes part in the frame check.

    :raises GridFrameMismatch: grids on different lattices
    """
    _check_frames(v_current, v_obj_prev, v_recurrent)
    return v_current.occupied - v_recurrent.occupied


def primitives_in(grid, voxels):
    # type: (VoxelGrid, Iterable[Voxel]) -> List[int]
    """Ascending, duplicate-free primitive indices hosted by ``voxels``."""
    found = set()  # type: set
    for voxel in voxels:
        found.update(grid.voxel_to_primitives.get(tuple(voxel), ()))
    return sorted(found)


def connected_components(grid):
    # type: (VoxelGrid) -> List[FrozenSet[Voxel]]
    """26-connected clusters of occupied voxels, in raster order of their first voxel."""
    low, box = grid.dense()
    if not box.size:
        return []
    labels, count = ndimage.label(box, structure=np.ones((3, 3, 3), dtype=bool))
    components = []
    for label in range(1, count + 1):
        cells = np.argwhere(labels == label) + low
        components.append(frozenset(map(tuple, cells.tolist())))
    return components


def grid_to_text(grid, voxels=None):
    # type: (VoxelGrid, Optional[Iterable[Voxel]]) -> str
    """Frame header followed by one ``i j k`` line per voxel, sorted."""
    keys = sorted(grid.occupied if voxels is None else set(map(tuple, voxels)))
    x, y, z = grid.origin.tolist()
    lines = [f"origin {x!r} {y!r} {z!r} size {grid.voxel_size!r}"]
    lines.extend(f"{i} {j} {k}" for i, j, k in keys)
    return "\n".join(lines) + "\n"


def save_grid(grid, path, voxels=None):
    # type: (VoxelGrid, str, Optional[Iterable[Voxel]]) -> None
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(grid_to_text(grid, voxels))
