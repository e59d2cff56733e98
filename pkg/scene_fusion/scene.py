"""Gaussian scene container, object subsets, mask segmentation and ``.gsc`` files."""

from collections import namedtuple
from typing import Any, Iterable, List, Optional, Sequence  # pylint: disable=unused-import

import numpy as np

from .exceptions import EmptySelection, InvalidScene, SceneFormatError
from .geom import Camera, RigidTransform, project_points, transform_point

UNLABELED = -1
SCENE_EXTENSION = ".gsc"
_FIELDS_PER_RECORD = 9

GaussianPrimitive = namedtuple(
    "GaussianPrimitive", ["position", "scale", "color", "opacity", "instance_id"]
)


class ObjectSubset(namedtuple("ObjectSubset", ["object_id", "indices"])):
    """Indices of the primitives forming one object, ascending and unique."""

    __slots__ = ()

    def __new__(cls, object_id, indices):
        # type: (int, Any) -> ObjectSubset
        indices = np.unique(np.asarray(indices, dtype=np.int64).ravel())
        indices.setflags(write=False)
        return super(ObjectSubset, cls).__new__(cls, int(object_id), indices)

    def __len__(self):
        # type: () -> int
        return len(self.indices)

    def validate(self, size):
        # type: (int) -> None
        if len(self.indices) and (self.indices[0] < 0 or self.indices[-1] >= size):
            raise InvalidScene(
                f"Subset of object {self.object_id} indexes outside of a scene of {size}."
            )


class GaussianScene(object):
    """Ordered set of isotropic Gaussian primitives stored as parallel arrays.

    :param positions: ``(N, 3)`` centers in meters
    :param scales: ``(N,)`` isotropic standard deviations, positive
    :param colors: ``(N, 3)`` RGB in ``[0, 1]``
    :param opacities: ``(N,)`` in ``(0, 1]``
    :param instance_ids: ``(N,)`` object labels, ``-1`` when unlabeled
    :param int state_index: discrete state the scene represents
    """

    def __init__(
        self,
        positions,  # type: Any
        scales,  # type: Any
        colors,  # type: Any
        opacities,  # type: Any
        instance_ids=None,  # type: Any
        state_index=0,  # type: int
        validate=True,  # type: bool
    ):
        # type: (...) -> None
        self.positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        count = len(self.positions)
        self.scales = np.asarray(scales, dtype=np.float64).reshape(count)
        self.colors = np.asarray(colors, dtype=np.float64).reshape(count, 3)
        self.opacities = np.asarray(opacities, dtype=np.float64).reshape(count)
        if instance_ids is None:
            instance_ids = np.full(count, UNLABELED)
        self.instance_ids = np.asarray(instance_ids, dtype=np.int64).reshape(count)
        self.state_index = int(state_index)
        if validate:
            self.validate()

    def __len__(self):
        # type: () -> int
        return len(self.positions)

    def __repr__(self):
        # type: () -> str
        return f"GaussianScene(count={len(self)}, state_index={self.state_index})"

    @classmethod
    def empty(cls, state_index=0):
        # type: (int) -> GaussianScene
        return cls(np.zeros((0, 3)), [], np.zeros((0, 3)), [], [], state_index)

    @classmethod
    def from_primitives(cls, primitives, state_index=0):
        # type: (Sequence[GaussianPrimitive], int) -> GaussianScene
        if not primitives:
            return cls.empty(state_index)
        return cls(
            positions=[p.position for p in primitives],
            scales=[p.scale for p in primitives],
            colors=[p.color for p in primitives],
            opacities=[p.opacity for p in primitives],
            instance_ids=[
                UNLABELED if p.instance_id is None else p.instance_id
                for p in primitives
            ],
            state_index=state_index,
        )

    def validate(self):
        # type: () -> None
        if not np.all(np.isfinite(self.positions)):
            raise InvalidScene("Primitive positions must be finite.")
        if np.any(self.scales <= 0):
            raise InvalidScene("Primitive scales must be positive.")
        if np.any(self.opacities <= 0) or np.any(self.opacities > 1):
            raise InvalidScene("Primitive opacities must lie in (0, 1].")
        if np.any(self.colors < 0) or np.any(self.colors > 1):
            raise InvalidScene("Primitive colors must lie in [0, 1].")

    def primitive(self, index):
        # type: (int) -> GaussianPrimitive
        label = int(self.instance_ids[index])
        return GaussianPrimitive(
            position=self.positions[index].copy(),
            scale=float(self.scales[index]),
            color=self.colors[index].copy(),
            opacity=float(self.opacities[index]),
            instance_id=None if label == UNLABELED else label,
        )

    def copy(self, state_index=None):
        # type: (Optional[int]) -> GaussianScene
        return GaussianScene(
            self.positions.copy(),
            self.scales.copy(),
            self.colors.copy(),
            self.opacities.copy(),
            self.instance_ids.copy(),
            self.state_index if state_index is None else state_index,
            validate=False,
        )

    def subset(self, indices):
        # type: (Any) -> GaussianScene
        """Scene made of the given rows, in the given order."""
        indices = np.asarray(indices, dtype=np.int64)
        return GaussianScene(
            self.positions[indices],
            self.scales[indices],
            self.colors[indices],
            self.opacities[indices],
            self.instance_ids[indices],
            self.state_index,
            validate=False,
        )

    def concat(self, other):
        # type: (GaussianScene) -> GaussianScene
        """Rows of ``self`` followed by rows of ``other``."""
        return GaussianScene(
            np.concatenate([self.positions, other.positions]),
            np.concatenate([self.scales, other.scales]),
            np.concatenate([self.colors, other.colors]),
            np.concatenate([self.opacities, other.opacities]),
            np.concatenate([self.instance_ids, other.instance_ids]),
            self.state_index,
            validate=False,
        )

    def delete(self, indices):
        # type: (Any) -> GaussianScene
        keep = np.ones(len(self), dtype=bool)
        keep[np.asarray(indices, dtype=np.int64)] = False
        return self.subset(np.nonzero(keep)[0])

    def bounds(self):
        # type: () -> np.ndarray
        """``(2, 3)`` array of min and max corners of the centers."""
        if not len(self):
            return np.zeros((2, 3))
        return np.stack([self.positions.min(axis=0), self.positions.max(axis=0)])

    def extent(self):
        # type: () -> float
        """Diagonal of the bounding box of the centers."""
        low, high = self.bounds()
        return float(np.linalg.norm(high - low))

    def object_ids(self):
        # type: () -> List[int]
        labels = np.unique(self.instance_ids)
        return [int(label) for label in labels if label != UNLABELED]

    def membership(self, object_id):
        # type: (int) -> ObjectSubset
        return ObjectSubset(object_id, np.nonzero(self.instance_ids == object_id)[0])

    def equals(self, other):
        # type: (GaussianScene) -> bool
        """Bit-exact equality of all fields."""
        return (
            self.state_index == other.state_index
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.scales, other.scales)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.opacities, other.opacities)
            and np.array_equal(self.instance_ids, other.instance_ids)
        )


def segment_by_masks(scene, masks, cams, vote_fraction=0.6, object_id=0):
    # type: (GaussianScene, Sequence[np.ndarray], Sequence[Camera], float, int) -> ObjectSubset
    """Select primitives whose projected centers fall inside per-view masks.

    A primitive is kept when its center lands inside the mask in at least
    ``vote_fraction`` of the views where it projects inside the image.

    :raises EmptySelection: nothing qualifies
    """
    if len(masks) != len(cams):
        raise ValueError(f"Got {len(masks)} masks for {len(cams)} cameras.")
    if not 0 < vote_fraction <= 1:
        raise ValueError(f"vote_fraction must lie in (0, 1], got {vote_fraction}.")
    inside = np.zeros(len(scene), dtype=np.int64)
    seen = np.zeros(len(scene), dtype=np.int64)
    for mask, cam in zip(masks, cams):
        mask = np.asarray(mask, dtype=bool)
        u, v, _, valid = project_points(cam, scene.positions)
        valid &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        columns = np.floor(u[valid]).astype(np.int64)
        rows = np.floor(v[valid]).astype(np.int64)
        seen[valid] += 1
        inside[np.nonzero(valid)[0]] += mask[rows, columns]
    selected = (seen > 0) & (inside >= vote_fraction * seen)
    if not np.any(selected):
        raise EmptySelection("No primitive projects inside the masks.")
    return ObjectSubset(object_id, np.nonzero(selected)[0])


def apply_transform(scene, subset, transform):
    # type: (GaussianScene, ObjectSubset, RigidTransform) -> GaussianScene
    """Copy of ``scene`` with the subset's centers moved by ``transform``."""
    subset.validate(len(scene))
    moved = scene.copy()
    if len(subset.indices):
        moved.positions[subset.indices] = transform_point(
            transform, scene.positions[subset.indices]
        )
    return moved


def save_scene(scene, path):
    # type: (GaussianScene, str) -> None
    """Write ``scene`` as text; floats keep their shortest exact repr."""
    lines = [f"{len(scene)} {scene.state_index}"]
    for index in range(len(scene)):
        values = list(scene.positions[index]) + [scene.scales[index]]
        values += list(scene.colors[index]) + [scene.opacities[index]]
        fields = [repr(float(value)) for value in values]
        fields.append(str(int(scene.instance_ids[index])))
        lines.append(" ".join(fields))
    with open(path, "w", encoding="utf-8") as handle:
        handle.write("\n".join(lines) + "\n")


def load_scene(path):
    # type: (str) -> GaussianScene
    """Parse a scene written by :func:`save_scene`.

    :raises SceneFormatError: malformed header or record, with line and field
    """
    with open(path, "r", encoding="utf-8") as handle:
        lines = handle.read().splitlines()
    if not lines:
        raise SceneFormatError(f"{path}: empty scene file.", line=1, field="header")
    header = lines[0].split()
    if len(header) != 2:
        raise SceneFormatError(
            f"{path}:1: header must hold count and state_index.", line=1, field="header"
        )
    try:
        count, state_index = int(header[0]), int(header[1])
    except ValueError as error:
        raise SceneFormatError(
            f"{path}:1: header is not integral.", line=1, field="header", original_exc=error
        )
    records = lines[1 : 1 + count]
    if len(records) < count:
        raise SceneFormatError(
            f"{path}: record {len(records)} (line {len(records) + 2}) missing, "
            f"expected {count} primitives.",
            line=len(records) + 2,
            field="record",
        )
    names = ["x", "y", "z", "scale", "r", "g", "b", "opacity", "instance_id"]
    data = np.empty((count, _FIELDS_PER_RECORD - 1))
    labels = np.empty(count, dtype=np.int64)
    for number, record in enumerate(records):
        fields = record.split()
        line = number + 2
        if len(fields) != _FIELDS_PER_RECORD:
            raise SceneFormatError(
                f"{path}:{line}: record {number} has {len(fields)} fields, "
                f"expected {_FIELDS_PER_RECORD}.",
                line=line,
                field=names[min(len(fields), _FIELDS_PER_RECORD - 1)],
            )
        for column, value in enumerate(fields[:-1]):
            try:
                data[number, column] = float(value)
            except ValueError as error:
                raise SceneFormatError(
                    f"{path}:{line}: record {number} field {names[column]} is not a number.",
                    line=line,
                    field=names[column],
                    original_exc=error,
                )
        try:
            labels[number] = int(fields[-1])
        except ValueError as error:
            raise SceneFormatError(
                f"{path}:{line}: record {number} field instance_id is not an integer.",
                line=line,
                field="instance_id",
                original_exc=error,
            )
    try:
        return GaussianScene(
            data[:, 0:3], data[:, 3], data[:, 4:7], data[:, 7], labels, state_index
        )
    except Exception as error:
        raise SceneFormatError(f"{path}: {error}", field="values", original_exc=error)
