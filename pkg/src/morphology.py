"""
מורפולוגיות: עץ איברים, מאפייני הקשר לכל איבר וסדר DFS קנוני
"""
import logging
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.data_schemas import JointType

logger = logging.getLogger(__name__)

N_MAX = 12
CONTEXT_DIM = 15

# קבועי תקנון קבועים לכל עמודה: (x - offset) / scale
# סדר: מיקום(3), אוריינטציה(3), log מסה, רדיוס, אורך, one-hot מפרק(3), טווח(2), log gear
FEATURE_OFFSET = np.array([
    0.0, 0.0, 0.0,
    0.0, 0.0, 0.0,
    0.46,
    0.06, 0.3,
    0.0, 0.0, 0.0,
    -0.6, 0.6,
    4.8,
])
FEATURE_SCALE = np.array([
    0.5, 0.5, 0.5,
    np.pi, np.pi, np.pi,
    0.7,
    0.03, 0.15,
    1.0, 1.0, 1.0,
    0.5, 0.5,
    0.6,
])

_JOINT_INDEX = {JointType.HINGE_X: 0, JointType.HINGE_Y: 1, JointType.HINGE_Z: 2}


class TopologyError(ValueError):
    """עץ לא חוקי: מעגל, כמה שורשים או הורה לא קיים"""


class MorphologyFormatError(ValueError):
    """קובץ מורפולוגיה פגום"""


class LimbContext(BaseModel):
    """פרמטרי החומרה של איבר יחיד"""
    model_config = ConfigDict(frozen=True, allow_inf_nan=False)

    rel_position: Tuple[float, float, float]
    orientation: Tuple[float, float, float]
    mass: float = Field(..., gt=0)
    shape_params: Tuple[float, float]
    joint_type: JointType
    joint_range: Tuple[float, float]
    motor_gear: float = Field(..., gt=0)

    @field_validator("shape_params")
    @classmethod
    def validate_shape(cls, v):
        if min(v) <= 0:
            raise ValueError("shape_params must be strictly positive")
        return v

    @field_validator("joint_range")
    @classmethod
    def validate_range(cls, v):
        if v[0] > v[1]:
            raise ValueError("joint_range requires lo <= hi")
        return v


def dfs_order(parents: Sequence[int]) -> List[int]:
    """מעבר DFS מסודר (preorder), ילדים בסדר אינדקס עולה, השורש ראשון"""
    n = len(parents)
    if n == 0:
        raise TopologyError("A morphology needs at least one limb")
    roots = [i for i, p in enumerate(parents) if p == -1]
    if len(roots) != 1:
        raise TopologyError(f"Expected exactly one root, found {len(roots)}")

    children: List[List[int]] = [[] for _ in range(n)]
    for i, p in enumerate(parents):
        if p == -1:
            continue
        if not 0 <= p < n or p == i:
            raise TopologyError(f"Limb {i} has invalid parent {p}")
        children[p].append(i)

    order: List[int] = []
    stack = [roots[0]]
    while stack:
        node = stack.pop()
        order.append(node)
        stack.extend(reversed(children[node]))

    if len(order) != n:
        raise TopologyError("Parents contain a cycle or a disconnected limb")
    return order


class Morphology(BaseModel):
    """עץ איברים עם הקשר לכל איבר"""
    model_config = ConfigDict(frozen=True)

    id: str = Field(..., min_length=1, pattern=r"^\S+$")
    parents: Tuple[int, ...]
    limbs: Tuple[LimbContext, ...]
    dfs_order: Tuple[int, ...] = ()

    @model_validator(mode="before")
    @classmethod
    def fill_dfs_order(cls, data):
        if isinstance(data, dict) and not data.get("dfs_order") and data.get("parents") is not None:
            data = dict(data)
            data["dfs_order"] = tuple(dfs_order(list(data["parents"])))
        return data

    @model_validator(mode="after")
    def validate_tree(self):
        if len(self.parents) != len(self.limbs):
            raise ValueError(f"{len(self.parents)} parents for {len(self.limbs)} limbs")
        if not 1 <= len(self.limbs) <= N_MAX:
            raise ValueError(f"Limb count {len(self.limbs)} outside [1, {N_MAX}]")
        if tuple(dfs_order(self.parents)) != tuple(self.dfs_order):
            raise ValueError("dfs_order is not the canonical depth-first traversal")
        return self

    @property
    def limb_count(self) -> int:
        return len(self.limbs)

    @property
    def root(self) -> int:
        return self.dfs_order[0]

    def children(self, index: int) -> List[int]:
        return [i for i, p in enumerate(self.parents) if p == index]

    def leaves(self) -> List[int]:
        """איברים שאינם שורש ואין להם ילדים"""
        has_child = {p for p in self.parents if p >= 0}
        return [i for i in range(self.limb_count) if self.parents[i] != -1 and i not in has_child]


def absolute_positions(morphology: Morphology) -> np.ndarray:
    """מיקום מצטבר מהשורש לכל איבר (לפי אינדקס אחסון); השורש בראשית"""
    positions = np.zeros((morphology.limb_count, 3))
    for index in morphology.dfs_order:
        parent = morphology.parents[index]
        if parent == -1:
            continue
        positions[index] = positions[parent] + np.asarray(morphology.limbs[index].rel_position)
    return positions


def context_features(morphology: Morphology, absolute: bool = True) -> np.ndarray:
    """מטריצת מאפייני ההקשר (N x 15) בסדר DFS

    absolute=False משאיר את המיקום היחסי להורה (לאבלציית טרנספורמציית המאפיינים).
    """
    positions = absolute_positions(morphology) if absolute else None
    rows = []
    for index in morphology.dfs_order:
        limb = morphology.limbs[index]
        position = positions[index] if absolute else np.asarray(limb.rel_position)
        joint = np.zeros(3)
        joint[_JOINT_INDEX[limb.joint_type]] = 1.0
        rows.append(np.concatenate([
            position,
            limb.orientation,
            [np.log(limb.mass)],
            limb.shape_params,
            joint,
            limb.joint_range,
            [np.log(limb.motor_gear)],
        ]))
    return (np.vstack(rows) - FEATURE_OFFSET) / FEATURE_SCALE


# ---------------------------------------------------------------------------
# פורמט טקסט

def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def morphology_to_text(morphology: Morphology) -> str:
    lines = [f"morphology {morphology.id} {morphology.limb_count}"]
    for index, (parent, limb) in enumerate(zip(morphology.parents, morphology.limbs)):
        head = [*limb.rel_position, *limb.orientation, limb.mass, *limb.shape_params]
        tail = [*limb.joint_range, limb.motor_gear]
        lines.append(
            f"limb {index} {parent} " + " ".join(_fmt(x) for x in head)
            + f" {limb.joint_type.value} " + " ".join(_fmt(x) for x in tail)
        )
    return "\n".join(lines) + "\n"


def morphology_from_text(text: str) -> Morphology:
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines or len(lines[0]) != 3 or lines[0][0] != "morphology":
        raise MorphologyFormatError("Missing 'morphology <id> <N>' header")
    morph_id = lines[0][1]
    try:
        count = int(lines[0][2])
    except ValueError:
        raise MorphologyFormatError(f"Bad limb count '{lines[0][2]}'") from None
    if len(lines) - 1 != count:
        raise MorphologyFormatError(f"Header declares {count} limbs, found {len(lines) - 1}")

    parents: List[int] = [0] * count
    limbs: List[LimbContext] = [None] * count
    for fields in lines[1:]:
        # limb <index> <parent> rel(3) ori(3) mass radius length <joint> lo hi gear
        if len(fields) != 16 or fields[0] != "limb":
            raise MorphologyFormatError(f"Malformed limb line: {' '.join(fields)}")
        try:
            index, parent = int(fields[1]), int(fields[2])
            numbers = [float(x) for x in fields[3:12]]
            joint = JointType(fields[12])
            low, high, gear = (float(x) for x in fields[13:16])
        except ValueError as e:
            raise MorphologyFormatError(f"Malformed limb line: {e}") from None
        if not 0 <= index < count or limbs[index] is not None:
            raise MorphologyFormatError(f"Bad or duplicate limb index {index}")
        parents[index] = parent
        try:
            limbs[index] = LimbContext(
                rel_position=tuple(numbers[0:3]),
                orientation=tuple(numbers[3:6]),
                mass=numbers[6],
                shape_params=tuple(numbers[7:9]),
                joint_type=joint,
                joint_range=(low, high),
                motor_gear=gear,
            )
        except ValidationError as e:
            raise MorphologyFormatError(f"Invalid limb {index}: {e.errors()[0]['msg']}") from None
    try:
        return Morphology(id=morph_id, parents=tuple(parents), limbs=tuple(limbs))
    except ValidationError as e:
        raise MorphologyFormatError(f"Invalid morphology {morph_id}: {e.errors()[0]['msg']}") from None


def save_morphology(morphology: Morphology, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(morphology_to_text(morphology), encoding="utf-8")
    return path


def load_morphology(path: Union[str, Path]) -> Morphology:
    return morphology_from_text(Path(path).read_text(encoding="utf-8"))


def load_morphology_dir(directory: Union[str, Path]) -> List[Morphology]:
    """טעינת כל קבצי ה-.morph בתיקייה, ממוינים לפי שם"""
    paths = sorted(Path(directory).glob("*.morph"))
    morphologies = [load_morphology(p) for p in paths]
    logger.info(f"Loaded {len(morphologies)} morphologies from {directory}")
    return morphologies
