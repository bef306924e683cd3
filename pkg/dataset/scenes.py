"""
Procedural shape scenes: rasterisation, template captions and QA pairs.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np

from tensor_core.rng import Rng

logger = logging.getLogger(__name__)

SHAPES = ("circle", "square", "triangle")
COLORS: Dict[str, Tuple[int, int, int]] = {
    "red": (255, 0, 0),
    "blue": (0, 0, 255),
    "green": (0, 255, 0),
    "yellow": (255, 255, 0),
    "white": (255, 255, 255),
}
CELLS: Tuple[Tuple[int, int], ...] = ((0, 0), (0, 1), (1, 0), (1, 1))
CELL_NAMES: Dict[Tuple[int, int], str] = {
    (0, 0): "top left",
    (0, 1): "top right",
    (1, 0): "bottom left",
    (1, 1): "bottom right",
}
BACKGROUND = 200
IMAGE_SIZE = 32

# fraction of the cell side
_CIRCLE_RADIUS = 0.35
_SQUARE_HALF = 0.30
_TRIANGLE_HALF = 0.35


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    cell: Tuple[int, int]

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"Unknown shape '{self.shape}'")
        if self.color not in COLORS:
            raise ValueError(f"Unknown color '{self.color}'")
        if self.cell not in CELL_NAMES:
            raise ValueError(f"Cell {self.cell} is outside the 2x2 grid")

    @property
    def where(self) -> str:
        return CELL_NAMES[self.cell]


@dataclass(frozen=True)
class Scene:
    """One to two objects placed in distinct cells of a 2x2 grid."""
    objects: Tuple[SceneObject, ...]
    seed: int

    def __post_init__(self):
        if not 1 <= len(self.objects) <= 2:
            raise ValueError(f"A scene holds 1-2 objects, got {len(self.objects)}")
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ValueError(f"Scene objects share a cell: {cells}")

    def ordered(self) -> List[SceneObject]:
        return sorted(self.objects, key=lambda o: CELLS.index(o.cell))


def random_scene(seed: int) -> Scene:
    rng = Rng(seed)
    count = 1 + rng.integers(0, 2)
    cells = [CELLS[i] for i in rng.permutation(len(CELLS))[:count]]
    objects = tuple(
        SceneObject(shape=rng.choice(SHAPES), color=rng.choice(tuple(COLORS)), cell=cell)
        for cell in cells
    )
    return Scene(objects=objects, seed=seed)


def _object_mask(obj: SceneObject, height: int, width: int) -> np.ndarray:
    cell_h, cell_w = height // 2, width // 2
    cy = obj.cell[0] * cell_h + cell_h / 2
    cx = obj.cell[1] * cell_w + cell_w / 2
    ys, xs = np.mgrid[0:height, 0:width]
    dy = ys + 0.5 - cy
    dx = xs + 0.5 - cx
    side = min(cell_h, cell_w)

    if obj.shape == "circle":
        radius = _CIRCLE_RADIUS * side
        return dy * dy + dx * dx <= radius * radius
    if obj.shape == "square":
        half = _SQUARE_HALF * side
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    # apex-up triangle
    half = _TRIANGLE_HALF * side
    rows_in = (dy >= -half) & (dy <= half)
    return rows_in & (np.abs(dx) <= (dy + half) / 2.0 + 0.5)


def render(scene: Scene, height: int = IMAGE_SIZE, width: int = IMAGE_SIZE) -> np.ndarray:
    """Rasterise a scene to an (H, W, 3) uint8 image on a gray background."""
    image = np.full((height, width, 3), BACKGROUND, dtype=np.uint8)
    for obj in scene.ordered():
        image[_object_mask(obj, height, width)] = COLORS[obj.color]
    return image


def cell_center(cell: Tuple[int, int], height: int = IMAGE_SIZE, width: int = IMAGE_SIZE) -> Tuple[int, int]:
    return cell[0] * (height // 2) + height // 4, cell[1] * (width // 2) + width // 4


def caption_of(scene: Scene) -> List[List[str]]:
    """Two template captions naming every object, its color and its cell."""
    objects = scene.ordered()
    first = " and ".join(f"a {o.color} {o.shape} in the {o.where}" for o in objects)
    second = " and ".join(f"the {o.where} has a {o.color} {o.shape}" for o in objects)
    return [first.split(), second.split()]


def qa_of(scene: Scene) -> Tuple[List[str], List[str], List[str]]:
    """One open-ended question with a single-word answer and 10 annotations."""
    rng = Rng(scene.seed).split("qa")
    objects = scene.ordered()
    target = objects[rng.integers(0, len(objects))]
    shape_is_unique = sum(o.shape == target.shape for o in objects) == 1

    if shape_is_unique and rng.integers(0, 2) == 0:
        question = f"what color is the {target.shape}"
        answer = target.color
    else:
        question = f"what shape is in the {target.where}"
        answer = target.shape
    return question.split(), [answer], [answer] * 10
