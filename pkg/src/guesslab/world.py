"""Symbolic scenes, games and datasets for the referential guessing game.

A scene is a small grid of attributed objects standing in for an image;
a game marks one object as the secret target among 3-6 candidates.
Datasets are generated reproducibly from a seed and stored in a strict
JSON interchange format.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, FormatError, ValidationError

LEXICON_VERSION = "coco38-v1"

# Closed category lexicon (38 entries; first `category_pool_size` are used
# by the generator, the rest exist only as mentionable-but-absent words).
CATEGORIES = (
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train",
    "truck", "boat", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "kite",
    "surfboard", "bottle", "cup", "fork", "knife", "spoon", "bowl",
    "banana", "apple", "pizza", "chair", "couch", "bed", "toilet",
    "laptop", "clock",
)

IRREGULAR_PLURALS = {"person": "people", "bus": "buses", "sheep": "sheep"}

ANIMALS = frozenset(
    {"bird", "cat", "dog", "horse", "sheep", "cow", "elephant", "bear",
     "zebra", "giraffe"}
)

COLORS = ("red", "blue", "green", "yellow", "black", "white", "brown", "gray")
SIZES = ("small", "large")
SIDES = ("left", "right")
ROWBANDS = ("top", "middle", "bottom")
ORDINAL_WORDS = ("first", "second", "third", "fourth", "fifth", "sixth")
COUNT_WORDS = {2: "two", 3: "three", 4: "four", 5: "five"}

# Canvas geometry used for bbox rendering (one grid cell per object).
CELL_W = 100.0
CELL_H = 80.0
BBOX_BY_SIZE = {"large": (72.0, 60.0), "small": (44.0, 36.0)}

MAX_SCENE_OBJECTS = 6  # keeps ordinal vocabulary exhaustive for every scene


def plural_of(category: str) -> str:
    return IRREGULAR_PLURALS.get(category, category + "s")


def category_surface_forms() -> dict[str, str]:
    """Map every singular/plural surface word to its category symbol."""
    forms: dict[str, str] = {}
    for cat in CATEGORIES:
        forms[cat] = cat
        forms[plural_of(cat)] = cat
    return forms


@dataclass(frozen=True)
class SceneObject:
    id: int
    category: str
    color: str
    size: str
    row: int
    col: int
    bbox: tuple[float, float, float, float]

    @property
    def attributes(self) -> dict:
        return {"color": self.color, "size": self.size,
                "row": self.row, "col": self.col}


@dataclass(frozen=True)
class Scene:
    objects: tuple[SceneObject, ...]
    grid: tuple[int, int]  # (rows, cols)

    def object_by_id(self, obj_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise KeyError(obj_id)

    @property
    def categories(self) -> frozenset[str]:
        return frozenset(o.category for o in self.objects)


@lru_cache(maxsize=4096)
def scene_ordinals(scene: Scene) -> dict[int, int]:
    """1-based left-to-right rank of each object (column, then row, then id)."""
    order = sorted(scene.objects, key=lambda o: (o.col, o.row, o.id))
    return {obj.id: i + 1 for i, obj in enumerate(order)}


@dataclass(frozen=True)
class Predicate:
    """A binary property of an object, evaluated within its scene."""

    kind: str
    value: object = None
    parts: tuple["Predicate", ...] = ()

    def holds(self, obj: SceneObject, scene: Scene) -> bool:
        kind = self.kind
        if kind == "category":
            return obj.category == self.value
        if kind == "category_in":
            return obj.category in self.value
        if kind == "color":
            return obj.color == self.value
        if kind == "size":
            return obj.size == self.value
        if kind == "side":
            rows, cols = scene.grid
            left = obj.col * 2 < cols
            return left if self.value == "left" else not left
        if kind == "rowband":
            rows, cols = scene.grid
            if self.value == "top":
                return obj.row == 0
            if self.value == "bottom":
                return obj.row == rows - 1
            return 0 < obj.row < rows - 1
        if kind == "ordinal":
            return scene_ordinals(scene)[obj.id] == self.value
        if kind == "ordinal_max":
            return scene_ordinals(scene)[obj.id] <= self.value
        if kind == "adjacent_category":
            for other in scene.objects:
                if other.id == obj.id or other.category != self.value:
                    continue
                if abs(other.row - obj.row) + abs(other.col - obj.col) == 1:
                    return True
            return False
        if kind == "and":
            return all(p.holds(obj, scene) for p in self.parts)
        if kind == "const":
            return bool(self.value)
        raise ValueError(f"unknown predicate kind {kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "and":
            return "and(" + ",".join(p.name for p in self.parts) + ")"
        if self.kind == "category_in":
            return "category_in(" + "|".join(sorted(self.value)) + ")"
        return f"{self.kind}={self.value}"

    def to_spec(self) -> dict:
        if self.kind == "and":
            return {"kind": "and", "parts": [p.to_spec() for p in self.parts]}
        if self.kind == "category_in":
            return {"kind": "category_in", "values": sorted(self.value)}
        return {"kind": self.kind, "value": self.value}

    @staticmethod
    def from_spec(spec: dict) -> "Predicate":
        kind = spec["kind"]
        if kind == "and":
            return Predicate("and", parts=tuple(
                Predicate.from_spec(p) for p in spec["parts"]))
        if kind == "category_in":
            return Predicate("category_in", value=frozenset(spec["values"]))
        return Predicate(kind, value=spec.get("value"))


@dataclass(frozen=True)
class Game:
    game_id: str
    scene: Scene
    target_id: int
    candidate_ids: tuple[int, ...]

    @property
    def candidates(self) -> tuple[SceneObject, ...]:
        return tuple(self.scene.object_by_id(c) for c in self.candidate_ids)


@dataclass(frozen=True)
class Dataset:
    games: tuple[Game, ...]
    generation_seed: int
    lexicon_version: str


def object_predicates(scene: Scene) -> list[Predicate]:
    """Every askable binary property for this scene, in a fixed order.

    Covers all grammar-instantiable questions grounded in the scene;
    position predicates are listed even when vacuous.
    """
    if not scene.objects:
        raise ValidationError("scene has no objects")
    preds: list[Predicate] = []
    for cat in sorted(scene.categories):
        preds.append(Predicate("category", cat))
    preds.append(Predicate("category_in", ANIMALS))
    for color in sorted({o.color for o in scene.objects}):
        preds.append(Predicate("color", color))
    for size in SIZES:
        preds.append(Predicate("size", size))
    for side in SIDES:
        preds.append(Predicate("side", side))
    for band in ROWBANDS:
        preds.append(Predicate("rowband", band))
    n = len(scene.objects)
    for rank in range(1, n + 1):
        preds.append(Predicate("ordinal", rank))
    for bound in range(2, min(5, n - 1) + 1):
        preds.append(Predicate("ordinal_max", bound))
    for cat in sorted(scene.categories):
        preds.append(Predicate("adjacent_category", cat))
    return preds


def candidates_distinguishable(game: Game) -> bool:
    """True when every candidate pair is separated by some predicate."""
    preds = object_predicates(game.scene)
    cands = game.candidates
    for i in range(len(cands)):
        for j in range(i + 1, len(cands)):
            a, b = cands[i], cands[j]
            if not any(p.holds(a, game.scene) != p.holds(b, game.scene)
                       for p in preds):
                return False
    return True


def _make_bbox(row: int, col: int, size: str) -> tuple[float, float, float, float]:
    w, h = BBOX_BY_SIZE[size]
    x = col * CELL_W + (CELL_W - w) / 2.0
    y = row * CELL_H + (CELL_H - h) / 2.0
    return (x, y, w, h)


def _lexicon_version_string(grid: tuple[int, int]) -> str:
    return f"{LEXICON_VERSION};grid={grid[0]}x{grid[1]}"


def _parse_lexicon_version(version: str) -> tuple[int, int]:
    try:
        name, gridpart = version.split(";grid=")
        rows, cols = gridpart.split("x")
        grid = (int(rows), int(cols))
    except ValueError as exc:
        raise FormatError(f"bad lexicon_version {version!r}") from exc
    if name != LEXICON_VERSION:
        raise FormatError(f"unknown lexicon version {name!r}")
    return grid


def generate_dataset(seed: int, n_games: int, grid: tuple[int, int] = (3, 4),
                     category_pool_size: int = 24) -> Dataset:
    """Reproducibly generate `n_games` winnable games on the given grid.

    A little over half the games force two candidates to share a category
    so that attribute and position questions are needed, not just
    category ones.
    """
    rows, cols = grid
    if n_games < 1:
        raise ConfigurationError("n_games must be >= 1")
    if rows < 1 or cols < 1 or rows * cols < 6:
        raise ConfigurationError("grid must have at least 6 cells")
    if not 1 <= category_pool_size <= len(CATEGORIES):
        raise ConfigurationError(
            f"category_pool_size must be in [1, {len(CATEGORIES)}]")

    pool = CATEGORIES[:category_pool_size]
    rng = np.random.default_rng(seed)
    games: list[Game] = []
    for i in range(n_games):
        game = _generate_game(rng, f"g{seed}-{i:05d}", grid, pool)
        games.append(game)
    return Dataset(games=tuple(games), generation_seed=seed,
                   lexicon_version=_lexicon_version_string(grid))


def _generate_game(rng: np.random.Generator, game_id: str,
                   grid: tuple[int, int], pool: tuple[str, ...]) -> Game:
    rows, cols = grid
    for _ in range(100):
        n_objects = int(rng.integers(4, MAX_SCENE_OBJECTS + 1))
        cells = rng.choice(rows * cols, size=n_objects, replace=False)
        force_dup = bool(rng.random() < 0.55)
        cats = [str(pool[k]) for k in rng.integers(0, len(pool), size=n_objects)]
        if force_dup:
            cats[1] = cats[0]
        objects = []
        for idx in range(n_objects):
            row, col = divmod(int(cells[idx]), cols)
            color = str(COLORS[rng.integers(0, len(COLORS))])
            size = str(SIZES[rng.integers(0, len(SIZES))])
            objects.append(SceneObject(
                id=idx + 1, category=cats[idx], color=color, size=size,
                row=row, col=col, bbox=_make_bbox(row, col, size)))
        scene = Scene(objects=tuple(objects), grid=grid)
        n_candidates = int(rng.integers(3, min(6, n_objects) + 1))
        if force_dup:
            rest = rng.permutation(np.arange(3, n_objects + 1))
            chosen = [1, 2] + [int(v) for v in rest[: n_candidates - 2]]
        else:
            chosen = [int(v) + 1 for v in
                      rng.choice(n_objects, size=n_candidates, replace=False)]
        candidate_ids = tuple(sorted(chosen))
        target_id = int(candidate_ids[rng.integers(0, n_candidates)])
        game = Game(game_id=game_id, scene=scene, target_id=target_id,
                    candidate_ids=candidate_ids)
        if candidates_distinguishable(game):
            return game
    raise ValidationError(f"could not generate a winnable game for {game_id}")


# --- interchange format -------------------------------------------------

_TOP_FIELDS = {"lexicon_version", "generation_seed", "games"}
_GAME_FIELDS = {"game_id", "objects", "target_id", "candidate_ids"}
_OBJECT_FIELDS = {"id", "category", "attributes", "bbox"}
_ATTR_FIELDS = {"color", "size", "row", "col"}


def dataset_to_dict(dataset: Dataset) -> dict:
    return {
        "lexicon_version": dataset.lexicon_version,
        "generation_seed": dataset.generation_seed,
        "games": [
            {
                "game_id": g.game_id,
                "objects": [
                    {"id": o.id, "category": o.category,
                     "attributes": o.attributes, "bbox": list(o.bbox)}
                    for o in g.scene.objects
                ],
                "target_id": g.target_id,
                "candidate_ids": list(g.candidate_ids),
            }
            for g in dataset.games
        ],
    }


def serialize_dataset(dataset: Dataset) -> str:
    return json.dumps(dataset_to_dict(dataset), sort_keys=True, indent=2) + "\n"


def atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(dataset: Dataset, path: str) -> None:
    atomic_write(path, serialize_dataset(dataset))


def _reject_unknown(record: dict, allowed: set[str], where: str) -> None:
    unknown = set(record) - allowed
    if unknown:
        raise FormatError(f"unknown field(s) {sorted(unknown)} in {where}")
    missing = allowed - set(record)
    if missing:
        raise FormatError(f"missing field(s) {sorted(missing)} in {where}")


def dataset_from_dict(doc: dict) -> Dataset:
    if not isinstance(doc, dict):
        raise FormatError("dataset document must be an object")
    _reject_unknown(doc, _TOP_FIELDS, "dataset")
    grid = _parse_lexicon_version(doc["lexicon_version"])
    games = []
    seen_ids: set[str] = set()
    for g in doc["games"]:
        _reject_unknown(g, _GAME_FIELDS, f"game {g.get('game_id', '?')!r}")
        game_id = g["game_id"]
        objects = []
        for o in g["objects"]:
            _reject_unknown(o, _OBJECT_FIELDS, f"object in game {game_id!r}")
            _reject_unknown(o["attributes"], _ATTR_FIELDS,
                            f"attributes in game {game_id!r}")
            attrs = o["attributes"]
            bbox = o["bbox"]
            if not (isinstance(bbox, list) and len(bbox) == 4):
                raise FormatError(f"bbox must have 4 entries in game {game_id!r}")
            objects.append(SceneObject(
                id=int(o["id"]), category=o["category"], color=attrs["color"],
                size=attrs["size"], row=int(attrs["row"]), col=int(attrs["col"]),
                bbox=tuple(float(v) for v in bbox)))
        scene = Scene(objects=tuple(objects), grid=grid)
        game = Game(game_id=game_id, scene=scene,
                    target_id=int(g["target_id"]),
                    candidate_ids=tuple(int(c) for c in g["candidate_ids"]))
        _validate_game(game, seen_ids)
        seen_ids.add(game_id)
        games.append(game)
    return Dataset(games=tuple(games),
                   generation_seed=int(doc["generation_seed"]),
                   lexicon_version=doc["lexicon_version"])


def _validate_game(game: Game, seen_ids: set[str]) -> None:
    gid = game.game_id
    if gid in seen_ids:
        raise ValidationError(f"duplicate game_id {gid!r}")
    rows, cols = game.scene.grid
    ids = [o.id for o in game.scene.objects]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate object ids in game {gid!r}")
    for o in game.scene.objects:
        if o.category not in CATEGORIES:
            raise ValidationError(
                f"unknown category {o.category!r} in game {gid!r}")
        if o.color not in COLORS or o.size not in SIZES:
            raise ValidationError(f"bad attributes in game {gid!r}")
        if not (0 <= o.row < rows and 0 <= o.col < cols):
            raise ValidationError(f"object outside grid in game {gid!r}")
        if o.bbox[2] <= 0 or o.bbox[3] <= 0 or min(o.bbox) < 0:
            raise ValidationError(f"degenerate bbox in game {gid!r}")
    if not 3 <= len(game.candidate_ids) <= 6:
        raise ValidationError(
            f"game {gid!r} has {len(game.candidate_ids)} candidates; "
            "expected between 3 and 6")
    if len(set(game.candidate_ids)) != len(game.candidate_ids):
        raise ValidationError(f"duplicate candidate ids in game {gid!r}")
    for cid in game.candidate_ids:
        if cid not in ids:
            raise ValidationError(
                f"candidate {cid} not in scene for game {gid!r}")
    if game.target_id not in game.candidate_ids:
        raise ValidationError(
            f"target {game.target_id} is not a candidate in game {gid!r}")


def load_dataset(path: str) -> Dataset:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return dataset_from_dict(doc)
