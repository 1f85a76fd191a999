"""Procedural scene generation: seeded, connected, task-aware."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .world import (
    DEFAULT_ROSTER, FLOOR, WALL, SURFACE,
    GridScene, Roster, make_object, validate_scene,
)


class ConfigError(ValueError):
    """Requested scene cannot be realized within bounded retries."""


@dataclass(frozen=True)
class SceneGenConfig:
    width: int = 12
    height: int = 12
    wall_density: float = 0.04        # fraction of cells turned into wall segments
    n_extra_receptacles: int = 3
    n_extra_objects: int = 4
    required_classes: tuple = ()      # class names; repeats request extra instances
    place_objects_visible: bool = True  # keep required pickupables out of openables
    floor_object_fraction: float = 0.15
    roster: Roster = field(default_factory=lambda: DEFAULT_ROSTER)
    max_retries: int = 60


def flood_fill_connected(mask: np.ndarray) -> bool:
    """True iff the True cells of mask form one 4-connected component."""
    total = int(mask.sum())
    if total == 0:
        return False
    xs, zs = np.nonzero(mask)
    start = (int(xs[0]), int(zs[0]))
    seen = {start}
    q = deque([start])
    w, h = mask.shape
    while q:
        x, z = q.popleft()
        for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, nz = x + dx, z + dz
            if 0 <= nx < w and 0 <= nz < h and mask[nx, nz] and (nx, nz) not in seen:
                seen.add((nx, nz))
                q.append((nx, nz))
    return len(seen) == total


def _floor_cells(scene: GridScene) -> list[tuple[int, int]]:
    xs, zs = np.nonzero(scene.navigable_mask())
    return [(int(x), int(z)) for x, z in zip(xs, zs)]


def _try_place_walls(scene: GridScene, rng: np.random.Generator,
                     target_cells: int, retries: int) -> None:
    placed = 0
    tries = 0
    while placed < target_cells and tries < retries * 4:
        tries += 1
        x = int(rng.integers(0, scene.width))
        z = int(rng.integers(0, scene.height))
        horizontal = bool(rng.integers(0, 2))
        length = int(rng.integers(1, 4))
        cells = []
        for i in range(length):
            cx, cz = (x + i, z) if horizontal else (x, z + i)
            if scene.in_bounds(cx, cz) and scene.cells[cx, cz] == FLOOR:
                cells.append((cx, cz))
        if not cells:
            continue
        for c in cells:
            scene.cells[c] = WALL
        if flood_fill_connected(scene.navigable_mask()):
            placed += len(cells)
        else:
            for c in cells:
                scene.cells[c] = FLOOR


def _place_furniture(scene: GridScene, rng: np.random.Generator, class_id: int,
                     next_id: int, retries: int) -> int:
    """Put one furniture instance on a floor cell, keeping the floor connected
    and the piece adjacent to at least one navigable cell."""
    spec = scene.roster.spec(class_id)
    for _ in range(retries):
        free = _floor_cells(scene)
        if not free:
            break
        cell = free[int(rng.integers(0, len(free)))]
        prev_kind = scene.cells[cell]
        if spec.receptacle:
            scene.cells[cell] = SURFACE
        obj = make_object(next_id, class_id, scene.roster, cell=cell)
        scene.objects[next_id] = obj
        nav = scene.navigable_mask()
        adjacent = any(
            scene.in_bounds(cell[0] + dx, cell[1] + dz) and nav[cell[0] + dx, cell[1] + dz]
            for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)))
        if nav.sum() > 0 and flood_fill_connected(nav) and adjacent:
            return next_id + 1
        del scene.objects[next_id]
        scene.cells[cell] = prev_kind
    raise ConfigError(
        f"could not place {spec.name} after {retries} retries")


def _place_small(scene: GridScene, rng: np.random.Generator, class_id: int,
                 next_id: int, cfg: SceneGenConfig, visible: bool,
                 retries: int) -> int:
    roster = scene.roster
    receptacles = [o.id for o in scene.objects.values()
                   if roster.spec(o.class_id).receptacle and o.cell is not None]
    if visible:
        receptacles = [i for i in receptacles
                       if not roster.spec(scene.objects[i].class_id).openable]
    on_floor = (not visible and rng.random() < cfg.floor_object_fraction) or not receptacles
    for _ in range(retries):
        if on_floor:
            free = [c for c in _floor_cells(scene)]
            if not free:
                on_floor = False
                continue
            cell = free[int(rng.integers(0, len(free)))]
            scene.objects[next_id] = make_object(next_id, class_id, roster, cell=cell)
            # pickupables never block, so connectivity is preserved
            return next_id + 1
        if not receptacles:
            raise ConfigError("no receptacle available for small object")
        rid = receptacles[int(rng.integers(0, len(receptacles)))]
        scene.objects[next_id] = make_object(next_id, class_id, roster,
                                             container_id=rid)
        return next_id + 1
    raise ConfigError(f"could not place {roster.spec(class_id).name}")


def generate_scene(config: SceneGenConfig, seed: int) -> GridScene:
    """Build a connected scene; identical seed gives a bit-identical scene.

    Required classes are placed first (furniture, then pickupables), extras
    fill in afterwards. Raises ConfigError when a request cannot be met.
    """
    rng = np.random.default_rng(seed)
    roster = config.roster
    scene = GridScene(
        width=config.width, height=config.height,
        cells=np.full((config.width, config.height), FLOOR, dtype=np.int8),
        objects={}, rng_seed=seed, roster=roster)

    wall_cells = int(round(config.wall_density * config.width * config.height))
    if wall_cells:
        _try_place_walls(scene, rng, wall_cells, config.max_retries)

    required = [roster.class_id(name) for name in config.required_classes]
    req_furniture = [c for c in required if not roster.spec(c).pickupable]
    req_small = [c for c in required if roster.spec(c).pickupable]

    next_id = 0
    for cid in req_furniture:
        next_id = _place_furniture(scene, rng, cid, next_id, config.max_retries)

    furn_pool = [c for c in roster.receptacle_classes()
                 if not roster.spec(c).pickupable]
    for _ in range(config.n_extra_receptacles):
        cid = furn_pool[int(rng.integers(0, len(furn_pool)))]
        try:
            next_id = _place_furniture(scene, rng, cid, next_id, config.max_retries)
        except ConfigError:
            break  # extras are best-effort; required ones already stand

    for cid in req_small:
        next_id = _place_small(scene, rng, cid, next_id, config,
                               config.place_objects_visible, config.max_retries)

    small_pool = roster.pickupable_classes()
    for _ in range(config.n_extra_objects):
        cid = small_pool[int(rng.integers(0, len(small_pool)))]
        next_id = _place_small(scene, rng, cid, next_id, config, False,
                               config.max_retries)

    problems = validate_scene(scene)
    if problems:
        raise ConfigError("generated scene invalid: " + "; ".join(problems))
    nav = scene.navigable_mask()
    if nav.sum() == 0 or not flood_fill_connected(nav):
        raise ConfigError("generated scene is not connected")
    for name in config.required_classes:
        cid = roster.class_id(name)
        if not any(o.class_id == cid for o in scene.objects.values()):
            raise ConfigError(f"required class {name} missing")
    return scene
