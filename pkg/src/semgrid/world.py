"""Deterministic 2.5-D grid-world household simulator.

One rectangular room discretized into 0.25 m cells. Furniture occupies
cells, small objects sit inside/on receptacles or on the floor, and the
agent walks the navigable floor executing a discrete action set (5
navigation actions, 7 interactive actions, 3 composed moves).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional

import numpy as np

CELL_SIZE = 0.25          # meters per cell, also the move step
REACH_DISTANCE = 1.5      # meters, interaction reach
HORIZON_MIN = -30
HORIZON_MAX = 60
HORIZON_STEP = 15
INITIAL_HORIZON = 45      # camera pitched down at episode start
YAWS = (0, 90, 180, 270)

HELD = "held"             # position tag for the carried object

# cell kinds
FLOOR = 0
WALL = 1
SURFACE = 2               # receptacle-surface (furniture footprint)

# static affordance bits (7 interaction classes; navigability is a cell property)
AFF_PICKUPABLE = 1 << 0
AFF_PUTABLE = 1 << 1
AFF_OPENABLE = 1 << 2
AFF_CLOSEABLE = 1 << 3
AFF_TOGGLE_ON = 1 << 4
AFF_TOGGLE_OFF = 1 << 5
AFF_SLICEABLE = 1 << 6

AFFORDANCE_NAMES = (
    "navigable",
    "pickupable",
    "putable",
    "openable",
    "closeable",
    "toggleable_on",
    "toggleable_off",
    "sliceable",
)
N_AFFORDANCE_CLASSES = len(AFFORDANCE_NAMES)


class ActionKind(IntEnum):
    MOVE_AHEAD = 0
    ROTATE_RIGHT = 1
    ROTATE_LEFT = 2
    LOOK_UP = 3
    LOOK_DOWN = 4
    MOVE_LEFT = 5
    MOVE_RIGHT = 6
    MOVE_BACK = 7
    PICK_UP = 8
    PUT = 9
    OPEN = 10
    CLOSE = 11
    TOGGLE_ON = 12
    TOGGLE_OFF = 13
    SLICE = 14


NAV_ACTIONS = (
    ActionKind.MOVE_AHEAD,
    ActionKind.ROTATE_RIGHT,
    ActionKind.ROTATE_LEFT,
    ActionKind.LOOK_UP,
    ActionKind.LOOK_DOWN,
    ActionKind.MOVE_LEFT,
    ActionKind.MOVE_RIGHT,
    ActionKind.MOVE_BACK,
)
INTERACTIVE_ACTIONS = (
    ActionKind.PICK_UP,
    ActionKind.PUT,
    ActionKind.OPEN,
    ActionKind.CLOSE,
    ActionKind.TOGGLE_ON,
    ActionKind.TOGGLE_OFF,
    ActionKind.SLICE,
)


class FailReason(IntEnum):
    COLLISION = 0
    OUT_OF_REACH = 1
    NOT_VISIBLE = 2
    AFFORDANCE = 3
    HAND_OCCUPIED = 4
    HAND_EMPTY = 5
    CLOSED_RECEPTACLE = 6
    WRONG_STATE = 7
    NO_TARGET = 8
    HORIZON_LIMIT = 9
    NO_KNIFE = 10


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: Optional[int] = None  # object id, the mask surrogate for interactions


@dataclass(frozen=True)
class StepResult:
    ok: bool
    reason: Optional[FailReason] = None

    @staticmethod
    def success() -> "StepResult":
        return StepResult(True, None)

    @staticmethod
    def failure(reason: FailReason) -> "StepResult":
        return StepResult(False, reason)


@dataclass(frozen=True)
class ObjectClassSpec:
    """Static per-class capabilities. Affordance flags derive from these."""

    name: str
    pickupable: bool = False
    receptacle: bool = False
    openable: bool = False
    toggleable: bool = False
    sliceable: bool = False
    heat_source: bool = False
    cool_source: bool = False
    clean_source: bool = False
    knife: bool = False
    lamp: bool = False

    def affordance_mask(self) -> int:
        m = 0
        if self.pickupable:
            m |= AFF_PICKUPABLE
        if self.receptacle:
            m |= AFF_PUTABLE
        if self.openable:
            m |= AFF_OPENABLE | AFF_CLOSEABLE
        if self.toggleable:
            m |= AFF_TOGGLE_ON | AFF_TOGGLE_OFF
        if self.sliceable:
            m |= AFF_SLICEABLE
        return m


class Roster:
    """Object-class table plus the shared object/affordance class index space.

    Class ids 0..n_object_classes-1 are object classes; affordance classes
    follow, starting with navigable.
    """

    def __init__(self, specs):
        self.specs = tuple(specs)
        self.name_to_id = {s.name: i for i, s in enumerate(self.specs)}
        if len(self.name_to_id) != len(self.specs):
            raise ValueError("duplicate class names in roster")

    @property
    def n_object_classes(self) -> int:
        return len(self.specs)

    @property
    def n_affordance_classes(self) -> int:
        return N_AFFORDANCE_CLASSES

    @property
    def n_total_classes(self) -> int:
        return self.n_object_classes + N_AFFORDANCE_CLASSES

    def class_id(self, name: str) -> int:
        return self.name_to_id[name]

    def spec(self, class_id: int) -> ObjectClassSpec:
        return self.specs[class_id]

    def affordance_class(self, name: str) -> int:
        return self.n_object_classes + AFFORDANCE_NAMES.index(name)

    @property
    def navigable_class(self) -> int:
        return self.n_object_classes

    def affordance_class_for_bit(self, bit_index: int) -> int:
        # interaction bits follow the navigable class
        return self.n_object_classes + 1 + bit_index

    def pickupable_classes(self):
        return [i for i, s in enumerate(self.specs) if s.pickupable]

    def receptacle_classes(self):
        return [i for i, s in enumerate(self.specs) if s.receptacle]

    def to_dict(self) -> dict:
        keys = ("pickupable", "receptacle", "openable", "toggleable", "sliceable",
                "heat_source", "cool_source", "clean_source", "knife", "lamp")
        return {
            "classes": [
                {"name": s.name, **{k: getattr(s, k) for k in keys if getattr(s, k)}}
                for s in self.specs
            ]
        }

    @staticmethod
    def from_dict(d: dict) -> "Roster":
        specs = []
        for c in d["classes"]:
            c = dict(c)
            name = c.pop("name")
            specs.append(ObjectClassSpec(name=name, **c))
        return Roster(specs)


DEFAULT_ROSTER = Roster([
    ObjectClassSpec("DiningTable", receptacle=True),
    ObjectClassSpec("CounterTop", receptacle=True),
    ObjectClassSpec("Shelf", receptacle=True),
    ObjectClassSpec("Drawer", receptacle=True, openable=True),
    ObjectClassSpec("Cabinet", receptacle=True, openable=True),
    ObjectClassSpec("Fridge", receptacle=True, openable=True, cool_source=True),
    ObjectClassSpec("Microwave", receptacle=True, openable=True, toggleable=True,
                    heat_source=True),
    ObjectClassSpec("SinkBasin", receptacle=True, toggleable=True, clean_source=True),
    ObjectClassSpec("GarbageCan", receptacle=True),
    ObjectClassSpec("StoveBurner", receptacle=True),
    ObjectClassSpec("FloorLamp", toggleable=True, lamp=True),
    ObjectClassSpec("Apple", pickupable=True, sliceable=True),
    ObjectClassSpec("Tomato", pickupable=True, sliceable=True),
    ObjectClassSpec("Egg", pickupable=True),
    ObjectClassSpec("Mug", pickupable=True),
    ObjectClassSpec("Bowl", pickupable=True, receptacle=True),
    ObjectClassSpec("Pot", pickupable=True, receptacle=True),
    ObjectClassSpec("Knife", pickupable=True, knife=True),
    ObjectClassSpec("Book", pickupable=True),
    ObjectClassSpec("SoapBar", pickupable=True),
])


@dataclass
class ObjectInstance:
    """One object. Exactly one of cell / container_id / held locates it."""

    id: int
    class_id: int
    affordance_flags: int
    cell: Optional[tuple[int, int]] = None
    container_id: Optional[int] = None
    held: bool = False
    is_open: bool = False
    is_toggled: bool = False
    is_sliced: bool = False
    is_heated: bool = False
    is_cooled: bool = False
    is_cleaned: bool = False

    def effective_affordances(self) -> int:
        """Affordance bits masked by current state: what is actionable now."""
        m = self.affordance_flags
        if m & AFF_OPENABLE:
            if self.is_open:
                m &= ~AFF_OPENABLE
            else:
                m &= ~AFF_CLOSEABLE
        if m & AFF_TOGGLE_ON:
            if self.is_toggled:
                m &= ~AFF_TOGGLE_ON
            else:
                m &= ~AFF_TOGGLE_OFF
        if self.is_sliced:
            m &= ~AFF_SLICEABLE
        return m


@dataclass
class AgentState:
    x: int
    z: int
    yaw: int = 0
    horizon: int = INITIAL_HORIZON
    held: Optional[int] = None

    def position_m(self) -> tuple[float, float]:
        return ((self.x + 0.5) * CELL_SIZE, (self.z + 0.5) * CELL_SIZE)


def yaw_direction(yaw: int) -> tuple[int, int]:
    """Unit cell step for a quantized yaw. Yaw 0 faces +z, 90 faces +x."""
    return {0: (0, 1), 90: (1, 0), 180: (0, -1), 270: (-1, 0)}[yaw % 360]


@dataclass
class GridScene:
    width: int
    height: int
    cells: np.ndarray                      # (width, height) int8 of cell kinds
    objects: dict[int, ObjectInstance]
    rng_seed: int
    roster: Roster = field(default_factory=lambda: DEFAULT_ROSTER)

    # ---- queries ----

    def in_bounds(self, x: int, z: int) -> bool:
        return 0 <= x < self.width and 0 <= z < self.height

    def occupant_at(self, x: int, z: int) -> Optional[ObjectInstance]:
        for oid in sorted(self.objects):
            o = self.objects[oid]
            if o.cell == (x, z):
                return o
        return None

    def occupancy_table(self) -> dict[tuple[int, int], int]:
        table = {}
        for oid in sorted(self.objects):
            o = self.objects[oid]
            if o.cell is not None:
                table[o.cell] = oid
        return table

    def navigable_mask(self) -> np.ndarray:
        """(width, height) bool: floor cells not occupied by a blocking object."""
        mask = self.cells == FLOOR
        for o in self.objects.values():
            if o.cell is not None and not self.roster.spec(o.class_id).pickupable:
                mask[o.cell] = False
        return mask

    def contents(self, container_id: int) -> list[int]:
        return sorted(o.id for o in self.objects.values()
                      if o.container_id == container_id)

    def root_cell(self, obj_id: int) -> Optional[tuple[int, int]]:
        """Cell of the object or of the receptacle chain it sits in; None if held."""
        o = self.objects[obj_id]
        seen = set()
        while True:
            if o.cell is not None:
                return o.cell
            if o.held:
                return None
            if o.container_id is None or o.container_id in seen:
                return None
            seen.add(o.container_id)
            o = self.objects[o.container_id]

    def visible_entities_at(self, x: int, z: int) -> list[int]:
        """Object ids a ray hitting this cell may report, occupant first.

        Contents are visible through non-openable receptacles and through
        open ones, recursively.
        """
        occ = self.occupant_at(x, z)
        if occ is None:
            return []
        out = []

        def walk(o: ObjectInstance):
            out.append(o.id)
            spec = self.roster.spec(o.class_id)
            if spec.receptacle and (not spec.openable or o.is_open):
                for cid in self.contents(o.id):
                    walk(self.objects[cid])

        walk(occ)
        return out

    def clone(self) -> "GridScene":
        return GridScene(
            width=self.width,
            height=self.height,
            cells=self.cells.copy(),
            objects={oid: replace(o) for oid, o in self.objects.items()},
            rng_seed=self.rng_seed,
            roster=self.roster,
        )

    # ---- serialization ----

    def to_dict(self) -> dict:
        objs = []
        for oid in sorted(self.objects):
            o = self.objects[oid]
            objs.append({
                "id": o.id,
                "class": self.roster.spec(o.class_id).name,
                "affordance_flags": o.affordance_flags,
                "cell": list(o.cell) if o.cell is not None else None,
                "container_id": o.container_id,
                "held": o.held,
                "state": {
                    "is_open": o.is_open, "is_toggled": o.is_toggled,
                    "is_sliced": o.is_sliced, "is_heated": o.is_heated,
                    "is_cooled": o.is_cooled, "is_cleaned": o.is_cleaned,
                },
            })
        return {
            "version": 1,
            "width": self.width,
            "height": self.height,
            "rng_seed": self.rng_seed,
            "cells": self.cells.astype(int).tolist(),
            "roster": self.roster.to_dict(),
            "objects": objs,
        }

    @staticmethod
    def from_dict(d: dict) -> "GridScene":
        if d.get("version") != 1:
            raise ValueError(f"unsupported scene version: {d.get('version')!r}")
        roster = Roster.from_dict(d["roster"])
        objects = {}
        for od in d["objects"]:
            st = od["state"]
            objects[od["id"]] = ObjectInstance(
                id=od["id"],
                class_id=roster.class_id(od["class"]),
                affordance_flags=od["affordance_flags"],
                cell=tuple(od["cell"]) if od["cell"] is not None else None,
                container_id=od["container_id"],
                held=od["held"],
                **st,
            )
        return GridScene(
            width=d["width"],
            height=d["height"],
            cells=np.array(d["cells"], dtype=np.int8),
            objects=objects,
            rng_seed=d["rng_seed"],
            roster=roster,
        )


def scene_to_json(scene: GridScene) -> str:
    return json.dumps(scene.to_dict(), sort_keys=True, indent=1) + "\n"


def save_scene(scene: GridScene, path) -> None:
    with open(path, "w") as f:
        f.write(scene_to_json(scene))


def load_scene(path) -> GridScene:
    with open(path) as f:
        return GridScene.from_dict(json.load(f))


def validate_scene(scene: GridScene) -> list[str]:
    """Invariant check used by generation and tests. Returns problem strings."""
    problems = []
    for o in scene.objects.values():
        locs = [o.cell is not None, o.container_id is not None, o.held]
        if sum(locs) != 1:
            problems.append(f"object {o.id}: not exactly one location")
        if o.cell is not None and not scene.in_bounds(*o.cell):
            problems.append(f"object {o.id}: cell out of bounds")
        if o.container_id is not None:
            c = scene.objects.get(o.container_id)
            if c is None or not (scene.roster.spec(c.class_id).receptacle):
                problems.append(f"object {o.id}: bad container")
        spec = scene.roster.spec(o.class_id)
        if o.is_open and not spec.openable:
            problems.append(f"object {o.id}: open but not openable")
        if o.is_toggled and not spec.toggleable:
            problems.append(f"object {o.id}: toggled but not toggleable")
        if o.is_sliced and not spec.sliceable:
            problems.append(f"object {o.id}: sliced but not sliceable")
    held = [o.id for o in scene.objects.values() if o.held]
    if len(held) > 1:
        problems.append(f"multiple held objects: {held}")
    cells = {}
    for o in scene.objects.values():
        if o.cell is not None:
            if o.cell in cells:
                problems.append(f"cell {o.cell} occupied twice")
            cells[o.cell] = o.id
    return problems


# ---------------------------------------------------------------------------
# Action semantics


def _distance_m(agent: AgentState, cell: tuple[int, int]) -> float:
    ax, az = agent.position_m()
    tx, tz = (cell[0] + 0.5) * CELL_SIZE, (cell[1] + 0.5) * CELL_SIZE
    return float(np.hypot(tx - ax, tz - az))


def _visible_in_frame(scene, agent, obj_id, render_cfg) -> bool:
    from .raycast import RenderConfig, render_egocentric

    cfg = render_cfg if render_cfg is not None else RenderConfig()
    cfg = replace(cfg, noise_class_flip=0.0, noise_depth_sigma=0.0)
    frame = render_egocentric(scene, agent, cfg)
    return bool(np.any(frame.obj_id == obj_id))


def _move_target(agent: AgentState, kind: ActionKind) -> tuple[int, int]:
    offsets = {
        ActionKind.MOVE_AHEAD: 0,
        ActionKind.MOVE_RIGHT: 90,
        ActionKind.MOVE_BACK: 180,
        ActionKind.MOVE_LEFT: 270,
    }
    dx, dz = yaw_direction(agent.yaw + offsets[kind])
    return agent.x + dx, agent.z + dz


def step(scene: GridScene, agent: AgentState, action: Action,
         render_cfg=None, reach: float = REACH_DISTANCE
         ) -> tuple[GridScene, AgentState, StepResult]:
    """Apply one action. Mutates scene/agent in place only on success.

    Interactive actions carry a target object id (the mask surrogate) and
    require the target to be visible in the current noise-free egocentric
    frame and within reach. Every failure is a non-fatal StepResult with
    the state untouched.
    """
    kind = action.kind

    if kind in (ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT,
                ActionKind.MOVE_RIGHT, ActionKind.MOVE_BACK):
        tx, tz = _move_target(agent, kind)
        if not scene.in_bounds(tx, tz) or not scene.navigable_mask()[tx, tz]:
            return scene, agent, StepResult.failure(FailReason.COLLISION)
        agent.x, agent.z = tx, tz
        return scene, agent, StepResult.success()

    if kind == ActionKind.ROTATE_RIGHT:
        agent.yaw = (agent.yaw + 90) % 360
        return scene, agent, StepResult.success()
    if kind == ActionKind.ROTATE_LEFT:
        agent.yaw = (agent.yaw - 90) % 360
        return scene, agent, StepResult.success()

    if kind == ActionKind.LOOK_UP:
        if agent.horizon - HORIZON_STEP < HORIZON_MIN:
            return scene, agent, StepResult.failure(FailReason.HORIZON_LIMIT)
        agent.horizon -= HORIZON_STEP
        return scene, agent, StepResult.success()
    if kind == ActionKind.LOOK_DOWN:
        if agent.horizon + HORIZON_STEP > HORIZON_MAX:
            return scene, agent, StepResult.failure(FailReason.HORIZON_LIMIT)
        agent.horizon += HORIZON_STEP
        return scene, agent, StepResult.success()

    # interactive actions
    if action.target is None or action.target not in scene.objects:
        return scene, agent, StepResult.failure(FailReason.NO_TARGET)
    target = scene.objects[action.target]
    spec = scene.roster.spec(target.class_id)

    root = scene.root_cell(target.id)
    if root is None:  # held by the agent (or orphaned)
        return scene, agent, StepResult.failure(FailReason.NOT_VISIBLE)
    if _distance_m(agent, root) > reach + 1e-9:
        return scene, agent, StepResult.failure(FailReason.OUT_OF_REACH)
    if not _visible_in_frame(scene, agent, target.id, render_cfg):
        return scene, agent, StepResult.failure(FailReason.NOT_VISIBLE)

    if kind == ActionKind.PICK_UP:
        if not spec.pickupable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if agent.held is not None:
            return scene, agent, StepResult.failure(FailReason.HAND_OCCUPIED)
        target.cell = None
        target.container_id = None
        target.held = True
        agent.held = target.id
        return scene, agent, StepResult.success()

    if kind == ActionKind.PUT:
        if agent.held is None:
            return scene, agent, StepResult.failure(FailReason.HAND_EMPTY)
        if not spec.receptacle:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if spec.openable and not target.is_open:
            return scene, agent, StepResult.failure(FailReason.CLOSED_RECEPTACLE)
        held = scene.objects[agent.held]
        held.held = False
        held.container_id = target.id
        agent.held = None
        return scene, agent, StepResult.success()

    if kind == ActionKind.OPEN:
        if not spec.openable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if target.is_open:
            return scene, agent, StepResult.failure(FailReason.WRONG_STATE)
        target.is_open = True
        return scene, agent, StepResult.success()

    if kind == ActionKind.CLOSE:
        if not spec.openable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if not target.is_open:
            return scene, agent, StepResult.failure(FailReason.WRONG_STATE)
        target.is_open = False
        if spec.cool_source:
            for cid in scene.contents(target.id):
                scene.objects[cid].is_cooled = True
        return scene, agent, StepResult.success()

    if kind == ActionKind.TOGGLE_ON:
        if not spec.toggleable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if target.is_toggled:
            return scene, agent, StepResult.failure(FailReason.WRONG_STATE)
        target.is_toggled = True
        if spec.clean_source:
            for cid in scene.contents(target.id):
                scene.objects[cid].is_cleaned = True
        return scene, agent, StepResult.success()

    if kind == ActionKind.TOGGLE_OFF:
        if not spec.toggleable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if not target.is_toggled:
            return scene, agent, StepResult.failure(FailReason.WRONG_STATE)
        target.is_toggled = False
        # a heat source that ran while closed heats its contents
        if spec.heat_source and not target.is_open:
            for cid in scene.contents(target.id):
                scene.objects[cid].is_heated = True
        return scene, agent, StepResult.success()

    if kind == ActionKind.SLICE:
        if not spec.sliceable:
            return scene, agent, StepResult.failure(FailReason.AFFORDANCE)
        if target.is_sliced:
            return scene, agent, StepResult.failure(FailReason.WRONG_STATE)
        if agent.held is None or not scene.roster.spec(
                scene.objects[agent.held].class_id).knife:
            return scene, agent, StepResult.failure(FailReason.NO_KNIFE)
        target.is_sliced = True
        return scene, agent, StepResult.success()

    return scene, agent, StepResult.failure(FailReason.NO_TARGET)


def make_object(oid: int, class_id: int, roster: Roster, **kwargs) -> ObjectInstance:
    return ObjectInstance(
        id=oid, class_id=class_id,
        affordance_flags=roster.spec(class_id).affordance_mask(), **kwargs)


# ---------------------------------------------------------------------------
# Goal conditions


class UnknownTask(ValueError):
    pass


@dataclass(frozen=True)
class ConditionReport:
    conditions: tuple[tuple[str, bool], ...]

    @property
    def met(self) -> int:
        return sum(ok for _, ok in self.conditions)

    @property
    def total(self) -> int:
        return len(self.conditions)

    @property
    def all_met(self) -> bool:
        return self.met == self.total


def _instances_of(scene: GridScene, class_name: str) -> list[ObjectInstance]:
    cid = scene.roster.class_id(class_name)
    return [scene.objects[i] for i in sorted(scene.objects)
            if scene.objects[i].class_id == cid]


def _in_receptacle(scene, obj: ObjectInstance, receptacle_class: str) -> bool:
    if obj.container_id is None:
        return False
    cont = scene.objects[obj.container_id]
    return scene.roster.spec(cont.class_id).name == receptacle_class


def check_goal_conditions(scene: GridScene, task) -> ConditionReport:
    """Boolean goal conditions from the task template's final state.

    Accepts any object with task_type/object/receptacle/movable_receptacle/
    sliced attributes (see planner.TaskSpec).
    """
    ttype = getattr(task, "task_type", None)
    obj_class = task.object
    try:
        objs = _instances_of(scene, obj_class)
    except KeyError as e:
        raise UnknownTask(f"unknown object class {e}") from None
    conds: list[tuple[str, bool]] = []

    def placed(o):
        return _in_receptacle(scene, o, task.receptacle)

    if ttype == "LookExamine":
        held_ok = any(o.held for o in objs)
        lamps = [o for o in scene.objects.values()
                 if scene.roster.spec(o.class_id).lamp]
        conds.append((f"holding {obj_class}", held_ok))
        conds.append(("lamp toggled on", any(o.is_toggled for o in lamps)))
    elif ttype == "PickPlace":
        conds.append((f"{obj_class} in {task.receptacle}", any(placed(o) for o in objs)))
    elif ttype == "PlaceTwo":
        n = sum(placed(o) for o in objs)
        conds.append((f"first {obj_class} in {task.receptacle}", n >= 1))
        conds.append((f"second {obj_class} in {task.receptacle}", n >= 2))
    elif ttype == "Stack":
        mrec = task.movable_receptacle
        inner = any(_in_receptacle(scene, o, mrec) for o in objs)
        mrecs = _instances_of(scene, mrec)
        outer = any(placed(m) for m in mrecs)
        conds.append((f"{obj_class} in {mrec}", inner))
        conds.append((f"{mrec} in {task.receptacle}", outer))
    elif ttype == "HeatPlace":
        conds.append((f"{obj_class} heated", any(o.is_heated for o in objs)))
        conds.append((f"{obj_class} in {task.receptacle}",
                      any(o.is_heated and placed(o) for o in objs)))
    elif ttype == "CoolPlace":
        conds.append((f"{obj_class} cooled", any(o.is_cooled for o in objs)))
        conds.append((f"{obj_class} in {task.receptacle}",
                      any(o.is_cooled and placed(o) for o in objs)))
    elif ttype == "CleanPlace":
        conds.append((f"{obj_class} cleaned", any(o.is_cleaned for o in objs)))
        conds.append((f"{obj_class} in {task.receptacle}",
                      any(o.is_cleaned and placed(o) for o in objs)))
    else:
        raise UnknownTask(f"unknown task type {ttype!r}")

    if getattr(task, "sliced", False):
        conds.append((f"{obj_class} sliced", any(o.is_sliced for o in objs)))
    return ConditionReport(tuple(conds))
