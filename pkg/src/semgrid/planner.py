"""Structured task specs to ordered (verb, noun) subgoal lists."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

TASK_TYPES = ("LookExamine", "PickPlace", "PlaceTwo", "Stack",
              "HeatPlace", "CoolPlace", "CleanPlace")

VERBS = ("GotoLocation", "PickUp", "Put", "Slice", "Toggle", "Heat", "Cool", "Clean")

# appliance nouns bound by the templates
LAMP_CLASS = "FloorLamp"
HEAT_APPLIANCE = "Microwave"
COOL_APPLIANCE = "Fridge"
CLEAN_APPLIANCE = "SinkBasin"
KNIFE_CLASS = "Knife"
ANY_SURFACE = "AnySurface"   # resolved at execution to any non-openable receptacle


class InvalidSpec(ValueError):
    pass


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class Subgoal:
    verb: str
    noun: str

    def __post_init__(self):
        if self.verb not in VERBS:
            raise InvalidSpec(f"unknown verb {self.verb!r}")


@dataclass(frozen=True)
class TaskSpec:
    task_type: str
    object: str
    receptacle: Optional[str] = None
    movable_receptacle: Optional[str] = None
    sliced: bool = False

    def __post_init__(self):
        if self.task_type not in TASK_TYPES:
            raise InvalidSpec(f"unknown task type {self.task_type!r}")
        needs_receptacle = self.task_type != "LookExamine"
        if needs_receptacle and not self.receptacle:
            raise InvalidSpec(f"{self.task_type} requires a receptacle")
        if self.task_type == "Stack" and not self.movable_receptacle:
            raise InvalidSpec("Stack requires a movable_receptacle")


def plan_from_task(task: TaskSpec) -> list[Subgoal]:
    """Expand a task through its template.

    A slice request prepends pick-knife / slice / put-knife-down; PlaceTwo
    inserts a GotoLocation before the first Put so the second instance is
    located while the first is still in hand.
    """
    t = task.task_type
    obj = task.object
    rec = task.receptacle
    if t == "LookExamine":
        main = [Subgoal("PickUp", obj), Subgoal("Toggle", LAMP_CLASS)]
    elif t == "PickPlace":
        main = [Subgoal("PickUp", obj), Subgoal("Put", rec)]
    elif t == "PlaceTwo":
        main = [Subgoal("PickUp", obj), Subgoal("GotoLocation", obj),
                Subgoal("Put", rec), Subgoal("PickUp", obj), Subgoal("Put", rec)]
    elif t == "Stack":
        mrec = task.movable_receptacle
        main = [Subgoal("PickUp", obj), Subgoal("Put", mrec),
                Subgoal("PickUp", mrec), Subgoal("Put", rec)]
    elif t == "HeatPlace":
        main = [Subgoal("PickUp", obj), Subgoal("Heat", HEAT_APPLIANCE),
                Subgoal("Put", rec)]
    elif t == "CoolPlace":
        main = [Subgoal("PickUp", obj), Subgoal("Cool", COOL_APPLIANCE),
                Subgoal("Put", rec)]
    elif t == "CleanPlace":
        main = [Subgoal("PickUp", obj), Subgoal("Clean", CLEAN_APPLIANCE),
                Subgoal("Put", rec)]
    else:  # unreachable, TaskSpec validates
        raise InvalidSpec(t)
    if task.sliced:
        prefix = [Subgoal("PickUp", KNIFE_CLASS), Subgoal("Slice", obj),
                  Subgoal("Put", ANY_SURFACE)]
        return prefix + main
    return main


_TASK_FIELDS = {"type", "object", "receptacle", "movable_receptacle", "slice"}


def task_to_dict(task: TaskSpec) -> dict:
    d = {"type": task.task_type, "object": task.object, "slice": task.sliced}
    if task.receptacle is not None:
        d["receptacle"] = task.receptacle
    if task.movable_receptacle is not None:
        d["movable_receptacle"] = task.movable_receptacle
    return d


def parse_task_dict(d: dict, where: str = "task") -> TaskSpec:
    unknown = set(d) - _TASK_FIELDS
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")
    for req in ("type", "object"):
        if req not in d:
            raise ParseError(f"{where}: missing field {req!r}")
    try:
        return TaskSpec(
            task_type=d["type"],
            object=d["object"],
            receptacle=d.get("receptacle"),
            movable_receptacle=d.get("movable_receptacle"),
            sliced=bool(d.get("slice", False)),
        )
    except InvalidSpec as e:
        raise ParseError(f"{where}: {e}") from None


def parse_task_file(path) -> list[TaskSpec]:
    """Load a versioned JSON task list; field errors name their location."""
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: invalid JSON at line {e.lineno}") from None
    if not isinstance(data, dict) or data.get("version") != 1:
        raise ParseError(f"{path}: expected an object with version 1")
    tasks = data.get("tasks")
    if not isinstance(tasks, list):
        raise ParseError(f"{path}: 'tasks' must be a list")
    return [parse_task_dict(t, where=f"tasks[{i}]") for i, t in enumerate(tasks)]


def write_task_file(tasks: list[TaskSpec], path) -> None:
    payload = {"version": 1, "tasks": [task_to_dict(t) for t in tasks]}
    with open(path, "w") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")
