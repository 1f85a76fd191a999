"""Episode runner, metrics (SR / GC / PLWSR / PLWGC), seeded suites and the
ablation matrix."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .control import (
    ControlConfig, EpisodeDriver, SubgoalResult, run_subgoal,
)
from .imitation import NoInteractableState, expert_route
from .mapping import MapConfig
from .planner import ANY_SURFACE, Subgoal, TaskSpec, plan_from_task
from .raycast import RenderConfig
from .scene_repr import CellSceneMap, DifferentiableSceneMap, ReprConfig
from .scenegen import ConfigError, SceneGenConfig, generate_scene
from .world import (
    Action, ActionKind, AgentState, GridScene, INITIAL_HORIZON,
    check_goal_conditions, step as world_step,
)


class EmptyResults(ValueError):
    pass


@dataclass(frozen=True)
class AblationMode:
    """The five toggles of the ablation table."""

    use_differentiable: bool = True
    use_interactive_affordance: bool = True
    use_navigation_affordance: bool = True
    use_coarse: bool = True
    use_fine: bool = True


ABLATION_PRESETS = {
    "full": AblationMode(),
    "no-differentiable": AblationMode(use_differentiable=False),
    "no-interactive-affordance": AblationMode(use_interactive_affordance=False),
    "no-navigation-affordance": AblationMode(use_navigation_affordance=False),
    "no-coarse": AblationMode(use_coarse=False),
    "no-fine": AblationMode(use_fine=False),
}


@dataclass(frozen=True)
class RunParams:
    """Everything an episode needs besides the task and seed."""

    map: MapConfig = field(default_factory=MapConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    repr: ReprConfig = field(default_factory=ReprConfig)
    embed_dim: int = 256
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    episode_budget: int = 1200
    continue_on_failure: bool = False


@dataclass
class EpisodeResult:
    task: dict
    scene_seed: int
    mode: str
    success: bool
    conditions_met: int
    conditions_total: int
    agent_steps: int
    expert_steps: int
    subgoals: list
    failure: str = ""

    @property
    def goal_condition_rate(self) -> float:
        return self.conditions_met / max(self.conditions_total, 1)

    @property
    def path_weight(self) -> float:
        if self.agent_steps <= 0:
            return 0.0
        return self.expert_steps / max(self.expert_steps, self.agent_steps)


def required_classes_for_task(task: TaskSpec) -> tuple:
    req = [task.object]
    if task.task_type == "PlaceTwo":
        req.append(task.object)
    if task.receptacle:
        req.append(task.receptacle)
    if task.task_type == "LookExamine":
        req.append("FloorLamp")
    if task.task_type == "Stack":
        req.append(task.movable_receptacle)
    if task.task_type == "HeatPlace":
        req.append("Microwave")
    if task.task_type == "CoolPlace":
        req.append("Fridge")
    if task.task_type == "CleanPlace":
        req.append("SinkBasin")
    if task.sliced:
        req.append("Knife")
        req.append("DiningTable")  # a guaranteed surface for parking the knife
    return tuple(req)


def scene_for_task(task: TaskSpec, params: RunParams, seed: int) -> GridScene:
    cfg = replace(params.scene, required_classes=required_classes_for_task(task))
    return generate_scene(cfg, seed)


def start_agent(scene: GridScene, rng: np.random.Generator) -> AgentState:
    nav = scene.navigable_mask()
    cells = np.argwhere(nav)
    x, z = cells[int(rng.integers(0, len(cells)))]
    yaw = int(rng.integers(0, 4)) * 90
    return AgentState(int(x), int(z), yaw, INITIAL_HORIZON)


# ---------------------------------------------------------------------------
# Expert rollout (full knowledge): training-free reference solver and L*


class _ExpertFailure(Exception):
    pass


def _expert_candidates(scene: GridScene, noun: str, verb: str,
                       placed: set[int]) -> list[int]:
    roster = scene.roster
    out = []
    for oid in sorted(scene.objects):
        o = scene.objects[oid]
        if o.held:
            continue
        spec = roster.spec(o.class_id)
        if noun == ANY_SURFACE:
            if not spec.receptacle or spec.openable or spec.pickupable:
                continue
        elif spec.name != noun:
            continue
        if verb in ("PickUp", "GotoLocation") and oid in placed:
            continue
        out.append(oid)
    return out


_ROUTE_VERB = {"PickUp": "PickUp", "GotoLocation": "PickUp", "Put": "Put",
               "Slice": "Slice", "Toggle": "ToggleOn", "Heat": "Open",
               "Cool": "Open", "Clean": "Put"}


def expert_rollout(scene: GridScene, agent: AgentState,
                   subgoals: list[Subgoal], task: TaskSpec,
                   params: RunParams) -> tuple[bool, int, GridScene]:
    """Solve the subgoal plan with ground-truth knowledge, counting steps.

    Mirrors the agent's accounting: the panoramic warm-up, every motion and
    every interactive action cost one step. Returns (success, steps, scene).
    """
    sc = scene.clone()
    ag = AgentState(agent.x, agent.z, agent.yaw, agent.horizon)
    steps = 0
    placed: set[int] = set()

    def do(kind: ActionKind, target=None):
        nonlocal steps
        _, _, res = world_step(sc, ag, Action(kind, target), params.render,
                               params.control.reach)
        steps += 1
        if not res.ok:
            raise _ExpertFailure(f"{kind.name}: {res.reason.name}")
        return res

    def interact(verb: str, tid: int):
        t = sc.objects[tid]
        spec = sc.roster.spec(t.class_id)
        if verb == "PickUp":
            do(ActionKind.PICK_UP, tid)
        elif verb == "Toggle":
            do(ActionKind.TOGGLE_ON, tid)
        elif verb == "Slice":
            do(ActionKind.SLICE, tid)
        elif verb == "Put":
            if spec.openable and not t.is_open:
                do(ActionKind.OPEN, tid)
            held = ag.held
            do(ActionKind.PUT, tid)
            placed.add(held)
        elif verb in ("Heat", "Cool", "Clean"):
            carried = ag.held
            if carried is None:
                raise _ExpertFailure("macro without a held object")
            macro = {
                "Heat": ("open", "put", "close", "toggle_on", "toggle_off",
                         "open", "pick_back", "close"),
                "Cool": ("open", "put", "close", "open", "pick_back", "close"),
                "Clean": ("put", "toggle_on", "toggle_off", "pick_back"),
            }[verb]
            for op in macro:
                if op == "open" and t.is_open:
                    continue
                if op == "close" and not t.is_open:
                    continue
                kind = {"open": ActionKind.OPEN, "close": ActionKind.CLOSE,
                        "put": ActionKind.PUT, "toggle_on": ActionKind.TOGGLE_ON,
                        "toggle_off": ActionKind.TOGGLE_OFF,
                        "pick_back": ActionKind.PICK_UP}[op]
                do(kind, carried if op == "pick_back" else tid)
                if op == "put":
                    placed.add(carried)

    try:
        for _ in range(4):
            do(ActionKind.ROTATE_RIGHT)
        for sg in subgoals:
            if check_goal_conditions(sc, task).all_met:
                return True, steps, sc
            cands = _expert_candidates(sc, sg.noun, sg.verb, placed)
            route_verb = _ROUTE_VERB[sg.verb]
            done = False
            errors = []
            for tid in cands:
                try:
                    route = expert_route(sc, (ag.x, ag.z, ag.yaw), tid,
                                         route_verb, params.render,
                                         params.control.reach)
                except NoInteractableState as e:
                    errors.append(str(e))
                    continue
                for kind in route:
                    do(kind)
                if sg.verb != "GotoLocation":
                    interact(sg.verb, tid)
                done = True
                break
            if not done:
                raise _ExpertFailure(
                    f"no workable candidate for {sg.verb} {sg.noun}: {errors}")
        ok = check_goal_conditions(sc, task).all_met
        return ok, steps, sc
    except _ExpertFailure:
        return False, steps, sc


# ---------------------------------------------------------------------------
# Agent episode


def _make_scene_map(mode: AblationMode, params: RunParams, n_classes: int,
                    seed: int):
    if mode.use_differentiable:
        return DifferentiableSceneMap(params.map.n_grids, n_classes,
                                      params.embed_dim, seed=seed,
                                      cfg=params.repr)
    return CellSceneMap(params.map.n_grids, n_classes)


def _control_for_mode(mode: AblationMode, base: ControlConfig) -> ControlConfig:
    return replace(
        base,
        use_coarse=mode.use_coarse,
        use_fine=mode.use_fine,
        use_affordance_union=mode.use_interactive_affordance,
        open_gate=base.open_gate and mode.use_interactive_affordance,
        use_navigation_affordance=mode.use_navigation_affordance,
    )


def _failure_tag(sg: SubgoalResult, detected: bool) -> str:
    if sg.status == "budget_exhausted":
        return "object_not_found" if not detected else "budget"
    if sg.fail_reason in ("unreachable", "fine_no_interact"):
        return "navigation"
    if sg.fail_reason == "no_candidate_visible":
        return "object_not_found"
    if sg.status == "retries_exhausted":
        return "interaction"
    return "others"


def run_episode(task: TaskSpec, scene_seed: int, mode: AblationMode,
                policy, params: RunParams = RunParams(),
                expert_drive: bool = False,
                trace_fp=None, on_step=None) -> EpisodeResult:
    """One seeded episode: generate, warm up, execute the plan, score.

    The expert solves the identical plan in the same scene for the path
    length reference; expert_drive replaces the agent with that rollout.
    """
    scene = scene_for_task(task, params, scene_seed)
    rng = np.random.default_rng([scene_seed, 17])
    agent = start_agent(scene, rng)
    subgoals = plan_from_task(task)
    mode_name = [k for k, v in ABLATION_PRESETS.items() if v == mode]
    mode_label = mode_name[0] if mode_name else "custom"

    exp_ok, exp_steps, exp_scene = expert_rollout(scene, agent, subgoals, task,
                                                  params)
    if expert_drive:
        report = check_goal_conditions(exp_scene, task)
        return EpisodeResult(
            task=_task_dict(task), scene_seed=scene_seed, mode="expert",
            success=exp_ok, conditions_met=report.met,
            conditions_total=report.total, agent_steps=exp_steps,
            expert_steps=exp_steps, subgoals=[],
            failure="" if exp_ok else "expert")

    n_classes = scene.roster.n_total_classes
    scene_map = _make_scene_map(mode, params, n_classes, seed=scene_seed)
    control_cfg = _control_for_mode(mode, params.control)
    driver = EpisodeDriver(
        scene, agent, scene_map, params.map, params.render, control_cfg,
        rng=rng, trace_fp=trace_fp, on_step=on_step)

    for _ in range(4):
        driver.exec_action(Action(ActionKind.ROTATE_RIGHT))

    sub_results = []
    failure = ""
    for sg in subgoals:
        if check_goal_conditions(driver.scene, task).all_met:
            break
        if driver.steps >= params.episode_budget:
            failure = failure or "budget"
            break
        detected_before = bool(driver.seen)
        res = run_subgoal(driver, sg, policy, rng)
        sub_results.append(res)
        if not res.ok:
            if not failure:
                failure = _failure_tag(res, detected_before)
            if not params.continue_on_failure:
                break

    report = check_goal_conditions(driver.scene, task)
    success = report.all_met
    return EpisodeResult(
        task=_task_dict(task), scene_seed=scene_seed, mode=mode_label,
        success=success, conditions_met=report.met,
        conditions_total=report.total, agent_steps=driver.steps,
        expert_steps=exp_steps,
        subgoals=[{"verb": r.verb, "noun": r.noun, "status": r.status,
                   "steps": r.steps, "attempts": r.attempts} for r in sub_results],
        failure="" if success else (failure or "others"))


def _task_dict(task: TaskSpec) -> dict:
    return {"type": task.task_type, "object": task.object,
            "receptacle": task.receptacle,
            "movable_receptacle": task.movable_receptacle,
            "slice": task.sliced}


# ---------------------------------------------------------------------------
# Metrics and suites


def metrics(results: list[EpisodeResult]) -> dict:
    """SR, GC and their path-length weighted versions over a result set."""
    if not results:
        raise EmptyResults("no episode results")
    sr = float(np.mean([r.success for r in results]))
    gc = float(np.mean([r.goal_condition_rate for r in results]))
    plwsr = float(np.mean([r.success * r.path_weight for r in results]))
    plwgc = float(np.mean([r.goal_condition_rate * r.path_weight
                           for r in results]))
    return {"SR": sr, "GC": gc, "PLWSR": plwsr, "PLWGC": plwgc,
            "episodes": len(results)}


_TASK_OBJECTS = ("Apple", "Tomato", "Egg", "Mug", "Book", "SoapBar")
_RECEPTACLES = ("DiningTable", "CounterTop", "Shelf", "GarbageCan",
                "StoveBurner", "Drawer", "Cabinet")
_OPENABLE_RECEPTACLES = ("Drawer", "Cabinet")
_MOVABLE_RECEPTACLES = ("Bowl", "Pot")
_TASK_CYCLE = ("PickPlace", "LookExamine", "PlaceTwo", "Stack",
               "HeatPlace", "CoolPlace", "CleanPlace")


def make_task(index: int, master_seed: int) -> TaskSpec:
    """Deterministic task for suite position `index`."""
    rng = np.random.default_rng([master_seed, index])
    ttype = _TASK_CYCLE[index % len(_TASK_CYCLE)]
    obj = _TASK_OBJECTS[int(rng.integers(0, len(_TASK_OBJECTS)))]
    rec = _RECEPTACLES[int(rng.integers(0, len(_RECEPTACLES)))]
    if ttype == "LookExamine":
        return TaskSpec("LookExamine", obj)
    if ttype == "Stack":
        mrec = _MOVABLE_RECEPTACLES[int(rng.integers(0, 2))]
        rec = _RECEPTACLES[int(rng.integers(0, 5))]  # surfaces stack better
        return TaskSpec("Stack", obj, rec, movable_receptacle=mrec)
    if ttype == "PickPlace":
        # every third pick-and-place targets an openable receptacle and some
        # slice a sliceable object, so the affordance paths get exercised
        if index % 21 == 0:
            rec = _OPENABLE_RECEPTACLES[int(rng.integers(0, 2))]
        sliced = index % 70 == 7 and obj in ("Apple", "Tomato")
        return TaskSpec("PickPlace", obj, rec, sliced=sliced)
    return TaskSpec(ttype, obj, rec)


def build_suite(n: int, master_seed: int, params: RunParams = RunParams(),
                probe: bool = True) -> list[tuple[TaskSpec, int]]:
    """n (task, scene seed) pairs spanning the task types.

    With probing on, each pair's seed is advanced until the expert solves
    the episode, so the suite measures control rather than generation luck.
    """
    suite = []
    for i in range(n):
        task = make_task(i, master_seed)
        for attempt in range(25):
            seed = master_seed * 1_000_000 + i * 100 + attempt
            try:
                scene = scene_for_task(task, params, seed)
            except ConfigError:
                continue
            if not probe:
                suite.append((task, seed))
                break
            agent = start_agent(scene, np.random.default_rng([seed, 17]))
            ok, _, _ = expert_rollout(scene, agent, plan_from_task(task), task,
                                      params)
            if ok:
                suite.append((task, seed))
                break
        else:
            raise ConfigError(f"no solvable scene found for suite slot {i}")
    return suite


def run_suite(suite, mode: AblationMode, policy, params: RunParams = RunParams(),
              expert_drive: bool = False, threads: Optional[int] = None):
    """Run every (task, seed) pair; parallel over processes when asked."""
    if threads is None:
        threads = int(os.environ.get("SEMGRID_THREADS", "1"))
    if threads <= 1 or len(suite) <= 1:
        return [run_episode(t, s, mode, policy, params, expert_drive)
                for t, s in suite]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=threads) as pool:
        futs = [pool.submit(run_episode, t, s, mode, policy, params,
                            expert_drive) for t, s in suite]
        return [f.result() for f in futs]


def run_ablation_matrix(suite, modes: dict, policy,
                        params: RunParams = RunParams(),
                        threads: Optional[int] = None) -> dict:
    """Every mode over the identical suite; per-mode metrics plus deltas."""
    out = {"modes": {}, "deltas": {}}
    for name, mode in modes.items():
        results = run_suite(suite, mode, policy, params, threads=threads)
        out["modes"][name] = {"metrics": metrics(results), "results": results}
    if "full" in out["modes"]:
        full_sr = out["modes"]["full"]["metrics"]["SR"]
        for name, entry in out["modes"].items():
            out["deltas"][name] = entry["metrics"]["SR"] - full_sr
    return out


# ---------------------------------------------------------------------------
# Reports


_CSV_COLUMNS = ("episode", "scene_seed", "mode", "type", "object", "receptacle",
                "movable_receptacle", "slice", "success", "conditions_met",
                "conditions_total", "agent_steps", "expert_steps",
                "path_weight", "failure")


def write_report_csv(results: list[EpisodeResult], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_CSV_COLUMNS)
        for i, r in enumerate(results):
            w.writerow([
                i, r.scene_seed, r.mode, r.task["type"], r.task["object"],
                r.task["receptacle"] or "", r.task["movable_receptacle"] or "",
                int(r.task["slice"]), int(r.success), r.conditions_met,
                r.conditions_total, r.agent_steps, r.expert_steps,
                f"{r.path_weight:.6f}", r.failure,
            ])


def write_summary_json(results: list[EpisodeResult], path,
                       config_echo: Optional[dict] = None) -> None:
    failures = {}
    for r in results:
        if not r.success:
            failures[r.failure] = failures.get(r.failure, 0) + 1
    payload = {
        "metrics": metrics(results),
        "failures": failures,
        "config": config_echo or {},
    }
    with open(path, "w") as f:
        f.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")
