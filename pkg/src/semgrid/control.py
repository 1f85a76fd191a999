"""Dual-level control: random walk, map-based coarse navigation, rotation
alignment, short-horizon neural refinement, and interaction execution with
openable-affordance gating, wired together by a per-subgoal state machine.

The EpisodeDriver owns the in-the-loop plumbing: every executed action is
followed by render, projection, labeling and exactly one representation
update before the next decision.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .mapping import (
    MapConfig, PoseEstimate, bin_points, project_frame, soft_labels, update_pose,
)
from .raycast import RenderConfig, render_egocentric
from .world import (
    AFF_CLOSEABLE, AFF_OPENABLE, AFF_PUTABLE, AFF_TOGGLE_OFF, AFF_TOGGLE_ON,
    CELL_SIZE, REACH_DISTANCE, Action, ActionKind, AgentState, FailReason,
    GridScene, StepResult, step as world_step,
)
from .planner import ANY_SURFACE, Subgoal


class NoNavigableCell(RuntimeError):
    pass


class Unreachable(RuntimeError):
    pass


class UntrainedPolicy(RuntimeError):
    pass


# fine action space: 8 motions plus Interact, in tie-break order
FINE_ACTION_KINDS = (
    ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT, ActionKind.MOVE_RIGHT,
    ActionKind.MOVE_BACK, ActionKind.ROTATE_LEFT, ActionKind.ROTATE_RIGHT,
    ActionKind.LOOK_UP, ActionKind.LOOK_DOWN,
)
INTERACT = 8
N_FINE_ACTIONS = 9
N_FEATURES = 17

VERB_AFFORDANCE = {
    "GotoLocation": "pickupable",
    "PickUp": "pickupable",
    "Put": "putable",
    "Slice": "sliceable",
    "Toggle": "toggleable_on",
    "Heat": "putable",
    "Cool": "putable",
    "Clean": "putable",
}


@dataclass(frozen=True)
class ControlConfig:
    tau_nav: float = 0.5
    fine_horizon: int = 8           # max neural steps before retrying coarse
    retries: int = 3
    subgoal_budget: int = 250
    destination_radius_m: float = 1.0
    reach: float = REACH_DISTANCE
    open_gate: bool = True          # insert Open before Put on closed openables
    close_after_put: bool = False
    rho: int = 8                    # visibility point threshold
    use_coarse: bool = True
    use_fine: bool = True
    use_affordance_union: bool = True
    use_navigation_affordance: bool = True


class Phase(Enum):
    RANDOM_WALK = "RandomWalk"
    COARSE = "Coarse"
    ALIGN = "Align"
    FINE = "Fine"
    INTERACT = "Interact"
    DONE = "Done"
    FAILED = "Failed"


@dataclass
class SubgoalResult:
    verb: str
    noun: str
    status: str                      # "done" or a failure tag
    steps: int
    attempts: int
    fail_reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "done"


@dataclass(frozen=True)
class CoarseTarget:
    target_grid: int
    destination_set: tuple[int, ...]
    source: str


# ---------------------------------------------------------------------------
# Pure planning pieces


def destination_ring(cfg: MapConfig, target_idx: int, radius_m: float) -> tuple[int, ...]:
    """Target grid plus neighbors within the Euclidean radius, in bounds."""
    m = cfg.grid_side
    gx, gz = int(target_idx % m), int(target_idx // m)
    r = int(radius_m / cfg.cell_size)
    out = []
    for dz in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if (dx * dx + dz * dz) * cfg.cell_size ** 2 <= radius_m ** 2 + 1e-9:
                nx, nz = gx + dx, gz + dz
                if 0 <= nx < m and 0 <= nz < m:
                    out.append(nz * m + nx)
    return tuple(sorted(out))


def random_walk_target(navigable: np.ndarray, agent_idx: int,
                       rng: np.random.Generator, map_cfg: MapConfig) -> CoarseTarget:
    """Uniform navigable waypoint other than the agent's own grid."""
    options = np.nonzero(navigable)[0]
    options = options[options != agent_idx]
    if options.size == 0:
        raise NoNavigableCell("no navigable grid besides the agent's")
    pick = int(options[rng.integers(0, options.size)])
    return CoarseTarget(pick, (pick,), "random")


def coarse_target(scene_map, object_class: int, affordance_class: Optional[int],
                  agent_idx: int, map_cfg: MapConfig,
                  exclude: frozenset = frozenset(),
                  radius_m: float = 1.0) -> CoarseTarget:
    """Grid maximizing the object-affordance product probability.

    Ties break toward the agent (Euclidean), then the smaller grid index.
    Passing affordance_class=None scores by the object map alone (the
    no-interactive-affordance ablation).
    """
    u = scene_map.query(object_class)
    if affordance_class is not None:
        u = u * scene_map.query(affordance_class)
    if exclude:
        u = u.copy()
        u[list(exclude)] = -1.0
    best = u.max()
    cands = np.nonzero(u == best)[0]
    m = map_cfg.grid_side
    ax, az = agent_idx % m, agent_idx // m
    d2 = (cands % m - ax) ** 2 + (cands // m - az) ** 2
    target = int(cands[np.lexsort((cands, d2))[0]])
    return CoarseTarget(target, destination_ring(map_cfg, target, radius_m),
                        "object-query")


_BFS_MOVES = (ActionKind.MOVE_AHEAD, ActionKind.ROTATE_LEFT, ActionKind.ROTATE_RIGHT)
_YAW_INDEX = {0: 0, 90: 1, 180: 2, 270: 3}
_YAW_OF_INDEX = (0, 90, 180, 270)
_YAW_STEP = ((0, 1), (1, 0), (0, -1), (-1, 0))


def bfs_plan(navigable: np.ndarray, map_cfg: MapConfig,
             start: tuple[int, int, int], goals) -> list[ActionKind]:
    """Minimum-cost action sequence over the (x, z, yaw) graph.

    MoveAhead and rotations all cost 1, so plain breadth-first search is
    optimal. Reaching any goal grid at any yaw terminates; an empty plan is
    returned when the start grid is already a goal. Raises Unreachable.
    """
    m = map_cfg.grid_side
    goal_set = set(int(g) for g in goals)
    sx, sz, syaw = start
    s_state = (sx, sz, _YAW_INDEX[syaw % 360])
    if sz * m + sx in goal_set:
        return []
    parents: dict[tuple, tuple] = {s_state: None}
    q = deque([s_state])
    while q:
        state = q.popleft()
        x, z, yi = state
        for act in _BFS_MOVES:
            if act == ActionKind.MOVE_AHEAD:
                dx, dz = _YAW_STEP[yi]
                nxt = (x + dx, z + dz, yi)
                if not (0 <= nxt[0] < m and 0 <= nxt[1] < m):
                    continue
                if not navigable[nxt[1] * m + nxt[0]]:
                    continue
            elif act == ActionKind.ROTATE_LEFT:
                nxt = (x, z, (yi - 1) % 4)
            else:
                nxt = (x, z, (yi + 1) % 4)
            if nxt in parents:
                continue
            parents[nxt] = (state, act)
            if nxt[1] * m + nxt[0] in goal_set:
                plan = []
                cur = nxt
                while parents[cur] is not None:
                    cur, a = parents[cur]
                    plan.append(a)
                plan.reverse()
                return plan
            q.append(nxt)
    raise Unreachable(f"no path from {start} to {len(goal_set)} goal grids")


def reachable_from(navigable: np.ndarray, map_cfg: MapConfig,
                   start_idx: int) -> np.ndarray:
    """Boolean field of grids reachable by 4-neighbor moves over navigable."""
    m = map_cfg.grid_side
    seen = np.zeros_like(navigable)
    if not navigable[start_idx]:
        seen[start_idx] = True
    q = deque([start_idx])
    seen[start_idx] = True
    while q:
        i = q.popleft()
        x, z = i % m, i // m
        for dx, dz in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nx, nz = x + dx, z + dz
            if 0 <= nx < m and 0 <= nz < m:
                j = nz * m + nx
                if navigable[j] and not seen[j]:
                    seen[j] = True
                    q.append(j)
    return seen


def face_target(agent_grid: tuple[int, int], yaw: int,
                target_grid: tuple[int, int]) -> list[ActionKind]:
    """0-2 rotations snapping yaw to the quantized bearing toward the target."""
    dx = target_grid[0] - agent_grid[0]
    dz = target_grid[1] - agent_grid[1]
    if dx == 0 and dz == 0:
        return []
    bearing = np.degrees(np.arctan2(dx, dz)) % 360.0
    quantized = int(np.floor((bearing + 45.0) / 90.0)) * 90 % 360
    delta = (quantized - yaw) % 360
    return {
        0: [],
        90: [ActionKind.ROTATE_RIGHT],
        180: [ActionKind.ROTATE_RIGHT, ActionKind.ROTATE_RIGHT],
        270: [ActionKind.ROTATE_LEFT],
    }[delta]


def fine_features(frame, agent_grid: tuple[int, int], yaw: int, horizon: int,
                  target_grid: tuple[int, int], target_id: int,
                  reach: float = REACH_DISTANCE,
                  nav_bits: tuple = (1.0, 1.0, 1.0, 1.0)) -> np.ndarray:
    """Fixed-length egocentric features for the refinement policy.

    Offsets are cell counts in the agent frame (lateral right-positive,
    forward), distances in meters. nav_bits is the caller's belief about
    the ahead/left/right/back cells being walkable (the learned map at run
    time, ground truth during expert labeling); the last four entries are
    frame statistics (target bearing in the fov, center and half-fan
    clearances) that disambiguate rotate-versus-move choices.
    """
    dx = target_grid[0] - agent_grid[0]
    dz = target_grid[1] - agent_grid[1]
    rad = np.deg2rad(yaw)
    fwd = dx * np.sin(rad) + dz * np.cos(rad)
    lat = dx * np.cos(rad) - dz * np.sin(rad)
    dist = float(np.hypot(dx, dz)) * CELL_SIZE
    hits = frame.obj_id == target_id
    visible = bool(hits.any())
    frac = float(hits.mean())
    min_hit = float(frame.dist[hits].min()) if visible else float(frame.max_range)
    half = frame.n_rays // 2
    blocked = float(frame.dist[half] <= CELL_SIZE + 0.05)
    if visible:
        cols = np.nonzero(hits)[0]
        bearing = float(np.mean(frame.fov_deg * (cols / frame.n_rays - 0.5))) / 30.0
    else:
        bearing = 0.0
    return np.array([
        float(lat), float(fwd), dist, horizon / 60.0,
        float(visible), frac, min_hit, float(dist <= reach), blocked,
        float(nav_bits[0]), float(nav_bits[1]), float(nav_bits[2]),
        float(nav_bits[3]),
        bearing, float(frame.dist[half]),
        float(frame.dist[:half].mean()), float(frame.dist[half:].mean()),
    ])


def neighbor_nav_bits(nav_ok, agent_grid: tuple[int, int], yaw: int) -> tuple:
    """Ahead/left/right/back walkability through a (gx, gz) -> bool probe."""
    from .world import yaw_direction

    bits = []
    for off in (0, 270, 90, 180):
        dx, dz = yaw_direction(yaw + off)
        bits.append(float(nav_ok(agent_grid[0] + dx, agent_grid[1] + dz)))
    return tuple(bits)


def fine_policy(features: np.ndarray, target_class: int, params) -> int:
    """Index into the fine action space (8 motions + Interact).

    Shared linear feature map, then the target class's softmax head; ties
    resolve to the smaller action index.
    """
    if params is None:
        raise UntrainedPolicy("fine policy parameters missing")
    from .imitation import policy_logits

    logits = policy_logits(features[None, :], np.array([target_class]), params)[0]
    return int(np.argmax(logits))


# ---------------------------------------------------------------------------
# Episode driver: world + mapping + representation in one loop


class EpisodeDriver:
    """Owns one episode's world, pose estimate, and scene representation.

    exec_action is the single choke point: it steps the world, accumulates
    the pose, renders, projects, labels and applies exactly one
    representation update, so every decision sees a current map.
    """

    def __init__(self, scene: GridScene, agent: AgentState, scene_map,
                 map_cfg: MapConfig = MapConfig(),
                 render_cfg: RenderConfig = RenderConfig(),
                 control_cfg: ControlConfig = ControlConfig(),
                 rng: Optional[np.random.Generator] = None,
                 trace_fp=None, on_step=None):
        self.scene = scene
        self.agent = agent
        self.scene_map = scene_map
        self.map_cfg = map_cfg
        self.render_cfg = render_cfg
        self.cfg = control_cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.trace_fp = trace_fp
        self.on_step = on_step

        self.anchor = (agent.x, agent.z)
        self.pose = PoseEstimate(0.0, 0.0, agent.yaw, agent.horizon)
        self.steps = 0
        self.updates = 0
        self.collisions = 0
        self.frame = None
        self.placed_ids: set[int] = set()
        self.collision_obstacles: set[int] = set()
        self.updated_grids = np.zeros(map_cfg.n_grids, dtype=bool)
        self.trajectory: list[tuple[int, int]] = [(agent.x, agent.z)]
        # episode-long detection memory: id -> (perceived class, bits, grid)
        self.seen: dict[int, tuple[int, int, int]] = {}
        self.observe()

    # -- geometry helpers

    def grid_of_cell(self, cell: tuple[int, int]) -> tuple[int, int]:
        half = self.map_cfg.grid_side // 2
        return (cell[0] - self.anchor[0] + half, cell[1] - self.anchor[1] + half)

    def cell_of_grid(self, grid: tuple[int, int]) -> tuple[int, int]:
        half = self.map_cfg.grid_side // 2
        return (grid[0] - half + self.anchor[0], grid[1] - half + self.anchor[1])

    def agent_grid(self) -> tuple[int, int]:
        return self.grid_of_cell((self.agent.x, self.agent.z))

    def agent_index(self) -> int:
        gx, gz = self.agent_grid()
        return gz * self.map_cfg.grid_side + gx

    # -- perception loop

    def observe(self) -> None:
        self.frame = render_egocentric(self.scene, self.agent, self.render_cfg,
                                       self.rng)
        pts = project_frame(self.frame, self.pose, self.scene.roster)
        obs = bin_points(pts, self.map_cfg)
        labels = soft_labels(obs, self.cfg.rho)
        self.scene_map.update(labels)
        self.updates += 1
        self.updated_grids |= labels.v
        f = self.frame
        for ray in np.nonzero(f.obj_id >= 0)[0]:
            oid = int(f.obj_id[ray])
            g = self.perceived_grid(oid)
            if g is not None:
                self.seen[oid] = (int(f.class_id[ray]), int(f.affordance[ray]), g)
        held = self.agent.held
        if held is not None and held in self.seen:
            del self.seen[held]

    def exec_action(self, action: Action) -> StepResult:
        held_before = self.agent.held
        _, _, result = world_step(self.scene, self.agent, action,
                                  self.render_cfg, self.cfg.reach)
        self.steps += 1
        if result.ok and action.kind == ActionKind.PUT and held_before is not None:
            self.placed_ids.add(held_before)
        if not result.ok and result.reason == FailReason.COLLISION:
            self.collisions += 1
            gx, gz = self._ahead_grid(action.kind)
            if 0 <= gx < self.map_cfg.grid_side and 0 <= gz < self.map_cfg.grid_side:
                self.collision_obstacles.add(gz * self.map_cfg.grid_side + gx)
        self.pose = update_pose(self.pose, action.kind, result.ok)
        if result.ok and action.kind in (
                ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT,
                ActionKind.MOVE_RIGHT, ActionKind.MOVE_BACK):
            self.trajectory.append((self.agent.x, self.agent.z))
        self.observe()
        self.trace({"event": "step", "action": action.kind.name,
                    "target": action.target, "ok": result.ok,
                    "reason": result.reason.name if result.reason else None})
        if self.on_step is not None:
            self.on_step(self)
        return result

    def _ahead_grid(self, kind: ActionKind) -> tuple[int, int]:
        offset = {ActionKind.MOVE_AHEAD: 0, ActionKind.MOVE_RIGHT: 90,
                  ActionKind.MOVE_BACK: 180, ActionKind.MOVE_LEFT: 270}[kind]
        from .world import yaw_direction
        dx, dz = yaw_direction(self.agent.yaw + offset)
        gx, gz = self.agent_grid()
        return gx + dx, gz + dz

    # -- maps

    def nav_mask(self) -> np.ndarray:
        """Navigability per map grid under the active ablation mode."""
        if self.cfg.use_navigation_affordance:
            probs = self.scene_map.query(self.scene.roster.navigable_class)
            mask = probs > self.cfg.tau_nav
        else:
            # point-obstacle fallback: optimistic everywhere except bumps
            mask = np.ones(self.map_cfg.n_grids, dtype=bool)
            if self.collision_obstacles:
                mask[list(self.collision_obstacles)] = False
        mask[self.agent_index()] = True
        return mask

    # -- frame queries

    def perceived_grid(self, obj_id: int) -> Optional[int]:
        """Map grid of an object id from the current frame, or None."""
        hits = np.nonzero(self.frame.obj_id == obj_id)[0]
        if hits.size == 0:
            return None
        ray = int(hits[np.argmin(self.frame.dist[hits])])
        b = np.deg2rad(self.frame.ray_bearings()[ray])
        x = self.pose.x + self.frame.dist[ray] * np.sin(b)
        z = self.pose.z + self.frame.dist[ray] * np.cos(b)
        gx, gz = self.map_cfg.to_grid(x, z)
        if not self.map_cfg.in_bounds(gx, gz):
            return None
        return int(gz) * self.map_cfg.grid_side + int(gx)

    def frame_candidates(self, noun_class: Optional[int],
                         exclude: set[int] = frozenset(),
                         any_surface: bool = False) -> list[tuple[int, float]]:
        """(object id, min hit distance) for frame hits matching the noun,
        nearest first then smaller id."""
        f = self.frame
        found: dict[int, float] = {}
        for ray in range(f.n_rays):
            oid = int(f.obj_id[ray])
            if oid < 0 or oid in exclude:
                continue
            if any_surface:
                aff = int(f.affordance[ray])
                if not (aff & AFF_PUTABLE):
                    continue
                if aff & (AFF_OPENABLE | AFF_CLOSEABLE):
                    continue
            elif int(f.class_id[ray]) != noun_class:
                continue
            d = float(f.dist[ray])
            if oid not in found or d < found[oid]:
                found[oid] = d
        return sorted(found.items(), key=lambda kv: (kv[1], kv[0]))

    def seen_candidates(self, noun_class: Optional[int],
                        exclude: set[int] = frozenset(),
                        any_surface: bool = False) -> list[tuple[int, int]]:
        """(object id, last-known grid) from detection memory, nearest first."""
        m = self.map_cfg.grid_side
        ax, az = self.agent_grid()
        out = []
        for oid, (cls, aff, grid) in self.seen.items():
            if oid in exclude:
                continue
            if any_surface:
                if not (aff & AFF_PUTABLE) or aff & (AFF_OPENABLE | AFF_CLOSEABLE):
                    continue
            elif cls != noun_class:
                continue
            d2 = (grid % m - ax) ** 2 + (grid // m - az) ** 2
            out.append((d2, oid, grid))
        out.sort()
        return [(oid, grid) for _, oid, grid in out]

    def affordance_bits(self, obj_id: int) -> int:
        hits = self.frame.obj_id == obj_id
        if not hits.any():
            return 0
        return int(self.frame.affordance[hits][0])

    def trace(self, record: dict) -> None:
        if self.trace_fp is not None:
            self.trace_fp.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Interaction programs


_HEAT_MACRO = ("open", "put", "close", "toggle_on", "toggle_off",
               "open", "pick_back", "close")
_COOL_MACRO = ("open", "put", "close", "open", "pick_back", "close")
_CLEAN_MACRO = ("put", "toggle_on", "toggle_off", "pick_back")

_STEP_KIND = {
    "open": ActionKind.OPEN, "close": ActionKind.CLOSE,
    "put": ActionKind.PUT, "toggle_on": ActionKind.TOGGLE_ON,
    "toggle_off": ActionKind.TOGGLE_OFF, "pick_back": ActionKind.PICK_UP,
}


def execute_interaction(driver: EpisodeDriver, verb: str, target_id: int
                        ) -> tuple[bool, Optional[FailReason]]:
    """Run the verb's action program against a concrete target.

    Put checks the target's observed effective affordances and opens a
    closed openable receptacle first (when gating is enabled). Heat, Cool
    and Clean expand to fixed appliance macros; redundant open/close/toggle
    sub-steps are skipped when the observed state already satisfies them.
    Stops at the first failure.
    """
    cfg = driver.cfg

    def run(kind: ActionKind, tid: int) -> Optional[FailReason]:
        res = driver.exec_action(Action(kind, tid))
        return None if res.ok else (res.reason or FailReason.NO_TARGET)

    def state_skips(kind: ActionKind, tid: int) -> bool:
        bits = driver.affordance_bits(tid)
        if bits == 0:
            return False
        if kind == ActionKind.OPEN:
            return bool(bits & AFF_CLOSEABLE)     # already open
        if kind == ActionKind.CLOSE:
            return bool(bits & AFF_OPENABLE)      # already closed
        if kind == ActionKind.TOGGLE_ON:
            return bool(bits & AFF_TOGGLE_OFF)    # already on
        if kind == ActionKind.TOGGLE_OFF:
            return bool(bits & AFF_TOGGLE_ON)     # already off
        return False

    single = {"PickUp": ActionKind.PICK_UP, "Toggle": ActionKind.TOGGLE_ON,
              "Slice": ActionKind.SLICE}
    if verb in single:
        r = run(single[verb], target_id)
        return r is None, r

    if verb == "Put":
        bits = driver.affordance_bits(target_id)
        if cfg.open_gate and (bits & AFF_OPENABLE):
            r = run(ActionKind.OPEN, target_id)
            if r is not None:
                return False, r
        r = run(ActionKind.PUT, target_id)
        if r is not None:
            return False, r
        if cfg.close_after_put and (driver.affordance_bits(target_id) & AFF_CLOSEABLE):
            r = run(ActionKind.CLOSE, target_id)
            if r is not None:
                return False, r
        return True, None

    if verb in ("Heat", "Cool", "Clean"):
        carried = driver.agent.held
        if carried is None:
            return False, FailReason.HAND_EMPTY
        macro = {"Heat": _HEAT_MACRO, "Cool": _COOL_MACRO, "Clean": _CLEAN_MACRO}[verb]
        for op in macro:
            kind = _STEP_KIND[op]
            tid = carried if op == "pick_back" else target_id
            if op != "pick_back" and op != "put" and state_skips(kind, target_id):
                continue
            r = run(kind, tid)
            if r is not None:
                return False, r
        return True, None

    return False, FailReason.NO_TARGET


# ---------------------------------------------------------------------------
# The per-subgoal state machine


def run_subgoal(driver: EpisodeDriver, subgoal: Subgoal, policy_params,
                rng: Optional[np.random.Generator] = None) -> SubgoalResult:
    """Drive one (verb, noun) primitive to completion or typed failure.

    RandomWalk until the noun's class shows up in a frame, Coarse toward the
    map's best object-affordance grid, Align, Fine until the policy emits
    Interact (bounded), then the interaction program. Interaction failures
    retry from Coarse up to the retry budget. GotoLocation skips Fine and
    Interact.
    """
    cfg = driver.cfg
    rng = rng if rng is not None else driver.rng
    roster = driver.scene.roster
    verb, noun = subgoal.verb, subgoal.noun
    any_surface = noun == ANY_SURFACE
    noun_class = None if any_surface else roster.class_id(noun)
    aff_class = roster.affordance_class(VERB_AFFORDANCE[verb])
    putable_class = roster.affordance_class("putable")
    exclude_ids = driver.placed_ids if verb in ("PickUp", "GotoLocation") else set()

    start_steps = driver.steps
    attempts = 0
    blacklist: set[int] = set()
    target_id: Optional[int] = None
    target_grid: Optional[int] = None
    phase = Phase.RANDOM_WALK
    walk_plan: deque = deque()
    walk_resamples = 0

    def trace_phase(new):
        driver.trace({"event": "phase", "subgoal": [verb, noun], "to": new.value,
                      "step": driver.steps})

    def budget_left():
        return cfg.subgoal_budget - (driver.steps - start_steps)

    def refresh_detection():
        nonlocal target_id, target_grid
        cands = driver.seen_candidates(noun_class, exclude_ids, any_surface)
        if target_id is not None:
            for oid, grid in cands:
                if oid == target_id:
                    target_grid = grid
                    return
            target_id = None  # memory dropped it (picked up / excluded)
        if cands:
            target_id, target_grid = cands[0]

    refresh_detection()
    if target_id is not None:
        phase = Phase.COARSE if cfg.use_coarse else Phase.ALIGN
    trace_phase(phase)

    while True:
        if budget_left() <= 0:
            trace_phase(Phase.FAILED)
            return SubgoalResult(verb, noun, "budget_exhausted",
                                 driver.steps - start_steps, attempts)

        if phase == Phase.RANDOM_WALK:
            if target_id is not None:
                phase = Phase.COARSE if cfg.use_coarse else Phase.ALIGN
                trace_phase(phase)
                continue
            if not walk_plan:
                nav = driver.nav_mask()
                try:
                    waypoint = random_walk_target(nav, driver.agent_index(), rng,
                                                  driver.map_cfg)
                    gx, gz = driver.agent_grid()
                    plan = bfs_plan(nav, driver.map_cfg,
                                    (gx, gz, driver.agent.yaw),
                                    waypoint.destination_set)
                    walk_plan.extend(plan if plan else
                                     [ActionKind.ROTATE_RIGHT])
                except (NoNavigableCell, Unreachable):
                    walk_resamples += 1
                    walk_plan.append(ActionKind.ROTATE_RIGHT)
            res = driver.exec_action(Action(walk_plan.popleft()))
            if not res.ok:
                walk_plan.clear()
            refresh_detection()
            continue

        if phase == Phase.COARSE:
            nav = driver.nav_mask()
            ct = coarse_target(
                driver.scene_map, noun_class if not any_surface else putable_class,
                aff_class if cfg.use_affordance_union else None,
                driver.agent_index(), driver.map_cfg,
                exclude=frozenset(blacklist),
                radius_m=cfg.destination_radius_m)
            target_grid = ct.target_grid
            driver.trace({"event": "coarse_target", "grid": ct.target_grid,
                          "step": driver.steps})
            gx, gz = driver.agent_grid()
            try:
                plan = bfs_plan(nav, driver.map_cfg, (gx, gz, driver.agent.yaw),
                                ct.destination_set)
            except Unreachable:
                # approach the nearest reachable grid; the map grows as we move
                reach_field = reachable_from(nav, driver.map_cfg,
                                             driver.agent_index())
                idxs = np.nonzero(reach_field)[0]
                m = driver.map_cfg.grid_side
                tx, tz = ct.target_grid % m, ct.target_grid // m
                d2 = (idxs % m - tx) ** 2 + (idxs // m - tz) ** 2
                best = int(idxs[np.lexsort((idxs, d2))[0]])
                if best == driver.agent_index():
                    attempts += 1
                    blacklist.add(ct.target_grid)
                    if attempts >= cfg.retries:
                        trace_phase(Phase.FAILED)
                        return SubgoalResult(verb, noun, "retries_exhausted",
                                             driver.steps - start_steps, attempts,
                                             "unreachable")
                    continue
                plan = bfs_plan(nav, driver.map_cfg, (gx, gz, driver.agent.yaw),
                                [best])
                for act in plan:
                    if budget_left() <= 0:
                        break
                    if not driver.exec_action(Action(act)).ok:
                        break
                refresh_detection()
                continue
            failed = False
            for act in plan:
                if budget_left() <= 0:
                    break
                if not driver.exec_action(Action(act)).ok:
                    failed = True  # stale map; replan from the new snapshot
                    break
            refresh_detection()
            if failed:
                continue
            phase = Phase.ALIGN
            trace_phase(phase)
            continue

        if phase == Phase.ALIGN:
            if target_grid is None:
                target_grid = driver.agent_index()
            m = driver.map_cfg.grid_side
            tg = (target_grid % m, target_grid // m)
            for act in face_target(driver.agent_grid(), driver.agent.yaw, tg):
                if budget_left() <= 0:
                    break
                driver.exec_action(Action(act))
            refresh_detection()
            if verb == "GotoLocation":
                trace_phase(Phase.DONE)
                return SubgoalResult(verb, noun, "done",
                                     driver.steps - start_steps, attempts)
            phase = Phase.FINE if cfg.use_fine else Phase.INTERACT
            trace_phase(phase)
            continue

        if phase == Phase.FINE:
            emitted_interact = False
            m = driver.map_cfg.grid_side
            for _ in range(cfg.fine_horizon):
                if budget_left() <= 0:
                    break
                tg = (target_grid % m, target_grid // m)
                head_class = noun_class
                if head_class is None:
                    head_class = _candidate_class(driver, target_id)
                nav = driver.nav_mask()

                def nav_ok(gx, gz, _nav=nav, _m=m):
                    return (0 <= gx < _m and 0 <= gz < _m
                            and bool(_nav[gz * _m + gx]))

                feats = fine_features(driver.frame, driver.agent_grid(),
                                      driver.agent.yaw, driver.agent.horizon,
                                      tg, target_id if target_id is not None else -1,
                                      cfg.reach,
                                      neighbor_nav_bits(nav_ok, driver.agent_grid(),
                                                        driver.agent.yaw))
                choice = fine_policy(feats, head_class, policy_params)
                if choice == INTERACT:
                    emitted_interact = True
                    break
                driver.exec_action(Action(FINE_ACTION_KINDS[choice]))
                refresh_detection()
            if emitted_interact:
                phase = Phase.INTERACT
                trace_phase(phase)
                continue
            attempts += 1
            if attempts >= cfg.retries:
                trace_phase(Phase.FAILED)
                return SubgoalResult(verb, noun, "retries_exhausted",
                                     driver.steps - start_steps, attempts,
                                     "fine_no_interact")
            phase = Phase.COARSE if cfg.use_coarse else Phase.ALIGN
            trace_phase(phase)
            continue

        if phase == Phase.INTERACT:
            cands = driver.frame_candidates(noun_class, exclude_ids, any_surface)
            chosen = None
            if target_id is not None and any(c[0] == target_id for c in cands):
                chosen = target_id
            elif cands:
                chosen = cands[0][0]
            if chosen is None:
                attempts += 1
                if target_grid is not None:
                    blacklist.add(target_grid)
                if attempts >= cfg.retries:
                    trace_phase(Phase.FAILED)
                    return SubgoalResult(verb, noun, "retries_exhausted",
                                         driver.steps - start_steps, attempts,
                                         "no_candidate_visible")
                phase = Phase.COARSE if cfg.use_coarse else Phase.RANDOM_WALK
                target_id = None
                trace_phase(phase)
                continue
            ok, reason = execute_interaction(driver, verb, chosen)
            if ok:
                trace_phase(Phase.DONE)
                return SubgoalResult(verb, noun, "done",
                                     driver.steps - start_steps, attempts)
            attempts += 1
            driver.trace({"event": "interaction_failed", "reason": reason.name,
                          "step": driver.steps})
            if attempts >= cfg.retries:
                trace_phase(Phase.FAILED)
                return SubgoalResult(verb, noun, "retries_exhausted",
                                     driver.steps - start_steps, attempts,
                                     reason.name.lower())
            phase = Phase.COARSE if cfg.use_coarse else Phase.ALIGN
            trace_phase(phase)
            continue


def _candidate_class(driver: EpisodeDriver, target_id: Optional[int]) -> int:
    if target_id is not None:
        hits = driver.frame.obj_id == target_id
        if hits.any():
            return int(driver.frame.class_id[hits][0])
        if target_id in driver.scene.objects:
            return driver.scene.objects[target_id].class_id
    return 0
