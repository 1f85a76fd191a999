"""Full-knowledge expert labeling and behavior cloning of the fine policy.

The expert enumerates every pose from which an interaction verb succeeds,
labels nearby poses with the first action of their shortest path into that
set, and the resulting (features, class, action) rows train a shared
linear feature map with per-object-class softmax heads.
"""

from __future__ import annotations

import csv
import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .control import (
    FINE_ACTION_KINDS, INTERACT, N_FEATURES, N_FINE_ACTIONS, fine_features,
    neighbor_nav_bits,
)
from .raycast import RenderConfig, render_four_yaws
from .scenegen import SceneGenConfig, generate_scene
from .world import (
    CELL_SIZE, HORIZON_MAX, HORIZON_MIN, HORIZON_STEP, INITIAL_HORIZON,
    REACH_DISTANCE, Action, ActionKind, AgentState, GridScene, yaw_direction,
)

HORIZONS = tuple(range(HORIZON_MIN, HORIZON_MAX + 1, HORIZON_STEP))
PRIMITIVE_VERBS = ("PickUp", "Put", "Open", "Close", "ToggleOn", "ToggleOff", "Slice")

_VERB_ACTION = {
    "PickUp": ActionKind.PICK_UP, "Put": ActionKind.PUT,
    "Open": ActionKind.OPEN, "Close": ActionKind.CLOSE,
    "ToggleOn": ActionKind.TOGGLE_ON, "ToggleOff": ActionKind.TOGGLE_OFF,
    "Slice": ActionKind.SLICE,
}


class NoInteractableState(RuntimeError):
    pass


class DegenerateDataset(UserWarning):
    pass


# ---------------------------------------------------------------------------
# Expert machinery


class ExpertView:
    """Frame cache over one scene state; frames ignore horizon.

    All four yaws of a cell are marched in one batch on first touch. Views
    are shared between (object, verb) pairs whose scene states render
    identically, so a whole scene usually needs only a handful of them.
    """

    def __init__(self, scene: GridScene, render_cfg: RenderConfig):
        self.scene = scene
        self.render_cfg = render_cfg
        self.nav = scene.navigable_mask()
        self._frames: dict[tuple[int, int, int], object] = {}

    def frame(self, x: int, z: int, yaw: int):
        key = (x, z, yaw)
        f = self._frames.get(key)
        if f is None:
            for yw, fr in render_four_yaws(self.scene, (x, z), self.render_cfg,
                                           INITIAL_HORIZON).items():
                self._frames[(x, z, yw)] = fr
            f = self._frames[key]
        return f

    def visible(self, x: int, z: int, yaw: int, obj_id: int) -> bool:
        return bool(np.any(self.frame(x, z, yaw).obj_id == obj_id))


def _render_signature(scene: GridScene) -> tuple:
    """Hashable digest of everything that affects rendering."""
    return tuple(
        (o.id, o.cell, o.container_id, o.held, o.is_open)
        for o in (scene.objects[i] for i in sorted(scene.objects)))


def _get_view(variant: GridScene, render_cfg: RenderConfig,
              cache: Optional[dict]) -> ExpertView:
    if cache is None:
        return ExpertView(variant, render_cfg)
    key = _render_signature(variant)
    view = cache.get(key)
    if view is None:
        view = ExpertView(variant, render_cfg)
        cache[key] = view
    return view


def make_variant(scene: GridScene, object_id: int, verb: str
                 ) -> tuple[GridScene, Optional[int]]:
    """Scene clone adjusted so the verb is applicable, plus the held id.

    Put opens openable targets (runtime gating opens them before putting),
    Close/ToggleOff force the complementary state, Put/Slice move a carried
    object into the hand. Raises NoInteractableState when no prop exists.
    """
    sc = scene.clone()
    target = sc.objects[object_id]
    spec = sc.roster.spec(target.class_id)
    held = None

    def carry(obj_id: int):
        o = sc.objects[obj_id]
        o.cell = None
        o.container_id = None
        o.held = True
        return obj_id

    if verb == "Put":
        options = [o.id for o in sc.objects.values()
                   if sc.roster.spec(o.class_id).pickupable and o.id != object_id]
        if not options:
            raise NoInteractableState("nothing available to hold for Put")
        held = carry(min(options))
        if spec.openable:
            target.is_open = True
    elif verb == "Slice":
        knives = [o.id for o in sc.objects.values()
                  if sc.roster.spec(o.class_id).knife and o.id != object_id]
        if not knives:
            raise NoInteractableState("no knife in scene")
        held = carry(min(knives))
        target.is_sliced = False
    elif verb == "Open":
        target.is_open = False
    elif verb == "Close":
        target.is_open = True
    elif verb == "ToggleOn":
        target.is_toggled = False
    elif verb == "ToggleOff":
        target.is_toggled = True
    return sc, held


def verb_applicable(scene: GridScene, object_id: int, verb: str) -> bool:
    spec = scene.roster.spec(scene.objects[object_id].class_id)
    return {
        "PickUp": spec.pickupable, "Put": spec.receptacle,
        "Open": spec.openable, "Close": spec.openable,
        "ToggleOn": spec.toggleable, "ToggleOff": spec.toggleable,
        "Slice": spec.sliceable,
    }[verb]


def _static_ok(scene: GridScene, object_id: int, verb: str,
               held: Optional[int]) -> bool:
    """Non-geometric part of the step() success predicate."""
    t = scene.objects[object_id]
    spec = scene.roster.spec(t.class_id)
    if verb == "PickUp":
        return spec.pickupable and held is None
    if verb == "Put":
        return (held is not None and spec.receptacle
                and (not spec.openable or t.is_open))
    if verb == "Open":
        return spec.openable and not t.is_open
    if verb == "Close":
        return spec.openable and t.is_open
    if verb == "ToggleOn":
        return spec.toggleable and not t.is_toggled
    if verb == "ToggleOff":
        return spec.toggleable and t.is_toggled
    if verb == "Slice":
        return (spec.sliceable and not t.is_sliced and held is not None
                and scene.roster.spec(scene.objects[held].class_id).knife)
    return False


def _interactable_xyzyaw(variant: GridScene, view: ExpertView, object_id: int,
                         verb: str, held: Optional[int], reach: float) -> set:
    root = variant.root_cell(object_id)
    if root is None or not _static_ok(variant, object_id, verb, held):
        return set()
    out = set()
    r_cells = int(np.ceil(reach / CELL_SIZE))
    rx, rz = root
    for x in range(max(0, rx - r_cells), min(variant.width, rx + r_cells + 1)):
        for z in range(max(0, rz - r_cells), min(variant.height, rz + r_cells + 1)):
            if not view.nav[x, z]:
                continue
            if np.hypot(x - rx, z - rz) * CELL_SIZE > reach + 1e-9:
                continue
            for yaw in (0, 90, 180, 270):
                if view.visible(x, z, yaw, object_id):
                    out.add((x, z, yaw))
    return out


def expert_interactable_states(scene: GridScene, object_id: int, verb: str,
                               render_cfg: RenderConfig = RenderConfig(),
                               reach: float = REACH_DISTANCE,
                               view_cache: Optional[dict] = None) -> set:
    """All (x, z, yaw, horizon) tuples from which the verb succeeds.

    Exact oracle enumeration; interaction success is horizon-independent so
    the set spans every horizon. Raises NoInteractableState when empty.
    """
    variant, held = make_variant(scene, object_id, verb)
    view = _get_view(variant, render_cfg, view_cache)
    base = _interactable_xyzyaw(variant, view, object_id, verb, held, reach)
    if not base:
        raise NoInteractableState(f"{verb} on object {object_id}")
    return {(x, z, yaw, h) for (x, z, yaw) in base for h in HORIZONS}


def _forward_state(state, action_idx: int, nav) -> Optional[tuple]:
    """Pose-graph transition for one fine motion action, or None if illegal."""
    x, z, yaw, h = state
    kind = FINE_ACTION_KINDS[action_idx]
    if kind in (ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT,
                ActionKind.MOVE_RIGHT, ActionKind.MOVE_BACK):
        offset = {ActionKind.MOVE_AHEAD: 0, ActionKind.MOVE_RIGHT: 90,
                  ActionKind.MOVE_BACK: 180, ActionKind.MOVE_LEFT: 270}[kind]
        dx, dz = yaw_direction(yaw + offset)
        nx, nz = x + dx, z + dz
        if not (0 <= nx < nav.shape[0] and 0 <= nz < nav.shape[1]) or not nav[nx, nz]:
            return None
        return (nx, nz, yaw, h)
    if kind == ActionKind.ROTATE_LEFT:
        return (x, z, (yaw - 90) % 360, h)
    if kind == ActionKind.ROTATE_RIGHT:
        return (x, z, (yaw + 90) % 360, h)
    if kind == ActionKind.LOOK_UP:
        return (x, z, yaw, h - HORIZON_STEP) if h - HORIZON_STEP >= HORIZON_MIN else None
    if kind == ActionKind.LOOK_DOWN:
        return (x, z, yaw, h + HORIZON_STEP) if h + HORIZON_STEP <= HORIZON_MAX else None
    return None


def _backward_neighbors(state, nav):
    """(source, action_idx) pairs whose forward transition lands on state."""
    x, z, yaw, h = state
    out = []
    for idx, kind in enumerate(FINE_ACTION_KINDS):
        if kind in (ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT,
                    ActionKind.MOVE_RIGHT, ActionKind.MOVE_BACK):
            offset = {ActionKind.MOVE_AHEAD: 0, ActionKind.MOVE_RIGHT: 90,
                      ActionKind.MOVE_BACK: 180, ActionKind.MOVE_LEFT: 270}[kind]
            dx, dz = yaw_direction(yaw + offset)
            sx, sz = x - dx, z - dz
            if 0 <= sx < nav.shape[0] and 0 <= sz < nav.shape[1] and nav[sx, sz]:
                out.append(((sx, sz, yaw, h), idx))
        elif kind == ActionKind.ROTATE_LEFT:
            out.append(((x, z, (yaw + 90) % 360, h), idx))
        elif kind == ActionKind.ROTATE_RIGHT:
            out.append(((x, z, (yaw - 90) % 360, h), idx))
        elif kind == ActionKind.LOOK_UP:
            if h + HORIZON_STEP <= HORIZON_MAX:
                out.append(((x, z, yaw, h + HORIZON_STEP), idx))
        elif kind == ActionKind.LOOK_DOWN:
            if h - HORIZON_STEP >= HORIZON_MIN:
                out.append(((x, z, yaw, h - HORIZON_STEP), idx))
    return out


def expert_label_short_horizon(scene: GridScene, object_id: int, verb: str,
                               radius: int = 4,
                               render_cfg: RenderConfig = RenderConfig(),
                               reach: float = REACH_DISTANCE,
                               view_cache: Optional[dict] = None):
    """Label states within `radius` expert steps of the interactable set.

    Returns (labels, variant_scene, held_id) where labels maps each
    (x, z, yaw, horizon) to (fine action index, steps_to_interaction).
    Interactable states themselves get (Interact, 0); others the first
    action of a shortest path, ties toward the smaller action index.
    """
    variant, held = make_variant(scene, object_id, verb)
    view = _get_view(variant, render_cfg, view_cache)
    base = _interactable_xyzyaw(variant, view, object_id, verb, held, reach)
    if not base:
        raise NoInteractableState(f"{verb} on object {object_id}")
    nav = view.nav

    # interactability is horizon-uniform, so a Look edge never shortens a
    # path into the set; plan on (x, z, yaw) and replicate over horizons
    h0 = HORIZONS[0]
    dist: dict[tuple, int] = {}
    frontier = []
    for (x, z, yaw) in base:
        s = (x, z, yaw, h0)
        dist[s] = 0
        frontier.append(s)
    motion_idxs = [i for i, k in enumerate(FINE_ACTION_KINDS)
                   if k not in (ActionKind.LOOK_UP, ActionKind.LOOK_DOWN)]
    for d in range(1, radius + 1):
        nxt = []
        for s in frontier:
            for src, idx in _backward_neighbors(s, nav):
                if idx in motion_idxs and src not in dist:
                    dist[src] = d
                    nxt.append(src)
        frontier = nxt

    root = variant.root_cell(object_id)
    labels: dict[tuple, tuple[int, int]] = {}
    for s, d in dist.items():
        if d == 0:
            lab = (INTERACT, 0)
        else:
            optimal = [idx for idx in motion_idxs
                       if (t := _forward_state(s, idx, nav)) is not None
                       and dist.get(t, -1) == d - 1]
            lab = (_canonical_action(s, optimal, root), d)
        for h in HORIZONS:
            labels[(s[0], s[1], s[2], h)] = lab
    return labels, variant, held


def _canonical_action(state, optimal: list[int], root) -> int:
    """Pick among equally-short first actions by target-offset alignment.

    Every candidate is optimal; preferring the geometrically obvious one
    keeps the labels a smooth function of the egocentric features instead
    of leaking hidden scene context through arbitrary tie order. Remaining
    ties fall back to action index order.
    """
    x, z, yaw, _h = state
    rad = np.deg2rad(yaw)
    dx, dz = root[0] - x, root[1] - z
    fwd = dx * np.sin(rad) + dz * np.cos(rad)
    lat = dx * np.cos(rad) - dz * np.sin(rad)
    score = {
        0: fwd,            # ahead
        1: -lat,           # left
        2: lat,            # right
        3: -fwd,           # back
        4: -lat * 0.5,     # rotate left
        5: lat * 0.5,      # rotate right
        6: -10.0,          # looks only when nothing else is optimal
        7: -10.0,
    }
    return min(optimal, key=lambda i: (-score[i], i))


def rollout_label(scene_variant: GridScene, held: Optional[int], labels: dict,
                  start, object_id: int, verb: str,
                  render_cfg: RenderConfig = RenderConfig(),
                  reach: float = REACH_DISTANCE) -> tuple[bool, int]:
    """Execute labeled actions from a state; (reached success, steps taken)."""
    from .world import step as world_step

    sc = scene_variant.clone()
    agent = AgentState(*start, held=held)
    steps = 0
    state = tuple(start)
    for _ in range(len(labels) + 1):
        if state not in labels:
            return False, steps
        idx, _ = labels[state]
        if idx == INTERACT:
            _, _, res = world_step(sc, agent, Action(_VERB_ACTION[verb], object_id),
                                   render_cfg, reach)
            return res.ok, steps
        _, _, res = world_step(sc, agent, Action(FINE_ACTION_KINDS[idx]),
                               render_cfg, reach)
        if not res.ok:
            return False, steps
        steps += 1
        state = (agent.x, agent.z, agent.yaw, agent.horizon)
    return False, steps


def expert_route(scene: GridScene, start: tuple[int, int, int], object_id: int,
                 verb: str, render_cfg: RenderConfig = RenderConfig(),
                 reach: float = REACH_DISTANCE,
                 view_cache: Optional[dict] = None) -> list[ActionKind]:
    """Shortest motion-action route from start (x, z, yaw) into the verb's
    interactable set, under full scene knowledge. Horizon plays no role in
    interaction success, so routing stays in (x, z, yaw)."""
    variant, held = make_variant(scene, object_id, verb)
    view = _get_view(variant, render_cfg, view_cache)
    goal = _interactable_xyzyaw(variant, view, object_id, verb, held, reach)
    if not goal:
        raise NoInteractableState(f"{verb} on object {object_id}")
    if tuple(start) in goal:
        return []
    nav = view.nav
    h0 = INITIAL_HORIZON
    parents = {tuple(start): None}
    q = deque([tuple(start)])
    motion_idxs = [i for i, k in enumerate(FINE_ACTION_KINDS)
                   if k not in (ActionKind.LOOK_UP, ActionKind.LOOK_DOWN)]
    while q:
        s = q.popleft()
        for idx in motion_idxs:
            t4 = _forward_state((s[0], s[1], s[2], h0), idx, nav)
            if t4 is None:
                continue
            t = (t4[0], t4[1], t4[2])
            if t in parents:
                continue
            parents[t] = (s, FINE_ACTION_KINDS[idx])
            if t in goal:
                route = []
                cur = t
                while parents[cur] is not None:
                    cur, a = parents[cur]
                    route.append(a)
                route.reverse()
                return route
            q.append(t)
    raise NoInteractableState(f"{verb} on object {object_id}: unreachable")


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class DatasetConfig:
    train_seeds: tuple = tuple(range(1000, 1040))
    heldout_seeds: tuple = tuple(range(2000, 2010))
    scene: SceneGenConfig = field(default_factory=lambda: SceneGenConfig(
        width=10, height=10, wall_density=0.0,
        n_extra_receptacles=4, n_extra_objects=5))
    radius: int = 4
    max_states_per_pair: int = 150
    horizons: tuple = (INITIAL_HORIZON,)
    render: RenderConfig = field(default_factory=RenderConfig)
    reach: float = REACH_DISTANCE


@dataclass
class BCDataset:
    features: np.ndarray      # (N, N_FEATURES)
    class_ids: np.ndarray     # (N,)
    actions: np.ndarray       # (N,) fine action indices
    scene_seeds: np.ndarray   # (N,)
    train_seeds: tuple
    heldout_seeds: tuple
    skipped_pairs: int = 0

    def split(self, which: str) -> np.ndarray:
        seeds = self.train_seeds if which == "train" else self.heldout_seeds
        return np.isin(self.scene_seeds, seeds)

    def __len__(self) -> int:
        return len(self.actions)


def collect_dataset(cfg: DatasetConfig = DatasetConfig()) -> BCDataset:
    """Label every (object, applicable verb) pair over the seeded scenes.

    Deterministic given the seeds; pairs with no interactable state are
    skipped and counted.
    """
    feats, classes, actions, seeds = [], [], [], []
    skipped = 0
    for seed in tuple(cfg.train_seeds) + tuple(cfg.heldout_seeds):
        scene = generate_scene(cfg.scene, seed)
        view_cache: dict = {}
        for oid in sorted(scene.objects):
            target_class = scene.objects[oid].class_id
            for vi, verb in enumerate(PRIMITIVE_VERBS):
                if not verb_applicable(scene, oid, verb):
                    continue
                try:
                    labels, variant, _held = expert_label_short_horizon(
                        scene, oid, verb, cfg.radius, cfg.render, cfg.reach,
                        view_cache)
                except NoInteractableState:
                    skipped += 1
                    continue
                view = _get_view(variant, cfg.render, view_cache)
                root = variant.root_cell(oid)
                nav = view.nav

                def nav_ok(cx, cz, _nav=nav):
                    return (0 <= cx < _nav.shape[0] and 0 <= cz < _nav.shape[1]
                            and bool(_nav[cx, cz]))

                states = sorted(s for s in labels if s[3] in cfg.horizons)
                if len(states) > cfg.max_states_per_pair:
                    rng = np.random.default_rng([seed, oid, vi])
                    pick = rng.choice(len(states), cfg.max_states_per_pair,
                                      replace=False)
                    states = [states[i] for i in sorted(pick)]
                for (x, z, yaw, h) in states:
                    f = fine_features(view.frame(x, z, yaw), (x, z), yaw, h,
                                      root, oid, cfg.reach,
                                      neighbor_nav_bits(nav_ok, (x, z), yaw))
                    feats.append(f)
                    classes.append(target_class)
                    actions.append(labels[(x, z, yaw, h)][0])
                    seeds.append(seed)
    return BCDataset(
        features=np.array(feats) if feats else np.zeros((0, N_FEATURES)),
        class_ids=np.array(classes, dtype=np.int64),
        actions=np.array(actions, dtype=np.int64),
        scene_seeds=np.array(seeds, dtype=np.int64),
        train_seeds=tuple(cfg.train_seeds),
        heldout_seeds=tuple(cfg.heldout_seeds),
        skipped_pairs=skipped,
    )


def save_dataset_csv(ds: BCDataset, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i}" for i in range(ds.features.shape[1])]
                   + ["class", "action", "scene_seed"])
        for i in range(len(ds)):
            w.writerow([repr(float(v)) for v in ds.features[i]]
                       + [int(ds.class_ids[i]), int(ds.actions[i]),
                          int(ds.scene_seeds[i])])


def load_dataset_csv(path, train_seeds, heldout_seeds) -> BCDataset:
    feats, classes, actions, seeds = [], [], [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        nf = len([h for h in header if h.startswith("f")])
        for row in r:
            feats.append([float(v) for v in row[:nf]])
            classes.append(int(row[nf]))
            actions.append(int(row[nf + 1]))
            seeds.append(int(row[nf + 2]))
    return BCDataset(np.array(feats), np.array(classes, dtype=np.int64),
                     np.array(actions, dtype=np.int64),
                     np.array(seeds, dtype=np.int64),
                     tuple(train_seeds), tuple(heldout_seeds))


# ---------------------------------------------------------------------------
# Behavior cloning

@dataclass
class PolicyParams:
    """Shared rectified trunk plus per-object-class softmax heads.

    Each class head is a shared base plus a class-specific offset; the
    offsets are weight-decayed during training so classes pool statistical
    strength while keeping their own classifier.
    """

    feat_mean: np.ndarray     # (n_expanded,) input standardization
    feat_scale: np.ndarray
    shared: np.ndarray        # (hidden, n_expanded)
    shared_bias: np.ndarray   # (hidden,)
    head_base: np.ndarray     # (n_actions, hidden)
    head_base_bias: np.ndarray
    heads: np.ndarray         # (n_classes, n_actions, hidden) offsets
    head_bias: np.ndarray     # (n_classes, n_actions)
    train_seed: int = 0

    @property
    def n_classes(self) -> int:
        return self.heads.shape[0]

    def tensors(self):
        return (self.shared, self.shared_bias, self.head_base,
                self.head_base_bias, self.heads, self.head_bias)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 60
    batch_size: int = 64
    hidden: int = 64
    weight_decay: float = 1e-5
    head_offset_decay: float = 3e-3
    lr_drop_at: float = 0.7   # fraction of epochs before lr multiplies by 0.2
    seed: int = 0


def expand_features(raw: np.ndarray) -> np.ndarray:
    """Fixed basis expansion of the egocentric features.

    Rectified splits and a few interaction terms give the policy the
    piecewise structure the expert's first-action rule actually has (which
    side dominates, visibility-gated direction, in-reach and walkability
    gating). Nothing here is learned.
    """
    raw = np.atleast_2d(raw)
    (lat, fwd, dist, hor, vis, frac, minhit, reach, blocked,
     nav_a, nav_l, nav_r, nav_b, bearing, ahead_d, left_d, right_d) = raw.T
    cols = [
        lat, fwd, dist, hor, vis, frac, minhit, reach, blocked,
        nav_a, nav_l, nav_r, nav_b, bearing, ahead_d, left_d, right_d,
        np.abs(lat), np.abs(fwd),
        np.maximum(lat, 0.0), np.maximum(-lat, 0.0),
        np.maximum(fwd, 0.0), np.maximum(-fwd, 0.0),
        np.abs(lat) - np.abs(fwd),
        vis * lat, vis * fwd, vis * reach,
        reach * fwd, reach * np.abs(lat),
        nav_a * np.maximum(fwd, 0.0), nav_l * np.maximum(-lat, 0.0),
        nav_r * np.maximum(lat, 0.0), nav_b * np.maximum(-fwd, 0.0),
        np.abs(bearing), vis * bearing,
        np.maximum(bearing, 0.0), np.maximum(-bearing, 0.0),
        left_d - right_d, vis * reach * frac,
    ]
    return np.stack(cols, axis=1)


N_EXPANDED = 39


def _hidden(params: PolicyParams, expanded: np.ndarray) -> np.ndarray:
    x = (expanded - params.feat_mean) / params.feat_scale
    return np.maximum(x @ params.shared.T + params.shared_bias, 0.0)


def policy_logits(features: np.ndarray, class_ids: np.ndarray,
                  params: PolicyParams) -> np.ndarray:
    """(N, n_actions) logits through the shared trunk and per-class heads."""
    a = _hidden(params, expand_features(features))
    out = a @ params.head_base.T + params.head_base_bias
    for c in np.unique(class_ids):
        rows = class_ids == c
        out[rows] += a[rows] @ params.heads[c].T + params.head_bias[c]
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    m = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(m)
    return e / e.sum(axis=1, keepdims=True)


def bc_loss_and_grads(params: PolicyParams, x, classes, acts):
    """Mean cross-entropy and analytic gradients for one standardized batch.

    x must already be expanded and standardized. Weight decay is applied
    by the optimizer, not here, so these gradients match finite
    differences of the loss exactly.
    """
    n = x.shape[0]
    z = x @ params.shared.T + params.shared_bias
    a = np.maximum(z, 0.0)
    logits = a @ params.head_base.T + params.head_base_bias
    for c in np.unique(classes):
        rows = classes == c
        logits[rows] += a[rows] @ params.heads[c].T + params.head_bias[c]
    probs = _softmax(logits)
    loss = float(-np.log(probs[np.arange(n), acts] + 1e-12).mean())
    g = probs
    g[np.arange(n), acts] -= 1.0
    g /= n
    d_base = g.T @ a
    d_base_bias = g.sum(axis=0)
    d_heads = np.zeros_like(params.heads)
    d_head_bias = np.zeros_like(params.head_bias)
    da = g @ params.head_base
    for c in np.unique(classes):
        rows = classes == c
        d_heads[c] = g[rows].T @ a[rows]
        d_head_bias[c] = g[rows].sum(axis=0)
        da[rows] += g[rows] @ params.heads[c]
    dz = da * (z > 0.0)
    d_shared = dz.T @ x
    d_shared_bias = dz.sum(axis=0)
    return loss, (d_shared, d_shared_bias, d_base, d_base_bias,
                  d_heads, d_head_bias)


def accuracy(params: PolicyParams, feats, classes, acts) -> float:
    if feats.shape[0] == 0:
        return float("nan")
    pred = np.argmax(policy_logits(feats, classes, params), axis=1)
    return float((pred == acts).mean())


def init_params(n_expanded: int, n_classes: int, hyper: TrainConfig,
                feat_mean=None, feat_scale=None) -> PolicyParams:
    rng = np.random.default_rng(hyper.seed)
    h = hyper.hidden
    return PolicyParams(
        feat_mean=(np.zeros(n_expanded) if feat_mean is None else feat_mean),
        feat_scale=(np.ones(n_expanded) if feat_scale is None else feat_scale),
        shared=rng.standard_normal((h, n_expanded)) * np.sqrt(2.0 / n_expanded),
        shared_bias=np.zeros(h),
        head_base=rng.standard_normal((N_FINE_ACTIONS, h)) * np.sqrt(1.0 / h),
        head_base_bias=np.zeros(N_FINE_ACTIONS),
        heads=np.zeros((n_classes, N_FINE_ACTIONS, h)),
        head_bias=np.zeros((n_classes, N_FINE_ACTIONS)),
        train_seed=hyper.seed,
    )


def train_bc(dataset: BCDataset, hyper: TrainConfig = TrainConfig(),
             n_classes: Optional[int] = None):
    """Momentum-SGD behavior cloning; deterministic for a fixed seed.

    Returns (params, metrics) where metrics carries the per-epoch training
    loss and final train/heldout action accuracies.
    """
    train = dataset.split("train")
    if not train.any():
        raise ValueError("empty training split")
    raw = dataset.features[train]
    expanded = expand_features(raw)
    classes = dataset.class_ids[train]
    acts = dataset.actions[train]
    if len(np.unique(acts)) < 2:
        warnings.warn("training labels collapse to one action",
                      DegenerateDataset)
    if n_classes is None:
        n_classes = int(dataset.class_ids.max()) + 1 if len(dataset) else 1

    mean = expanded.mean(axis=0)
    scale = expanded.std(axis=0)
    scale[scale == 0.0] = 1.0
    params = init_params(expanded.shape[1], n_classes, hyper, mean, scale)
    x = (expanded - mean) / scale

    rng = np.random.default_rng(hyper.seed)
    vel = [np.zeros_like(p) for p in params.tensors()]
    decays = (hyper.weight_decay, 0.0, hyper.weight_decay, 0.0,
              hyper.head_offset_decay, 0.0)
    losses = []
    n = x.shape[0]
    for ep in range(hyper.epochs):
        lr = hyper.lr if ep < hyper.epochs * hyper.lr_drop_at else hyper.lr * 0.2
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            loss, grads = bc_loss_and_grads(params, x[idx], classes[idx],
                                            acts[idx])
            epoch_loss += loss * len(idx)
            for v, p, g, wd in zip(vel, params.tensors(), grads, decays):
                v *= hyper.momentum
                v += g + wd * p
                p -= lr * v
        losses.append(epoch_loss / n)

    heldout = dataset.split("heldout")
    metrics = {
        "train_accuracy": accuracy(params, raw, classes, acts),
        "heldout_accuracy": accuracy(params, dataset.features[heldout],
                                     dataset.class_ids[heldout],
                                     dataset.actions[heldout]),
        "epoch_loss": losses,
        "rows_train": int(train.sum()),
        "rows_heldout": int(heldout.sum()),
    }
    return params, metrics


_POLICY_FIELDS = ("feat_mean", "feat_scale", "shared", "shared_bias",
                  "head_base", "head_base_bias", "heads", "head_bias")


def save_policy(params: PolicyParams, path) -> None:
    payload = {"version": 2, "train_seed": params.train_seed,
               "shapes": {f: list(getattr(params, f).shape)
                          for f in _POLICY_FIELDS}}
    for f in _POLICY_FIELDS:
        payload[f] = getattr(params, f).tolist()
    with open(path, "w") as fp:
        fp.write(json.dumps(payload, sort_keys=True) + "\n")


def load_policy(path) -> PolicyParams:
    with open(path) as fp:
        d = json.load(fp)
    if d.get("version") != 2:
        raise ValueError(f"unsupported policy version {d.get('version')!r}")
    arrays = {f: np.array(d[f]) for f in _POLICY_FIELDS}
    for f in _POLICY_FIELDS:
        if list(arrays[f].shape) != d["shapes"][f]:
            raise ValueError(f"policy file shape mismatch on {f}")
    return PolicyParams(train_seed=d["train_seed"], **arrays)
