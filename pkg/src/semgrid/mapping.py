"""Egocentric frames to allocentric grid observations.

Pose is accumulated from executed actions (exact in this discrete world),
ray hits and free-floor samples become semantic points, points are binned
into the map grid, and per-step soft labels plus a visibility mask are
derived from the counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .raycast import EgoFrame
from .world import (
    CELL_SIZE, N_AFFORDANCE_CLASSES, ActionKind, Roster, yaw_direction,
)


@dataclass(frozen=True)
class PoseEstimate:
    """Agent pose in meters relative to the episode anchor (the start cell)."""

    x: float = 0.0
    z: float = 0.0
    yaw: int = 0
    horizon: int = 45


def update_pose(pose: PoseEstimate, kind: ActionKind, ok: bool) -> PoseEstimate:
    """Accumulate one executed action; failed actions leave the pose alone."""
    if not ok:
        return pose
    if kind in (ActionKind.MOVE_AHEAD, ActionKind.MOVE_LEFT,
                ActionKind.MOVE_RIGHT, ActionKind.MOVE_BACK):
        offset = {ActionKind.MOVE_AHEAD: 0, ActionKind.MOVE_RIGHT: 90,
                  ActionKind.MOVE_BACK: 180, ActionKind.MOVE_LEFT: 270}[kind]
        dx, dz = yaw_direction(pose.yaw + offset)
        return replace(pose, x=pose.x + dx * CELL_SIZE, z=pose.z + dz * CELL_SIZE)
    if kind == ActionKind.ROTATE_RIGHT:
        return replace(pose, yaw=(pose.yaw + 90) % 360)
    if kind == ActionKind.ROTATE_LEFT:
        return replace(pose, yaw=(pose.yaw - 90) % 360)
    if kind == ActionKind.LOOK_UP:
        return replace(pose, horizon=pose.horizon - 15)
    if kind == ActionKind.LOOK_DOWN:
        return replace(pose, horizon=pose.horizon + 15)
    return pose


@dataclass(frozen=True)
class MapConfig:
    grid_side: int = 80          # map is grid_side x grid_side cells
    cell_size: float = CELL_SIZE

    @property
    def n_grids(self) -> int:
        return self.grid_side * self.grid_side

    def to_grid(self, x, z):
        """Anchor-relative meters to map grid coords; anchor sits at the center."""
        half = self.grid_side // 2
        gx = np.floor((np.asarray(x) + self.cell_size / 2) / self.cell_size).astype(int) + half
        gz = np.floor((np.asarray(z) + self.cell_size / 2) / self.cell_size).astype(int) + half
        return gx, gz

    def to_index(self, x, z):
        gx, gz = self.to_grid(x, z)
        return gz * self.grid_side + gx

    def grid_to_index(self, gx, gz):
        return np.asarray(gz) * self.grid_side + np.asarray(gx)

    def index_to_grid(self, idx):
        idx = np.asarray(idx)
        return idx % self.grid_side, idx // self.grid_side

    def in_bounds(self, gx, gz):
        m = self.grid_side
        return (gx >= 0) & (gx < m) & (gz >= 0) & (gz < m)


@dataclass
class SemanticPoints:
    """Flat point list; class ids span objects then affordances."""

    x: np.ndarray
    z: np.ndarray
    class_id: np.ndarray


def project_frame(frame: EgoFrame, pose: PoseEstimate, roster: Roster) -> SemanticPoints:
    """Rays to anchor-relative points.

    Each hit yields one point per object class and per set affordance bit at
    pose + dist along the ray's absolute bearing; each free-floor sample
    yields one navigable-class point.
    """
    bearings = np.deg2rad(frame.ray_bearings())
    xs, zs, cls = [], [], []

    hit = frame.class_id >= 0
    if np.any(hit):
        cols = np.where(hit)[0]
        d = frame.dist[cols]
        px = pose.x + d * np.sin(bearings[cols])
        pz = pose.z + d * np.cos(bearings[cols])
        xs.append(px)
        zs.append(pz)
        cls.append(frame.class_id[cols])
        aff = frame.affordance[cols]
        for bit in range(N_AFFORDANCE_CLASSES - 1):
            m = (aff & (1 << bit)) != 0
            if np.any(m):
                xs.append(px[m])
                zs.append(pz[m])
                cls.append(np.full(int(m.sum()), roster.affordance_class_for_bit(bit)))

    if frame.free_ray.size:
        d = frame.free_t
        b = bearings[frame.free_ray]
        xs.append(pose.x + d * np.sin(b))
        zs.append(pose.z + d * np.cos(b))
        cls.append(np.full(frame.free_ray.size, roster.navigable_class))

    if not xs:
        return SemanticPoints(np.zeros(0), np.zeros(0), np.zeros(0, dtype=np.int64))
    return SemanticPoints(
        np.concatenate(xs), np.concatenate(zs),
        np.concatenate(cls).astype(np.int64))


@dataclass
class GridObservation:
    """Per-grid point counts and per-class counts for one step."""

    c: np.ndarray                     # (n_grids,) total points
    class_counts: dict[int, np.ndarray]
    dropped: int = 0                  # points outside the map extent


def bin_points(points: SemanticPoints, cfg: MapConfig) -> GridObservation:
    n = cfg.n_grids
    c = np.zeros(n, dtype=np.int64)
    counts: dict[int, np.ndarray] = {}
    if points.x.size == 0:
        return GridObservation(c, counts, 0)
    gx, gz = cfg.to_grid(points.x, points.z)
    ok = cfg.in_bounds(gx, gz)
    dropped = int((~ok).sum())
    idx = (gz[ok] * cfg.grid_side + gx[ok]).astype(np.int64)
    cls = points.class_id[ok]
    c += np.bincount(idx, minlength=n)
    for j in np.unique(cls):
        counts[int(j)] = np.bincount(idx[cls == j], minlength=n)
    return GridObservation(c, counts, dropped)


@dataclass
class SoftLabels:
    """Per-class labels in [0, 1] over grids with points, plus visibility."""

    y: dict[int, np.ndarray]
    v: np.ndarray                     # (n_grids,) bool, c > rho
    rho: int


def soft_labels(obs: GridObservation, rho: int) -> SoftLabels:
    """Normalize each class's point proportion by its scene-wide maximum.

    The maximum runs over grids that received points this step; grids with
    no points get no labels. The label peaks at exactly 1 for every class
    observed this step.
    """
    v = obs.c > rho
    y: dict[int, np.ndarray] = {}
    has = obs.c > 0
    if not np.any(has):
        return SoftLabels(y, v, rho)
    inv_c = np.zeros_like(obs.c, dtype=np.float64)
    inv_c[has] = 1.0 / obs.c[has]
    for j, cj in obs.class_counts.items():
        prop = cj * inv_c
        denom = prop.max()
        if denom <= 0.0:
            continue
        y[j] = prop / denom
    return SoftLabels(y, v, rho)


def observation_record(step: int, pose: PoseEstimate, obs: GridObservation) -> str:
    """One JSON line for the optional per-step observation dump."""
    nz = np.nonzero(obs.c)[0]
    rec = {
        "step": step,
        "pose": [pose.x, pose.z, pose.yaw, pose.horizon],
        "grids": [[int(i), int(obs.c[i])] for i in nz],
        "dropped": obs.dropped,
    }
    return json.dumps(rec, sort_keys=True)
