"""Oracle egocentric renderer: a fan of rays over the cell grid.

Stands in for trained depth / segmentation / affordance nets. Rays march
cells exactly (Amanatides-Woo traversal, vectorized over the fan), stop at
the first occluding cell and report its class, effective affordance bits
and instance id. Traversed free floor emits navigability samples. An
optional noise model flips hit classes and jitters depths.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .world import FLOOR, WALL, SURFACE, CELL_SIZE, AgentState, GridScene


@dataclass(frozen=True)
class RenderConfig:
    n_rays: int = 120
    fov_deg: float = 60.0
    max_range: float = 10.0
    samples_per_cell: int = 4
    noise_class_flip: float = 0.0
    noise_depth_sigma: float = 0.0


@dataclass
class EgoFrame:
    """Per-ray hits plus free-floor samples; a pure function of (scene, agent, cfg)."""

    dist: np.ndarray        # (W,) meters, max_range where nothing was hit
    class_id: np.ndarray    # (W,) int, -1 for walls / out of range
    affordance: np.ndarray  # (W,) int bitmask, effective (state-masked)
    obj_id: np.ndarray      # (W,) int, -1 when the hit is not an object
    hit_cx: np.ndarray      # (W,) int hit cell, -1 when out of range
    hit_cz: np.ndarray
    free_ray: np.ndarray    # (S,) ray index per free-floor sample
    free_t: np.ndarray      # (S,) meters along the ray
    fov_deg: float
    n_rays: int
    max_range: float
    yaw: int
    horizon: int

    def ray_bearings(self) -> np.ndarray:
        cols = np.arange(self.n_rays)
        return self.yaw + self.fov_deg * (cols / self.n_rays - 0.5)


def _march(scene: GridScene, origin_cell: tuple[int, int],
           bearings_deg: np.ndarray, cfg: RenderConfig) -> dict:
    """Trace one ray per bearing from the center of origin_cell.

    Exact cell walk; hit distance is the midpoint of the chord through the
    hit cell. The origin cell never occludes but does emit floor samples.
    """
    w = bearings_deg.size
    occ = (scene.cells == WALL) | (scene.cells == SURFACE)
    for cell in scene.occupancy_table():
        occ[cell] = True
    occ_padded = np.ones((scene.width + 2, scene.height + 2), dtype=bool)
    occ_padded[1:-1, 1:-1] = occ
    floor_grid = scene.cells == FLOOR

    ox = (origin_cell[0] + 0.5) * CELL_SIZE
    oz = (origin_cell[1] + 0.5) * CELL_SIZE
    rad = np.deg2rad(bearings_deg)
    dx, dz = np.sin(rad), np.cos(rad)

    cx = np.full(w, origin_cell[0], dtype=np.int64)
    cz = np.full(w, origin_cell[1], dtype=np.int64)
    step_x = np.where(dx > 1e-12, 1, np.where(dx < -1e-12, -1, 0))
    step_z = np.where(dz > 1e-12, 1, np.where(dz < -1e-12, -1, 0))
    with np.errstate(divide="ignore"):
        t_delta_x = np.where(step_x != 0, CELL_SIZE / np.abs(dx), np.inf)
        t_delta_z = np.where(step_z != 0, CELL_SIZE / np.abs(dz), np.inf)
    t_max_x = np.where(
        step_x != 0,
        ((cx + (step_x > 0)) * CELL_SIZE - ox) / np.where(step_x != 0, dx, 1.0),
        np.inf)
    t_max_z = np.where(
        step_z != 0,
        ((cz + (step_z > 0)) * CELL_SIZE - oz) / np.where(step_z != 0, dz, 1.0),
        np.inf)

    t_enter = np.zeros(w)
    active = np.ones(w, dtype=bool)
    start_cell = True

    hit_dist = np.full(w, cfg.max_range)
    hit_class = np.full(w, -1, dtype=np.int64)
    hit_aff = np.zeros(w, dtype=np.int64)
    hit_obj = np.full(w, -1, dtype=np.int64)
    hit_cx = np.full(w, -1, dtype=np.int64)
    hit_cz = np.full(w, -1, dtype=np.int64)

    free_rays: list[np.ndarray] = []
    free_ts: list[np.ndarray] = []
    entity_cache: dict[tuple[int, int], list[int]] = {}

    while np.any(active):
        t_exit = np.minimum(t_max_x, t_max_z)
        idx = np.where(active)[0]
        acx, acz = cx[idx], cz[idx]
        blocked = occ_padded[acx + 1, acz + 1]
        if start_cell:
            blocked = np.zeros_like(blocked)  # own cell is transparent

        # rays stop at any occluder; record a hit only inside max_range
        mid = (t_enter[idx] + t_exit[idx]) / 2.0
        hit_now = blocked & (mid <= cfg.max_range)
        for k in np.where(hit_now)[0]:
            ray = idx[k]
            x, zc = int(acx[k]), int(acz[k])
            hit_dist[ray] = mid[k]
            hit_cx[ray], hit_cz[ray] = x, zc
            if scene.in_bounds(x, zc):
                key = (x, zc)
                ents = entity_cache.get(key)
                if ents is None:
                    ents = scene.visible_entities_at(x, zc)
                    entity_cache[key] = ents
                if ents:
                    o = scene.objects[ents[ray % len(ents)]]
                    hit_class[ray] = o.class_id
                    hit_aff[ray] = o.effective_affordances()
                    hit_obj[ray] = o.id
        active[idx[blocked]] = False

        # free-floor samples for traversed unblocked floor cells
        free_cell = np.zeros(len(idx), dtype=bool)
        ok = ~blocked
        free_cell[ok] = floor_grid[acx[ok], acz[ok]]
        emit = np.where(free_cell)[0]
        if emit.size:
            rays = idx[emit]
            t0 = t_enter[rays]
            t1 = np.minimum(t_exit[rays], cfg.max_range)
            k = cfg.samples_per_cell
            frac = (np.arange(k) + 0.5) / k
            ts = t0[:, None] + (t1 - t0)[:, None] * frac[None, :]
            keep = ts < t1[:, None]  # guards zero-length clipped chords
            free_rays.append(np.repeat(rays, k)[keep.ravel()])
            free_ts.append(ts.ravel()[keep.ravel()])

        # advance surviving rays to the next cell
        start_cell = False
        t_enter = np.where(active, t_exit, t_enter)
        take_x = active & (t_max_x <= t_max_z)
        take_z = active & ~take_x
        cx[take_x] += step_x[take_x]
        t_max_x[take_x] += t_delta_x[take_x]
        cz[take_z] += step_z[take_z]
        t_max_z[take_z] += t_delta_z[take_z]
        active &= t_enter < cfg.max_range

    return {
        "dist": hit_dist, "class_id": hit_class, "aff": hit_aff, "obj": hit_obj,
        "cx": hit_cx, "cz": hit_cz,
        "free_ray": (np.concatenate(free_rays) if free_rays
                     else np.zeros(0, dtype=np.int64)),
        "free_t": np.concatenate(free_ts) if free_ts else np.zeros(0),
    }


def _frame_from(res: dict, lo: int, hi: int, cfg: RenderConfig, yaw: int,
                horizon: int) -> EgoFrame:
    fmask = (res["free_ray"] >= lo) & (res["free_ray"] < hi)
    return EgoFrame(
        dist=res["dist"][lo:hi], class_id=res["class_id"][lo:hi],
        affordance=res["aff"][lo:hi], obj_id=res["obj"][lo:hi],
        hit_cx=res["cx"][lo:hi], hit_cz=res["cz"][lo:hi],
        free_ray=res["free_ray"][fmask] - lo, free_t=res["free_t"][fmask],
        fov_deg=cfg.fov_deg, n_rays=hi - lo, max_range=cfg.max_range,
        yaw=yaw, horizon=horizon,
    )


def render_egocentric(scene: GridScene, agent: AgentState, cfg: RenderConfig,
                      rng: Optional[np.random.Generator] = None) -> EgoFrame:
    """Cast cfg.n_rays across the fov centered on the agent's yaw.

    Noise, when enabled, draws from the supplied generator; with zero noise
    no random numbers are drawn and repeated renders are identical.
    """
    cols = np.arange(cfg.n_rays)
    bearings = agent.yaw + cfg.fov_deg * (cols / cfg.n_rays - 0.5)
    res = _march(scene, (agent.x, agent.z), bearings, cfg)
    frame = _frame_from(res, 0, cfg.n_rays, cfg, agent.yaw, agent.horizon)
    if cfg.noise_class_flip > 0.0 or cfg.noise_depth_sigma > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        _apply_noise(frame, scene, cfg, rng)
    return frame


def render_four_yaws(scene: GridScene, cell: tuple[int, int],
                     cfg: RenderConfig, horizon: int = 45
                     ) -> dict[int, EgoFrame]:
    """Noise-free frames for all four yaws from one cell, in a single march."""
    w = cfg.n_rays
    cols = np.arange(w)
    offs = cfg.fov_deg * (cols / w - 0.5)
    bearings = np.concatenate([yaw + offs for yaw in (0, 90, 180, 270)])
    res = _march(scene, cell, bearings, cfg)
    return {yaw: _frame_from(res, i * w, (i + 1) * w, cfg, yaw, horizon)
            for i, yaw in enumerate((0, 90, 180, 270))}


def _apply_noise(frame: EgoFrame, scene: GridScene, cfg: RenderConfig,
                 rng: np.random.Generator) -> None:
    n_classes = scene.roster.n_object_classes
    has_class = frame.class_id >= 0
    if cfg.noise_class_flip > 0.0:
        flip = (rng.random(frame.n_rays) < cfg.noise_class_flip) & has_class
        draws = rng.integers(0, n_classes - 1, size=frame.n_rays)
        new = np.where(draws >= frame.class_id, draws + 1, draws)
        frame.class_id[flip] = new[flip]
    if cfg.noise_depth_sigma > 0.0:
        jitter = rng.normal(0.0, cfg.noise_depth_sigma, size=frame.n_rays)
        jittered = np.clip(frame.dist + jitter, 0.05, cfg.max_range)
        frame.dist[has_class] = jittered[has_class]
