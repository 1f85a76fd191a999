"""Tiny binary-PPM (P6) writers for map and trajectory snapshots."""

from __future__ import annotations

import numpy as np

from .world import FLOOR, WALL, SURFACE, GridScene


def write_ppm(rgb: np.ndarray, path) -> None:
    """rgb: (h, w, 3) uint8."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(rgb.tobytes())


def probability_heatmap(probs: np.ndarray, grid_side: int) -> np.ndarray:
    """Blue (0) through white (0.5) to red (1), row gz, column gx."""
    p = np.clip(probs.reshape(grid_side, grid_side), 0.0, 1.0)
    r = np.where(p >= 0.5, 255, 510 * p)
    b = np.where(p <= 0.5, 255, 510 * (1.0 - p))
    g = 255 - 510 * np.abs(p - 0.5)
    img = np.stack([r, g, b], axis=-1).astype(np.uint8)
    return img[::-1]  # +z up


def scene_overlay(scene: GridScene, trajectory=None, agent_cell=None) -> np.ndarray:
    """Ground-truth scene picture: walls dark, furniture tan, floor white."""
    img = np.full((scene.height, scene.width, 3), 255, dtype=np.uint8)
    for x in range(scene.width):
        for z in range(scene.height):
            if scene.cells[x, z] == WALL:
                img[z, x] = (40, 40, 40)
            elif scene.cells[x, z] == SURFACE:
                img[z, x] = (196, 160, 110)
    for o in scene.objects.values():
        if o.cell is not None and scene.cells[o.cell] == FLOOR:
            img[o.cell[1], o.cell[0]] = (120, 120, 220)
    if trajectory:
        n = max(len(trajectory) - 1, 1)
        for i, (x, z) in enumerate(trajectory):
            shade = 80 + int(140 * i / n)
            img[z, x] = (0, shade, 0)
    if agent_cell is not None:
        img[agent_cell[1], agent_cell[0]] = (220, 30, 30)
    return img[::-1]
