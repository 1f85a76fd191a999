"""Online-learned scene representation.

Every map grid owns an embedding vector, every object/affordance class owns
a query vector. Querying is sigmoid(embedding . query); zero-initialized
embeddings therefore answer 0.5 everywhere at episode start. Each step the
visible grids are optimized by a few gradient iterations against the soft
labels, updating embeddings and queries jointly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .mapping import SoftLabels

LOGIT_CLIP = 30.0  # bounded sigmoid keeps probabilities strictly inside (0, 1)


class ClassOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class ReprConfig:
    learn_rate: float = 0.01
    iters: int = 10
    loss: str = "linear"   # the printed formula; "bce" selects cross-entropy proper


def _probs(S: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return expit(np.clip(S @ Q.T, -LOGIT_CLIP, LOGIT_CLIP))


def loss_and_grads(S: np.ndarray, Q: np.ndarray, Y: np.ndarray,
                   loss: str = "linear"):
    """Total loss and analytic gradients for a visible block.

    S: (V, C) embeddings, Q: (J, C) queries, Y: (V, J) labels.
    linear: L = -(1-y)(1-f) - y f, dL/dlogit = (1-2y) f (1-f)
    bce:    L = -y log f - (1-y) log(1-f), dL/dlogit = f - y
    """
    F = _probs(S, Q)
    if loss == "linear":
        total = float(np.sum(-(1.0 - Y) * (1.0 - F) - Y * F))
        G = (1.0 - 2.0 * Y) * F * (1.0 - F)
    elif loss == "bce":
        eps = 1e-12
        total = float(np.sum(-Y * np.log(F + eps) - (1.0 - Y) * np.log(1.0 - F + eps)))
        G = F - Y
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return total, G @ Q, G.T @ S


class DifferentiableSceneMap:
    """Dense embedding grid with per-class query vectors."""

    def __init__(self, n_grids: int, n_classes: int, embed_dim: int = 256,
                 seed: int = 0, cfg: ReprConfig = ReprConfig()):
        self.n_grids = n_grids
        self.n_classes = n_classes
        self.embed_dim = embed_dim
        self.cfg = cfg
        self.S = np.zeros((n_grids, embed_dim))
        self.Q = np.zeros((n_classes, embed_dim))
        self.reset(seed)

    def reset(self, seed: int) -> None:
        """Fresh per-episode state: zero embeddings, seeded normal queries."""
        self.seed = seed
        self.S[:] = 0.0
        rng = np.random.default_rng(seed)
        self.Q[:] = rng.standard_normal((self.n_classes, self.embed_dim))

    def query(self, class_id: int) -> np.ndarray:
        """Probability map for one class. Pure; repeated calls agree exactly."""
        if not 0 <= class_id < self.n_classes:
            raise ClassOutOfRange(class_id)
        return expit(np.clip(self.S @ self.Q[class_id], -LOGIT_CLIP, LOGIT_CLIP))

    def update(self, labels: SoftLabels) -> None:
        """Run the configured number of gradient iterations on visible grids.

        Both embedding and query gradients of one iteration are computed
        from the pre-iteration state and applied together. Grids outside
        the visibility mask and classes without labels this step are
        untouched.
        """
        vis = np.nonzero(labels.v)[0]
        classes = sorted(labels.y)
        if vis.size == 0 or not classes:
            return
        Y = np.stack([labels.y[j][vis] for j in classes], axis=1)
        cls = np.asarray(classes)
        Sv = self.S[vis]
        Qj = self.Q[cls]
        alpha = self.cfg.learn_rate
        for _ in range(self.cfg.iters):
            _, dS, dQ = loss_and_grads(Sv, Qj, Y, self.cfg.loss)
            Sv = Sv - alpha * dS
            Qj = Qj - alpha * dQ
        self.S[vis] = Sv
        self.Q[cls] = Qj


class CellSceneMap:
    """Binary last-write-wins baseline with the same query/update surface."""

    def __init__(self, n_grids: int, n_classes: int, **_ignored):
        self.n_grids = n_grids
        self.n_classes = n_classes
        self.bits = np.zeros((n_grids, n_classes), dtype=np.uint8)

    def reset(self, seed: int = 0) -> None:
        self.bits[:] = 0

    def query(self, class_id: int) -> np.ndarray:
        if not 0 <= class_id < self.n_classes:
            raise ClassOutOfRange(class_id)
        return self.bits[:, class_id].astype(np.float64)

    def update(self, labels: SoftLabels) -> None:
        """Visible grids are rewritten for every class: y >= 0.5 sets the bit,
        anything else (including no label) clears it."""
        vis = np.nonzero(labels.v)[0]
        if vis.size == 0:
            return
        block = np.zeros((vis.size, self.n_classes), dtype=np.uint8)
        for j, yj in labels.y.items():
            block[:, j] = yj[vis] >= 0.5
        self.bits[vis] = block


def export_probability_csv(probs: np.ndarray, grid_side: int, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        for gz in range(grid_side):
            row = probs[gz * grid_side:(gz + 1) * grid_side]
            w.writerow([f"{p:.6f}" for p in row])


def export_probability_ppm(probs: np.ndarray, grid_side: int, path) -> None:
    from .viz import probability_heatmap, write_ppm
    write_ppm(probability_heatmap(probs, grid_side), path)
