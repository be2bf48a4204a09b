"""Mixup batch augmentation and the random pseudo-label flip."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class MixupConfig:
    alpha: float = 0.2

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("mixup alpha must be positive")


@dataclass
class FlipConfig:
    flip_fraction: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.flip_fraction <= 1.0:
            raise ValueError("flip_fraction must be in [0, 1]")


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mixup_batch(x, y, cfg: MixupConfig | None = None, seed=0, lam=None):
    """Replace a batch with convex blends of row pairs.

    Each row i is paired with row ``perm[i]`` of the same batch and gets its
    own mixing weight drawn from Beta(alpha, alpha). ``lam`` overrides the
    draw (scalar or per-row array).
    """
    cfg = cfg or MixupConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        log.info("mixup skipped: batch of %d", n)
        return x.copy(), y.copy()
    rng = _rng(seed)
    perm = rng.permutation(n)
    if lam is None:
        lam = rng.beta(cfg.alpha, cfg.alpha, size=n)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,))
    x_mix = lam[:, None] * x + (1 - lam[:, None]) * x[perm]
    y_mix = lam * y + (1 - lam) * y[perm]
    return x_mix, y_mix


def random_label_flip(y, cfg: FlipConfig | None = None, seed=0):
    """Flip exactly floor(flip_fraction * n) labels chosen without replacement."""
    cfg = cfg or FlipConfig()
    y = np.asarray(y).astype(int)
    out = y.copy()
    n_flip = int(np.floor(cfg.flip_fraction * y.size + 1e-9))
    if n_flip:
        idx = _rng(seed).choice(y.size, size=n_flip, replace=False)
        out[idx] = 1 - out[idx]
    return out
