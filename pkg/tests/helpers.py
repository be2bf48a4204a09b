"""Finite-difference checking and small fixtures shared by the test modules."""
from __future__ import annotations

import numpy as np
import pandas as pd

from aocids.data import UNSW_CATEGORICAL, UNSW_NUMERIC

H = 1e-5
TOL = 1e-4


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def unsw_frame(n: int, seed: int = 0) -> pd.DataFrame:
    """UNSW-NB15-shaped rows with random values; label tied to attack_cat."""
    rng = np.random.default_rng(seed)
    cats = ["Normal", "Generic", "Exploits", "Fuzzers", "DoS"]
    attack_cat = rng.choice(cats, size=n)
    cols = {"id": np.arange(1, n + 1)}
    for c in UNSW_NUMERIC:
        cols[c] = rng.integers(0, 100, size=n).astype(float)
    cols["dur"] = rng.uniform(0, 2, size=n)
    cols["proto"] = rng.choice(["tcp", "udp", "arp"], size=n)
    cols["service"] = rng.choice(["-", "http", "dns"], size=n)
    cols["state"] = rng.choice(["FIN", "INT", "CON"], size=n)
    cols["attack_cat"] = attack_cat
    cols["label"] = (attack_cat != "Normal").astype(int)
    frame = pd.DataFrame(cols)
    return frame[["id", *UNSW_NUMERIC, *UNSW_CATEGORICAL, "attack_cat", "label"]]


def grads_match(analytic, numeric, tol: float = TOL, zero: float = 1e-9) -> bool:
    """Relative check, except when both sides are zero up to round-off
    (e.g. an affine bias feeding batch norm, or a dead ReLU unit)."""
    if np.abs(analytic).max(initial=0) < zero and np.abs(numeric).max(initial=0) < zero:
        return True
    return rel_error(analytic, numeric) < tol
