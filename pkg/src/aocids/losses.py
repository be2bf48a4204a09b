"""Training objectives and their gradients.

Each function returns ``(loss, grads)`` where the gradients are with respect
to the function's array inputs, in the order they were passed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nn import row_normalize

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class CrcConfig:
    tau: float = 0.02
    # "global": one repulsion sum over every normal anchor and every attack,
    # shared by all pairs. "anchor": the sum runs over attacks for anchor i only.
    denominator: str = "global"

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.denominator not in ("global", "anchor"):
            raise ValueError(f"unknown CRC denominator {self.denominator!r}")


@dataclass
class ImprovedLossConfig:
    lambda_enc: float = 1.0
    recon_weight: float = 0.1

    def __post_init__(self):
        if self.lambda_enc < 0 or self.recon_weight < 0:
            raise ValueError("loss weights must be non-negative")


def crc_loss(normal_reps, attack_reps, cfg: CrcConfig | None = None):
    """Cluster-repelling contrastive loss over one view.

    Pulls every ordered pair of normal representations together while the
    shared denominator pushes all attacks away from all normal anchors.
    Returns ``(loss, d_normal, d_attack)``.
    """
    cfg = cfg or CrcConfig()
    normal_reps = np.atleast_2d(np.asarray(normal_reps, dtype=np.float64))
    attack_reps = np.asarray(attack_reps, dtype=np.float64).reshape(-1, normal_reps.shape[1])
    m, k = normal_reps.shape[0], attack_reps.shape[0]
    d_normal = np.zeros_like(normal_reps)
    d_attack = np.zeros_like(attack_reps)
    if m < 2:
        log.debug("crc_loss: %d normal reps, contributing 0", m)
        return 0.0, d_normal, d_attack

    nu, n_norm = row_normalize(normal_reps)
    s = (nu @ nu.T) / cfg.tau
    off = ~np.eye(m, dtype=bool)
    n_pairs = m * (m - 1)

    if k == 0:
        # -log(e^s / e^s) for every pair
        return 0.0, d_normal, d_attack

    au, a_norm = row_normalize(attack_reps)
    t = (nu @ au.T) / cfg.tau  # (m, k)
    shift = max(s[off].max(), t.max())
    s = np.where(off, s, shift)  # diagonal is unused; keep exp bounded
    es = np.exp(s - shift)
    et = np.exp(t - shift)
    if cfg.denominator == "global":
        denom_rep = et.sum()  # scalar shared by all pairs
        denom = es + denom_rep
    else:
        denom = es + et.sum(axis=1)[:, None]  # anchor i's own negatives
    loss_pairs = -(s - shift) + np.log(denom)
    loss = float(loss_pairs[off].sum() / n_pairs)

    # dL/ds_ij and dL/dt_ik on the 1/tau-scaled cosines
    inv = np.where(off, 1.0 / denom, 0.0)
    g_s = np.where(off, -1.0 + es * inv, 0.0) / n_pairs
    if cfg.denominator == "global":
        g_t = et * inv.sum() / n_pairs
    else:
        g_t = et * inv.sum(axis=1)[:, None] / n_pairs
    g_s /= cfg.tau
    g_t /= cfg.tau

    d_nu = (g_s + g_s.T) @ nu + g_t @ au
    d_au = g_t.T @ nu
    d_normal = _unit_backward(d_nu, nu, n_norm)
    d_attack = _unit_backward(d_au, au, a_norm)
    return loss, d_normal, d_attack


def _unit_backward(d_unit, unit, norms):
    # gradient through x -> x / |x|
    radial = (d_unit * unit).sum(axis=1, keepdims=True)
    return (d_unit - radial * unit) / norms[:, None]


def binary_cross_entropy(p, y):
    """Mean BCE with soft targets. Returns ``(loss, dL/dp)``."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch {p.shape} vs {y.shape}")
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    n = p.size
    loss = float(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).mean())
    # derivative evaluated at the clamped point, so saturated heads keep learning
    grad = (pc - y) / (pc * (1 - pc)) / n
    return loss, grad


def mean_squared_error(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float((diff ** 2).mean()), 2.0 * diff / diff.size


def _split(reps, labels):
    labels = np.asarray(labels).ravel()
    if labels.shape[0] != reps.shape[0]:
        raise ValueError("labels must have one entry per representation")
    normal = labels < 0.5
    return normal, ~normal


def crc_objective(enc_reps, dec_reps, labels, cfg: CrcConfig | None = None):
    """Encoder-view CRC plus decoder-view CRC.

    Soft labels are split at 0.5. Returns ``(loss, d_enc, d_dec)``.
    """
    enc_reps = np.asarray(enc_reps, dtype=np.float64)
    dec_reps = np.asarray(dec_reps, dtype=np.float64)
    total = 0.0
    grads = []
    for reps in (enc_reps, dec_reps):
        normal, attack = _split(reps, labels)
        loss, dn, da = crc_loss(reps[normal], reps[attack], cfg)
        g = np.zeros_like(reps)
        g[normal] = dn
        g[attack] = da
        total += loss
        grads.append(g)
    return total, grads[0], grads[1]


def improved_objective(p_enc, p_dec, recon, x, y, cfg: ImprovedLossConfig | None = None):
    """``lambda_enc * mean(BCE(enc head), BCE(dec head)) + recon_weight * MSE``.

    Returns ``(loss, d_p_enc, d_p_dec, d_recon)``.
    """
    cfg = cfg or ImprovedLossConfig()
    be, ge = binary_cross_entropy(p_enc, y)
    bd, gd = binary_cross_entropy(p_dec, y)
    mse, gr = mean_squared_error(recon, x)
    loss = cfg.lambda_enc * 0.5 * (be + bd) + cfg.recon_weight * mse
    w = 0.5 * cfg.lambda_enc
    return loss, w * ge, w * gd, cfg.recon_weight * gr
