"""Online learning loop: initial training, pseudo-labelling, fine-tuning."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from . import adm
from .augment import FlipConfig, mixup_batch, random_label_flip
from .config import ExperimentConfig
from .data import FeatureMatrix, balanced_draw
from .losses import crc_objective, improved_objective
from .metrics import compute_metrics
from .nn import Optimizer, cosine_anneal_lr

log = logging.getLogger(__name__)


@dataclass
class PseudoLabelBatch:
    accepted: np.ndarray  # row indices into the batch
    labels: np.ndarray  # labels of the accepted rows
    confidence: np.ndarray
    rejected_count: int
    raw_labels: np.ndarray  # model verdicts before flip/gating, whole batch

    @property
    def acceptance_rate(self) -> float:
        total = len(self.accepted) + self.rejected_count
        return len(self.accepted) / total if total else 0.0


@dataclass
class StreamState:
    clean: FeatureMatrix
    pseudo_x: np.ndarray
    pseudo_y: np.ndarray
    batch_cursor: int = 0
    history: list[dict] = field(default_factory=list)

    @classmethod
    def start(cls, clean: FeatureMatrix) -> "StreamState":
        clean.data.setflags(write=False)
        clean.labels.setflags(write=False)
        return cls(clean, np.empty((0, clean.dim)), np.empty(0, dtype=int))

    def training_pool(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.pseudo_y):
            return self.clean.data, self.clean.labels
        return (np.vstack([self.clean.data, self.pseudo_x]),
                np.concatenate([self.clean.labels, self.pseudo_y]))

    def clean_digest(self) -> str:
        h = hashlib.sha256(self.clean.data.tobytes())
        h.update(self.clean.labels.tobytes())
        return h.hexdigest()


class OnlineIDS:
    """Model, optimizer and decision state for one run."""

    def __init__(self, cfg: ExperimentConfig, input_dim: int | None = None):
        if input_dim is not None and input_dim != cfg.arch.input_dim:
            cfg = cfg.with_overrides({"arch": {"input_dim": input_dim}})
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.stream.seed)
        self.model = adm.build_autoencoder(cfg.arch, seed=cfg.stream.seed)
        o = cfg.optim
        self.optimizer = Optimizer(o.kind, o.learning_rate, o.weight_decay)
        self.decision: adm.GaussianDecision | None = None

    # -- training ------------------------------------------------------------

    def _lr(self, epoch: int) -> float:
        o = self.cfg.optim
        if o.schedule == "cosine":
            return cosine_anneal_lr(o.learning_rate, o.eta_min, o.t_max, epoch)
        return o.learning_rate

    def train_epochs(self, x: np.ndarray, y: np.ndarray, n_epochs: int) -> list[float]:
        """Run ``n_epochs`` passes; the schedule restarts at epoch 0 on each call."""
        s = self.cfg.stream
        losses = []
        n = len(y)
        for epoch in range(n_epochs):
            self.optimizer.learning_rate = self._lr(epoch)
            if s.use_balanced_sampling and 0 < y.sum() < n:
                order = balanced_draw(y, n, self.rng)
            else:
                order = self.rng.permutation(n)
            total = 0.0
            for start in range(0, n, s.train_batch_size):
                idx = order[start:start + s.train_batch_size]
                if len(idx) < 2:
                    continue
                total += self._train_batch(x[idx], y[idx].astype(np.float64)) * len(idx)
            losses.append(total / max(n, 1))
        return losses

    def _train_batch(self, xb: np.ndarray, yb: np.ndarray) -> float:
        s = self.cfg.stream
        if s.use_mixup:
            xb, yb = mixup_batch(xb, yb, self.cfg.mixup, seed=self.rng)
        m = self.model
        m.zero_grad()
        out = m.forward(xb, training=True)
        if s.objective == "crc":
            loss, d_enc, d_dec = crc_objective(out.enc, out.recon, yb, self.cfg.crc)
            m.backward(d_enc=d_enc, d_recon=d_dec)
        else:
            loss, g_pe, g_pd, g_rec = improved_objective(
                out.p_enc, out.p_dec, out.recon, xb, yb, self.cfg.loss)
            m.backward(d_recon=g_rec, d_p_enc=g_pe, d_p_dec=g_pd)
        self.optimizer.step(m.parameters())
        return loss

    def initial_train(self, clean: FeatureMatrix) -> list[float]:
        y = clean.labels
        if y is None or not ((y == 0).any() and (y == 1).any()):
            raise ValueError("initial training needs both classes in the clean pool")
        losses = self.train_epochs(clean.data, y, self.cfg.stream.epoch0)
        self.refit_decision(clean)
        return losses

    def refit_decision(self, clean: FeatureMatrix) -> None:
        if self.cfg.stream.decision_mode == "gaussian":
            self.decision = adm.fit_gaussian_decision(self.model, clean.data, clean.labels)

    # -- inference -----------------------------------------------------------

    def predict(self, x) -> adm.Votes:
        return adm.predict(self.model, x, self.decision, self.cfg.stream.decision_mode)

    def evaluate(self, test: FeatureMatrix) -> dict:
        votes = self.predict(test.data)
        _, ms = compute_metrics(votes.label, test.labels)
        return ms.as_dict()

    def generate_pseudo_labels(self, x: np.ndarray, threshold: float | None = None) -> PseudoLabelBatch:
        s = self.cfg.stream
        if s.gate_mode == "base":
            votes = self.predict(x)
            labels = random_label_flip(votes.label, FlipConfig(s.flip_fraction), seed=self.rng)
            return PseudoLabelBatch(np.arange(len(x)), labels, votes.confidence, 0, votes.label)
        if not self.model.has_heads:
            raise ValueError("filtered pseudo-labelling needs classifier heads")
        out = adm.encode_decode(self.model, x)
        return filter_gate(out.p_enc, out.p_dec,
                           s.confidence_threshold if threshold is None else threshold,
                           s.gate_heads)

    def stream_step(self, state: StreamState, batch: np.ndarray, test: FeatureMatrix | None = None) -> dict:
        if len(batch) == 0:
            raise ValueError("empty stream batch")
        pl = self.generate_pseudo_labels(batch)
        state.pseudo_x = np.vstack([state.pseudo_x, batch[pl.accepted]])
        state.pseudo_y = np.concatenate([state.pseudo_y, pl.labels])
        x, y = state.training_pool()
        self.train_epochs(x, y, self.cfg.stream.epoch1)
        self.refit_decision(state.clean)
        state.batch_cursor += 1
        record = {
            "batch": state.batch_cursor,
            "batch_size": int(len(batch)),
            "accepted": int(len(pl.accepted)),
            "rejected": int(pl.rejected_count),
            "acceptance_rate": pl.acceptance_rate,
            "clean_pool": int(len(state.clean)),
            "pseudo_pool": int(len(state.pseudo_y)),
            "decision_mode": self.cfg.stream.decision_mode,
        }
        if test is not None:
            record.update(self.evaluate(test))
        state.history.append(record)
        return record


def filter_gate(p_enc, p_dec, threshold: float = 0.85, heads: str = "both") -> PseudoLabelBatch:
    """Accept a sample only if both heads agree and are confident enough.

    Rejected rows are reported through ``rejected_count`` and never returned
    as training data.
    """
    v = adm.head_votes(p_enc, p_dec)
    agree = v.enc_label == v.dec_label
    if heads == "both":
        confident = (v.enc_confidence >= threshold) & (v.dec_confidence >= threshold)
    else:
        confident = v.confidence >= threshold
    ok = agree & confident
    idx = np.flatnonzero(ok)
    return PseudoLabelBatch(idx, v.enc_label[idx], v.confidence[idx], int((~ok).sum()), v.label)


@dataclass
class StreamResult:
    config: ExperimentConfig
    history: list[dict]
    initial_metrics: dict
    final_metrics: dict
    n_params: int
    n_initial: int
    n_stream: int
    ids: OnlineIDS = field(repr=False, default=None)


def split_initial_stream(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle; the first round(fraction * n) rows form the clean pool,
    the rest is the stream in shuffled order."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(fraction * n))
    return perm[:k], perm[k:]


def stream_batches(n_stream: int, batch_size: int) -> list[slice]:
    return [slice(i, min(i + batch_size, n_stream)) for i in range(0, n_stream, batch_size)]


def run_stream(train: FeatureMatrix, test: FeatureMatrix, cfg: ExperimentConfig,
               on_batch=None) -> StreamResult:
    """Initial training on the clean pool, then one fine-tuning cycle per stream batch."""
    s = cfg.stream
    ids = OnlineIDS(cfg, input_dim=train.dim)
    init_idx, stream_idx = split_initial_stream(len(train), s.initial_fraction, s.seed)
    clean = train.take(init_idx)
    state = StreamState.start(clean)
    ids.initial_train(clean)
    initial = ids.evaluate(test)
    stream_x = train.data[stream_idx]
    batches = stream_batches(len(stream_idx), s.stream_batch_size)
    if s.max_stream_batches is not None:
        batches = batches[:s.max_stream_batches]
    digest = state.clean_digest()
    for sl in batches:
        record = ids.stream_step(state, stream_x[sl], test)
        log.info("batch %d: acc=%.2f accepted=%d/%d", record["batch"], record["accuracy"],
                 record["accepted"], record["batch_size"])
        if on_batch is not None:
            on_batch(record)
    if state.clean_digest() != digest:
        raise RuntimeError("clean pool was modified during streaming")
    final = state.history[-1] if state.history else initial
    final_metrics = {k: final[k] for k in ("accuracy", "precision", "recall", "f1")}
    return StreamResult(ids.cfg, state.history, initial, final_metrics,
                        ids.model.n_params(), len(init_idx), len(stream_idx), ids)
