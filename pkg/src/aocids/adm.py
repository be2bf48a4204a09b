"""Anomaly detection module: autoencoder, Gaussian decision, voting."""
from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .nn import Affine, BatchNorm, Layer, Optimizer, ReLU, Sequential, Sigmoid, cosine_to_reference

CHECKPOINT_VERSION = 1
SIGMA_FLOOR = 1e-6

LITE_HIDDEN = (64, 32)
BASE_HIDDEN = (128, 64)


@dataclass
class ArchitectureSpec:
    input_dim: int = 194
    hidden_dims: tuple[int, ...] = BASE_HIDDEN
    with_heads: bool = False
    batch_norm: bool = True
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.input_dim <= 0:
            raise ValueError("input_dim must be positive")
        if not self.hidden_dims or min(self.hidden_dims) <= 0:
            raise ValueError("hidden_dims must be a non-empty list of positive ints")

    @property
    def bottleneck(self) -> int:
        return self.hidden_dims[-1]

    @classmethod
    def lite(cls, input_dim: int = 194, **kw) -> "ArchitectureSpec":
        kw.setdefault("with_heads", True)
        return cls(input_dim=input_dim, hidden_dims=LITE_HIDDEN, **kw)

    @classmethod
    def base(cls, input_dim: int = 194, **kw) -> "ArchitectureSpec":
        return cls(input_dim=input_dim, hidden_dims=BASE_HIDDEN, **kw)


class Forward(NamedTuple):
    enc: np.ndarray
    recon: np.ndarray
    p_enc: np.ndarray | None
    p_dec: np.ndarray | None


class Autoencoder:
    """Mirrored autoencoder with optional sigmoid heads on both ends.

    Every hidden layer (bottleneck included) is Affine -> BatchNorm -> ReLU;
    the output layer is a plain affine map back to ``input_dim``.
    """

    def __init__(self, spec: ArchitectureSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        dims = [spec.input_dim, *spec.hidden_dims]
        enc_layers: list[Layer] = []
        for a, b in zip(dims, dims[1:]):
            enc_layers.extend(self._hidden_block(a, b, rng))
        self.encoder = Sequential(enc_layers)
        back = dims[::-1]
        dec_layers: list[Layer] = []
        for a, b in zip(back[:-2], back[1:-1]):
            dec_layers.extend(self._hidden_block(a, b, rng))
        dec_layers.append(Affine(back[-2], back[-1], rng))
        self.decoder = Sequential(dec_layers)
        self.clf_enc = self.clf_dec = None
        if spec.with_heads:
            self.clf_enc = Sequential([Affine(spec.bottleneck, 1, rng), Sigmoid()])
            self.clf_dec = Sequential([Affine(spec.input_dim, 1, rng), Sigmoid()])

    def _hidden_block(self, a, b, rng) -> list[Layer]:
        block: list[Layer] = [Affine(a, b, rng)]
        if self.spec.batch_norm:
            block.append(BatchNorm(b, self.spec.bn_eps, self.spec.bn_momentum))
        block.append(ReLU())
        return block

    @property
    def modules(self) -> list[Sequential]:
        return [m for m in (self.encoder, self.decoder, self.clf_enc, self.clf_dec) if m is not None]

    @property
    def has_heads(self) -> bool:
        return self.clf_enc is not None

    def n_params(self) -> int:
        return sum(m.n_params() for m in self.modules)

    def parameters(self):
        return [pg for m in self.modules for pg in m.parameters()]

    def zero_grad(self):
        for m in self.modules:
            m.zero_grad()

    def forward(self, x, training: bool = False) -> Forward:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ValueError(f"expected (n, {self.spec.input_dim}) input, got {x.shape}")
        enc = self.encoder.forward(x, training)
        self._enc_shape = enc.shape
        recon = self.decoder.forward(enc, training)
        p_enc = p_dec = None
        if self.has_heads:
            p_enc = self.clf_enc.forward(enc, training).ravel()
            p_dec = self.clf_dec.forward(recon, training).ravel()
        return Forward(enc, recon, p_enc, p_dec)

    def backward(self, d_enc=None, d_recon=None, d_p_enc=None, d_p_dec=None) -> None:
        """Backpropagate gradients w.r.t. the outputs of the last ``forward``."""
        n = self._enc_shape[0]
        d_enc = np.zeros(self._enc_shape) if d_enc is None else d_enc
        d_recon = np.zeros((n, self.spec.input_dim)) if d_recon is None else d_recon.copy()
        if d_p_dec is not None:
            d_recon = d_recon + self.clf_dec.backward(np.reshape(d_p_dec, (n, 1)))
        if d_p_enc is not None:
            d_enc = d_enc + self.clf_enc.backward(np.reshape(d_p_enc, (n, 1)))
        d_enc = d_enc + self.decoder.backward(d_recon)
        self.encoder.backward(d_enc)

    # -- serialization -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, mod in self._named_modules():
            for i, layer in enumerate(mod.layers):
                for k, v in layer.params.items():
                    out[f"{name}.{i}.{k}"] = v
                if isinstance(layer, BatchNorm):
                    out[f"{name}.{i}.running_mean"] = layer.running_mean
                    out[f"{name}.{i}.running_var"] = layer.running_var
        return out

    def load_state_arrays(self, arrays) -> None:
        for name, mod in self._named_modules():
            for i, layer in enumerate(mod.layers):
                for k in layer.params:
                    layer.params[k][...] = arrays[f"{name}.{i}.{k}"]
                if isinstance(layer, BatchNorm):
                    layer.running_mean = np.array(arrays[f"{name}.{i}.running_mean"], dtype=np.float64)
                    layer.running_var = np.array(arrays[f"{name}.{i}.running_var"], dtype=np.float64)

    def _named_modules(self):
        names = ("encoder", "decoder", "clf_enc", "clf_dec")
        mods = (self.encoder, self.decoder, self.clf_enc, self.clf_dec)
        return [(n, m) for n, m in zip(names, mods) if m is not None]


def build_autoencoder(spec: ArchitectureSpec, seed: int = 0) -> Autoencoder:
    return Autoencoder(spec, seed)


def memory_footprint_kb(n_params: int, bytes_per_param: int = 4) -> float:
    """float32 storage in KiB (67,202 params -> 262.5)."""
    return n_params * bytes_per_param / 1024.0


def encode_decode(model: Autoencoder, x) -> Forward:
    """Inference-mode forward pass."""
    return model.forward(x, training=False)


# -- Gaussian decision ---------------------------------------------------------


@dataclass
class ViewGaussians:
    reference: np.ndarray
    mean: tuple[float, float]  # (normal, attack)
    std: tuple[float, float]
    prior: tuple[float, float]


@dataclass
class GaussianDecision:
    encoder: ViewGaussians
    decoder: ViewGaussians

    def view(self, name: str) -> ViewGaussians:
        if name not in ("encoder", "decoder"):
            raise ValueError(f"unknown view {name!r}")
        return getattr(self, name)

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("encoder", "decoder"):
            v = self.view(name)
            out[f"gd.{name}.reference"] = v.reference
            out[f"gd.{name}.stats"] = np.array([v.mean, v.std, v.prior], dtype=np.float64)
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "GaussianDecision":
        views = {}
        for name in ("encoder", "decoder"):
            stats = np.asarray(arrays[f"gd.{name}.stats"])
            views[name] = ViewGaussians(
                np.array(arrays[f"gd.{name}.reference"], dtype=np.float64),
                tuple(map(float, stats[0])), tuple(map(float, stats[1])), tuple(map(float, stats[2])),
            )
        return cls(**views)


def fit_view_gaussians(scores, labels) -> tuple[tuple, tuple, tuple]:
    """Per-class MLE over scores: (means, population stds, priors), normal first."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).ravel().astype(int)
    means, stds, priors = [], [], []
    for c in (0, 1):
        s = scores[labels == c]
        if s.size == 0:
            raise ValueError("Gaussian decision needs both classes in the clean data")
        means.append(float(s.mean()))
        stds.append(max(float(s.std()), SIGMA_FLOOR))
        priors.append(s.size / scores.size)
    return tuple(means), tuple(stds), tuple(priors)


def fit_gaussian_decision(model: Autoencoder, x, labels) -> GaussianDecision:
    labels = np.asarray(labels).ravel().astype(int)
    if not ((labels == 0).any() and (labels == 1).any()):
        raise ValueError("Gaussian decision needs both classes in the clean data")
    out = encode_decode(model, x)
    views = {}
    for name, reps in (("encoder", out.enc), ("decoder", out.recon)):
        ref = reps[labels == 0].mean(axis=0)
        scores = cosine_to_reference(reps, ref)
        mean, std, prior = fit_view_gaussians(scores, labels)
        views[name] = ViewGaussians(ref, mean, std, prior)
    return GaussianDecision(**views)


def _log_normal_pdf(x, mu, sigma):
    return -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)


def gaussian_posteriors(view: ViewGaussians, scores) -> np.ndarray:
    """(n, 2) posteriors [normal, attack], computed in log space."""
    scores = np.asarray(scores, dtype=np.float64)
    logp = np.stack(
        [math.log(view.prior[c]) + _log_normal_pdf(scores, view.mean[c], view.std[c]) for c in (0, 1)],
        axis=-1,
    )
    logp -= logp.max(axis=-1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=-1, keepdims=True)


def gaussian_posterior_classify(gd: GaussianDecision, score, view: str = "encoder"):
    """Label and confidence for scalar or vector scores. Ties go to attack."""
    post = gaussian_posteriors(gd.view(view), score)
    label = (post[..., 1] >= post[..., 0]).astype(int)
    conf = post.max(axis=-1)
    if np.ndim(score) == 0:
        return int(label), float(conf)
    return label, conf


class Verdict(NamedTuple):
    label: int
    confidence: float
    enc_label: int
    enc_confidence: float
    dec_label: int
    dec_confidence: float


def confidence_vote(enc: tuple[int, float], dec: tuple[int, float]) -> Verdict:
    """Pick the view with strictly higher confidence; ties go to the encoder."""
    (le, ce), (ld, cd) = enc, dec
    if cd > ce:
        return Verdict(int(ld), float(cd), int(le), float(ce), int(ld), float(cd))
    return Verdict(int(le), float(ce), int(le), float(ce), int(ld), float(cd))


@dataclass
class Votes:
    """Vectorised verdicts for a batch."""

    label: np.ndarray
    confidence: np.ndarray
    enc_label: np.ndarray
    enc_confidence: np.ndarray
    dec_label: np.ndarray
    dec_confidence: np.ndarray

    def __len__(self):
        return len(self.label)

    def verdicts(self) -> list[Verdict]:
        return [Verdict(*map(_py, row)) for row in zip(
            self.label, self.confidence, self.enc_label, self.enc_confidence,
            self.dec_label, self.dec_confidence,
        )]


def _py(v):
    return v.item() if hasattr(v, "item") else v


def vote(enc_label, enc_conf, dec_label, dec_conf) -> Votes:
    use_dec = dec_conf > enc_conf
    return Votes(
        np.where(use_dec, dec_label, enc_label).astype(int),
        np.where(use_dec, dec_conf, enc_conf),
        np.asarray(enc_label, dtype=int), np.asarray(enc_conf, dtype=np.float64),
        np.asarray(dec_label, dtype=int), np.asarray(dec_conf, dtype=np.float64),
    )


def head_votes(p_enc, p_dec) -> Votes:
    p_enc = np.asarray(p_enc, dtype=np.float64)
    p_dec = np.asarray(p_dec, dtype=np.float64)
    return vote(
        (p_enc >= 0.5).astype(int), np.maximum(p_enc, 1 - p_enc),
        (p_dec >= 0.5).astype(int), np.maximum(p_dec, 1 - p_dec),
    )


def predict(model: Autoencoder, x, decision: GaussianDecision | None = None, mode: str = "gaussian") -> Votes:
    """Classify a batch with either the Gaussian views or the sigmoid heads."""
    out = encode_decode(model, x)
    if mode == "heads":
        if not model.has_heads:
            raise ValueError("heads mode needs a model built with classifier heads")
        return head_votes(out.p_enc, out.p_dec)
    if mode != "gaussian":
        raise ValueError(f"unknown decision mode {mode!r}")
    if decision is None:
        raise ValueError("gaussian mode needs a fitted GaussianDecision")
    per_view = []
    for name, reps in (("encoder", out.enc), ("decoder", out.recon)):
        scores = cosine_to_reference(reps, decision.view(name).reference)
        per_view.append(gaussian_posterior_classify(decision, scores, name))
    (le, ce), (ld, cd) = per_view
    return vote(le, ce, ld, cd)


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, model: Autoencoder, decision: GaussianDecision | None = None,
                    optimizer=None, extra: dict | None = None) -> None:
    """Write architecture, parameters, BN stats, optimizer and decision to one .npz."""
    header = {
        "format": "aocids-checkpoint",
        "version": CHECKPOINT_VERSION,
        "architecture": asdict(model.spec),
        "extra": extra or {},
    }
    arrays = dict(model.state_arrays())
    if decision is not None:
        arrays.update(decision.to_arrays())
    if optimizer is not None:
        header["optimizer"] = {
            "kind": optimizer.kind, "learning_rate": optimizer.learning_rate,
            "weight_decay": optimizer.weight_decay, "step_count": optimizer.step_count,
        }
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"opt.m.{i}"] = m
            arrays[f"opt.v.{i}"] = v
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(model, decision_or_None, optimizer_or_None)``."""
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    header = json.loads(arrays.pop("header").tobytes().decode())
    if header.get("format") != "aocids-checkpoint":
        raise ValueError(f"{path} is not a checkpoint file")
    if header["version"] > CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version {header['version']} is newer than supported")
    model = Autoencoder(ArchitectureSpec(**header["architecture"]))
    model.load_state_arrays(arrays)
    decision = GaussianDecision.from_arrays(arrays) if "gd.encoder.stats" in arrays else None
    optimizer = None
    if "optimizer" in header:
        optimizer = Optimizer(**header["optimizer"])
        i = 0
        while f"opt.m.{i}" in arrays:
            optimizer.m.append(np.array(arrays[f"opt.m.{i}"]))
            optimizer.v.append(np.array(arrays[f"opt.v.{i}"]))
            i += 1
    return model, decision, optimizer
