"""UNSW-NB15 ingestion, preprocessing, feature engineering and sampling helpers."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

PREPROCESSOR_VERSION = 1

UNSW_NUMERIC = [
    "dur", "spkts", "dpkts", "sbytes", "dbytes", "rate", "sttl", "dttl", "sload",
    "dload", "sloss", "dloss", "sinpkt", "dinpkt", "sjit", "djit", "swin", "stcpb",
    "dtcpb", "dwin", "tcprtt", "synack", "ackdat", "smean", "dmean", "trans_depth",
    "response_body_len", "ct_srv_src", "ct_state_ttl", "ct_dst_ltm", "ct_src_dport_ltm",
    "ct_dst_sport_ltm", "ct_dst_src_ltm", "is_ftp_login", "ct_ftp_cmd",
    "ct_flw_http_mthd", "ct_src_ltm", "ct_srv_dst", "is_sm_ips_ports",
]
UNSW_CATEGORICAL = ["proto", "service", "state"]

NORMAL_TOKENS = {"0", "normal", "benign"}
ATTACK_TOKENS = {"1", "attack", "malicious"}

ENGINEERED = ["total_load", "rate_ratio", "pkt_diff"]


class DataError(ValueError):
    """Malformed input data."""


@dataclass
class ColumnSchema:
    numeric: list[str]
    categorical: list[str] = field(default_factory=list)
    label: str = "label"
    # carried through but never used as model features
    passthrough: list[str] = field(default_factory=list)
    strata: str | None = None

    @property
    def columns(self) -> list[str]:
        return [*self.passthrough, *self.numeric, *self.categorical, self.label]

    @classmethod
    def unsw(cls) -> "ColumnSchema":
        return cls(
            numeric=list(UNSW_NUMERIC), categorical=list(UNSW_CATEGORICAL),
            label="label", passthrough=["id", "attack_cat"], strata="attack_cat",
        )

    @classmethod
    def numeric_only(cls, header: list[str], label: str = "label") -> "ColumnSchema":
        """Every column except the label (and ``attack_cat`` if present) is numeric."""
        passthrough = [c for c in header if c == "attack_cat"]
        numeric = [c for c in header if c != label and c not in passthrough]
        return cls(numeric=numeric, label=label, passthrough=passthrough,
                   strata="attack_cat" if passthrough else None)


@dataclass
class RawDataset:
    frame: pd.DataFrame
    labels: np.ndarray
    schema: ColumnSchema

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    @property
    def strata(self) -> np.ndarray | None:
        if self.schema.strata and self.schema.strata in self.frame:
            return self.frame[self.schema.strata].astype(str).to_numpy()
        return None


@dataclass
class FeatureMatrix:
    data: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        if not np.isfinite(self.data).all():
            raise ValueError("feature matrix contains NaN or infinite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(int).ravel()
            if self.labels.shape[0] != self.data.shape[0]:
                raise ValueError("labels length must match row count")

    def __len__(self):
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def take(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.data[idx], None if self.labels is None else self.labels[idx])


def map_labels(values) -> np.ndarray:
    out = np.empty(len(values), dtype=int)
    for i, v in enumerate(values):
        tok = str(v).strip().lower()
        if tok.endswith(".0"):
            tok = tok[:-2]
        if tok in NORMAL_TOKENS:
            out[i] = 0
        elif tok in ATTACK_TOKENS:
            out[i] = 1
        else:
            raise DataError(f"row {i}: unrecognised label value {v!r}")
    return out


def load_dataset(path, schema: ColumnSchema | None = None) -> RawDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    frame.columns = [c.strip() for c in frame.columns]
    if schema is None:
        schema = ColumnSchema.numeric_only(list(frame.columns))
    expected, got = set(schema.columns), set(frame.columns)
    missing, extra = sorted(expected - got), sorted(got - expected)
    if missing or extra:
        raise DataError(f"{path.name}: missing columns {missing}, unexpected columns {extra}")
    labels = map_labels(frame[schema.label].tolist())
    for col in schema.numeric:
        parsed = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            r = int(bad[0])
            raise DataError(f"{path.name}: row {r}: column {col!r} is not numeric: {frame[col].iloc[r]!r}")
        frame[col] = parsed.astype(np.float64)
    for col in schema.categorical:
        frame[col] = frame[col].str.strip()
    return RawDataset(frame.reset_index(drop=True), labels, schema)


def dataset_from_frame(frame: pd.DataFrame, schema: ColumnSchema) -> RawDataset:
    """Wrap an in-memory frame whose label column is already 0/1 or text."""
    frame = frame.copy()
    for col in schema.numeric:
        frame[col] = frame[col].astype(np.float64)
    return RawDataset(frame.reset_index(drop=True), map_labels(frame[schema.label].tolist()), schema)


@dataclass
class Preprocessor:
    dropped_columns: list[str]
    numeric_ranges: dict[str, tuple[float, float]]
    categorical_vocab: dict[str, list[str]]

    @property
    def output_dim(self) -> int:
        return len(self.numeric_ranges) + sum(len(v) for v in self.categorical_vocab.values())

    def feature_names(self) -> list[str]:
        names = list(self.numeric_ranges)
        for col, vocab in self.categorical_vocab.items():
            names.extend(f"{col}={v}" for v in vocab)
        return names

    def to_json(self) -> str:
        doc = {
            "format": "aocids-preprocessor",
            "version": PREPROCESSOR_VERSION,
            "dropped_columns": self.dropped_columns,
            "numeric_ranges": [[k, lo, hi] for k, (lo, hi) in self.numeric_ranges.items()],
            "categorical_vocab": [[k, v] for k, v in self.categorical_vocab.items()],
            "output_dim": self.output_dim,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Preprocessor":
        doc = json.loads(text)
        if doc.get("format") != "aocids-preprocessor":
            raise DataError("not a preprocessor file")
        if doc["version"] > PREPROCESSOR_VERSION:
            raise DataError(f"preprocessor version {doc['version']} is newer than supported")
        return cls(
            dropped_columns=list(doc["dropped_columns"]),
            numeric_ranges={k: (float(lo), float(hi)) for k, lo, hi in doc["numeric_ranges"]},
            categorical_vocab={k: list(v) for k, v in doc["categorical_vocab"]},
        )

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Preprocessor":
        return cls.from_json(Path(path).read_text())


def fit_preprocessor(train: RawDataset) -> Preprocessor:
    """Drop train-constant columns, record min/max and category vocabularies."""
    if train.n_rows == 0:
        raise DataError("cannot fit a preprocessor on an empty dataset")
    frame, schema = train.frame, train.schema
    dropped, ranges, vocab = [], {}, {}
    for col in schema.numeric:
        values = frame[col].to_numpy(dtype=np.float64)
        lo, hi = float(values.min()), float(values.max())
        if lo == hi:
            dropped.append(col)
        else:
            ranges[col] = (lo, hi)
    for col in schema.categorical:
        values = set(frame[col].tolist())
        if len(values) < 2:
            dropped.append(col)
        else:
            # sorted so the one-hot layout does not depend on row order
            vocab[col] = sorted(values)
    p = Preprocessor(dropped, ranges, vocab)
    if p.output_dim == 0:
        raise DataError("no usable columns left after dropping constants")
    return p


def apply_preprocessor(p: Preprocessor, ds: RawDataset) -> FeatureMatrix:
    frame = ds.frame
    missing = [c for c in [*p.numeric_ranges, *p.categorical_vocab] if c not in frame]
    if missing:
        raise DataError(f"dataset lacks fitted columns {missing}")
    n = len(frame)
    out = np.empty((n, p.output_dim))
    j = 0
    for col, (lo, hi) in p.numeric_ranges.items():
        values = frame[col].to_numpy(dtype=np.float64)
        if np.isnan(values).any():
            raise DataError(f"column {col!r} contains NaN at row {int(np.flatnonzero(np.isnan(values))[0])}")
        out[:, j] = (values - lo) / (hi - lo) if hi > lo else 0.0
        j += 1
    for col, vocab in p.categorical_vocab.items():
        index = {v: k for k, v in enumerate(vocab)}
        block = np.zeros((n, len(vocab)))
        codes = np.array([index.get(v, -1) for v in frame[col].tolist()])
        seen = codes >= 0
        block[np.flatnonzero(seen), codes[seen]] = 1.0
        out[:, j:j + len(vocab)] = block
        j += len(vocab)
    return FeatureMatrix(out, ds.labels.copy())


@dataclass
class EngineeredFeatures:
    total_load: float
    rate_ratio: float
    pkt_diff: float


def engineer_features(sload, dload, sbytes, dur, spkts, dpkts):
    """Composite flow features. Works on scalars or equal-length arrays."""
    if np.any(np.asarray(dur) < 0):
        raise ValueError("dur must be non-negative")
    total_load = np.add(sload, dload)
    rate_ratio = np.divide(sbytes, np.add(dur, 0.001))
    pkt_diff = np.subtract(spkts, dpkts)
    if np.ndim(total_load) == 0:
        return EngineeredFeatures(float(total_load), float(rate_ratio), float(pkt_diff))
    return EngineeredFeatures(total_load, rate_ratio, pkt_diff)


def add_engineered_columns(ds: RawDataset) -> RawDataset:
    """Append the three composite features as ordinary numeric columns."""
    f = ds.frame
    eng = engineer_features(
        f["sload"].to_numpy(), f["dload"].to_numpy(), f["sbytes"].to_numpy(),
        f["dur"].to_numpy(), f["spkts"].to_numpy(), f["dpkts"].to_numpy(),
    )
    frame = f.copy()
    for name in ENGINEERED:
        frame[name] = getattr(eng, name)
    s = ds.schema
    schema = ColumnSchema(
        numeric=[*s.numeric, *ENGINEERED], categorical=list(s.categorical), label=s.label,
        passthrough=list(s.passthrough), strata=s.strata,
    )
    return RawDataset(frame, ds.labels, schema)


def stratified_split_indices(strata, fraction: float, seed: int = 0):
    """Per-stratum shuffled split; returns (first, second) sorted index arrays.

    Each stratum puts round(fraction * size) rows in the first part. Strata
    with fewer than two rows go wholly to the larger part.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    strata = np.asarray(strata)
    rng = np.random.default_rng(seed)
    first, second = [], []
    bigger = first if fraction >= 0.5 else second
    for value in sorted(set(strata.tolist()), key=str):
        idx = np.flatnonzero(strata == value)
        if idx.size < 2:
            log.warning("stratum %r has %d sample(s); assigned to the larger split", value, idx.size)
            bigger.extend(idx.tolist())
            continue
        idx = rng.permutation(idx)
        k = int(np.floor(fraction * idx.size + 0.5))
        k = min(max(k, 1), idx.size - 1)
        first.extend(idx[:k].tolist())
        second.extend(idx[k:].tolist())
    return np.sort(np.array(first, dtype=int)), np.sort(np.array(second, dtype=int))


def stratified_split(ds: FeatureMatrix, strata, fraction: float = 0.8, seed: int = 0):
    strata = np.asarray(strata)
    if strata.shape[0] != len(ds):
        raise ValueError("strata length must match row count")
    a, b = stratified_split_indices(strata, fraction, seed)
    return ds.take(a), ds.take(b)


def balanced_sample_weights(labels) -> np.ndarray:
    """Inverse class-frequency weights, so each class carries equal total mass."""
    labels = np.asarray(labels).astype(int).ravel()
    counts = np.bincount(labels, minlength=2)
    if (counts[:2] == 0).any():
        raise ValueError("balanced sampling needs both classes present")
    return 1.0 / counts[labels]


def balanced_draw(labels, n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn with replacement under the balanced weights."""
    w = balanced_sample_weights(labels)
    return rng.choice(len(w), size=n, replace=True, p=w / w.sum())


def generate_synthetic(n_normal: int, n_attack: int, dim: int, separation: float,
                       seed: int = 0) -> FeatureMatrix:
    """Two isotropic unit-variance blobs: normal at the origin, attack at
    ``separation`` along the all-ones diagonal. Rows are shuffled."""
    if dim < 2:
        raise ValueError("dim must be at least 2")
    if n_normal < 1 or n_attack < 1:
        raise ValueError("class counts must be at least 1")
    rng = np.random.default_rng(seed)
    axis = np.ones(dim) / np.sqrt(dim)
    normal = rng.standard_normal((n_normal, dim))
    attack = rng.standard_normal((n_attack, dim)) + separation * axis
    data = np.vstack([normal, attack])
    labels = np.r_[np.zeros(n_normal, dtype=int), np.ones(n_attack, dtype=int)]
    order = rng.permutation(len(labels))
    return FeatureMatrix(data[order], labels[order])


def synthetic_axis(dim: int) -> np.ndarray:
    return np.ones(dim) / np.sqrt(dim)


def write_feature_csv(fm: FeatureMatrix, path, names: list[str] | None = None,
                      extra: dict[str, np.ndarray] | None = None) -> None:
    names = names or [f"f{i}" for i in range(fm.dim)]
    frame = pd.DataFrame(fm.data, columns=names)
    for k, v in (extra or {}).items():
        frame[k] = v
    if fm.labels is not None:
        frame["label"] = fm.labels
    frame.to_csv(path, index=False, float_format="%.10g")
