"""Datasets, expression-level labels, split construction and file formats.

The synthetic generator is a desk-scale stand-in for real CNN features: a
correlated latent Gaussian is thresholded into boolean attribute bits, and
features are a fixed random projection of those bits plus isotropic noise.
Expression-level ground truth is always derived from the attribute bits, so
boolean identities hold exactly on every dataset.

Storage uses small JSON manifests plus raw little-endian float64/uint8
payloads behind 8-byte magic headers; all artifacts round-trip byte-exactly
and carry content digests so mismatched combinations fail fast.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DigestMismatchError,
    FormatError,
    InfeasibleSplitError,
    InvalidCorrelationError,
    UnknownPrimitiveError,
    VersionMismatchError,
)
from .exprlang import (
    And,
    Expression,
    Or,
    Primitive,
    eval_bool_columns,
    load_expressions,
    save_expressions,
    unparse,
)
from .numcore import rng_stream
from .primitives import Classifier, PlattParams, PrimitiveBank

__all__ = [
    "Dataset",
    "SyntheticConfig",
    "FilterConfig",
    "SplitConfig",
    "SplitSpec",
    "synth_generate",
    "build_correlation",
    "expr_label",
    "enumerate_binary",
    "filter_expressions",
    "enumerate_and_filter",
    "make_splits",
    "sha256_hex",
    "canonical_json",
    "ensure_digest",
    "save_dataset",
    "load_dataset",
    "save_bank",
    "load_bank",
    "save_net",
    "load_net",
    "save_split",
    "load_split",
]


@dataclass
class Dataset:
    """N x D features with N x M boolean primitive labels."""

    features: np.ndarray
    labels: np.ndarray
    primitives: tuple[str, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=bool)
        self.primitives = tuple(self.primitives)
        if self.features.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("features and labels must be 2-d")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"row mismatch: {self.features.shape[0]} features vs {self.labels.shape[0]} labels"
            )
        if self.labels.shape[1] != len(self.primitives):
            raise ValueError("one label column per primitive is required")
        if len(set(self.primitives)) != len(self.primitives):
            raise ValueError("primitive names must be unique")
        pos = self.labels.sum(axis=0)
        bad = [self.primitives[j] for j in range(len(self.primitives))
               if pos[j] == 0 or pos[j] == self.labels.shape[0]]
        if bad:
            raise ValueError(f"primitives with no positives or no negatives: {bad}")
        self.digest = sha256_hex(
            self.features.tobytes()
            + self.labels.astype(np.uint8).tobytes()
            + "\n".join(self.primitives).encode("utf-8")
        )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def m(self) -> int:
        return len(self.primitives)


@dataclass
class SyntheticConfig:
    m: int = 16
    d: int = 64
    n: int = 6000
    blocks: int = 3
    rho: float = 0.8
    thresholds: float | Sequence[float] = 0.0
    noise: float = 3.0
    projection: str = "random"  # "random" or "identity" (requires d == m)
    correlation: Sequence[Sequence[float]] | None = None
    seed: int = 0


def build_correlation(config: SyntheticConfig) -> np.ndarray:
    """Latent correlation matrix: explicit if given, else equi-correlated blocks."""
    if config.correlation is not None:
        corr = np.asarray(config.correlation, dtype=np.float64)
        if corr.shape != (config.m, config.m) or not np.allclose(corr, corr.T):
            raise InvalidCorrelationError(f"correlation must be symmetric {config.m}x{config.m}")
    else:
        sizes = [config.m // config.blocks + (1 if i < config.m % config.blocks else 0)
                 for i in range(config.blocks)]
        corr = np.eye(config.m)
        start = 0
        for size in sizes:
            block = slice(start, start + size)
            corr[block, block] = config.rho
            start += size
        np.fill_diagonal(corr, 1.0)
    if np.linalg.eigvalsh(corr).min() < -1e-8:
        raise InvalidCorrelationError("correlation matrix is not positive semi-definite")
    return corr


def synth_generate(config: SyntheticConfig) -> Dataset:
    """Deterministic synthetic dataset from (config, seed)."""
    if config.noise < 0:
        raise ValueError("noise must be >= 0")
    corr = build_correlation(config)
    rng = rng_stream(config.seed, "synth")
    evals, evecs = np.linalg.eigh(corr)
    factor = evecs * np.sqrt(np.clip(evals, 0.0, None))
    latent = rng.standard_normal((config.n, config.m)) @ factor.T
    thresholds = np.broadcast_to(
        np.asarray(config.thresholds, dtype=np.float64), (config.m,)
    )
    bits = latent > thresholds
    if config.projection == "identity":
        if config.d != config.m:
            raise ValueError("identity projection requires d == m")
        features = bits.astype(np.float64)
    elif config.projection == "random":
        proj = rng.standard_normal((config.d, config.m)) / math.sqrt(config.m)
        features = bits.astype(np.float64) @ proj.T
    else:
        raise ValueError(f"unknown projection {config.projection!r}")
    if config.noise > 0:
        features = features + config.noise * rng.standard_normal((config.n, config.d))
    names = tuple(f"attr{j:02d}" for j in range(config.m))
    provenance = {"kind": "synthetic", "config": _config_dict(config)}
    return Dataset(features=features, labels=bits, primitives=names, provenance=provenance)


def _config_dict(config: SyntheticConfig) -> dict:
    raw = asdict(config)
    if raw["correlation"] is not None:
        raw["correlation"] = np.asarray(raw["correlation"]).tolist()
    if not np.isscalar(raw["thresholds"]):
        raw["thresholds"] = list(np.asarray(raw["thresholds"]).tolist())
    return raw


# ---------------------------------------------------------------------------
# expression labels and filtering


def expr_label(dataset: Dataset, expr: Expression) -> np.ndarray:
    """Boolean ground-truth vector (length N) for an expression."""
    return eval_bool_columns(expr, _ColumnView(dataset))


class _ColumnView(Mapping):
    """Lazy name -> label column mapping that reports unknown primitives."""

    def __init__(self, dataset: Dataset):
        self._ds = dataset
        self._index = {n: j for j, n in enumerate(dataset.primitives)}

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._ds.labels[:, self._index[name]]
        except KeyError:
            raise UnknownPrimitiveError(f"dataset has no primitive {name!r}") from None

    def __iter__(self):
        return iter(self._index)

    def __len__(self):
        return len(self._index)


@dataclass
class FilterConfig:
    min_pos_frac: float = 0.02
    min_count: int = 20


def enumerate_binary(names: Sequence[str], ops: Sequence[str] = ("and", "or")) -> list[Expression]:
    """All unordered binary expressions per operator, in deterministic order."""
    out: list[Expression] = []
    for op in ops:
        node = {"and": And, "or": Or}[op]
        for a, b in itertools.combinations(names, 2):
            out.append(node(Primitive(a), Primitive(b)))
    return out


def filter_expressions(
    dataset: Dataset,
    exprs: Sequence[Expression],
    splits: Mapping[str, np.ndarray],
    config: FilterConfig,
) -> list[Expression]:
    """Keep expressions with enough positives AND negatives in every split."""
    kept = []
    for e in exprs:
        labels = expr_label(dataset, e)
        ok = True
        for idx in splits.values():
            need = max(config.min_count, config.min_pos_frac * len(idx))
            pos = int(labels[idx].sum())
            if pos < need or len(idx) - pos < need:
                ok = False
                break
        if ok:
            kept.append(e)
    return kept


def enumerate_and_filter(
    dataset: Dataset,
    ops: Sequence[str],
    min_pos_frac: float,
    min_count: int,
    splits: Mapping[str, np.ndarray],
) -> list[Expression]:
    """All filtered unordered binary expressions of the dataset's primitives."""
    candidates = enumerate_binary(dataset.primitives, ops)
    return filter_expressions(
        dataset, candidates, splits, FilterConfig(min_pos_frac=min_pos_frac, min_count=min_count)
    )


# ---------------------------------------------------------------------------
# splits


@dataclass
class SplitConfig:
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    expr_test_fraction: float = 0.25
    max_attempts: int = 10


@dataclass
class SplitSpec:
    train_images: np.ndarray
    val_images: np.ndarray
    test_images: np.ndarray
    train_exprs: tuple[Expression, ...]
    test_exprs: tuple[Expression, ...]
    filter: FilterConfig
    dataset_digest: str
    seed: int

    def image_splits(self) -> dict[str, np.ndarray]:
        return {"train": self.train_images, "val": self.val_images, "test": self.test_images}


def _coverage_failure(dataset: Dataset, train_idx: np.ndarray, config: FilterConfig) -> str | None:
    need = max(config.min_count, config.min_pos_frac * len(train_idx))
    counts = dataset.labels[train_idx].sum(axis=0)
    for j, name in enumerate(dataset.primitives):
        if counts[j] < need or len(train_idx) - counts[j] < need:
            return f"primitive {name!r} has {int(counts[j])} positives in a training split of {len(train_idx)}"
    return None


def make_splits(
    dataset: Dataset,
    candidates: Sequence[Expression],
    seed: int,
    split_config: SplitConfig | None = None,
    filter_config: FilterConfig | None = None,
) -> SplitSpec:
    """Disjoint image splits plus a disjoint train/test expression split.

    Image splits are resampled (bounded attempts) until every primitive and
    every retained expression has enough positives and negatives; the
    expression split is stratified per operator.
    """
    sc = split_config or SplitConfig()
    fc = filter_config or FilterConfig()
    if not 0.999 <= sum(sc.fractions) <= 1.001:
        raise ValueError(f"fractions must sum to 1, got {sc.fractions}")
    rng = rng_stream(seed, "splits")
    n = dataset.n
    n_train = int(round(sc.fractions[0] * n))
    n_val = int(round(sc.fractions[1] * n))
    reason = "no attempts made"
    for _ in range(sc.max_attempts):
        perm = rng.permutation(n)
        train = np.sort(perm[:n_train])
        val = np.sort(perm[n_train:n_train + n_val])
        test = np.sort(perm[n_train + n_val:])
        failure = _coverage_failure(dataset, train, fc)
        if failure:
            reason = failure
            continue
        splits = {"train": train, "val": val, "test": test}
        retained = filter_expressions(dataset, candidates, splits, fc)
        groups: dict[type, list[Expression]] = {}
        for e in retained:
            groups.setdefault(type(e), []).append(e)
        if not groups:
            reason = "no expression survived filtering"
            continue
        too_small = [t.__name__ for t, g in groups.items() if len(g) < 2]
        if too_small:
            reason = f"operator group(s) {too_small} have fewer than 2 retained expressions"
            continue
        train_exprs: list[Expression] = []
        test_exprs: list[Expression] = []
        for _, group in sorted(groups.items(), key=lambda kv: kv[0].__name__):
            order = rng.permutation(len(group))
            n_test = max(1, int(round(sc.expr_test_fraction * len(group))))
            n_test = min(n_test, len(group) - 1)
            for k in order[:n_test]:
                test_exprs.append(group[int(k)])
            for k in order[n_test:]:
                train_exprs.append(group[int(k)])
        return SplitSpec(
            train_images=train,
            val_images=val,
            test_images=test,
            train_exprs=tuple(sorted(train_exprs, key=unparse)),
            test_exprs=tuple(sorted(test_exprs, key=unparse)),
            filter=fc,
            dataset_digest=dataset.digest,
            seed=seed,
        )
    raise InfeasibleSplitError(f"no valid split in {sc.max_attempts} attempts; last failure: {reason}")


# ---------------------------------------------------------------------------
# storage


_FEATURES_MAGIC = (b"BCFT", b"0001")
_LABELS_MAGIC = (b"BCLB", b"0001")
_BANK_MAGIC = (b"BCBK", b"0001")
_NET_MAGIC = (b"BCNT", b"0001")

_DATASET_FORMAT = "boolclf/dataset"
_BANK_FORMAT = "boolclf/bank"
_NET_FORMAT = "boolclf/net"
_SPLIT_FORMAT = "boolclf/split"
_FORMAT_VERSION = 1


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def ensure_digest(expected: str, actual: str, what: str, override: bool = False) -> None:
    """Fail fast when digests disagree, unless explicitly overridden."""
    if expected != actual and not override:
        raise DigestMismatchError(
            f"{what}: expected digest {expected[:12]}..., got {actual[:12]}..."
        )


def _write_payload(path: Path, magic: tuple[bytes, bytes], array: np.ndarray, dtype: str) -> None:
    data = np.ascontiguousarray(array).astype(dtype, copy=False).tobytes()
    path.write_bytes(magic[0] + magic[1] + data)


def _read_payload(path: Path, magic: tuple[bytes, bytes], dtype: str, count: int) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path.name}: truncated header", offset=len(raw))
    if raw[:4] != magic[0]:
        raise FormatError(f"{path.name}: bad magic {raw[:4]!r}", offset=0)
    if raw[4:8] != magic[1]:
        raise VersionMismatchError(
            f"{path.name}: format version {raw[4:8]!r}, expected {magic[1]!r}"
        )
    expected_bytes = count * np.dtype(dtype).itemsize
    if len(raw) - 8 != expected_bytes:
        raise FormatError(
            f"{path.name}: payload is {len(raw) - 8} bytes, expected {expected_bytes}",
            offset=min(len(raw), expected_bytes + 8),
        )
    return np.frombuffer(raw[8:], dtype=dtype).copy()


def _load_manifest(path: Path, expected_format: str) -> dict:
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != expected_format:
        raise FormatError(f"{path}: format {manifest.get('format')!r}, expected {expected_format!r}")
    if manifest.get("version") != _FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: version {manifest.get('version')!r}, expected {_FORMAT_VERSION}"
        )
    return manifest


def save_dataset(dataset: Dataset, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_payload(out / "features.bin", _FEATURES_MAGIC, dataset.features, "<f8")
    _write_payload(out / "labels.bin", _LABELS_MAGIC, dataset.labels.astype(np.uint8), "u1")
    manifest = {
        "format": _DATASET_FORMAT,
        "version": _FORMAT_VERSION,
        "n": dataset.n,
        "d": dataset.d,
        "m": dataset.m,
        "primitives": list(dataset.primitives),
        "provenance": dataset.provenance,
        "digest": dataset.digest,
    }
    (out / "dataset.manifest").write_text(canonical_json(manifest), encoding="utf-8")
    return out


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    manifest = _load_manifest(src / "dataset.manifest", _DATASET_FORMAT)
    n, d, m = manifest["n"], manifest["d"], manifest["m"]
    features = _read_payload(src / "features.bin", _FEATURES_MAGIC, "<f8", n * d).reshape(n, d)
    labels = _read_payload(src / "labels.bin", _LABELS_MAGIC, "u1", n * m).reshape(n, m)
    ds = Dataset(
        features=features,
        labels=labels.astype(bool),
        primitives=tuple(manifest["primitives"]),
        provenance=manifest.get("provenance", {}),
    )
    ensure_digest(manifest["digest"], ds.digest, f"{src}: stored dataset digest")
    return ds


def save_bank(bank: PrimitiveBank, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = np.concatenate([bank[name].weights for name in bank.names])
    _write_payload(out / "bank.bin", _BANK_MAGIC, payload, "<f8")
    manifest = {
        "format": _BANK_FORMAT,
        "version": _FORMAT_VERSION,
        "d": bank.d,
        "names": list(bank.names),
        "sources": {name: bank[name].source for name in bank.names},
        "platt": {name: [p.a, p.b] for name, p in sorted(bank.platt.items())},
        "config_digest": bank.config_digest,
        "dataset_digest": bank.dataset_digest,
    }
    (out / "bank.manifest").write_text(canonical_json(manifest), encoding="utf-8")
    return out


def load_bank(in_dir) -> PrimitiveBank:
    src = Path(in_dir)
    manifest = _load_manifest(src / "bank.manifest", _BANK_FORMAT)
    d = manifest["d"]
    names = tuple(manifest["names"])
    payload = _read_payload(src / "bank.bin", _BANK_MAGIC, "<f8", (d + 1) * len(names))
    classifiers = {}
    for j, name in enumerate(names):
        weights = payload[j * (d + 1):(j + 1) * (d + 1)]
        classifiers[name] = Classifier(weights, source=manifest["sources"].get(name, "svm-primitive"))
    platt = {name: PlattParams(a=ab[0], b=ab[1]) for name, ab in manifest.get("platt", {}).items()}
    return PrimitiveBank(
        d=d,
        names=names,
        classifiers=classifiers,
        platt=platt,
        config_digest=manifest.get("config_digest", ""),
        dataset_digest=manifest.get("dataset_digest", ""),
    )


def save_net(net, out_dir, *, or_net=None, meta: dict | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parts = [net.w1.ravel(), net.b1, net.w2.ravel(), net.b2]
    if or_net is not None:
        parts += [or_net.w1.ravel(), or_net.b1, or_net.w2.ravel(), or_net.b2]
    _write_payload(out / "net.bin", _NET_MAGIC, np.concatenate(parts), "<f8")
    manifest = {
        "format": _NET_FORMAT,
        "version": _FORMAT_VERSION,
        "d": net.d,
        "h": net.h,
        "slope": net.slope,
        "has_or_net": or_net is not None,
    }
    manifest.update(meta or {})
    (out / "net.manifest").write_text(canonical_json(manifest), encoding="utf-8")
    return out


def load_net(in_dir):
    """Returns (net, or_net or None, manifest dict)."""
    from .algebra import CompositionNet  # local import to avoid a cycle

    src = Path(in_dir)
    manifest = _load_manifest(src / "net.manifest", _NET_FORMAT)
    d, h, slope = manifest["d"], manifest["h"], manifest["slope"]
    per_net = h * 2 * (d + 1) + h + (d + 1) * h + (d + 1)
    count = per_net * (2 if manifest.get("has_or_net") else 1)
    payload = _read_payload(src / "net.bin", _NET_MAGIC, "<f8", count)

    def unpack(flat: np.ndarray) -> CompositionNet:
        sizes = [h * 2 * (d + 1), h, (d + 1) * h, d + 1]
        offs = np.cumsum([0] + sizes)
        return CompositionNet(
            flat[offs[0]:offs[1]].reshape(h, 2 * (d + 1)),
            flat[offs[1]:offs[2]],
            flat[offs[2]:offs[3]].reshape(d + 1, h),
            flat[offs[3]:offs[4]],
            slope,
        )

    net = unpack(payload[:per_net])
    or_net = unpack(payload[per_net:]) if manifest.get("has_or_net") else None
    return net, or_net, manifest


def save_split(spec: SplitSpec, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_expressions(out / "exprs.train.txt", spec.train_exprs)
    save_expressions(out / "exprs.test.txt", spec.test_exprs)
    manifest = {
        "format": _SPLIT_FORMAT,
        "version": _FORMAT_VERSION,
        "dataset_digest": spec.dataset_digest,
        "seed": spec.seed,
        "filter": {"min_pos_frac": spec.filter.min_pos_frac, "min_count": spec.filter.min_count},
        "train_images": spec.train_images.tolist(),
        "val_images": spec.val_images.tolist(),
        "test_images": spec.test_images.tolist(),
    }
    (out / "split.manifest").write_text(canonical_json(manifest), encoding="utf-8")
    return out


def load_split(in_dir) -> SplitSpec:
    src = Path(in_dir)
    manifest = _load_manifest(src / "split.manifest", _SPLIT_FORMAT)
    train_exprs = tuple(load_expressions(src / "exprs.train.txt"))
    test_exprs = tuple(load_expressions(src / "exprs.test.txt"))
    if set(train_exprs) & set(test_exprs):
        raise FormatError(f"{src}: train and test expressions overlap")
    return SplitSpec(
        train_images=np.asarray(manifest["train_images"], dtype=np.int64),
        val_images=np.asarray(manifest["val_images"], dtype=np.int64),
        test_images=np.asarray(manifest["test_images"], dtype=np.int64),
        train_exprs=train_exprs,
        test_exprs=test_exprs,
        filter=FilterConfig(**manifest["filter"]),
        dataset_digest=manifest["dataset_digest"],
        seed=manifest["seed"],
    )
