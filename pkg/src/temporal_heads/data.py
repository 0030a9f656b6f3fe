"""Feature ingestion, frame sampling and the synthetic order-swap dataset.

Feature file layout (little-endian)::

    b"TFV1" | uint32 D | uint32 N | D*N float32, row-major (feature-major)

A manifest is a JSON document listing, per sequence, the spatial- and
temporal-stream feature files, a label and a split. Paths are relative to the
manifest's directory.
"""
from __future__ import annotations

import json
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError

MAGIC = b"TFV1"
HEADER = struct.Struct("<4sII")
MANIFEST_SCHEMA = "temporal-heads/manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "test")


@dataclass
class FeatureMatrix:
    """Per-frame features of one sequence, shape (D, N)."""

    values: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise DataError(f"feature matrix must be (D, N) with N >= 1, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise DataError(f"feature matrix {self.id!r} contains non-finite values")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


# -- sampling and stream fusion --------------------------------------------------
def sample_frames(available: int, count: int = 25) -> list[int]:
    """Equally spaced frame indices covering both endpoints, ``floor(j (L-1) / (N-1))``.

    A single requested frame is the middle one. Indices repeat when fewer frames
    are available than requested.
    """
    if available < 1:
        raise DataError(f"cannot sample from {available} frames")
    if count < 1:
        raise DataError(f"frame count must be positive, got {count}")
    if count == 1:
        return [(available - 1) // 2]
    return [(j * (available - 1)) // (count - 1) for j in range(count)]


def concat_streams(spatial, temporal) -> FeatureMatrix:
    """Stack spatial rows above temporal rows, frame by frame."""
    s = spatial.values if isinstance(spatial, FeatureMatrix) else np.asarray(spatial, dtype=np.float64)
    t = temporal.values if isinstance(temporal, FeatureMatrix) else np.asarray(temporal, dtype=np.float64)
    if s.ndim != 2 or t.ndim != 2:
        raise DataError("streams must be (features, frames) matrices")
    if s.shape[1] != t.shape[1]:
        raise DataError(f"stream lengths differ: spatial {s.shape[1]}, temporal {t.shape[1]} frames")
    sid = spatial.id if isinstance(spatial, FeatureMatrix) else ""
    return FeatureMatrix(np.vstack([s, t]), id=sid)


# -- binary feature files ----------------------------------------------------------
def store_features(path, values) -> None:
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise DataError(f"feature arrays must be 2-D, got shape {arr.shape}")
    d, n = arr.shape
    payload = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, d, n))
        fh.write(payload.tobytes())


def read_feature_file(path) -> np.ndarray:
    """Return the stored (D, N) float32 array; reject malformed files."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"{path}: cannot read feature file ({exc.strerror})") from exc
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, d, n = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if d == 0 or n == 0:
        raise FormatError(f"{path}: empty shape {d}x{n} in header")
    expected = HEADER.size + 4 * d * n
    if len(raw) != expected:
        raise FormatError(f"{path}: header says {d}x{n} ({expected} bytes) but file has {len(raw)} bytes")
    arr = np.frombuffer(raw, dtype="<f4", offset=HEADER.size).reshape(d, n).astype(np.float32)
    if not np.isfinite(arr).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return arr


# -- manifest ------------------------------------------------------------------------
@dataclass
class ManifestEntry:
    id: str
    spatial_file: str
    temporal_file: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    num_classes: int
    feature_dims: tuple[int, int]
    frames: int = 25
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        self.feature_dims = tuple(int(v) for v in self.feature_dims)
        ids = [e.id for e in self.entries]
        dup = [k for k, c in Counter(ids).items() if c > 1]
        if dup:
            raise DataError(f"duplicate sequence ids in manifest: {dup[:5]}")
        for e in self.entries:
            if not 0 <= e.label < self.num_classes:
                raise DataError(f"label {e.label} of {e.id!r} outside [0, {self.num_classes})")
            if e.split not in SPLITS:
                raise DataError(f"split {e.split!r} of {e.id!r} is not one of {SPLITS}")
        self._index = {e.id: e for e in self.entries}

    def entry(self, seq_id: str) -> ManifestEntry:
        try:
            return self._index[seq_id]
        except KeyError:
            raise DataError(f"sequence {seq_id!r} is not in the manifest") from None

    def split_ids(self, split: str) -> list[str]:
        return [e.id for e in self.entries if e.split == split]

    def to_dict(self) -> dict:
        return {
            "schema": MANIFEST_SCHEMA,
            "version": MANIFEST_VERSION,
            "num_classes": self.num_classes,
            "feature_dims": list(self.feature_dims),
            "frames": self.frames,
            "entries": [asdict(e) for e in self.entries],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "DatasetManifest":
        if doc.get("schema") != MANIFEST_SCHEMA:
            raise FormatError(f"not a dataset manifest (schema={doc.get('schema')!r})")
        if doc.get("version") != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {doc.get('version')!r}")
        try:
            entries = [ManifestEntry(**e) for e in doc["entries"]]
            return cls(entries, int(doc["num_classes"]), tuple(doc["feature_dims"]),
                       int(doc.get("frames", 25)), Path(base_dir))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed manifest: {exc}") from exc

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except OSError as exc:
            raise FormatError(f"{path}: cannot read manifest ({exc.strerror})") from exc
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)


def load_features(manifest: DatasetManifest, seq_id: str) -> FeatureMatrix:
    """Read both streams, sample ``manifest.frames`` common frames and concatenate."""
    e = manifest.entry(seq_id)
    spatial = read_feature_file(manifest.base_dir / e.spatial_file)
    temporal = read_feature_file(manifest.base_dir / e.temporal_file)
    if spatial.shape[1] != temporal.shape[1]:
        raise DataError(f"{seq_id}: spatial stream has {spatial.shape[1]} frames, "
                        f"temporal stream has {temporal.shape[1]}")
    expected = manifest.feature_dims
    if (spatial.shape[0], temporal.shape[0]) != expected:
        raise DataError(f"{seq_id}: stream dims {(spatial.shape[0], temporal.shape[0])} "
                        f"differ from manifest {expected}")
    idx = sample_frames(spatial.shape[1], manifest.frames)
    fm = concat_streams(spatial[:, idx], temporal[:, idx])
    fm.id = seq_id
    return fm


@dataclass
class Dataset:
    """In-memory arrays: ``x_*`` are (B, D, N), ``y_*`` integer labels."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def dim(self) -> int:
        return self.x_train.shape[1]

    @property
    def length(self) -> int:
        return self.x_train.shape[2]

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "Dataset":
        parts = []
        for split in SPLITS:
            ids = manifest.split_ids(split)
            d = sum(manifest.feature_dims)
            x = np.zeros((len(ids), d, manifest.frames))
            y = np.zeros(len(ids), dtype=np.int64)
            for i, sid in enumerate(ids):
                x[i] = load_features(manifest, sid).values
                y[i] = manifest.entry(sid).label
            parts += [x, y]
        return cls(*parts, num_classes=manifest.num_classes)

    @classmethod
    def load(cls, manifest_path) -> "Dataset":
        return cls.from_manifest(DatasetManifest.load(manifest_path))


# -- synthetic generator -------------------------------------------------------------
def _default_prototypes(num_classes: int) -> tuple[tuple[int, ...], ...]:
    if num_classes % 2:
        raise ConfigError("the default prototype layout needs an even class count")
    protos = []
    for pair in range(num_classes // 2):
        a, b = 2 * pair, 2 * pair + 1
        protos += [(a, b), (b, a)]
    return tuple(protos)


@dataclass(frozen=True)
class SynthSpec:
    """Order-swap benchmark: classes are ordered prototype sequences plus noise.

    Class pairs built from the same prototypes in a different order carry
    identical frame multisets, so any frame-order-invariant statistic confuses them.
    """

    num_classes: int = 8
    prototypes_per_class: tuple[tuple[int, ...], ...] | None = None
    dim: int = 64
    length: int = 25
    noise_sigma: float = 0.1
    seed: int = 0
    train_per_class: int = 200
    test_per_class: int = 50
    spatial_dim: int | None = None
    prototype_scale: float = 1.0

    def __post_init__(self):
        protos = self.prototypes_per_class
        if protos is None:
            protos = _default_prototypes(self.num_classes)
        protos = tuple(tuple(int(p) for p in c) for c in protos)
        object.__setattr__(self, "prototypes_per_class", protos)
        if len(protos) != self.num_classes:
            raise ConfigError(f"{len(protos)} prototype lists for {self.num_classes} classes")
        if any(len(c) == 0 for c in protos):
            raise ConfigError("every class needs at least one prototype")
        if any(len(c) > self.length for c in protos):
            raise ConfigError(f"a class has more prototypes than the {self.length} frames available")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be non-negative")
        if self.dim < 2:
            raise ConfigError("dim must be at least 2 (one row per stream)")
        sd = self.spatial_dim if self.spatial_dim is not None else self.dim // 2
        if not 1 <= sd < self.dim:
            raise ConfigError(f"spatial_dim must lie in [1, {self.dim})")
        object.__setattr__(self, "spatial_dim", sd)
        if self.train_per_class < 1 or self.test_per_class < 0:
            raise ConfigError("need at least one training sequence per class")
        if not self.order_swapped_pairs():
            raise ConfigError("no class pair shares a prototype multiset in a different order")

    def order_swapped_pairs(self) -> list[tuple[int, int]]:
        protos = self.prototypes_per_class
        pairs = []
        for i in range(len(protos)):
            for j in range(i + 1, len(protos)):
                if sorted(protos[i]) == sorted(protos[j]) and protos[i] != protos[j]:
                    pairs.append((i, j))
        return pairs


def prototype_spans(order, length: int) -> list[tuple[int, int, int]]:
    """Contiguous ``(prototype, start, stop)`` spans for one class.

    Span lengths are attached to prototypes (ranked in sorted order), not to
    positions, so reordering the prototypes never changes how many frames each gets.
    """
    k = len(order)
    base, extra = divmod(length, k)
    lengths = [base + (1 if i < extra else 0) for i in range(k)]
    by_proto: dict[int, list[int]] = {}
    for rank, p in enumerate(sorted(order)):
        by_proto.setdefault(p, []).append(lengths[rank])
    spans, t = [], 0
    for p in order:
        n = by_proto[p].pop(0)
        spans.append((p, t, t + n))
        t += n
    return spans


def class_template(spec: SynthSpec, label: int, prototypes: np.ndarray) -> np.ndarray:
    out = np.zeros((spec.dim, spec.length))
    for p, t0, t1 in prototype_spans(spec.prototypes_per_class[label], spec.length):
        out[:, t0:t1] = prototypes[p][:, None]
    return out


def synthesize(spec: SynthSpec) -> tuple[Dataset, list[str], list[str]]:
    """Generate the benchmark in memory; values are float32-representable.

    Returns the dataset plus train and test sequence ids.
    """
    rng = np.random.default_rng(spec.seed)
    n_protos = 1 + max(max(c) for c in spec.prototypes_per_class)
    prototypes = spec.prototype_scale * rng.standard_normal((n_protos, spec.dim))
    templates = [class_template(spec, c, prototypes) for c in range(spec.num_classes)]

    def make(split, per_class):
        xs, ys, ids = [], [], []
        for c in range(spec.num_classes):
            for i in range(per_class):
                noise = spec.noise_sigma * rng.standard_normal((spec.dim, spec.length))
                xs.append((templates[c] + noise).astype(np.float32).astype(np.float64))
                ys.append(c)
                ids.append(f"{split}-c{c:03d}-{i:05d}")
        x = np.stack(xs) if xs else np.zeros((0, spec.dim, spec.length))
        return x, np.asarray(ys, dtype=np.int64), ids

    x_tr, y_tr, id_tr = make("train", spec.train_per_class)
    x_te, y_te, id_te = make("test", spec.test_per_class)
    return Dataset(x_tr, y_tr, x_te, y_te, spec.num_classes), id_tr, id_te


def generate_synthetic(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Write feature files and ``manifest.json`` under ``out_dir``."""
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    ds, id_tr, id_te = synthesize(spec)
    sd = spec.spatial_dim
    entries = []
    for split, x, y, ids in (("train", ds.x_train, ds.y_train, id_tr),
                             ("test", ds.x_test, ds.y_test, id_te)):
        for xi, yi, sid in zip(x, y, ids):
            s_rel, t_rel = f"features/{sid}.spatial.tfv", f"features/{sid}.temporal.tfv"
            store_features(out_dir / s_rel, xi[:sd])
            store_features(out_dir / t_rel, xi[sd:])
            entries.append(ManifestEntry(sid, s_rel, t_rel, int(yi), split))
    manifest = DatasetManifest(entries, spec.num_classes, (sd, spec.dim - sd), spec.length, out_dir)
    manifest.save(out_dir / "manifest.json")
    return manifest
