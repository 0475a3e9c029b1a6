"""Domain-incremental task streams.

Two sources: deterministic synthetic covariate-shift streams (per-class
Gaussian clouds pushed through a per-domain affine map) and feature files
written by an external extractor.  Feature files store float32; the engine
widens to float64 on load.  Synthetic features are quantized through float32
at generation time so an in-memory stream and its saved/reloaded copy are
bit-identical.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InconsistentStream,
    InvalidSpec,
    MalformedFeatureFile,
)
from .ioutil import atomic_write_bytes
from .tensor import Rng, standard_normal

FEATURE_MAGIC = b"GLRF"
FEATURE_VERSION = 1


@dataclass
class LabeledFeatureBatch:
    """n feature rows with integer class labels in [0, C)."""

    features: np.ndarray   # (n, d) float64
    labels: np.ndarray     # (n,) int64

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise InvalidSpec(f"features must be 2-D, got {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise InvalidSpec("labels length must match feature rows")
        if not np.all(np.isfinite(self.features)):
            raise InvalidSpec("features must be finite")
        if self.labels.size and self.labels.min() < 0:
            raise InvalidSpec("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class TaskDataset:
    domain_id: int
    train: LabeledFeatureBatch
    eval: LabeledFeatureBatch
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if self.train.dim != self.eval.dim:
            raise InconsistentStream("train/eval dimensionality differs")
        if self.eval.n < 1:
            raise InvalidSpec("eval set must be non-empty")


@dataclass
class TaskStream:
    tasks: list[TaskDataset]
    num_classes: int

    def __post_init__(self):
        if not self.tasks:
            raise InvalidSpec("stream needs at least one task")
        d = self.tasks[0].train.dim
        for t in self.tasks:
            if t.train.dim != d:
                raise InconsistentStream("tasks disagree on feature dim")
            for batch in (t.train, t.eval):
                if batch.labels.size and batch.labels.max() >= self.num_classes:
                    raise InconsistentStream("label outside class alphabet")

    @property
    def feature_dim(self) -> int:
        return self.tasks[0].train.dim

    def __len__(self) -> int:
        return len(self.tasks)


@dataclass
class SyntheticShiftSpec:
    """Recipe for a deterministic covariate-shift stream.

    Domain t applies rotate -> scale -> translate to every sample of every
    class: x' = scale_t * R(theta_t) x + translation_t.  R(theta) rotates each
    consecutive coordinate pair (0,1), (2,3), ... by theta; an odd last
    coordinate stays fixed.
    """

    num_domains: int
    classes: int
    dim: int
    train_per_class: int
    eval_per_class: int
    within_sd: float
    seed: int
    base_means: np.ndarray | None = None      # (C, d); None -> circle layout
    mean_radius: float = 3.0
    rotations_deg: tuple[float, ...] | None = None
    translations: np.ndarray | None = None    # (T, d); None -> zeros
    scales: tuple[float, ...] | None = None   # None -> ones

    def __post_init__(self):
        if self.num_domains < 1:
            raise InvalidSpec("num_domains must be >= 1")
        if self.classes < 2:
            raise InvalidSpec("classes must be >= 2")
        if self.dim < 2:
            raise InvalidSpec("dim must be >= 2")
        if self.train_per_class < 1 or self.eval_per_class < 1:
            raise InvalidSpec("per-class sample counts must be >= 1")
        if not self.within_sd > 0.0:
            raise InvalidSpec("within_sd must be > 0")
        t, c, d = self.num_domains, self.classes, self.dim
        if self.base_means is None:
            means = np.zeros((c, d))
            for j in range(c):
                angle = 2.0 * math.pi * j / c
                means[j, 0] = self.mean_radius * math.cos(angle)
                means[j, 1] = self.mean_radius * math.sin(angle)
            self.base_means = means
        else:
            self.base_means = np.asarray(self.base_means, dtype=np.float64)
            if self.base_means.shape != (c, d):
                raise InvalidSpec(f"base_means must be ({c}, {d})")
        if self.rotations_deg is None:
            self.rotations_deg = tuple(0.0 for _ in range(t))
        else:
            self.rotations_deg = tuple(float(a) for a in self.rotations_deg)
            if len(self.rotations_deg) != t:
                raise InvalidSpec("rotations_deg must list one angle per domain")
        if self.translations is None:
            self.translations = np.zeros((t, d))
        else:
            self.translations = np.asarray(self.translations, dtype=np.float64)
            if self.translations.shape != (t, d):
                raise InvalidSpec(f"translations must be ({t}, {d})")
        if self.scales is None:
            self.scales = tuple(1.0 for _ in range(t))
        else:
            self.scales = tuple(float(s) for s in self.scales)
            if len(self.scales) != t:
                raise InvalidSpec("scales must list one factor per domain")
            if any(not s > 0.0 for s in self.scales):
                raise InvalidSpec("scales must be > 0")


def rotation_matrix(angle_deg: float, dim: int) -> np.ndarray:
    """Block-planar rotation by one angle in pairs (0,1), (2,3), ..."""
    theta = math.radians(angle_deg)
    r = np.eye(dim)
    c, s = math.cos(theta), math.sin(theta)
    for p in range(0, dim - 1, 2):
        r[p, p] = c
        r[p, p + 1] = -s
        r[p + 1, p] = s
        r[p + 1, p + 1] = c
    return r


def domain_class_gaussian(spec: SyntheticShiftSpec, t: int,
                          c: int) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form (mean, covariance) of class c in domain t."""
    r = rotation_matrix(spec.rotations_deg[t], spec.dim)
    s = spec.scales[t]
    mean = s * (r @ spec.base_means[c]) + spec.translations[t]
    cov = (s * spec.within_sd) ** 2 * (r @ r.T)
    return mean, cov


def gaussian_symmetric_kl(mean_a, cov_a, mean_b, cov_b) -> float:
    """KL(a||b) + KL(b||a) between two Gaussians, closed form."""
    mean_a = np.asarray(mean_a, dtype=np.float64)
    mean_b = np.asarray(mean_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    d = mean_a.size
    inv_a = np.linalg.inv(cov_a)
    inv_b = np.linalg.inv(cov_b)
    diff = mean_a - mean_b
    quad = diff @ (inv_a + inv_b) @ diff
    trace = np.trace(inv_b @ cov_a) + np.trace(inv_a @ cov_b)
    return float(0.5 * (quad + trace) - d)


def generate_stream(spec: SyntheticShiftSpec) -> TaskStream:
    """Deterministic synthetic stream; a pure function of the spec."""
    root = Rng(spec.seed)
    tasks = []
    for t in range(spec.num_domains):
        r = rotation_matrix(spec.rotations_deg[t], spec.dim)
        scale = spec.scales[t]
        shift = spec.translations[t]
        parts = {}
        for part, per_class in (("train", spec.train_per_class),
                                ("eval", spec.eval_per_class)):
            rng = root.split("domain", t, part)
            rows, labels = [], []
            for c in range(spec.classes):
                z = standard_normal(rng, per_class * spec.dim)
                cloud = spec.base_means[c] + spec.within_sd * z.reshape(
                    per_class, spec.dim
                )
                rows.append(scale * (cloud @ r.T) + shift)
                labels.append(np.full(per_class, c, dtype=np.int64))
            feats = np.vstack(rows).astype(np.float32).astype(np.float64)
            parts[part] = LabeledFeatureBatch(feats, np.concatenate(labels))
        tasks.append(
            TaskDataset(
                domain_id=t,
                train=parts["train"],
                eval=parts["eval"],
                tags=(f"rot={spec.rotations_deg[t]:g}", f"scale={scale:g}"),
            )
        )
    return TaskStream(tasks=tasks, num_classes=spec.classes)


# ---------------------------------------------------------------------------
# Feature file (".glrf"), little-endian:
#   magic "GLRF" | version u32 | n u32 | d u32 | num_classes u32
#   | features n*d*f32 row-major | labels n*u32
# ---------------------------------------------------------------------------

_FHEADER = struct.Struct("<4sIIII")


def feature_file_bytes(batch: LabeledFeatureBatch, num_classes: int) -> bytes:
    if batch.n < 1:
        raise InvalidSpec("refusing to write an empty feature batch")
    if batch.labels.max() >= num_classes:
        raise InvalidSpec("labels exceed declared class count")
    head = _FHEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, batch.n, batch.dim,
                         int(num_classes))
    return (
        head
        + np.ascontiguousarray(batch.features, dtype="<f4").tobytes()
        + np.ascontiguousarray(batch.labels, dtype="<u4").tobytes()
    )


def parse_feature_file(buf: bytes) -> tuple[LabeledFeatureBatch, int]:
    """Returns (batch, num_classes); features widened to float64."""
    if len(buf) < _FHEADER.size:
        raise MalformedFeatureFile("truncated header")
    magic, version, n, d, num_classes = _FHEADER.unpack_from(buf, 0)
    if magic != FEATURE_MAGIC:
        raise MalformedFeatureFile(f"bad magic {magic!r}")
    if version != FEATURE_VERSION:
        raise MalformedFeatureFile(f"unsupported version {version}")
    if n < 1 or d < 1 or num_classes < 1:
        raise MalformedFeatureFile(f"invalid header n={n} d={d} C={num_classes}")
    expected = _FHEADER.size + n * d * 4 + n * 4
    if len(buf) != expected:
        raise MalformedFeatureFile(
            f"expected {expected} bytes for n={n} d={d}, got {len(buf)}"
        )
    feats = np.frombuffer(buf, dtype="<f4", count=n * d, offset=_FHEADER.size)
    labels = np.frombuffer(buf, dtype="<u4", count=n, offset=_FHEADER.size + n * d * 4)
    if labels.max() >= num_classes:
        raise MalformedFeatureFile("label outside declared class count")
    if not np.all(np.isfinite(feats)):
        raise MalformedFeatureFile("non-finite feature value")
    batch = LabeledFeatureBatch(
        feats.astype(np.float64).reshape(n, d), labels.astype(np.int64)
    )
    return batch, int(num_classes)


def save_stream(stream: TaskStream, paths) -> None:
    """Write train/eval .glrf pairs; paths = [t0_train, t0_eval, t1_train, ...]."""
    paths = list(paths)
    if len(paths) != 2 * len(stream):
        raise InvalidSpec(
            f"need {2 * len(stream)} paths for {len(stream)} tasks, got {len(paths)}"
        )
    for task, (train_path, eval_path) in zip(stream.tasks, _pairs(paths)):
        atomic_write_bytes(train_path,
                           feature_file_bytes(task.train, stream.num_classes))
        atomic_write_bytes(eval_path,
                           feature_file_bytes(task.eval, stream.num_classes))


def load_stream(paths) -> TaskStream:
    """Load an ordered list of train/eval file pairs; domain_id by position."""
    paths = list(paths)
    if not paths or len(paths) % 2 != 0:
        raise InconsistentStream(
            f"need an even, non-empty list of feature files, got {len(paths)}"
        )
    dim = None
    num_classes = None
    tasks = []
    for domain_id, (train_path, eval_path) in enumerate(_pairs(paths)):
        batches = []
        for path in (train_path, eval_path):
            with open(path, "rb") as fh:
                batch, c = parse_feature_file(fh.read())
            if num_classes is None:
                num_classes = c
            elif c != num_classes:
                raise InconsistentStream(
                    f"{path}: class count {c} != {num_classes}"
                )
            if dim is None:
                dim = batch.dim
            elif batch.dim != dim:
                raise InconsistentStream(f"{path}: dim {batch.dim} != {dim}")
            batches.append(batch)
        tasks.append(TaskDataset(domain_id=domain_id, train=batches[0],
                                 eval=batches[1]))
    return TaskStream(tasks=tasks, num_classes=num_classes)


def _pairs(seq):
    it = iter(seq)
    return zip(it, it)
