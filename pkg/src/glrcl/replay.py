"""Generative latent replay: session training and the generator pool.

Each training session sees only the current domain's features.  Mini-batches
are extended with fresh feature rows sampled from the pool of per-(domain,
class) mixture generators accumulated from past sessions; after training,
the session's own features fit new generators which join the pool.  The pool
never contains a generator for the domain currently in training.

Random streams are derived by labeled splits from one root, so the naive
baseline and a zero-replay run consume bit-identical shuffle streams even
though the latter also fits generators (those draw from disjoint children).
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import gmm, nnet
from .errors import DimensionMismatch, DuplicateDomain, MalformedGenerator
from .ioutil import atomic_write_bytes
from .metrics import AccuracyMatrix
from .streams import LabeledFeatureBatch, TaskStream
from .tensor import Rng


@dataclass
class ReplayConfig:
    replay_ratio: float = 1.0    # replay rows per current row
    epochs: int = 20
    batch_size: int = 64
    shuffle: bool = True

    def __post_init__(self):
        if self.replay_ratio < 0.0:
            raise ValueError("replay_ratio must be >= 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class GeneratorPool:
    """Map (domain_id, class_id) -> fitted GmmGenerator."""

    def __init__(self, feature_dim: int):
        self.feature_dim = int(feature_dim)
        self.entries: dict[tuple[int, int], gmm.GmmGenerator] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def sorted_keys(self) -> list[tuple[int, int]]:
        return sorted(self.entries)

    def domains(self) -> set[int]:
        return {domain for domain, _ in self.entries}

    def add(self, domain_id: int, class_id: int, generator: gmm.GmmGenerator) -> None:
        key = (int(domain_id), int(class_id))
        if generator.dim != self.feature_dim:
            raise DimensionMismatch(
                f"generator dim {generator.dim} != pool dim {self.feature_dim}"
            )
        if key in self.entries:
            raise DuplicateDomain(f"pool already holds a generator for {key}")
        self.entries[key] = generator

    def draw_replay(self, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        """n rows spread as evenly as possible over generators.

        Every generator receives floor(n/G) rows; the remainder goes to
        generators chosen by a seeded draw without replacement over the
        sorted key order.  Each row is labeled with its generator's class.
        """
        keys = self.sorted_keys()
        counts = np.full(len(keys), n // len(keys), dtype=np.int64)
        remainder = n % len(keys)
        if remainder:
            counts[rng.choice_without_replacement(len(keys), remainder)] += 1
        feats, labels = [], []
        for key, count in zip(keys, counts):
            if count == 0:
                continue
            feats.append(gmm.sample(self.entries[key], int(count), rng))
            labels.append(np.full(int(count), key[1], dtype=np.int64))
        return np.vstack(feats), np.concatenate(labels)

    # -- pool file: u32 entry count, then per entry
    #    domain_id u32 | class_id u32 | embedded generator record ------------

    def to_bytes(self) -> bytes:
        parts = [struct.pack("<I", len(self.entries))]
        for (domain_id, class_id) in self.sorted_keys():
            parts.append(struct.pack("<II", domain_id, class_id))
            parts.append(gmm.serialize(self.entries[(domain_id, class_id)]))
        return b"".join(parts)

    def save(self, path: str) -> None:
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "GeneratorPool":
        if len(buf) < 4:
            raise MalformedGenerator("truncated pool header")
        (count,) = struct.unpack_from("<I", buf, 0)
        pos = 4
        entries = []
        for _ in range(count):
            if len(buf) - pos < 8:
                raise MalformedGenerator("truncated pool entry key")
            domain_id, class_id = struct.unpack_from("<II", buf, pos)
            pos += 8
            generator, pos = gmm.read_generator(buf, pos)
            entries.append((domain_id, class_id, generator))
        if pos != len(buf):
            raise MalformedGenerator(f"{len(buf) - pos} trailing bytes")
        if not entries:
            raise MalformedGenerator("pool holds no generators")
        pool = cls(entries[0][2].dim)
        for domain_id, class_id, generator in entries:
            pool.add(domain_id, class_id, generator)
        return pool

    @classmethod
    def load(cls, path: str) -> "GeneratorPool":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def compose_batch(current: LabeledFeatureBatch, pool, cfg: ReplayConfig,
                  rng: Rng) -> LabeledFeatureBatch:
    """Concatenate the current rows with round(ratio * B) replay rows.

    ``pool`` is anything with __len__ and draw_replay (the generator pool or
    a sample buffer); an empty source leaves the batch untouched and draws
    nothing from rng.  Output order: current rows first, replay rows after.
    """
    n_replay = 0
    if pool is not None and len(pool) > 0:
        n_replay = round(cfg.replay_ratio * current.n)
    if n_replay == 0:
        return current
    feats, labels = pool.draw_replay(n_replay, rng)
    if feats.shape[1] != current.dim:
        raise DimensionMismatch(
            f"replay dim {feats.shape[1]} != batch dim {current.dim}"
        )
    return LabeledFeatureBatch(
        np.vstack([current.features, feats]),
        np.concatenate([current.labels, labels]),
    )


def train_session(model: nnet.MlpHead, opt: nnet.AdamWState,
                  train: LabeledFeatureBatch, pool, cfg: ReplayConfig,
                  rng: Rng) -> tuple[nnet.MlpHead, nnet.AdamWState]:
    """One session: epochs of shuffled mini-batches extended with replay.

    Only head parameters change; the feature rows are frozen inputs.  The
    shuffle and replay streams are independent children of ``rng``, so runs
    that never draw replay rows stay bit-identical to replay-free training.
    """
    shuffle_rng = rng.split("shuffle")
    replay_rng = rng.split("replay")
    n = train.n
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            batch = compose_batch(
                LabeledFeatureBatch(train.features[sel], train.labels[sel]),
                pool, cfg, replay_rng,
            )
            _, grads = nnet.loss_and_grad(model, batch.features, batch.labels)
            nnet.adamw_step(model, opt, grads)
    return model, opt


def update_pool(pool: GeneratorPool, train: LabeledFeatureBatch, domain_id: int,
                em_cfg: gmm.EmConfig, rng: Rng) -> dict[tuple[int, int], gmm.FitReport]:
    """Fit one generator per class present in the session's data.

    Runs BIC selection on each class's rows under the child stream
    rng.split("class", c) and inserts at key (domain_id, c).  Returns the
    fit reports keyed like the pool entries.
    """
    if int(domain_id) in pool.domains():
        raise DuplicateDomain(f"domain {domain_id} already in pool")
    reports = {}
    for c in sorted(int(v) for v in np.unique(train.labels)):
        rows = train.features[train.labels == c]
        generator, report = gmm.select_k(rows, em_cfg, rng.split("class", c))
        pool.add(domain_id, c, generator)
        reports[(int(domain_id), c)] = report
    return reports


@dataclass
class RunResult:
    """Everything a sequential run produces."""

    matrix: AccuracyMatrix
    model: nnet.MlpHead
    pool: GeneratorPool | None = None
    buffer: object | None = None
    session_seconds: list[float] = field(default_factory=list)
    fit_reports: dict = field(default_factory=dict)


def evaluate_all(model: nnet.MlpHead, stream: TaskStream) -> list[float]:
    """Percent accuracy on every task's eval set, in task order."""
    accs = []
    for task in stream.tasks:
        pred = nnet.predict(model, task.eval.features)
        accs.append(100.0 * float(np.mean(pred == task.eval.labels)))
    return accs


def _concat_batches(batches) -> LabeledFeatureBatch:
    return LabeledFeatureBatch(
        np.vstack([b.features for b in batches]),
        np.concatenate([b.labels for b in batches]),
    )


def run_sessions(stream: TaskStream, em_cfg: gmm.EmConfig, replay_cfg: ReplayConfig,
                 head_cfg: nnet.HeadConfig, rng: Rng, *, mode: str,
                 buffer=None) -> RunResult:
    """Shared sequential loop: train session t, evaluate every task, update
    the replay source.  All methods flow through here so metric differences
    reflect the method alone.

    mode: "glrcl" (pool replay + pool update), "naive" (no replay),
    "cumulative" (train on all data seen so far), "buffer" (buffer replay
    + reservoir update).
    """
    if mode not in ("glrcl", "naive", "cumulative", "buffer"):
        raise ValueError(f"unknown mode {mode!r}")
    t_total = len(stream)
    dims = [stream.feature_dim, *head_cfg.hidden_dims, stream.num_classes]
    model = nnet.init(dims, rng.split("init"))
    opt = nnet.AdamWState.for_model(model, lr=head_cfg.lr,
                                    weight_decay=head_cfg.weight_decay)
    pool = GeneratorPool(stream.feature_dim) if mode == "glrcl" else None
    matrix = AccuracyMatrix(t_total)
    result = RunResult(matrix=matrix, model=model, pool=pool, buffer=buffer)

    seen = []
    for t, task in enumerate(stream.tasks, start=1):
        started = time.perf_counter()
        session_rng = rng.split("session", t)
        seen.append(task.train)
        if mode == "cumulative":
            train_data = task.train if t == 1 else _concat_batches(seen)
        else:
            train_data = task.train
        source = pool if mode == "glrcl" else buffer if mode == "buffer" else None
        train_session(model, opt, train_data, source, replay_cfg, session_rng)
        matrix.record_row(t, evaluate_all(model, stream))
        if mode == "glrcl":
            result.fit_reports.update(
                update_pool(pool, task.train, task.domain_id, em_cfg,
                            session_rng.split("pool"))
            )
        elif mode == "buffer":
            buffer.add_batch(task.train, task.domain_id,
                             session_rng.split("buffer"))
        result.session_seconds.append(time.perf_counter() - started)
    return result


def run_glrcl(stream: TaskStream, em_cfg: gmm.EmConfig, replay_cfg: ReplayConfig,
              head_cfg: nnet.HeadConfig, rng: Rng) -> RunResult:
    """Full generative-latent-replay run over the stream's sessions."""
    return run_sessions(stream, em_cfg, replay_cfg, head_cfg, rng, mode="glrcl")
