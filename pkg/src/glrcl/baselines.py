"""Reference methods bracketing the replay engine.

Naive gives the forgetting lower bound, joint and cumulative the upper
bounds, and buffer replay (reservoir-sampled storage of past feature rows)
the rehearsal comparison.  Because this engine operates on precomputed
features, experience replay and latent replay coincide: both store feature
rows, so a single buffer method covers them (quarter-capacity runs stand in
for the reduced-buffer variants).
"""

from __future__ import annotations

import time
from dataclasses import replace

import numpy as np

from . import nnet
from .gmm import EmConfig
from .metrics import AccuracyMatrix
from .replay import ReplayConfig, RunResult, evaluate_all, run_sessions, \
    train_session, _concat_batches
from .streams import LabeledFeatureBatch, TaskStream
from .tensor import Rng


class ReplayBuffer:
    """Bounded uniform sample of past feature rows (reservoir algorithm R).

    After n >= capacity rows have streamed through, each row has inclusion
    probability capacity / n.
    """

    def __init__(self, capacity: int, feature_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.feature_dim = int(feature_dim)
        self.features = np.empty((self.capacity, self.feature_dim))
        self.labels = np.empty(self.capacity, dtype=np.int64)
        self.domains = np.empty(self.capacity, dtype=np.int64)
        self.stored = 0
        self.seen_count = 0

    def __len__(self) -> int:
        return self.stored

    def add(self, feature_row: np.ndarray, label: int, domain: int,
            rng: Rng) -> None:
        if self.stored < self.capacity:
            slot = self.stored
            self.stored += 1
        else:
            j = int(rng.integers(0, self.seen_count + 1))
            slot = j if j < self.capacity else -1
        if slot >= 0:
            self.features[slot] = feature_row
            self.labels[slot] = label
            self.domains[slot] = domain
        self.seen_count += 1

    def add_batch(self, batch: LabeledFeatureBatch, domain_id: int,
                  rng: Rng) -> None:
        for i in range(batch.n):
            self.add(batch.features[i], int(batch.labels[i]), domain_id, rng)

    def draw_replay(self, n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
        """n rows drawn uniformly (with replacement) from the buffer."""
        idx = rng.integers(0, self.stored, size=n)
        return self.features[idx].copy(), self.labels[idx].copy()

    def retained_bytes(self) -> int:
        """Privacy accounting: capacity * (4 bytes per feature + 4 per label)."""
        return self.capacity * (4 * self.feature_dim + 4)


def run_naive(stream: TaskStream, em_cfg: EmConfig, replay_cfg: ReplayConfig,
              head_cfg: nnet.HeadConfig, rng: Rng) -> RunResult:
    """Sequential training on each domain alone; no replay of any kind."""
    cfg = replace(replay_cfg, replay_ratio=0.0)
    return run_sessions(stream, em_cfg, cfg, head_cfg, rng, mode="naive")


def run_cumulative(stream: TaskStream, em_cfg: EmConfig, replay_cfg: ReplayConfig,
                   head_cfg: nnet.HeadConfig, rng: Rng) -> RunResult:
    """Session t continues training on the union of domains 1..t."""
    cfg = replace(replay_cfg, replay_ratio=0.0)
    return run_sessions(stream, em_cfg, cfg, head_cfg, rng, mode="cumulative")


def run_buffer_replay(stream: TaskStream, em_cfg: EmConfig,
                      replay_cfg: ReplayConfig, head_cfg: nnet.HeadConfig,
                      capacity: int, rng: Rng) -> RunResult:
    """Rehearsal from a reservoir-sampled buffer of past feature rows."""
    buffer = ReplayBuffer(capacity, stream.feature_dim)
    return run_sessions(stream, em_cfg, replay_cfg, head_cfg, rng,
                        mode="buffer", buffer=buffer)


def run_joint(stream: TaskStream, em_cfg: EmConfig, replay_cfg: ReplayConfig,
              head_cfg: nnet.HeadConfig, rng: Rng) -> RunResult:
    """One training phase on all domains pooled; records a single 1 x T row."""
    cfg = replace(replay_cfg, replay_ratio=0.0)
    dims = [stream.feature_dim, *head_cfg.hidden_dims, stream.num_classes]
    model = nnet.init(dims, rng.split("init"))
    opt = nnet.AdamWState.for_model(model, lr=head_cfg.lr,
                                    weight_decay=head_cfg.weight_decay)
    data = _concat_batches([task.train for task in stream.tasks])
    started = time.perf_counter()
    train_session(model, opt, data, None, cfg, rng.split("session", 1))
    matrix = AccuracyMatrix(num_tasks=len(stream), num_rows=1)
    matrix.record_row(1, evaluate_all(model, stream))
    return RunResult(matrix=matrix, model=model,
                     session_seconds=[time.perf_counter() - started])
