#!/usr/bin/env python3
"""
Prioritized Replay Buffer
Proportional prioritized experience replay over a power-of-two sum tree,
with stratified sampling and max-normalized importance weights.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core.errors import DimensionError, NotReadyError

logger = logging.getLogger(__name__)


@dataclass
class TransitionRecord:
    state: np.ndarray
    action_index: int
    reward: float
    next_state: np.ndarray
    done: bool


class SegmentTree:
    """Complete binary tree over a power-of-two leaf array; node 1 is the root"""

    def __init__(self, capacity: int, op, neutral: float = 0.0):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.leaf_count = 1 << (capacity - 1).bit_length()
        self.op = op
        self.neutral = neutral
        self.nodes = np.full(2 * self.leaf_count, neutral, dtype=np.float64)

    def update(self, leaf: int, value: float):
        idx = leaf + self.leaf_count
        self.nodes[idx] = value
        idx //= 2
        while idx >= 1:
            self.nodes[idx] = self.op(self.nodes[2 * idx], self.nodes[2 * idx + 1])
            idx //= 2

    def leaf(self, leaf: int) -> float:
        return float(self.nodes[leaf + self.leaf_count])

    def leaves(self) -> np.ndarray:
        return self.nodes[self.leaf_count:self.leaf_count + self.capacity]

    @property
    def root(self) -> float:
        return float(self.nodes[1])

    def rebuild(self):
        for idx in range(self.leaf_count - 1, 0, -1):
            self.nodes[idx] = self.op(self.nodes[2 * idx], self.nodes[2 * idx + 1])


class SumTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, lambda a, b: a + b, 0.0)

    @property
    def total(self) -> float:
        return self.root

    def find_prefix(self, mass: float) -> int:
        """Leaf whose cumulative interval contains `mass`"""
        mass = min(max(mass, 0.0), np.nextafter(self.total, 0.0))
        idx = 1
        while idx < self.leaf_count:
            left = 2 * idx
            if mass < self.nodes[left] or self.nodes[left + 1] == 0.0:
                idx = left
            else:
                mass -= self.nodes[left]
                idx = left + 1
        return idx - self.leaf_count


class MaxTree(SegmentTree):
    def __init__(self, capacity: int):
        super().__init__(capacity, max, 0.0)


def anneal_beta(progress: float, start: float = 0.4, end: float = 1.0) -> float:
    """Linear importance-sampling exponent schedule over training progress in [0, 1]"""
    progress = min(max(progress, 0.0), 1.0)
    return start + (end - start) * progress


class PrioritizedReplayBuffer:
    """
    Ring buffer with proportional prioritized sampling.

    Raw priorities p_i = |td_error_i| + eps are kept in a max tree; the sum tree
    holds p_i ** alpha. Indices handed out by `sample` are insertion serial
    numbers, so updates aimed at an overwritten slot are detected and skipped.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, eps: float = 1e-3,
                 seed: Optional[int] = None, rng: Optional[np.random.Generator] = None):
        if eps <= 0:
            raise ValueError(f"priority floor must be > 0, got {eps}")
        self.capacity = capacity
        self.alpha = alpha
        self.eps = eps
        self.rng = rng if rng is not None else np.random.default_rng(seed)
        self.sum_tree = SumTree(capacity)
        self.max_tree = MaxTree(capacity)
        self.records: List[Optional[TransitionRecord]] = [None] * capacity
        self.serials = np.full(capacity, -1, dtype=np.int64)
        self.next_serial = 0
        self.size = 0
        self.state_dim: Optional[int] = None
        self.stats = {'pushed': 0, 'sampled_batches': 0, 'priority_updates': 0, 'stale_updates': 0}

    def __len__(self):
        return self.size

    def is_ready(self, batch: int) -> bool:
        return self.size >= batch

    @property
    def max_priority(self) -> float:
        return self.max_tree.root if self.size else 1.0

    def priority(self, slot: int) -> float:
        return self.max_tree.leaf(slot)

    def _set_priority(self, slot: int, priority: float):
        self.max_tree.update(slot, priority)
        self.sum_tree.update(slot, priority ** self.alpha)

    def push(self, record: TransitionRecord) -> int:
        """Store a record at the current max priority; returns its serial number"""
        state_len = len(record.state)
        if len(record.next_state) != state_len:
            raise DimensionError(f"state length {state_len} != next_state length {len(record.next_state)}")
        if self.state_dim is None:
            self.state_dim = state_len
        elif state_len != self.state_dim:
            raise DimensionError(f"state length {state_len} != buffer state length {self.state_dim}")

        priority = self.max_priority
        serial = self.next_serial
        slot = serial % self.capacity
        self.records[slot] = record
        self.serials[slot] = serial
        self._set_priority(slot, priority)

        self.next_serial += 1
        self.size = min(self.size + 1, self.capacity)
        self.stats['pushed'] += 1
        return serial

    def sample(self, batch: int, beta: float) -> Tuple[List[TransitionRecord], np.ndarray, np.ndarray]:
        """Stratified proportional sample -> (records, importance weights, serials)"""
        if not self.is_ready(batch):
            raise NotReadyError(f"buffer holds {self.size} transitions, {batch} requested")
        if not 0.0 <= beta <= 1.0:
            raise ValueError(f"beta must be in [0, 1], got {beta}")

        total = self.sum_tree.total
        segment = total / batch
        slots = np.empty(batch, dtype=np.int64)
        for i in range(batch):
            mass = self.rng.uniform(i * segment, (i + 1) * segment)
            slots[i] = self.sum_tree.find_prefix(mass)

        probs = np.array([self.sum_tree.leaf(s) for s in slots]) / total
        weights = (self.size * probs) ** (-beta)
        weights /= weights.max()

        self.stats['sampled_batches'] += 1
        return [self.records[s] for s in slots], weights, self.serials[slots].copy()

    def update_priorities(self, serials: Sequence[int], td_errors: Sequence[float]):
        """p_i = |td_error_i| + eps; stale serials are skipped and counted"""
        if len(serials) != len(td_errors):
            raise DimensionError(f"{len(serials)} indices but {len(td_errors)} TD errors")
        for serial, td in zip(serials, td_errors):
            serial = int(serial)
            slot = serial % self.capacity
            if serial < 0 or self.serials[slot] != serial:
                self.stats['stale_updates'] += 1
                continue
            self._set_priority(slot, abs(float(td)) + self.eps)
            self.stats['priority_updates'] += 1

    def get_stats(self) -> Dict[str, int]:
        return dict(self.stats, size=self.size)
