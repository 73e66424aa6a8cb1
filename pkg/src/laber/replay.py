"""Ring-buffer transition storage with sum-tree priority stores."""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AllZeroError,
    InsufficientDataError,
    NegativePriorityError,
    OutOfRangeError,
    ShapeMismatchError,
)
from .flatfile import read_flat, write_flat
from .sampling import transform_priorities
from .sumtree import SumTree

PER_ALPHA, PER_C = 0.6, 1e-10
GER_ALPHA, GER_C = 1.0, 0.0


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class SampleBatch:
    """Indices drawn for one update, with their sampling probabilities.

    ``probs`` is each index's probability under the distribution it was drawn
    from and ``weights`` the matching ``1 / (N p_i)`` correction. LaBER-style
    batches also carry the surrogate values of the whole large batch.
    """

    indices: np.ndarray
    probs: np.ndarray
    weights: np.ndarray
    large_batch: np.ndarray = None
    large_surrogates: np.ndarray = None
    extra: dict = field(default_factory=dict)


class PriorityStore:
    """Raw per-index priorities backed by a sum-tree of transformed values.

    New entries get the largest raw priority seen so far, so every transition
    is eligible for sampling right after it is stored.
    """

    def __init__(self, capacity, alpha=PER_ALPHA, c=PER_C, initial_priority=1.0):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        if c < 0:
            raise ValueError(f"c must be >= 0, got {c}")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.c = float(c)
        self.raw = np.zeros(self.capacity)
        self.tree = SumTree(self.capacity)
        self.max_priority = float(initial_priority)
        self.size = 0

    def _transform(self, values):
        return transform_priorities(values, self.alpha, self.c)

    def on_push(self, index, size):
        self.size = size
        self._write(np.array([index]), np.array([self.max_priority]))

    def _write(self, indices, values):
        self.raw[indices] = values
        # duplicates: the last write wins in both the raw array and the tree
        for i, v in zip(indices, self._transform(values)):
            self.tree.set(i, v)

    def update(self, indices, values):
        """Overwrite the priorities of ``indices`` only; all others keep their (outdated) values."""
        indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if indices.shape != values.shape:
            raise ShapeMismatchError("indices and values differ in length")
        if np.any(indices < 0) or np.any(indices >= self.size):
            raise OutOfRangeError(f"priority index outside [0, {self.size})")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise NegativePriorityError("priorities must be finite and >= 0")
        self._write(indices, values)
        if values.size:
            self.max_priority = max(self.max_priority, float(values.max()))

    def probabilities(self, indices=None):
        total = self.tree.total
        if total <= 0:
            raise AllZeroError("every transformed priority is zero")
        leaves = self.tree.leaves[: self.size] if indices is None else self.tree.leaves[indices]
        return leaves / total

    def distribution(self):
        """Current sampling distribution over the filled part of the buffer."""
        return self.probabilities()

    def sample(self, n, rng):
        if self.size < 1:
            raise InsufficientDataError("priority store is empty")
        if self.tree.total <= 0:
            raise AllZeroError("every transformed priority is zero")
        idx = self.tree.sample(rng, n)
        return idx, self.probabilities(idx)

    def state_arrays(self, prefix):
        return {
            f"{prefix}.raw": self.raw,
            f"{prefix}.meta": np.array([self.alpha, self.c, self.max_priority, self.size]),
        }

    def restore(self, arrays, prefix):
        self.raw[...] = arrays[f"{prefix}.raw"]
        alpha, c, max_priority, size = arrays[f"{prefix}.meta"]
        self.alpha, self.c, self.max_priority, self.size = float(alpha), float(c), float(max_priority), int(size)
        leaves = np.zeros(self.capacity)
        leaves[: self.size] = self._transform(self.raw[: self.size])
        self.tree.load(leaves)


class ReplayBuffer:
    def __init__(self, capacity, obs_dim, n_actions):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.states = np.zeros((self.capacity, self.obs_dim))
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, self.obs_dim))
        self.dones = np.zeros(self.capacity, dtype=bool)
        self.cursor = 0
        self.size = 0
        self.stores = []

    def __len__(self):
        return self.size

    def attach(self, store):
        """Register a priority store that follows this buffer's pushes."""
        if store.capacity != self.capacity:
            raise ShapeMismatchError("priority store and buffer capacities differ")
        self.stores.append(store)
        return store

    def push(self, transition):
        s = np.asarray(transition.state, dtype=np.float64).reshape(-1)
        s2 = np.asarray(transition.next_state, dtype=np.float64).reshape(-1)
        if s.size != self.obs_dim or s2.size != self.obs_dim:
            raise ShapeMismatchError(f"observations must have {self.obs_dim} entries")
        a = int(transition.action)
        if not 0 <= a < self.n_actions:
            raise ShapeMismatchError(f"action {a} outside [0, {self.n_actions})")
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = float(transition.reward)
        self.next_states[i] = s2
        self.dones[i] = bool(transition.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        for store in self.stores:
            store.on_push(i, self.size)
        return i

    def get(self, index):
        if not 0 <= index < self.size:
            raise OutOfRangeError(f"index {index} outside [0, {self.size})")
        return Transition(
            self.states[index].copy(),
            int(self.actions[index]),
            float(self.rewards[index]),
            self.next_states[index].copy(),
            bool(self.dones[index]),
        )

    def arrays(self, indices):
        """Batched ``(states, actions, rewards, next_states, dones)`` for ``indices``."""
        return (
            self.states[indices],
            self.actions[indices],
            self.rewards[indices],
            self.next_states[indices],
            self.dones[indices],
        )

    def in_order(self):
        """Stored transitions from oldest to newest."""
        start = self.cursor if self.size == self.capacity else 0
        return [self.get((start + k) % self.capacity) for k in range(self.size)]

    def save(self, path):
        header = {
            "kind": "replay_buffer",
            "obs_dim": self.obs_dim,
            "n_actions": self.n_actions,
            "capacity": self.capacity,
            "size": self.size,
            "cursor": self.cursor,
        }
        n = self.size
        write_flat(path, header, {
            "states": self.states[:n],
            "actions": self.actions[:n],
            "rewards": self.rewards[:n],
            "next_states": self.next_states[:n],
            "dones": self.dones[:n].astype(np.uint8),
        })

    @classmethod
    def load(cls, path):
        header, arrays = read_flat(path)
        if header.get("kind") != "replay_buffer":
            raise ValueError(f"{path} does not hold a replay buffer")
        buf = cls(header["capacity"], header["obs_dim"], header["n_actions"])
        n = header["size"]
        buf.states[:n] = arrays["states"]
        buf.actions[:n] = arrays["actions"]
        buf.rewards[:n] = arrays["rewards"]
        buf.next_states[:n] = arrays["next_states"]
        buf.dones[:n] = arrays["dones"].astype(bool)
        buf.size = n
        buf.cursor = header["cursor"]
        return buf


def sample_uniform(buf, batch_size, rng):
    """i.i.d. uniform mini-batch with replacement."""
    if buf.size < 1:
        raise InsufficientDataError("buffer is empty")
    idx = rng.integers(0, buf.size, size=batch_size)
    probs = np.full(batch_size, 1.0 / buf.size)
    return SampleBatch(idx, probs, np.ones(batch_size))


def sample_prioritized(buf, store, batch_size, rng, beta=1.0):
    """Mini-batch drawn with replacement in proportion to the store's transformed priorities."""
    if buf.size < 1:
        raise InsufficientDataError("buffer is empty")
    idx, probs = store.sample(batch_size, rng)
    weights = (1.0 / (buf.size * probs)) ** beta
    return SampleBatch(idx, probs, weights)


def sample_uniform_large_batch(buf, m, batch_size, rng):
    """``m * batch_size`` distinct indices drawn uniformly without replacement."""
    k = int(m) * int(batch_size)
    if buf.size < k:
        raise InsufficientDataError(f"need {k} transitions for the large batch, have {buf.size}")
    idx = rng.choice(buf.size, size=k, replace=False)
    return SampleBatch(idx, np.full(k, 1.0 / buf.size), np.ones(k))


def update_priorities(store, indices, new_raw_values):
    store.update(indices, new_raw_values)


def per_store(capacity, alpha=PER_ALPHA, c=PER_C):
    return PriorityStore(capacity, alpha, c)


def ger_store(capacity, alpha=GER_ALPHA, c=GER_C):
    return PriorityStore(capacity, alpha, c)


__all__ = [
    "Transition",
    "SampleBatch",
    "PriorityStore",
    "ReplayBuffer",
    "sample_uniform",
    "sample_prioritized",
    "sample_uniform_large_batch",
    "update_priorities",
]
